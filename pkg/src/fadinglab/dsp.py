"""
Multi-channel demodulation: rotated-vector-sum aggregation, differential
phase over a gauge length, speckle contrast and SNR_phi estimation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fiber import SPEED_OF_LIGHT, BackscatterTrace, ConfigurationError

# reported in place of an infinite SNR when the fit residual vanishes
SATURATED_SNR = 1e15


@dataclass(frozen=True, eq=False)
class AggregatedTrace:
    samples: np.ndarray            # [slow time][fast time]
    M_used: int
    reference_phases: np.ndarray   # [channel][fast time]
    fast_time_index: np.ndarray
    fast_time_step: float = 0.5e-9
    noise_variance: float = 0.0


@dataclass(frozen=True, eq=False)
class DemodulationResult:
    diff_phase: np.ndarray         # [gauge pair][slow time], radians
    gauge_length: float
    gauge_samples: int
    pair_indices: np.ndarray       # [gauge pair][2] fast-time grid indices
    amplitude_profile: np.ndarray  # [fast time]
    fast_time_index: np.ndarray


@dataclass(frozen=True)
class SnrPhiEstimate:
    snr: float
    signal_variance: float
    noise_variance: float
    amplitude: float
    phase: float
    saturated: bool = False

    def __float__(self):
        return float(self.snr)


def rotated_vector_sum(traces: BackscatterTrace, channels=None) -> AggregatedTrace:
    """Rotate each channel onto its slow-time mean phasor, then sum.

    ``channels`` are row positions in ``traces.samples`` (default: all rows).
    """
    if channels is None:
        channels = range(traces.num_channels)
    rows = list(channels)
    if not rows:
        raise ValueError("rotated_vector_sum needs at least one channel")
    v = traces.samples[rows]                                  # (M, K, T)
    ref = np.angle(v.mean(axis=1))                            # (M, T)
    agg = np.einsum("mkt,mt->kt", v, np.exp(-1j * ref))
    return AggregatedTrace(agg, len(rows), ref, np.asarray(traces.fast_time_index),
                           traces.fast_time_step, traces.noise_variance * len(rows))


def unwrap_phase(series) -> np.ndarray:
    """Unwrap along the last axis; every step is mapped into (-pi, pi]."""
    x = np.asarray(series, dtype=float)
    if x.shape[-1] < 2:
        return x.copy()
    d = np.diff(x, axis=-1)
    two_pi = 2.0 * math.pi
    dm = d - two_pi * np.ceil((d - math.pi) / two_pi)
    out = x.copy()
    out[..., 1:] = x[..., :1] + np.cumsum(dm, axis=-1)
    return out


def gauge_samples(gauge_length: float, fast_time_step: float, refractive_index: float) -> int:
    g = 2.0 * refractive_index * gauge_length / (SPEED_OF_LIGHT * fast_time_step)
    if g < 1.0:
        raise ConfigurationError(
            f"gauge length {gauge_length:g} m is shorter than one fast-time sample")
    return int(round(g))


def demodulate_phase(agg: AggregatedTrace, gauge_length: float, fast_time_step: float,
                     refractive_index: float, start_indices=None) -> DemodulationResult:
    """Differential phase between points one gauge length apart.

    Without ``start_indices`` one pair is taken per non-overlapping gauge
    window among the available fast-time columns.  Gauge lengths are rounded
    to the nearest whole number of samples.
    """
    g = gauge_samples(gauge_length, fast_time_step, refractive_index)
    index = np.asarray(agg.fast_time_index)
    column = {int(i): c for c, i in enumerate(index)}
    if start_indices is None:
        starts, next_free = [], -1
        for i in index:
            if i >= next_free and int(i) + g in column:
                starts.append(int(i))
                next_free = int(i) + g
    else:
        starts = [int(s) for s in np.atleast_1d(start_indices)]
        missing = [s for s in starts if s not in column or s + g not in column]
        if missing:
            raise ConfigurationError(f"gauge pairs starting at {missing} are not in the trace")
    pairs = np.array([(s, s + g) for s in starts], dtype=np.int64).reshape(-1, 2)
    phase = np.angle(agg.samples)
    if len(pairs):
        c1 = [column[s] for s in pairs[:, 0]]
        c2 = [column[s] for s in pairs[:, 1]]
        diff = unwrap_phase((phase[:, c2] - phase[:, c1]).T)
    else:
        diff = np.zeros((0, agg.samples.shape[0]))
    amp = np.abs(agg.samples).mean(axis=0)
    return DemodulationResult(diff, float(gauge_length), g, pairs, amp, index)


def speckle_contrast(intensity) -> float:
    """sigma_I / <I> (population standard deviation)."""
    x = np.asarray(intensity, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("speckle_contrast needs at least one sample")
    if np.any(x < 0):
        raise ValueError("intensity samples must be nonnegative")
    mean = x.mean()
    if mean == 0:
        raise ValueError("speckle contrast is undefined for zero mean intensity")
    return float(x.std() / mean)


def estimate_snr_phi(diff_phase, stimulus_freq: float, repetition_period: float) -> SnrPhiEstimate:
    """Least-squares fit of a sin + b cos + c at the stimulus frequency.

    Signal variance is (a^2 + b^2)/2 and noise variance the residual variance
    (3 fitted parameters removed).
    """
    y = np.asarray(diff_phase, dtype=float).ravel()
    K = y.size
    if stimulus_freq <= 0:
        raise ValueError("stimulus frequency must be positive")
    if stimulus_freq >= 0.5 / repetition_period:
        raise ValueError("stimulus frequency is above the slow-time Nyquist rate")
    if K * repetition_period * stimulus_freq < 10.0 - 1e-9:
        raise ValueError("series must span at least 10 stimulus periods")
    w = 2.0 * math.pi * stimulus_freq * repetition_period * np.arange(K)
    design = np.column_stack([np.sin(w), np.cos(w), np.ones(K)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    a, b = coef[0], coef[1]
    signal = 0.5 * (a * a + b * b)
    noise = float(resid @ resid) / (K - 3)
    amplitude = math.hypot(a, b)
    phase = math.atan2(b, a)
    scale = max(signal, float(np.mean(y * y)), 1e-300)
    if noise <= 1e-24 * scale:
        return SnrPhiEstimate(SATURATED_SNR, signal, noise, amplitude, phase, saturated=True)
    return SnrPhiEstimate(signal / noise, signal, noise, amplitude, phase)


def fading_fraction(intensity, threshold: float = 0.1) -> float:
    """Fraction of samples whose intensity is below threshold * mean."""
    x = np.asarray(intensity, dtype=float).ravel()
    return float(np.mean(x < threshold * x.mean()))


def dominant_frequency(series, repetition_period: float) -> tuple[float, float]:
    """(frequency of the largest non-DC FFT bin, bin width) in Hz."""
    y = np.asarray(series, dtype=float)
    y = y - y.mean()
    mag = np.abs(np.fft.rfft(y))
    freqs = np.fft.rfftfreq(y.size, repetition_period)
    k = int(np.argmax(mag[1:])) + 1
    return float(freqs[k]), float(freqs[1])
