import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fadinglab import dsp
from fadinglab.dsp import AggregatedTrace, SATURATED_SNR
from fadinglab.fiber import (ChannelPlan, ConfigurationError, PerturbationSpec, BackscatterTrace,
                             generate_scatterers, synthesize_backscatter)


def _trace(samples, noise_variance=0.0):
    samples = np.asarray(samples, dtype=complex)
    M, K, T = samples.shape
    return BackscatterTrace(samples, 0.5e-9, noise_variance, np.arange(T),
                            ChannelPlan(num_channels=max(M, 1)), tuple(range(M)))


def test_single_channel_keeps_magnitude():
    rng = np.random.default_rng(0)
    v = rng.standard_normal((1, 20, 30)) + 1j * rng.standard_normal((1, 20, 30))
    agg = dsp.rotated_vector_sum(_trace(v))
    np.testing.assert_allclose(np.abs(agg.samples), np.abs(v[0]), rtol=1e-12)


def test_aligned_channels_add_coherently():
    rng = np.random.default_rng(1)
    v1 = rng.standard_normal((20, 30)) + 1j * rng.standard_normal((20, 30))
    v = np.stack([v1, v1 * np.exp(1j * 2.1)])
    agg = dsp.rotated_vector_sum(_trace(v))
    np.testing.assert_allclose(np.abs(agg.samples), 2 * np.abs(v1), rtol=1e-12)


def test_empty_channel_subset():
    with pytest.raises(ValueError):
        dsp.rotated_vector_sum(_trace(np.ones((2, 3, 4))), channels=[])


def test_speckle_of_aggregate_at_m15():
    intensities = []
    for s in range(40):
        f = generate_scatterers(200.0, 100.0, seed=s)
        tr = synthesize_backscatter(f, ChannelPlan(), None, 2, 0.0, 0,
                                    sample_indices=np.arange(210, 1950, 201))
        intensities.append(np.abs(dsp.rotated_vector_sum(tr).samples[0]) ** 2)
    c = dsp.speckle_contrast(np.concatenate(intensities))
    assert c == pytest.approx(1 / math.sqrt(15), abs=0.05)


def test_unwrap_examples():
    np.testing.assert_allclose(dsp.unwrap_phase([0, 0.1, 0.2]), [0, 0.1, 0.2])
    np.testing.assert_allclose(dsp.unwrap_phase([3.0, -3.0]), [3.0, 2 * math.pi - 3.0])
    np.testing.assert_allclose(dsp.unwrap_phase([3.0, -3.0])[1], 3.2832, atol=1e-4)


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 500))
@settings(max_examples=50, deadline=None)
def test_unwrap_recovers_random_walk(seed, n):
    rng = np.random.default_rng(seed)
    walk = np.cumsum(rng.uniform(-3.1, 3.1, n))
    wrapped = np.angle(np.exp(1j * walk))
    rec = dsp.unwrap_phase(wrapped)
    assert np.max(np.abs(rec - (walk - walk[0] + wrapped[0]))) < 1e-12 * max(1.0, np.abs(walk).max())


def _agg(samples, step=0.5e-9):
    samples = np.asarray(samples, dtype=complex)
    return AggregatedTrace(samples, 1, np.zeros((1, samples.shape[1])), np.arange(samples.shape[1]), step)


def test_gauge_shorter_than_sample():
    with pytest.raises(ConfigurationError):
        dsp.gauge_samples(0.01, 0.5e-9, 1.468)
    assert dsp.gauge_samples(40.0, 0.5e-9, 1.468) == round(2 * 1.468 * 40 / 299_792_458.0 / 0.5e-9)


def test_frozen_medium_constant_phase():
    f = generate_scatterers(120.0, 50.0, seed=3)
    tr = synthesize_backscatter(f, ChannelPlan(num_channels=3), PerturbationSpec(60, 72.7, amplitude=0.0),
                                50, 0.0, 0)
    d = dsp.demodulate_phase(dsp.rotated_vector_sum(tr), 20.0, 0.5e-9, 1.468)
    assert d.diff_phase.shape[0] > 5
    assert np.max(np.var(d.diff_phase, axis=1)) < 1e-20


def test_stimulus_recovered_at_100_hz():
    # cells end at ~131 m and ~171 m, either side of the stretched region
    f = generate_scatterers(200.0, 100.0, seed=5)
    pert = PerturbationSpec(140.0, 152.7, frequency=100.0)
    tr = synthesize_backscatter(f, ChannelPlan(), pert, 300, 0.0, 0,
                                sample_indices=[2575, 2575 + dsp.gauge_samples(40.0, 0.5e-9, 1.468)])
    d = dsp.demodulate_phase(dsp.rotated_vector_sum(tr), 40.0, 0.5e-9, 1.468, start_indices=[2575])
    freq, width = dsp.dominant_frequency(d.diff_phase[0], 0.5e-3)
    assert abs(freq - 100.0) <= width
    est = dsp.estimate_snr_phi(d.diff_phase[0], 100.0, 0.5e-3)
    assert est.amplitude == pytest.approx(pert.peak_phase(1.468), rel=0.3)


def test_missing_gauge_pair():
    with pytest.raises(ConfigurationError):
        dsp.demodulate_phase(_agg(np.ones((3, 10))), 40.0, 0.5e-9, 1.468, start_indices=[0])


def test_diff_phase_noise_variance():
    # delta^2 = sigma_n^2 / A^2 = 0.01 at both points -> 0.02 rad^2
    rng = np.random.default_rng(4)
    K, T = 4000, 2
    base = np.array([1.0, 1.0j])
    noisy = base + 0.1 * (rng.standard_normal((K, T)) + 1j * rng.standard_normal((K, T)))
    step = 2 * 1.468 * 0.3 / 299_792_458.0     # one sample per 0.3 m gauge
    d = dsp.demodulate_phase(_agg(noisy, step), 0.3, step, 1.468, start_indices=[0])
    assert d.gauge_samples == 1
    assert d.diff_phase[0].var() == pytest.approx(0.02, rel=0.15)


def test_speckle_contrast():
    assert dsp.speckle_contrast(np.full(10, 3.0)) == 0.0
    rng = np.random.default_rng(2)
    assert dsp.speckle_contrast(rng.exponential(1.0, 1_000_000)) == pytest.approx(1.0, abs=0.01)
    assert dsp.speckle_contrast(rng.gamma(15, 1.0, 1_000_000)) == pytest.approx(0.2582, abs=0.01)
    with pytest.raises(ValueError):
        dsp.speckle_contrast(np.zeros(5))


def test_snr_of_noisy_sinusoid():
    rng = np.random.default_rng(6)
    k = np.arange(2000)
    y = np.sin(2 * math.pi * 100 * k * 0.5e-3 + 0.3) + 0.1 * rng.standard_normal(k.size)
    est = dsp.estimate_snr_phi(y, 100.0, 0.5e-3)
    assert est.snr == pytest.approx(50.0, rel=0.1)
    assert float(est) == est.snr


def test_snr_of_noise_only():
    rng = np.random.default_rng(7)
    low = sum(dsp.estimate_snr_phi(rng.standard_normal(300), 100.0, 0.5e-3).snr < 0.1
              for _ in range(1000))
    assert low / 1000 > 0.99


def test_snr_saturates_without_noise():
    k = np.arange(300)
    est = dsp.estimate_snr_phi(0.8 * np.sin(2 * math.pi * 100 * k * 0.5e-3), 100.0, 0.5e-3)
    assert est.saturated and est.snr == SATURATED_SNR and math.isfinite(est.snr)


def test_snr_preconditions():
    with pytest.raises(ValueError):
        dsp.estimate_snr_phi(np.zeros(100), 100.0, 0.5e-3)
    with pytest.raises(ValueError):
        dsp.estimate_snr_phi(np.zeros(3000), 1500.0, 0.5e-3)


def test_fading_fraction():
    assert dsp.fading_fraction(np.array([0.0, 1.0, 1.0, 2.0])) == 0.25
