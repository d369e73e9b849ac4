"""
Scatterer-level model of coherent Rayleigh backscatter in a single-mode fiber.

The fiber is a frozen set of discrete scatterers with random positions and
circular complex Gaussian reflectivities.  A rectangular probe pulse of width
T at frequency offset df_m returns, at fast time t,

    V_m(k, t) = sum_j r_j exp(i [phi_j(k) + 2 pi df_m tau_j(k)])

over scatterers whose round-trip delay tau_j = 2 n z_j / c lies in [t - T, t].
The argument of r_j plays the role of the scatterer's intrinsic optical phase
(the optical carrier term 2 pi f_opt tau_j mod 2 pi is absorbed there), and
phi_j(k) = 4 pi n f_opt dz_j(k) / c is the extra carrier phase from strain.
Traces are complex baseband; the heterodyne ramp is not modelled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import rng as _rng

SPEED_OF_LIGHT = 299_792_458.0
OPTICAL_FREQUENCY = 193.4e12
DEFAULT_REFRACTIVE_INDEX = 1.468
MIN_SCATTERERS_PER_HALF_PULSE = 50


class ConfigurationError(ValueError):
    pass


def cell_length(pulse_width: float, refractive_index: float = DEFAULT_REFRACTIVE_INDEX) -> float:
    """Fiber length [m] covered by one rectangular pulse (c T / 2n)."""
    return SPEED_OF_LIGHT * pulse_width / (2.0 * refractive_index)


def round_trip_time(length: float, refractive_index: float = DEFAULT_REFRACTIVE_INDEX) -> float:
    return 2.0 * refractive_index * length / SPEED_OF_LIGHT


def position_to_sample(z: float, refractive_index: float, fast_time_step: float) -> int:
    """Fast-time index whose resolution cell ends at position z."""
    return int(round(round_trip_time(z, refractive_index) / fast_time_step))


def sample_to_position(index, refractive_index: float, fast_time_step: float):
    return np.asarray(index) * fast_time_step * SPEED_OF_LIGHT / (2.0 * refractive_index)


def strain_phase_per_meter(refractive_index: float = DEFAULT_REFRACTIVE_INDEX) -> float:
    """Carrier phase [rad] per meter of elongation, 4 pi n f_opt / c."""
    return 4.0 * math.pi * refractive_index * OPTICAL_FREQUENCY / SPEED_OF_LIGHT


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ScattererField:
    positions: np.ndarray
    reflectivities: np.ndarray
    length: float
    refractive_index: float = DEFAULT_REFRACTIVE_INDEX
    seed: int = 0
    reflectivity_variance: float = 1.0

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        refl = np.array(self.reflectivities, dtype=complex)
        if pos.ndim != 1 or refl.shape != pos.shape:
            raise ValueError("positions and reflectivities must be 1-D arrays of equal length")
        if self.length <= 0:
            raise ValueError("fiber length must be positive")
        if pos.size and (pos[0] < 0 or pos[-1] > self.length):
            raise ValueError("scatterer positions must lie in [0, length]")
        if np.any(np.diff(pos) <= 0):
            raise ValueError("scatterer positions must be strictly increasing")
        object.__setattr__(self, "positions", _readonly(pos))
        object.__setattr__(self, "reflectivities", _readonly(refl))

    @property
    def count(self) -> int:
        return self.positions.size

    def __eq__(self, other):
        if not isinstance(other, ScattererField):
            return NotImplemented
        return (self.length == other.length and self.refractive_index == other.refractive_index
                and np.array_equal(self.positions, other.positions)
                and np.array_equal(self.reflectivities, other.reflectivities))

    __hash__ = None


def generate_scatterers(length: float, density: float, seed: int, *,
                        refractive_index: float = DEFAULT_REFRACTIVE_INDEX,
                        pulse_width: float = 100e-9,
                        reflectivity_variance: float = 1.0) -> ScattererField:
    """Homogeneous Poisson field of scatterers on [0, length].

    Raises ConfigurationError when fewer than 50 scatterers are expected per
    half pulse, since the summed field would then be visibly non-Gaussian.
    """
    if length <= 0 or density <= 0:
        raise ConfigurationError("length and density must be positive")
    expected = density * cell_length(pulse_width, refractive_index) / 2.0
    if expected < MIN_SCATTERERS_PER_HALF_PULSE:
        raise ConfigurationError(
            f"scatterer density {density}/m gives {expected:.1f} scatterers per half pulse; "
            f"at least {MIN_SCATTERERS_PER_HALF_PULSE} are needed")
    gen = _rng.stream(seed, _rng.FIELD)
    count = gen.poisson(density * length)
    positions = np.sort(gen.uniform(0.0, length, count))
    while np.any(np.diff(positions) <= 0):  # pragma: no cover - measure-zero event
        positions = np.unique(np.concatenate([positions, gen.uniform(0.0, length, 1)]))[:count]
    scale = math.sqrt(reflectivity_variance / 2.0)
    refl = (gen.standard_normal(count) + 1j * gen.standard_normal(count)) * scale
    return ScattererField(positions, refl, float(length), refractive_index, int(seed),
                          reflectivity_variance)


@dataclass(frozen=True)
class ChannelPlan:
    base_shift: float = 500e6
    channel_spacing: float = 25e6
    num_channels: int = 15
    pulse_width: float = 100e-9
    repetition_period: float = 0.5e-3
    include_noise_slot: bool = True
    envelope: str = "rectangular"

    def __post_init__(self):
        if self.num_channels < 1:
            raise ConfigurationError("num_channels must be >= 1")
        if self.pulse_width <= 0 or self.repetition_period <= 0:
            raise ConfigurationError("pulse_width and repetition_period must be positive")
        if self.channel_spacing < 0:
            raise ConfigurationError("channel_spacing must be >= 0")
        if self.envelope != "rectangular":
            raise ConfigurationError(f"unsupported pulse envelope {self.envelope!r}")

    @property
    def offsets(self) -> np.ndarray:
        return self.base_shift + self.channel_spacing * np.arange(self.num_channels)

    @property
    def slots(self) -> int:
        return self.num_channels + int(self.include_noise_slot)

    def validate(self, fiber_length: float, refractive_index: float = DEFAULT_REFRACTIVE_INDEX):
        """Independence (spacing >= 1/T) and one round trip per slot."""
        if self.num_channels > 1 and self.channel_spacing * self.pulse_width < 1.0 - 1e-9:
            raise ConfigurationError(
                f"channel spacing {self.channel_spacing:g} Hz is below 1/pulse_width "
                f"({1.0 / self.pulse_width:g} Hz); channels would be correlated")
        needed = self.slots * round_trip_time(fiber_length, refractive_index)
        if self.repetition_period < needed:
            raise ConfigurationError(
                f"repetition period {self.repetition_period:g} s is shorter than "
                f"{self.slots} round trips ({needed:g} s)")


@dataclass(frozen=True)
class PerturbationSpec:
    region_start: float = 800.0
    region_end: float = 812.7
    amplitude: float = 6.5e-9
    frequency: float = 100.0
    waveform: str = "sinusoid"

    def __post_init__(self):
        if self.region_end < self.region_start:
            raise ConfigurationError("perturbation region_end must be >= region_start")
        if self.amplitude < 0 or self.frequency < 0:
            raise ConfigurationError("perturbation amplitude and frequency must be >= 0")
        if self.waveform != "sinusoid":
            raise ConfigurationError(f"unsupported waveform {self.waveform!r}")

    @property
    def region_length(self) -> float:
        return self.region_end - self.region_start

    def strain(self, k, repetition_period: float):
        k = np.asarray(k, dtype=float)
        return self.amplitude * np.sin(2.0 * math.pi * self.frequency * k * repetition_period)

    def peak_phase(self, refractive_index: float = DEFAULT_REFRACTIVE_INDEX) -> float:
        """Peak differential carrier phase [rad] across the whole region."""
        return strain_phase_per_meter(refractive_index) * self.amplitude * self.region_length

    def validate(self, fiber_length: float):
        if self.region_start < 0 or self.region_end > fiber_length:
            raise ConfigurationError("perturbation region must lie inside the fiber")


def _displacements(positions: np.ndarray, pert: PerturbationSpec, eps) -> np.ndarray:
    """Displacement of each scatterer for strain eps (scalar or shape (K,))."""
    eps = np.asarray(eps, dtype=float)
    if np.any(1.0 + eps <= 0):
        raise ValueError("strain of -1 or below would reorder scatterers")
    lever = np.clip(positions - pert.region_start, 0.0, pert.region_length)
    return np.multiply.outer(eps, lever)


def displaced_positions(field: ScattererField, pert: PerturbationSpec, k: int,
                        repetition_period: float) -> np.ndarray:
    """Scatterer positions at slow-time index k under a stretched region.

    Before the region nothing moves, inside it the fiber stretches linearly,
    and everything beyond is shifted by the full elongation.
    """
    eps = float(pert.strain(k, repetition_period))
    return field.positions + _displacements(field.positions, pert, eps)


@dataclass(frozen=True, eq=False)
class BackscatterTrace:
    samples: np.ndarray                  # [channel][slow time][fast time]
    fast_time_step: float
    noise_variance: float
    fast_time_index: np.ndarray          # grid index of each fast-time column
    plan: ChannelPlan
    channels: tuple = ()
    refractive_index: float = DEFAULT_REFRACTIVE_INDEX
    noise_slot_samples: np.ndarray | None = None
    field_seed: int | None = None
    noise_seed: int | None = None
    metadata: dict = dc_field(default_factory=dict)

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_pulses(self) -> int:
        return self.samples.shape[1]

    @property
    def channel_offsets(self) -> np.ndarray:
        return self.plan.offsets[list(self.channels)]


def fast_time_grid_size(length: float, refractive_index: float, pulse_width: float,
                        fast_time_step: float) -> int:
    return int(math.floor((round_trip_time(length, refractive_index) + pulse_width) / fast_time_step)) + 1


def _candidate_mask(tau: np.ndarray, lo: np.ndarray, hi: np.ndarray, margin: float) -> np.ndarray:
    """Scatterers that can fall in any window [lo, hi] (widened by margin)."""
    start = np.searchsorted(tau, lo - margin, side="left")
    stop = np.searchsorted(tau, hi + margin, side="right")
    marks = np.zeros(tau.size + 1, dtype=np.int64)
    np.add.at(marks, start, 1)
    np.add.at(marks, stop, -1)
    return np.cumsum(marks[:-1]) > 0


def synthesize_backscatter(field: ScattererField, plan: ChannelPlan,
                           pert: PerturbationSpec | None, num_pulses: int,
                           noise_variance: float, seed: int, *,
                           fast_time_step: float = 0.5e-9,
                           sample_indices=None, channels=None,
                           check_plan: bool = True) -> BackscatterTrace:
    """Complex-baseband traces for every channel, pulse and fast-time sample.

    ``sample_indices`` restricts synthesis to selected fast-time grid points
    (default: the whole grid).  ``channels`` selects channel numbers
    (default: all).  Noise for channel m always comes from the stream keyed by
    (seed, m), so any channel subset reproduces the same per-channel noise.
    """
    if num_pulses < 1:
        raise ConfigurationError("num_pulses must be >= 1")
    if noise_variance < 0:
        raise ConfigurationError("noise_variance must be >= 0")
    if fast_time_step > plan.pulse_width:
        raise ConfigurationError(
            f"fast-time step {fast_time_step:g} s is coarser than the pulse width {plan.pulse_width:g} s")
    n = field.refractive_index
    if check_plan:
        plan.validate(field.length, n)
    if pert is not None:
        pert.validate(field.length)

    n_fast = fast_time_grid_size(field.length, n, plan.pulse_width, fast_time_step)
    if sample_indices is None:
        idx = np.arange(n_fast)
    else:
        idx = np.asarray(sample_indices, dtype=np.int64).ravel()
        if idx.size == 0 or idx.min() < 0:
            raise ConfigurationError("sample_indices must be nonempty and nonnegative")
    if channels is None:
        channels = tuple(range(plan.num_channels))
    else:
        channels = tuple(int(c) for c in channels)
        if not channels or min(channels) < 0 or max(channels) >= plan.num_channels:
            raise ConfigurationError("channel selection out of range")

    t_hi = idx * fast_time_step
    t_lo = t_hi - plan.pulse_width
    tau0 = 2.0 * n * field.positions / SPEED_OF_LIGHT

    moving = pert is not None and pert.amplitude > 0 and pert.frequency > 0
    if moving:
        eps = pert.strain(np.arange(num_pulses), plan.repetition_period)
        margin = 2.0 * n * float(np.max(np.abs(eps))) * pert.region_length / SPEED_OF_LIGHT
        margin = margin * (1 + 1e-6) + 1e-18
    else:
        eps = np.zeros(1)
        margin = 0.0
    keep = _candidate_mask(tau0, t_lo, t_hi, margin)
    z0 = field.positions[keep]
    tau0 = tau0[keep]
    refl = field.reflectivities[keep]

    # scatterers before the region are static, those beyond it share one
    # displacement; only the ones inside need a per-pulse phase
    if pert is not None:
        j_in = int(np.searchsorted(z0, pert.region_start, side="right"))
        j_after = max(int(np.searchsorted(z0, pert.region_end, side="left")), j_in)
        lever = np.clip(z0 - pert.region_start, 0.0, pert.region_length)
        stretch = pert.region_length
    else:
        j_in = j_after = z0.size
        lever = np.zeros(z0.size)
        stretch = 0.0
    if np.any(1.0 + eps <= 0):
        raise ValueError("strain of -1 or below would reorder scatterers")
    tau_k = tau0[None, :] + (2.0 * n / SPEED_OF_LIGHT) * np.multiply.outer(eps, lever)
    lo = np.empty((eps.size, idx.size), dtype=np.int64)
    hi = np.empty_like(lo)
    for k in range(eps.size):
        lo[k] = np.searchsorted(tau_k[k], t_lo, side="left")
        hi[k] = np.searchsorted(tau_k[k], t_hi, side="right")
    lo_b, hi_b = np.minimum(lo, j_in), np.minimum(hi, j_in)
    lo_a, hi_a = np.maximum(lo, j_after), np.maximum(hi, j_after)
    lo_i = np.clip(lo, j_in, j_after) - j_in
    hi_i = np.clip(hi, j_in, j_after) - j_in
    dz_in = np.multiply.outer(eps, lever[j_in:j_after])

    offsets = plan.offsets
    sigma_n = math.sqrt(noise_variance)
    carrier_per_m = strain_phase_per_meter(n)
    out = np.empty((len(channels), num_pulses, idx.size), dtype=complex)
    for row, ch in enumerate(channels):
        two_pi_f = 2.0 * math.pi * offsets[ch]
        static = refl * np.exp(1j * two_pi_f * tau0)
        cs = np.concatenate([[0.0], np.cumsum(static)])
        # rad per meter of displacement: carrier plus channel delay term
        c_m = carrier_per_m + two_pi_f * 2.0 * n / SPEED_OF_LIGHT
        inside = static[j_in:j_after][None, :] * np.exp(1j * c_m * dz_in)
        ci = np.zeros((eps.size, inside.shape[1] + 1), dtype=complex)
        np.cumsum(inside, axis=1, out=ci[:, 1:])
        after_phasor = np.exp(1j * c_m * stretch * eps)[:, None]
        v = (cs[hi_b] - cs[lo_b]
             + after_phasor * (cs[hi_a] - cs[lo_a])
             + np.take_along_axis(ci, hi_i, axis=1) - np.take_along_axis(ci, lo_i, axis=1))
        out[row] = np.broadcast_to(v, (num_pulses, idx.size))
        if sigma_n > 0:
            noise = _rng.stream(seed, _rng.NOISE, ch).standard_normal((num_pulses, idx.size, 2))
            out[row] += sigma_n * (noise[..., 0] + 1j * noise[..., 1])

    slot = None
    if plan.include_noise_slot:
        noise = _rng.stream(seed, _rng.NOISE_SLOT).standard_normal((num_pulses, idx.size, 2))
        slot = sigma_n * (noise[..., 0] + 1j * noise[..., 1])

    return BackscatterTrace(
        samples=out,
        fast_time_step=fast_time_step,
        noise_variance=float(noise_variance),
        fast_time_index=idx,
        plan=plan,
        channels=channels,
        refractive_index=n,
        noise_slot_samples=slot,
        field_seed=field.seed,
        noise_seed=int(seed),
    )
