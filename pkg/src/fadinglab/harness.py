"""
Monte Carlo sweeps over the number of aggregated channels M.

Each realization draws a fresh scatterer field, synthesizes all channels at
the gauge points and at a set of disjoint resolution cells, then for every M
aggregates the first M channels, demodulates the perturbed gauge and
estimates SNR_phi.  Per-realization results are reduced in index order, so a
sweep is reproducible bit for bit regardless of the worker count.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field, replace

import numpy as np
from scipy import stats

from . import __version__
from . import analytic
from . import rng as _rng
from .dsp import (demodulate_phase, estimate_snr_phi, fading_fraction,
                  gauge_samples, rotated_vector_sum, speckle_contrast)
from .fiber import (BackscatterTrace, ChannelPlan, ConfigurationError, PerturbationSpec,
                    cell_length, generate_scatterers, position_to_sample, round_trip_time,
                    sample_to_position, synthesize_backscatter)

MIN_STAT_REALIZATIONS = 100
MIN_KS_SAMPLES = 500
MIN_SIGMA2_SAMPLES = 10_000


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    M_values: tuple = tuple(range(1, 16))
    realizations: int = 500
    master_seed: int = 0
    fiber_length: float = 200.0
    scatterer_density: float = 100.0
    refractive_index: float = 1.468
    plan: ChannelPlan = ChannelPlan()
    perturbation: PerturbationSpec = PerturbationSpec(140.0, 152.7)
    num_pulses: int = 300
    fast_time_step: float = 0.5e-9
    gauge_length: float = 40.0
    snr_intensity_db: float = 20.0
    snr_jitter_db: float = 0.0
    calibration_fields: int = 8
    check_invariants: bool = True

    def validate(self):
        if self.realizations < MIN_STAT_REALIZATIONS:
            raise ConfigurationError(
                f"realizations must be >= {MIN_STAT_REALIZATIONS} for statistical output, "
                f"got {self.realizations}")
        for M in self.M_values:
            if not 1 <= M <= self.plan.num_channels:
                raise ConfigurationError(
                    f"M = {M} is outside 1..num_channels ({self.plan.num_channels})")
        if self.calibration_fields < 1:
            raise ConfigurationError("calibration_fields must be >= 1")
        if self.snr_jitter_db < 0:
            raise ConfigurationError("snr_jitter_db must be >= 0")
        self.plan.validate(self.fiber_length, self.refractive_index)
        self.perturbation.validate(self.fiber_length)
        layout(self)

    @property
    def channels_needed(self) -> int:
        return max(self.M_values, default=1)


@dataclass(frozen=True)
class Layout:
    """Fast-time sample indices used by a sweep."""
    gauge_start: int
    gauge_end: int
    amplitude_indices: tuple

    @property
    def all_indices(self) -> np.ndarray:
        return np.unique(np.array((self.gauge_start, self.gauge_end) + self.amplitude_indices))


def layout(cfg: SweepConfig) -> Layout:
    """Gauge pair straddling the perturbation, plus disjoint unperturbed cells."""
    n, dt = cfg.refractive_index, cfg.fast_time_step
    cell = cell_length(cfg.plan.pulse_width, n)
    pert = cfg.perturbation
    g = gauge_samples(cfg.gauge_length, dt, n)
    gauge = sample_to_position(g, n, dt)
    # both resolution cells must lie outside the stretched region
    lo = max(pert.region_end - gauge + cell, cell)
    hi = min(pert.region_start, cfg.fiber_length - gauge)
    if lo > hi:
        raise ConfigurationError(
            f"gauge length {cfg.gauge_length} m cannot place both resolution cells "
            f"({cell:.2f} m) outside the perturbed region")
    i1 = position_to_sample(0.5 * (lo + hi), n, dt)

    width = int(math.ceil(cfg.plan.pulse_width / dt)) + 1
    first = width
    last = int(math.floor(round_trip_time(cfg.fiber_length, n) / dt))
    rs = round_trip_time(pert.region_start, n) / dt
    re_ = round_trip_time(pert.region_end, n) / dt
    amp = []
    i = first
    while i <= last:
        if i < rs - 1 or i - width + 1 > re_ + 1:
            amp.append(i)
            i += width
        else:
            i += 1
    if not amp:
        raise ConfigurationError("fiber too short for any unperturbed resolution cell")
    return Layout(i1, i1 + g, tuple(amp))


def _sigma2_from_power(power: np.ndarray, noise_variance: float) -> float:
    power = np.asarray(power, dtype=float).ravel()
    if power.size < MIN_SIGMA2_SAMPLES:
        raise ValueError(f"need at least {MIN_SIGMA2_SAMPLES} samples, got {power.size}")
    mean = float(power.mean())
    est = 0.5 * (mean - 2.0 * noise_variance)
    stderr = 0.5 * float(power.std()) / math.sqrt(power.size)
    if est <= 3.0 * stderr:
        raise NumericalError(
            f"noise-corrected field variance {est:.3e} is not resolvable from zero "
            f"(stderr {stderr:.1e}); noise dominates the signal")
    return est


def estimate_sigma2(traces) -> float:
    """Per-quadrature field variance: (mean |V|^2 - 2 sigma_n^2) / 2.

    Accepts one BackscatterTrace or a sequence sharing one noise variance.
    """
    if isinstance(traces, BackscatterTrace):
        traces = [traces]
    traces = list(traces)
    if not traces:
        raise ValueError("no traces given")
    nv = traces[0].noise_variance
    if any(t.noise_variance != nv for t in traces):
        raise ValueError("traces have different noise variances")
    power = np.concatenate([np.abs(t.samples).ravel() ** 2 for t in traces])
    return _sigma2_from_power(power, nv)


def fit_sigma2_rayleigh_sum(amplitudes, M: int) -> float:
    """Maximum-likelihood sigma2 of the Rayleigh-sum density for given amplitudes.

    A^2 is Gamma(M, 2 M b) under that density, so the MLE of the scale is the
    sample mean of A^2 divided by M.
    """
    a = np.asarray(amplitudes, dtype=float)
    theta = float(np.mean(a * a)) / M
    return theta / (2.0 * M * analytic.scale_b(M, 1.0))


@dataclass(frozen=True)
class KSResult:
    statistic: float
    pvalue: float
    n: int


def amplitude_distribution_test(samples, M: int, sigma2: float) -> KSResult:
    """Two-sided KS test of amplitudes against the Rayleigh-sum CDF."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < MIN_KS_SAMPLES:
        raise ValueError(f"amplitude_distribution_test needs >= {MIN_KS_SAMPLES} samples, got {x.size}")
    res = stats.kstest(x, lambda v: analytic.rayleigh_sum_cdf(v, M, sigma2))
    return KSResult(float(res.statistic), float(res.pvalue), x.size)


@dataclass(frozen=True, eq=False)
class RealizationResult:
    index: int
    snr: np.ndarray           # (nM,)
    saturated: np.ndarray     # (nM,)
    amplitudes: np.ndarray    # (nM, P)
    power_sum: float          # sum of per-channel |V|^2 at amplitude cells
    power_sq_sum: float
    power_count: int
    noise_variance: float


def _realization_noise(cfg: SweepConfig, index: int, sigma_n2: float) -> float:
    if cfg.snr_jitter_db <= 0:
        return sigma_n2
    z = _rng.stream(cfg.master_seed, _rng.JITTER, index).standard_normal()
    return sigma_n2 * 10.0 ** (cfg.snr_jitter_db * z / 10.0)


def run_realization(cfg: SweepConfig, index: int, sigma_n2: float,
                    lay: Layout | None = None) -> RealizationResult:
    lay = lay or layout(cfg)
    M_list = _internal_M(cfg)
    field_seed = _rng.derive_seed(cfg.master_seed, _rng.FIELD, index)
    noise_seed = _rng.derive_seed(cfg.master_seed, _rng.NOISE, index)
    fld = generate_scatterers(cfg.fiber_length, cfg.scatterer_density, field_seed,
                              refractive_index=cfg.refractive_index,
                              pulse_width=cfg.plan.pulse_width)
    nv = _realization_noise(cfg, index, sigma_n2)
    idx = lay.all_indices
    trace = synthesize_backscatter(fld, cfg.plan, cfg.perturbation, cfg.num_pulses, nv, noise_seed,
                                   fast_time_step=cfg.fast_time_step, sample_indices=idx,
                                   channels=range(cfg.channels_needed))
    col = {int(i): c for c, i in enumerate(idx)}
    amp_cols = [col[i] for i in lay.amplitude_indices]
    power = np.abs(trace.samples[:, :, amp_cols]) ** 2

    snr = np.empty(len(M_list))
    sat = np.zeros(len(M_list), dtype=bool)
    amps = np.empty((len(M_list), len(amp_cols)))
    for j, M in enumerate(M_list):
        agg = rotated_vector_sum(trace, range(M))
        demod = demodulate_phase(agg, cfg.gauge_length, cfg.fast_time_step, cfg.refractive_index,
                                 start_indices=[lay.gauge_start])
        est = estimate_snr_phi(demod.diff_phase[0], cfg.perturbation.frequency,
                               cfg.plan.repetition_period)
        snr[j] = est.snr
        sat[j] = est.saturated
        amps[j] = demod.amplitude_profile[amp_cols]
    return RealizationResult(index, snr, sat, amps, float(power.sum()), float((power ** 2).sum()),
                             int(power.size), nv)


def _internal_M(cfg: SweepConfig) -> list:
    return sorted(set(cfg.M_values) | {1})


def calibrate_sigma2(cfg: SweepConfig) -> float:
    """Field variance from noise-free calibration fields (own seed stream)."""
    n, dt = cfg.refractive_index, cfg.fast_time_step
    width = int(math.ceil(cfg.plan.pulse_width / dt)) + 1
    last = int(math.floor(round_trip_time(cfg.fiber_length, n) / dt))
    idx = np.arange(width, last + 1)
    traces = []
    for c in range(cfg.calibration_fields):
        fld = generate_scatterers(cfg.fiber_length, cfg.scatterer_density,
                                  _rng.derive_seed(cfg.master_seed, _rng.CALIBRATION, c),
                                  refractive_index=n, pulse_width=cfg.plan.pulse_width)
        traces.append(synthesize_backscatter(fld, cfg.plan, None, 1, 0.0, 0, fast_time_step=dt,
                                             sample_indices=idx,
                                             channels=range(cfg.channels_needed)))
    return estimate_sigma2(traces)


@dataclass(frozen=True)
class MStatistics:
    M: int
    n: int
    mean_snr_phi: float
    std_snr_phi: float
    cv: float
    gain_K: float
    speckle_contrast: float
    fading_fraction: float
    saturated: int
    ks_statistic: float
    ks_pvalue: float
    sigma2_fit: float
    ks_statistic_channel: float
    ks_pvalue_channel: float
    theory_mean_snr_phi: float
    theory_gain_K: float
    theory_gain_K_stirling: float
    theory_cv: float
    theory_speckle: float


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True, eq=False)
class Histogram:
    M: int
    edges: np.ndarray
    counts: np.ndarray
    theory_counts: np.ndarray


@dataclass(eq=False)
class StatisticsReport:
    config: SweepConfig
    rows: list
    histograms: list
    snr_samples: np.ndarray          # (realizations, len(rows))
    amplitude_samples: np.ndarray    # (realizations, len(rows)) at the first cell
    sigma2_hat: float
    sigma2_calibration: float
    sigma_n2: float
    sigma_phi2: float
    checks: list = dc_field(default_factory=list)
    metadata: dict = dc_field(default_factory=dict)

    def row(self, M: int) -> MStatistics:
        for r in self.rows:
            if r.M == M:
                return r
        raise KeyError(M)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _collect(cfg: SweepConfig, workers: int, sigma_n2: float, lay: Layout) -> list:
    indices = range(cfg.realizations)
    if workers <= 1:
        return [run_realization(cfg, i, sigma_n2, lay) for i in indices]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        chunk = max(1, cfg.realizations // (8 * workers))
        return list(pool.map(run_realization, [cfg] * cfg.realizations, indices,
                             [sigma_n2] * cfg.realizations, [lay] * cfg.realizations,
                             chunksize=chunk))


def run_sweep(config: SweepConfig, workers: int = 1) -> StatisticsReport:
    """Monte Carlo sweep over config.M_values; deterministic for a fixed master seed."""
    config.validate()
    lay = layout(config)
    sigma2_cal = calibrate_sigma2(config)
    sigma_n2 = sigma2_cal / 10.0 ** (config.snr_intensity_db / 10.0)
    results = _collect(config, workers, sigma_n2, lay)
    results.sort(key=lambda r: r.index)

    M_list = _internal_M(config)
    snr_all = np.array([r.snr for r in results])                 # (R, nM)
    amps_all = np.stack([r.amplitudes for r in results])         # (R, nM, P)
    power_sum = math.fsum(r.power_sum for r in results)
    power_sq = math.fsum(r.power_sq_sum for r in results)
    count = sum(r.power_count for r in results)
    mean_nv = math.fsum(r.noise_variance * r.power_count for r in results) / count
    mean_power = power_sum / count
    sigma2_hat = 0.5 * (mean_power - 2.0 * mean_nv)
    stderr = 0.5 * math.sqrt(max(power_sq / count - mean_power ** 2, 0.0) / count)
    if sigma2_hat <= 3.0 * stderr:
        raise NumericalError("field variance is not resolvable above the noise")
    sigma_phi2 = 0.5 * config.perturbation.peak_phase(config.refractive_index) ** 2

    base = M_list.index(1)
    mean_1 = float(snr_all[:, base].mean())
    rows, hists = [], []
    keep_cols = []
    for j, M in enumerate(M_list):
        if M not in config.M_values:
            continue
        keep_cols.append(j)
        s = snr_all[:, j]
        mean = float(s.mean())
        std = float(s.std(ddof=1))
        first_cell = amps_all[:, j, 0]
        intensity = amps_all[:, j, :] ** 2
        s2_fit = fit_sigma2_rayleigh_sum(first_cell, M)
        if first_cell.size >= MIN_KS_SAMPLES:
            ks_fit = amplitude_distribution_test(first_cell, M, s2_fit)
            ks_ch = amplitude_distribution_test(first_cell, M, sigma2_hat)
        else:
            ks_fit = ks_ch = KSResult(float("nan"), float("nan"), first_cell.size)
        k_exact, k_stir = analytic.gain_K(M)
        theory_mean = analytic.mean_snr_phi_closed(
            analytic.FadingParams(M, sigma2_hat, mean_nv, sigma_phi2)) if sigma_phi2 > 0 else 0.0
        rows.append(MStatistics(
            M=M, n=s.size, mean_snr_phi=mean, std_snr_phi=std, cv=std / mean,
            gain_K=math.sqrt(mean / mean_1),
            speckle_contrast=speckle_contrast(intensity),
            fading_fraction=fading_fraction(intensity),
            saturated=int(np.sum([r.saturated[j] for r in results])),
            ks_statistic=ks_fit.statistic, ks_pvalue=ks_fit.pvalue, sigma2_fit=s2_fit,
            ks_statistic_channel=ks_ch.statistic, ks_pvalue_channel=ks_ch.pvalue,
            theory_mean_snr_phi=theory_mean, theory_gain_K=k_exact,
            theory_gain_K_stirling=k_stir, theory_cv=analytic.coefficient_of_variation(M),
            theory_speckle=1.0 / math.sqrt(M),
        ))
        edges = np.histogram_bin_edges(first_cell, bins="fd")
        counts, _ = np.histogram(first_cell, bins=edges)
        cdf = analytic.rayleigh_sum_cdf(edges, M, s2_fit)
        hists.append(Histogram(M, edges, counts, first_cell.size * np.diff(cdf)))

    report = StatisticsReport(
        config=config, rows=rows, histograms=hists,
        snr_samples=snr_all[:, keep_cols], amplitude_samples=amps_all[:, keep_cols, 0],
        sigma2_hat=sigma2_hat, sigma2_calibration=sigma2_cal, sigma_n2=sigma_n2,
        sigma_phi2=sigma_phi2,
        metadata={
            "version": __version__,
            "master_seed": config.master_seed,
            "gauge_start_index": lay.gauge_start,
            "gauge_end_index": lay.gauge_end,
            "amplitude_cells": len(lay.amplitude_indices),
        },
    )
    if config.check_invariants:
        report.checks = invariant_checks(report)
    return report


def invariant_checks(report: StatisticsReport) -> list:
    rows = sorted(report.rows, key=lambda r: r.M)
    checks = []
    if not rows:
        return checks
    cv_err = max(abs(r.cv - r.theory_cv) for r in rows)
    checks.append(CheckResult("cv_within_0.10_of_theory", cv_err <= 0.10,
                              f"max |cv - theory| = {cv_err:.4f}"))
    cvs = [r.cv for r in rows]
    checks.append(CheckResult("cv_decreasing_in_M", all(b < a for a, b in zip(cvs, cvs[1:])),
                              "cv = " + ", ".join(f"{c:.4f}" for c in cvs)))
    k_err = max(abs(r.gain_K / r.theory_gain_K - 1.0) for r in rows)
    checks.append(CheckResult("gain_K_within_10pct_of_theory", k_err <= 0.10,
                              f"max relative error = {k_err:.4f}"))
    paired = report.snr_samples
    order = np.argsort([r.M for r in report.rows])
    worst = math.inf
    for a, b in zip(order, order[1:]):
        d = paired[:, b] - paired[:, a]
        lower = d.mean() - 1.96 * d.std(ddof=1) / math.sqrt(d.size)
        worst = min(worst, lower / max(abs(paired[:, a].mean()), 1e-300))
    if len(rows) > 1:
        checks.append(CheckResult("mean_snr_increasing_in_M", bool(worst > 0),
                                  f"smallest lower 95% bound of paired increase (relative) = {worst:.4f}"))
    sc_err = max(abs(r.speckle_contrast - r.theory_speckle) for r in rows)
    checks.append(CheckResult("speckle_within_0.05_of_1/sqrt(M)", sc_err <= 0.05,
                              f"max |contrast - 1/sqrt(M)| = {sc_err:.4f}"))
    scs = [r.speckle_contrast for r in rows]
    checks.append(CheckResult("speckle_decreasing_in_M", all(b < a for a, b in zip(scs, scs[1:])),
                              "contrast = " + ", ".join(f"{c:.4f}" for c in scs)))
    return checks


# -- report files ---------------------------------------------------------

SUMMARY_COLUMNS = [f.name for f in MStatistics.__dataclass_fields__.values()]
CURVE_COLUMNS = ["M", "K_exact", "K_stirling", "K_empirical", "cv_theory", "cv_empirical",
                 "mean_snr_phi_theory", "mean_snr_phi_empirical", "speckle_theory",
                 "speckle_empirical"]
HISTOGRAM_COLUMNS = ["M", "bin_left", "bin_right", "count", "theory_count"]


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if math.isnan(v):
        return "nan"
    return format(v, ".10g")


def _write_csv(path: str, header: list, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write report file {path}: {exc.strerror}") from exc


def manifest_text(report: StatisticsReport) -> str:
    from .config import format_sweep_config

    body = format_sweep_config(report.config)
    digest = hashlib.sha256(body.encode()).hexdigest()[:16]
    meta = {
        "version": report.metadata.get("version", __version__),
        "config_hash": digest,
        "sigma2_calibration": _fmt(report.sigma2_calibration),
        "sigma2_hat": _fmt(report.sigma2_hat),
        "sigma_n2": _fmt(report.sigma_n2),
        "sigma_phi2": _fmt(report.sigma_phi2),
        "gauge_start_index": report.metadata.get("gauge_start_index"),
        "gauge_end_index": report.metadata.get("gauge_end_index"),
        "amplitude_cells": report.metadata.get("amplitude_cells"),
    }
    head = "".join(f"# {k} = {v}\n" for k, v in meta.items())
    return head + body


def emit_report(report: StatisticsReport, directory) -> list:
    """Write summary, curves, histograms, SNR samples, checks and manifest."""
    directory = os.fspath(directory)
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot create report directory {directory}: {exc.strerror}") from exc
    files = []

    def out(name):
        p = os.path.join(directory, name)
        files.append(p)
        return p

    _write_csv(out("summary.csv"), SUMMARY_COLUMNS,
               ([getattr(r, c) for c in SUMMARY_COLUMNS] for r in report.rows))
    _write_csv(out("curves.csv"), CURVE_COLUMNS,
               ([r.M, r.theory_gain_K, r.theory_gain_K_stirling, r.gain_K, r.theory_cv, r.cv,
                 r.theory_mean_snr_phi, r.mean_snr_phi, r.theory_speckle, r.speckle_contrast]
                for r in report.rows))
    _write_csv(out("histograms.csv"), HISTOGRAM_COLUMNS,
               ([h.M, h.edges[i], h.edges[i + 1], h.counts[i], h.theory_counts[i]]
                for h in report.histograms for i in range(h.counts.size)))
    Ms = [r.M for r in report.rows]
    _write_csv(out("snr_phi_samples.csv"), ["realization", "M", "snr_phi"],
               ([i, M, report.snr_samples[i, j]]
                for i in range(report.snr_samples.shape[0]) for j, M in enumerate(Ms)))
    _write_csv(out("checks.csv"), ["check", "passed", "detail"],
               ([c.name, c.passed, c.detail] for c in report.checks))
    path = out("manifest.txt")
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(manifest_text(report))
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write manifest {path}: {exc.strerror}") from exc
    return files


def empty_report(config: SweepConfig) -> StatisticsReport:
    """A report with no M rows (header-only CSVs)."""
    cfg = replace(config, M_values=())
    return StatisticsReport(cfg, [], [], np.zeros((0, 0)), np.zeros((0, 0)),
                            float("nan"), float("nan"), float("nan"), float("nan"),
                            metadata={"version": __version__})
