import math
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np
import pytest
from scipy import special

from fadinglab import analytic, harness
from fadinglab.config import load_config, parse_config
from fadinglab.fiber import BackscatterTrace, ChannelPlan, ConfigurationError, cell_length, sample_to_position
from fadinglab.harness import NumericalError, SweepConfig

GOLDEN_DIR = Path(__file__).parent / "golden"
GOLDEN_FILES = ["summary.csv", "curves.csv", "histograms.csv", "snr_phi_samples.csv",
                "checks.csv", "manifest.txt"]


def golden_config():
    path = resources.files("fadinglab") / "configs" / "golden.cfg"
    return load_config(path).sweep


def _gaussian_trace(sigma2, noise_variance, n=200_000, seed=0):
    rng = np.random.default_rng(seed)
    s = math.sqrt(sigma2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    s += math.sqrt(noise_variance) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return BackscatterTrace(s.reshape(1, 1, n), 0.5e-9, noise_variance, np.arange(n), ChannelPlan())


def test_sigma2_from_clean_field():
    assert harness.estimate_sigma2(_gaussian_trace(0.014076, 0.0)) == pytest.approx(0.014076, rel=0.01)


def test_sigma2_with_noise():
    assert harness.estimate_sigma2(_gaussian_trace(1.0, 0.01, seed=1)) == pytest.approx(1.0, rel=0.02)


def test_sigma2_pure_noise():
    with pytest.raises(NumericalError):
        harness.estimate_sigma2(_gaussian_trace(0.0, 1.0, seed=2))


def test_sigma2_needs_samples():
    with pytest.raises(ValueError):
        harness.estimate_sigma2(_gaussian_trace(1.0, 0.0, n=100))


def _sample_rayleigh_sum(rng, M, sigma2, n):
    # inverse CDF: A^2 = theta * P^-1(M, u)
    theta = 2 * M * analytic.scale_b(M, sigma2)
    return np.sqrt(theta * special.gammaincinv(M, rng.uniform(size=n)))


def test_ks_accepts_own_distribution():
    rng = np.random.default_rng(8)
    passed = sum(harness.amplitude_distribution_test(_sample_rayleigh_sum(rng, 3, 1.0, 500), 3, 1.0).pvalue > 0.01
                 for _ in range(200))
    assert passed / 200 >= 0.95


def test_ks_rejects_uniform():
    rng = np.random.default_rng(9)
    assert harness.amplitude_distribution_test(rng.uniform(0, 4, 1000), 3, 1.0).pvalue < 1e-3


def test_ks_needs_samples():
    with pytest.raises(ValueError):
        harness.amplitude_distribution_test(np.ones(10), 1, 1.0)


def test_mle_sigma2_recovers_scale():
    rng = np.random.default_rng(10)
    a = _sample_rayleigh_sum(rng, 5, 2.3, 100_000)
    assert harness.fit_sigma2_rayleigh_sum(a, 5) == pytest.approx(2.3, rel=0.01)


def test_validation():
    with pytest.raises(ConfigurationError):
        SweepConfig(realizations=0).validate()
    with pytest.raises(ConfigurationError):
        SweepConfig(M_values=(1, 16)).validate()
    SweepConfig().validate()


def test_layout_keeps_cells_outside_region():
    cfg = SweepConfig()
    lay = harness.layout(cfg)
    cell = cell_length(cfg.plan.pulse_width, cfg.refractive_index)
    z1 = sample_to_position(lay.gauge_start, cfg.refractive_index, cfg.fast_time_step)
    z2 = sample_to_position(lay.gauge_end, cfg.refractive_index, cfg.fast_time_step)
    assert z1 <= cfg.perturbation.region_start
    assert z2 - cell >= cfg.perturbation.region_end
    width = int(math.ceil(cfg.plan.pulse_width / cfg.fast_time_step)) + 1
    assert np.all(np.diff(lay.amplitude_indices) >= width)
    assert len(lay.amplitude_indices) >= 10


def test_gauge_too_short_for_region():
    with pytest.raises(ConfigurationError):
        harness.layout(SweepConfig(gauge_length=15.0))


def test_empty_report_writes_headers_only(tmp_path):
    harness.emit_report(harness.empty_report(SweepConfig()), tmp_path)
    assert (tmp_path / "summary.csv").read_text() == ",".join(harness.SUMMARY_COLUMNS) + "\n"
    assert (tmp_path / "curves.csv").read_text() == ",".join(harness.CURVE_COLUMNS) + "\n"


@pytest.fixture(scope="module")
def golden_report():
    return harness.run_sweep(golden_config())


def test_golden_run_matches_fixture(golden_report, tmp_path):
    harness.emit_report(golden_report, tmp_path)
    for name in GOLDEN_FILES:
        assert (tmp_path / name).read_bytes() == (GOLDEN_DIR / name).read_bytes(), name


def test_report_deterministic(golden_report, tmp_path):
    again = harness.run_sweep(golden_config())
    np.testing.assert_array_equal(again.snr_samples, golden_report.snr_samples)
    harness.emit_report(golden_report, tmp_path / "a")
    harness.emit_report(again, tmp_path / "b")
    for name in GOLDEN_FILES:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_report_contents(golden_report):
    cfg = golden_report.config
    assert [r.M for r in golden_report.rows] == list(cfg.M_values)
    assert golden_report.snr_samples.shape == (cfg.realizations, len(cfg.M_values))
    r1 = golden_report.row(1)
    assert r1.gain_K == 1.0
    assert golden_report.sigma2_hat == pytest.approx(golden_report.sigma2_calibration, rel=0.1)
    for h in golden_report.histograms:
        assert h.counts.sum() == cfg.realizations


def test_csv_format(tmp_path, golden_report):
    harness.emit_report(golden_report, tmp_path)
    for name in GOLDEN_FILES:
        data = (tmp_path / name).read_bytes()
        assert b"\r" not in data


def test_manifest_is_a_config(golden_report):
    text = harness.manifest_text(golden_report)
    assert parse_config(text).sweep == golden_report.config
    assert "# config_hash = " in text


def test_unwritable_output(tmp_path, golden_report):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        harness.emit_report(golden_report, blocker)


def test_calibration_independent_of_noise():
    cfg = replace(golden_config(), snr_intensity_db=5.0)
    assert harness.calibrate_sigma2(cfg) == harness.calibrate_sigma2(golden_config())


def test_snr_jitter_changes_noise_only_when_enabled():
    cfg = golden_config()
    assert harness._realization_noise(cfg, 3, 2.0) == 2.0
    j = replace(cfg, snr_jitter_db=0.5)
    assert harness._realization_noise(j, 3, 2.0) != 2.0
    assert harness._realization_noise(j, 3, 2.0) == harness._realization_noise(j, 3, 2.0)
