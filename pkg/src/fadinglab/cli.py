"""
Command-line entry point.

    fadinglab analytic --m-max 15 --out results/
    fadinglab simulate --config demo.cfg --seed 1 --out run/
    fadinglab sweep    --config sweep.cfg --seed 1 --workers 4 --out sweep/
    fadinglab inspect  run/traces.bin

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 invariant-check
failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import secrets
import sys
from dataclasses import replace

import numpy as np

from . import analytic, harness, traceio
from . import rng as _rng
from .config import ConfigError, RunConfig, load_config
from .dsp import (demodulate_phase, dominant_frequency, estimate_snr_phi, rotated_vector_sum,
                  speckle_contrast)
from .fiber import ConfigurationError, generate_scatterers, synthesize_backscatter

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_INVARIANT = 4

# a stimulus counts as detected when its fitted variance exceeds the residual
DETECTION_SNR = 1.0

log = logging.getLogger("fadinglab")


def _write_kv(path: str, items: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for k, v in items.items():
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = format(v, ".10g")
            fh.write(f"{k} = {v}\n")


def cmd_analytic(M_max: int, params: analytic.FadingParams, out, quadrature: bool = True) -> str:
    """Write the per-M analytic table; ``out`` is a directory or a .csv path."""
    out = os.fspath(out)
    if out.endswith(".csv"):
        path = out
        parent = os.path.dirname(out) or "."
    else:
        path = os.path.join(out, "analytic.csv")
        parent = out
    os.makedirs(parent, exist_ok=True)
    rows = analytic.analytic_curves(M_max, params, with_quadrature=quadrature)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["M", "b", "mean_snr_phi", "mean_snr_phi_quadrature", "K_exact", "K_stirling", "cv"])
        for r in rows:
            quad = "nan" if r.mean_snr_phi_quadrature is None else format(r.mean_snr_phi_quadrature, ".10g")
            w.writerow([r.M, format(r.b, ".10g"), format(r.mean_snr_phi, ".10g"), quad,
                        format(r.gain_K, ".10g"), format(r.gain_K_stirling, ".10g"),
                        format(r.cv, ".10g")])
    return path


def cmd_simulate(config: RunConfig) -> dict:
    """One realization end to end; returns the summary it writes."""
    cfg = config.sweep
    cfg.plan.validate(cfg.fiber_length, cfg.refractive_index)
    cfg.perturbation.validate(cfg.fiber_length)
    lay = harness.layout(cfg)
    out = config.out_dir or "."
    os.makedirs(out, exist_ok=True)

    sigma2_cal = harness.calibrate_sigma2(cfg)
    sigma_n2 = sigma2_cal / 10.0 ** (cfg.snr_intensity_db / 10.0)
    field_seed = _rng.derive_seed(cfg.master_seed, _rng.FIELD, 0)
    noise_seed = _rng.derive_seed(cfg.master_seed, _rng.NOISE, 0)
    fld = generate_scatterers(cfg.fiber_length, cfg.scatterer_density, field_seed,
                              refractive_index=cfg.refractive_index,
                              pulse_width=cfg.plan.pulse_width)
    M = cfg.channels_needed
    trace = synthesize_backscatter(fld, cfg.plan, cfg.perturbation, cfg.num_pulses, sigma_n2,
                                   noise_seed, fast_time_step=cfg.fast_time_step,
                                   channels=range(M))
    agg = rotated_vector_sum(trace)
    demod = demodulate_phase(agg, cfg.gauge_length, cfg.fast_time_step, cfg.refractive_index)
    stim = demodulate_phase(agg, cfg.gauge_length, cfg.fast_time_step, cfg.refractive_index,
                            start_indices=[lay.gauge_start])
    series = stim.diff_phase[0]
    est = estimate_snr_phi(series, cfg.perturbation.frequency, cfg.plan.repetition_period)
    f_peak, f_bin = dominant_frequency(series, cfg.plan.repetition_period)
    detected = (est.snr >= DETECTION_SNR
                and abs(f_peak - cfg.perturbation.frequency) <= f_bin + 1e-9)
    a1 = stim.amplitude_profile[lay.gauge_start]
    a2 = stim.amplitude_profile[lay.gauge_end]
    noise_floor = M * sigma_n2 * (1.0 / a1 ** 2 + 1.0 / a2 ** 2)
    full = (trace.fast_time_index >= lay.amplitude_indices[0]) & \
           (trace.fast_time_index <= lay.amplitude_indices[-1])

    traceio.write_diff_phase_csv(demod, os.path.join(out, "diff_phase.csv"))
    traceio.write_diff_phase_csv(stim, os.path.join(out, "stimulus_gauge.csv"))
    traceio.write_amplitude_csv(demod, os.path.join(out, "amplitude_profile.csv"))
    if config.save_traces:
        traceio.write_trace(trace, os.path.join(out, f"traces.{config.trace_format}"),
                            config.trace_format)
        traceio.write_field_csv(fld, os.path.join(out, "field.csv"))
    summary = {
        "seed": cfg.master_seed,
        "M": M,
        "scatterers": fld.count,
        "sigma2_calibration": sigma2_cal,
        "sigma_n2": sigma_n2,
        "gauge_start_index": lay.gauge_start,
        "gauge_end_index": lay.gauge_end,
        "stimulus_frequency_hz": cfg.perturbation.frequency,
        "detected_frequency_hz": f_peak,
        "frequency_bin_hz": f_bin,
        "snr_phi": est.snr,
        "snr_phi_saturated": est.saturated,
        "fitted_amplitude_rad": est.amplitude,
        "diff_phase_variance": float(np.var(series)),
        "noise_floor_variance": float(noise_floor),
        "speckle_contrast": speckle_contrast(demod.amplitude_profile[full] ** 2),
        "stimulus_detected": bool(detected),
        "status": "stimulus detected" if detected else "no stimulus detected",
    }
    if trace.noise_slot_samples is not None:
        summary["noise_slot_variance_per_quadrature"] = float(np.mean(np.abs(trace.noise_slot_samples) ** 2) / 2)
    _write_kv(os.path.join(out, "summary.txt"), summary)
    return summary


def cmd_sweep(config: RunConfig) -> harness.StatisticsReport:
    report = harness.run_sweep(config.sweep, workers=config.workers)
    harness.emit_report(report, config.out_dir or ".")
    return report


def cmd_inspect(path) -> dict:
    trace = traceio.read_trace(path)
    info = {
        "dims": "x".join(str(d) for d in trace.samples.shape),
        "fast_time_step_s": trace.fast_time_step,
        "noise_variance": trace.noise_variance,
        "channels": ",".join(str(c) for c in trace.channels),
        "field_seed": trace.field_seed,
        "noise_seed": trace.noise_seed,
    }
    for row, ch in enumerate(trace.channels):
        info[f"mean_power_channel_{ch}"] = float(np.mean(np.abs(trace.samples[row]) ** 2))
    if trace.noise_slot_samples is not None:
        info["noise_slot_variance_per_quadrature"] = float(np.mean(np.abs(trace.noise_slot_samples) ** 2) / 2)
    try:
        info["sigma2_estimate"] = harness.estimate_sigma2(trace)
    except (ValueError, ArithmeticError) as exc:
        info["sigma2_estimate"] = f"unavailable ({exc})"
    return info


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="key = value configuration file")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--workers", type=int, help="worker processes for sweeps")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fadinglab", description=__doc__.split("\n\n")[0].strip())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analytic", help="tabulate the closed-form curves")
    _common(p)
    p.add_argument("--m-max", type=int, default=15)
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--sigma-n2", type=float, default=1.0)
    p.add_argument("--sigma-phi2", type=float, default=1.0)
    p.add_argument("--no-quadrature", action="store_true", help="skip the quadrature column")

    p = sub.add_parser("simulate", help="one realization end to end")
    _common(p)
    p = sub.add_parser("sweep", help="Monte Carlo sweep over M")
    _common(p)
    p = sub.add_parser("inspect", help="summarize a trace file")
    _common(p)
    p.add_argument("trace", help="trace file (.bin or .csv)")
    return parser


def _run_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config = replace(config, sweep=replace(config.sweep, master_seed=args.seed), seed_given=True)
    elif not config.seed_given:
        seed = secrets.randbits(32)
        log.warning("no seed given; using random seed %d", seed)
        print(f"seed = {seed}", file=sys.stderr)
        config = replace(config, sweep=replace(config.sweep, master_seed=seed), seed_given=True)
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("must be >= 1", "workers")
        config = replace(config, workers=args.workers)
    if args.out is not None:
        config = replace(config, out_dir=args.out)
    if args.verbose:
        config = replace(config, verbose=True)
    return config


def _print_checks(report: harness.StatisticsReport) -> None:
    width = max((len(c.name) for c in report.checks), default=10)
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<{width}}  {c.detail}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "analytic":
            params = analytic.FadingParams(1, args.sigma2, args.sigma_n2, args.sigma_phi2)
            if args.m_max < 1:
                raise ConfigError("must be >= 1", "m_max")
            path = cmd_analytic(args.m_max, params, args.out or ".", quadrature=not args.no_quadrature)
            print(path)
            return EXIT_OK
        if args.command == "inspect":
            for k, v in cmd_inspect(args.trace).items():
                print(f"{k} = {v}")
            return EXIT_OK
        config = _run_config(args)
        if args.command == "simulate":
            summary = cmd_simulate(config)
            for k, v in summary.items():
                print(f"{k} = {v}")
            return EXIT_OK
        report = cmd_sweep(config)
        _print_checks(report)
        return EXIT_OK if report.passed else EXIT_INVARIANT
    except (ConfigError, ConfigurationError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
