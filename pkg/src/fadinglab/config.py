"""
Flat ``key = value`` run configuration.

Physical quantities carry their unit in the key name (``pulse_width_ns``,
``fiber_length_m``, ...).  Unknown or duplicated keys are rejected.  Lines
starting with ``#`` are comments, which is also how run manifests store
metadata, so a manifest is itself a valid config file.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field, replace

from .fiber import ConfigurationError
from .harness import SweepConfig


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> tuple:
    out = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part[1:]:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _format_int_list(values) -> str:
    values = list(values)
    if values and values == list(range(values[0], values[-1] + 1)) and len(values) > 2:
        return f"{values[0]}-{values[-1]}"
    return ",".join(str(v) for v in values)


# key -> (section, attribute, parser, unit factor); value_si = value * mul / div
_SWEEP_KEYS = {
    "m_values": ("sweep", "M_values", _int_list, None),
    "realizations": ("sweep", "realizations", int, None),
    "seed": ("sweep", "master_seed", int, None),
    "fiber_length_m": ("sweep", "fiber_length", float, None),
    "scatterer_density_per_m": ("sweep", "scatterer_density", float, None),
    "refractive_index": ("sweep", "refractive_index", float, None),
    "num_pulses": ("sweep", "num_pulses", int, None),
    "fast_time_step_ns": ("sweep", "fast_time_step", float, (1, 1e9)),
    "gauge_length_m": ("sweep", "gauge_length", float, None),
    "snr_intensity_db": ("sweep", "snr_intensity_db", float, None),
    "snr_jitter_db": ("sweep", "snr_jitter_db", float, None),
    "calibration_fields": ("sweep", "calibration_fields", int, None),
    "check_invariants": ("sweep", "check_invariants", _bool, None),
    "base_shift_mhz": ("plan", "base_shift", float, (1e6, 1)),
    "channel_spacing_mhz": ("plan", "channel_spacing", float, (1e6, 1)),
    "num_channels": ("plan", "num_channels", int, None),
    "pulse_width_ns": ("plan", "pulse_width", float, (1, 1e9)),
    "repetition_period_us": ("plan", "repetition_period", float, (1, 1e6)),
    "include_noise_slot": ("plan", "include_noise_slot", _bool, None),
    "region_start_m": ("pert", "region_start", float, None),
    "region_end_m": ("pert", "region_end", float, None),
    "strain_amplitude": ("pert", "amplitude", float, None),
    "stimulus_frequency_hz": ("pert", "frequency", float, None),
}

_RUN_KEYS = {
    "out_dir": str,
    "workers": int,
    "verbose": _bool,
    "save_traces": _bool,
    "trace_format": str,
}

KNOWN_KEYS = tuple(_SWEEP_KEYS) + tuple(_RUN_KEYS)


@dataclass(frozen=True)
class RunConfig:
    sweep: SweepConfig = dc_field(default_factory=SweepConfig)
    out_dir: str | None = None
    workers: int = 1
    verbose: bool = False
    save_traces: bool = False
    trace_format: str = "bin"
    seed_given: bool = False


def _unknown_key_message(key: str) -> str:
    hints = [k for k in KNOWN_KEYS if k.startswith(key + "_")]
    if hints:
        return f"unknown key (physical quantities need a unit suffix, e.g. {hints[0]!r})"
    return "unknown key"


def parse_items(text: str, source: str = "<config>") -> dict:
    items = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        if key in items:
            raise ConfigError(f"duplicate key ({source}:{lineno})", key)
        items[key] = value.split("#", 1)[0].strip()
    return items


def build_run_config(items: dict) -> RunConfig:
    sections = {"sweep": {}, "plan": {}, "pert": {}}
    run = {}
    for key, text in items.items():
        if key in _SWEEP_KEYS:
            section, attr, parse, unit = _SWEEP_KEYS[key]
            try:
                value = parse(text)
            except ValueError as exc:
                raise ConfigError(f"invalid value {text!r} ({exc})", key) from None
            if unit is not None:
                mul, div = unit
                value = value * mul / div
            sections[section][attr] = value
        elif key in _RUN_KEYS:
            try:
                run[key] = _RUN_KEYS[key](text)
            except ValueError as exc:
                raise ConfigError(f"invalid value {text!r} ({exc})", key) from None
        else:
            raise ConfigError(_unknown_key_message(key), key)
    base = SweepConfig()
    try:
        plan = replace(base.plan, **sections["plan"])
        pert = replace(base.perturbation, **sections["pert"])
        sweep = replace(base, plan=plan, perturbation=pert, **sections["sweep"])
    except (ConfigurationError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    if run.get("trace_format", "bin") not in ("bin", "csv"):
        raise ConfigError("must be 'bin' or 'csv'", "trace_format")
    if run.get("workers", 1) < 1:
        raise ConfigError("must be >= 1", "workers")
    return RunConfig(sweep=sweep, seed_given="seed" in items, **run)


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    return build_run_config(parse_items(text, source))


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    return format(value, ".12g")


def format_sweep_config(cfg: SweepConfig) -> str:
    """Inverse of :func:`parse_config` for the sweep keys, in a fixed order."""
    objects = {"sweep": cfg, "plan": cfg.plan, "pert": cfg.perturbation}
    lines = []
    for key, (section, attr, parse, unit) in _SWEEP_KEYS.items():
        value = getattr(objects[section], attr)
        if parse is _int_list:
            text = _format_int_list(value)
        else:
            if unit is not None:
                mul, div = unit
                value = value * div / mul
            text = _format_value(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"
