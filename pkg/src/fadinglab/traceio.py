"""
Trace, field and demodulation file formats.

Binary trace container::

    b"FADTRACE"                     8-byte magic
    uint32 LE                       header length in bytes
    header                          UTF-8 JSON (dims, fast_time_step, plan, noise variance, seeds)
    payload                         float32 LE, re/im interleaved,
                                    channel-major, then slow time, then fast time
    noise-slot payload (optional)   same layout for [slow time][fast time]

The CSV form carries the same header as ``# key = value`` lines followed by
``channel,k,t_index,re,im`` rows; noise-slot rows use channel -1.
"""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import asdict

import numpy as np

from .fiber import BackscatterTrace, ChannelPlan, ScattererField

MAGIC = b"FADTRACE"
FORMAT_VERSION = 1


def _header(trace: BackscatterTrace) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "dims": list(trace.samples.shape),
        "fast_time_step": trace.fast_time_step,
        "noise_variance": trace.noise_variance,
        "refractive_index": trace.refractive_index,
        "plan": asdict(trace.plan),
        "channels": list(trace.channels),
        "fast_time_index": [int(i) for i in trace.fast_time_index],
        "field_seed": trace.field_seed,
        "noise_seed": trace.noise_seed,
        "has_noise_slot": trace.noise_slot_samples is not None,
    }


def _interleave(a: np.ndarray) -> np.ndarray:
    out = np.empty(a.shape + (2,), dtype="<f4")
    out[..., 0] = a.real
    out[..., 1] = a.imag
    return out


def write_trace(trace: BackscatterTrace, path, fmt: str | None = None) -> None:
    path = os.fspath(path)
    fmt = fmt or ("csv" if path.endswith(".csv") else "bin")
    if fmt == "bin":
        head = json.dumps(_header(trace), sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(head)))
            fh.write(head)
            fh.write(_interleave(trace.samples).tobytes())
            if trace.noise_slot_samples is not None:
                fh.write(_interleave(trace.noise_slot_samples).tobytes())
    elif fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            for key, value in _header(trace).items():
                fh.write(f"# {key} = {json.dumps(value)}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["channel", "k", "t_index", "re", "im"])
            blocks = [(m, trace.samples[m]) for m in range(trace.num_channels)]
            if trace.noise_slot_samples is not None:
                blocks.append((-1, trace.noise_slot_samples))
            for m, block in blocks:
                block = block.astype(np.complex64)
                for k in range(block.shape[0]):
                    for c, t in enumerate(trace.fast_time_index):
                        v = block[k, c]
                        w.writerow([m, k, int(t), repr(float(v.real)), repr(float(v.imag))])
    else:
        raise ValueError(f"unknown trace format {fmt!r}")


def _from_header(head: dict, samples: np.ndarray, slot) -> BackscatterTrace:
    return BackscatterTrace(
        samples=samples,
        fast_time_step=head["fast_time_step"],
        noise_variance=head["noise_variance"],
        fast_time_index=np.asarray(head["fast_time_index"], dtype=np.int64),
        plan=ChannelPlan(**head["plan"]),
        channels=tuple(head["channels"]),
        refractive_index=head["refractive_index"],
        noise_slot_samples=slot,
        field_seed=head["field_seed"],
        noise_seed=head["noise_seed"],
    )


def read_trace(path) -> BackscatterTrace:
    path = os.fspath(path)
    with open(path, "rb") as fh:
        start = fh.read(len(MAGIC))
        if start == MAGIC:
            (n,) = struct.unpack("<I", fh.read(4))
            head = json.loads(fh.read(n).decode())
            M, K, T = head["dims"]
            raw = np.frombuffer(fh.read(), dtype="<f4")
    if start != MAGIC:
        return _read_trace_csv(path)
    count = M * K * T * 2
    if raw.size < count:
        raise ValueError(f"{path}: truncated payload")
    samples = (raw[:count:2] + 1j * raw[1:count:2]).astype(complex).reshape(M, K, T)
    slot = None
    if head.get("has_noise_slot"):
        rest = raw[count:count + K * T * 2]
        if rest.size < K * T * 2:
            raise ValueError(f"{path}: truncated noise-slot payload")
        slot = (rest[0::2] + 1j * rest[1::2]).astype(complex).reshape(K, T)
    return _from_header(head, samples, slot)


def _read_trace_csv(path: str) -> BackscatterTrace:
    head = {}
    with open(path, encoding="utf-8") as fh:
        lines = fh.readlines()
    body_start = 0
    for i, line in enumerate(lines):
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            head[key.strip()] = json.loads(value)
        else:
            body_start = i
            break
    if "dims" not in head:
        raise ValueError(f"{path}: not a trace file")
    M, K, T = head["dims"]
    col = {t: c for c, t in enumerate(head["fast_time_index"])}
    samples = np.zeros((M, K, T), dtype=complex)
    slot = np.zeros((K, T), dtype=complex) if head.get("has_noise_slot") else None
    for row in csv.DictReader(lines[body_start:]):
        m, k, t = int(row["channel"]), int(row["k"]), col[int(row["t_index"])]
        v = float(row["re"]) + 1j * float(row["im"])
        if m < 0:
            slot[k, t] = v
        else:
            samples[m, k, t] = v
    return _from_header(head, samples, slot)


def write_field_csv(field: ScattererField, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["position_m", "re", "im"])
        for z, r in zip(field.positions, field.reflectivities):
            w.writerow([repr(float(z)), repr(float(r.real)), repr(float(r.imag))])


def read_field_csv(path, length: float, refractive_index: float | None = None) -> ScattererField:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    kw = {} if refractive_index is None else {"refractive_index": refractive_index}
    return ScattererField(data[:, 0], data[:, 1] + 1j * data[:, 2], length, **kw)


def write_diff_phase_csv(result, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gauge_index", "k", "diff_phase_rad"])
        for g, series in enumerate(result.diff_phase):
            for k, v in enumerate(series):
                w.writerow([g, k, format(float(v), ".10g")])


def write_amplitude_csv(result, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_index", "amplitude"])
        for t, a in zip(result.fast_time_index, result.amplitude_profile):
            w.writerow([int(t), format(float(a), ".10g")])
