import numpy as np
import pytest

from fadinglab import cli, traceio
from fadinglab.fiber import ChannelPlan, PerturbationSpec, generate_scatterers, synthesize_backscatter


@pytest.fixture(scope="module")
def trace():
    f = generate_scatterers(40.0, 50.0, seed=2)
    return synthesize_backscatter(f, ChannelPlan(num_channels=3), PerturbationSpec(10.0, 22.7), 8, 0.5, 3,
                                  sample_indices=np.arange(0, 400, 9))


@pytest.mark.parametrize("suffix", ["bin", "csv"])
def test_trace_round_trip(tmp_path, trace, suffix):
    path = tmp_path / f"t.{suffix}"
    traceio.write_trace(trace, path)
    back = traceio.read_trace(path)
    expected = trace.samples.astype(np.complex64).astype(complex)
    np.testing.assert_array_equal(back.samples, expected)
    np.testing.assert_array_equal(back.noise_slot_samples,
                                  trace.noise_slot_samples.astype(np.complex64).astype(complex))
    np.testing.assert_array_equal(back.fast_time_index, trace.fast_time_index)
    assert back.plan == trace.plan
    assert back.channels == trace.channels
    assert back.noise_variance == trace.noise_variance
    assert (back.field_seed, back.noise_seed) == (trace.field_seed, trace.noise_seed)


def test_binary_layout(tmp_path, trace):
    path = tmp_path / "t.bin"
    traceio.write_trace(trace, path)
    raw = path.read_bytes()
    assert raw[:8] == traceio.MAGIC
    head_len = int.from_bytes(raw[8:12], "little")
    payload = raw[12 + head_len:]
    M, K, T = trace.samples.shape
    assert len(payload) == (M * K * T + K * T) * 8


def test_truncated_binary(tmp_path, trace):
    path = tmp_path / "t.bin"
    traceio.write_trace(trace, path)
    path.write_bytes(path.read_bytes()[:-100])
    with pytest.raises(ValueError):
        traceio.read_trace(path)


def test_field_round_trip(tmp_path):
    f = generate_scatterers(30.0, 50.0, seed=5)
    path = tmp_path / "field.csv"
    traceio.write_field_csv(f, path)
    assert traceio.read_field_csv(path, 30.0) == f


def test_cli_inspect(tmp_path, trace, capsys):
    path = tmp_path / "t.bin"
    traceio.write_trace(trace, path)
    assert cli.main(["inspect", str(path)]) == 0
    out = capsys.readouterr().out
    assert "dims = 3x8x45" in out
    assert "noise_slot_variance_per_quadrature" in out


def test_cli_inspect_missing(tmp_path):
    assert cli.main(["inspect", str(tmp_path / "none.bin")]) == 3
