import struct

import numpy as np
import pytest

from avprune import LayerRecord, PruneTrace, SchemaError
from avprune import tensorio


def test_round_trip_exact(tmp_path):
    path = tmp_path / "t.omtn"
    arr = np.arange(24, dtype=np.float32).reshape(2, 3, 4) / 7.0
    tensorio.write_tensor(path, arr)
    back = tensorio.read_tensor(path)
    assert back.shape == (2, 3, 4)
    assert back.dtype == np.float32
    assert np.array_equal(back, arr.astype(np.float32))


def test_header_layout(tmp_path):
    path = tmp_path / "t.omtn"
    tensorio.write_tensor(path, np.zeros((2, 5), dtype=np.float32))
    raw = path.read_bytes()
    assert raw[:4] == b"OMTN"
    version, rank = struct.unpack_from("<II", raw, 4)
    assert version == 1 and rank == 2
    dims = struct.unpack_from("<2Q", raw, 12)
    assert dims == (2, 5)
    assert len(raw) == 12 + 16 + 4 * 10


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.omtn"
    path.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(SchemaError):
        tensorio.read_tensor(path)


def test_wrong_version(tmp_path):
    path = tmp_path / "v2.omtn"
    path.write_bytes(b"OMTN" + struct.pack("<II", 2, 1) + struct.pack("<Q", 0))
    with pytest.raises(SchemaError):
        tensorio.read_tensor(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "short.omtn"
    tensorio.write_tensor(path, np.zeros(4, dtype=np.float32))
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(SchemaError):
        tensorio.read_tensor(path)


def test_ids_round_trip(tmp_path):
    path = tmp_path / "cols.ids"
    tensorio.write_ids(path, [3, 1, 41, 0])
    assert tensorio.read_ids(path) == (3, 1, 41, 0)
    path.write_text("1\nx\n")
    with pytest.raises(SchemaError):
        tensorio.read_ids(path)


def _trace():
    recs = (
        LayerRecord(layer=0, p_l=0.25, k_l=1, pruned_ids=(7,), n_audio=2, n_video=2, n_text=1, selector="plain"),
        LayerRecord(layer=1, p_l=0.0, k_l=0, pruned_ids=(), n_audio=2, n_video=1, n_text=1, selector="tds"),
    )
    return PruneTrace(layers=recs)


def test_trace_jsonl_round_trip(tmp_path):
    path = tmp_path / "trace.jsonl"
    trace = _trace()
    tensorio.write_trace_jsonl(path, trace, config_digest="abc123")
    back, summary = tensorio.read_trace_jsonl(path)
    assert back == trace
    assert summary["digest"] == trace.digest
    assert summary["config_digest"] == "abc123"


def test_trace_jsonl_digest_mismatch(tmp_path):
    path = tmp_path / "trace.jsonl"
    tensorio.write_trace_jsonl(path, _trace(), config_digest="abc123")
    tampered = path.read_text().replace('"pruned_ids":[7]', '"pruned_ids":[8]')
    path.write_text(tampered)
    with pytest.raises(SchemaError):
        tensorio.read_trace_jsonl(path)


def test_trace_jsonl_requires_summary(tmp_path):
    path = tmp_path / "trace.jsonl"
    lines = _trace().canonical_lines()
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(SchemaError):
        tensorio.read_trace_jsonl(path)
