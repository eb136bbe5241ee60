"""Binary tensor files, id sidecars, and trace JSONL serialization.

Tensor format, bit-exact: magic "OMTN", then u32-LE version (=1), u32-LE
rank, one u64-LE per dimension, then the data as little-endian IEEE-754
float32 in row-major order. Id sidecars are plain text, one decimal token id
per line in column order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import SchemaError
from .harness import LayerRecord, PruneTrace

MAGIC = b"OMTN"
VERSION = 1


def write_tensor(path, array) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise SchemaError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 12:
        raise SchemaError(f"{path}: truncated header")
    version, rank = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise SchemaError(f"{path}: unsupported version {version}")
    dims_end = 12 + 8 * rank
    if len(data) < dims_end:
        raise SchemaError(f"{path}: truncated dimension list")
    shape = struct.unpack_from(f"<{rank}Q", data, 12)
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    if len(data) != dims_end + 4 * count:
        raise SchemaError(f"{path}: payload size does not match shape {shape}")
    return np.frombuffer(data, dtype="<f4", offset=dims_end).reshape(shape).copy()


def write_ids(path, ids) -> None:
    Path(path).write_text("".join(f"{i}\n" for i in ids), encoding="ascii")


def read_ids(path) -> tuple[int, ...]:
    try:
        return tuple(int(line) for line in Path(path).read_text(encoding="ascii").split())
    except ValueError as exc:
        raise SchemaError(f"{path}: malformed id list ({exc})") from None


def write_trace_jsonl(path, trace: PruneTrace, config_digest: str) -> None:
    """Trace lines plus a final summary object carrying the digests."""
    lines = trace.canonical_lines()
    summary = json.dumps(
        {"config_digest": config_digest, "digest": trace.digest},
        sort_keys=True,
        separators=(",", ":"),
    )
    Path(path).write_text("\n".join(lines + [summary]) + "\n", encoding="utf-8")


def read_trace_jsonl(path) -> tuple[PruneTrace, dict]:
    """Parse a trace file; returns (trace, summary). Verifies the digest."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if len(lines) < 2:
        raise SchemaError(f"{path}: expected layer records plus a summary line")
    try:
        objs = [json.loads(ln) for ln in lines]
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from None
    summary = objs[-1]
    if "digest" not in summary:
        raise SchemaError(f"{path}: final line is not a summary object")
    trace = PruneTrace(layers=tuple(LayerRecord.from_json_obj(o) for o in objs[:-1]))
    if trace.digest != summary["digest"]:
        raise SchemaError(f"{path}: stored digest does not match the records")
    return trace, summary
