"""Binary checkpoints for policy networks.

Layout: 8-byte magic, big-endian u32 header length, UTF-8 JSON header
(shape, parameter names and shapes, per-array CRC32), the parameters as
little-endian float64 in header order, then a SHA-256 of everything before it.
Loading reports the byte offset of the first problem it finds.
"""
from __future__ import annotations

import hashlib
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .network import MLPShape, PolicyNetwork

MAGIC = b"UAVPPO\x00\x01"
_DIGEST_LEN = 32


class CheckpointError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        super().__init__(message if offset is None else f"byte {offset}: {message}")


def _shape_dict(shape: MLPShape) -> dict:
    return {
        "input_dim": shape.input_dim,
        "hidden_layers": shape.hidden_layers,
        "width": shape.width,
        "action_dim": shape.action_dim,
    }


def dumps_checkpoint(net: PolicyNetwork) -> bytes:
    arrays = []
    for name, arr in net.params.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        arrays.append((name, list(arr.shape), zlib.crc32(data), data))
    header = json.dumps(
        {
            "shape": _shape_dict(net.shape),
            "params": [{"name": n, "shape": s, "crc32": c} for n, s, c, _ in arrays],
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    body = MAGIC + struct.pack(">I", len(header)) + header + b"".join(d for *_, d in arrays)
    return body + hashlib.sha256(body).digest()


def loads_checkpoint(data: bytes, expected_shape: MLPShape | None = None) -> PolicyNetwork:
    if len(data) < len(MAGIC) + 4 + _DIGEST_LEN:
        raise CheckpointError(f"file too short ({len(data)} bytes)", len(data))
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("bad magic, not a policy checkpoint", 0)
    (hlen,) = struct.unpack(">I", data[len(MAGIC) : len(MAGIC) + 4])
    hstart = len(MAGIC) + 4
    if hstart + hlen > len(data) - _DIGEST_LEN:
        raise CheckpointError(f"header length {hlen} overruns file", len(MAGIC))
    try:
        header = json.loads(data[hstart : hstart + hlen])
        shape = MLPShape(**header["shape"])
        entries = [(e["name"], tuple(int(d) for d in e["shape"]), e["crc32"]) for e in header["params"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}", hstart) from None

    if expected_shape is not None and shape != expected_shape:
        raise CheckpointError(f"shape mismatch: checkpoint has {shape}, expected {expected_shape}", hstart)
    expected = {f"{n}.{kind}": ((i, o) if kind == "weight" else (o,))
                for n, i, o in shape.layer_dims() for kind in ("weight", "bias")}

    params: dict[str, np.ndarray] = {}
    pos = hstart + hlen
    end = len(data) - _DIGEST_LEN
    for name, dims, crc in entries:
        if expected.get(name) != dims:
            raise CheckpointError(
                f"parameter {name!r} has shape {dims}, shape {shape} requires {expected.get(name)}", hstart
            )
        nbytes = 8 * int(np.prod(dims, dtype=np.int64))
        if pos + nbytes > end:
            raise CheckpointError(f"parameter {name!r} truncated", pos)
        chunk = data[pos : pos + nbytes]
        if zlib.crc32(chunk) != crc:
            raise CheckpointError(
                f"parameter {name!r} (bytes {pos}..{pos + nbytes - 1}) fails its CRC32 check", pos
            )
        params[name] = np.frombuffer(chunk, dtype="<f8").reshape(dims).astype(float)
        pos += nbytes
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        raise CheckpointError(f"missing parameters {missing}", hstart)
    if pos != end:
        raise CheckpointError(f"{end - pos} unexpected bytes after parameters", pos)
    if hashlib.sha256(data[:end]).digest() != data[end:]:
        raise CheckpointError("SHA-256 digest mismatch", end)
    ordered = {f"{n}.{kind}": params[f"{n}.{kind}"] for n, _, _ in shape.layer_dims() for kind in ("weight", "bias")}
    return PolicyNetwork(shape, ordered)


def save_checkpoint(net: PolicyNetwork, path: str | Path) -> None:
    Path(path).write_bytes(dumps_checkpoint(net))


def load_checkpoint(path: str | Path, expected_shape: MLPShape | None = None) -> PolicyNetwork:
    return loads_checkpoint(Path(path).read_bytes(), expected_shape)
