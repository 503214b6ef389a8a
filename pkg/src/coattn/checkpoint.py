"""``CKP1`` checkpoint container.

Layout, little-endian::

    b"CKP1" | u32 version
    u32 len | config JSON (utf-8)
    u32 epoch | u64 optimizer step
    u32 n | n x f64 epoch-mean losses
    u32 n_blobs | n_blobs x (u32 len | name | u32 rows | u32 cols | rows*cols f64)
    u32 CRC-32 of every preceding byte

Blob names are ``param/<name>`` for weights and ``opt/<slot>/<name>`` for
optimizer state.
"""
from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from coattn.data_io import _atomic_write
from coattn.errors import FormatError

MAGIC = b"CKP1"
VERSION = 1
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_F64 = np.dtype("<f8")


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    config: dict
    epoch: int = 0
    loss_history: list[float] = field(default_factory=list)
    optimizer_step: int = 0
    optimizer_state: dict[str, np.ndarray] = field(default_factory=dict)


def _blob(buf, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    buf.write(_U32.pack(len(raw)))
    buf.write(raw)
    buf.write(_U32.pack(arr.shape[0]))
    buf.write(_U32.pack(arr.shape[1]))
    buf.write(np.ascontiguousarray(arr, dtype=_F64).tobytes())


def encode_checkpoint(cp: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(_U32.pack(VERSION))
    cfg = json.dumps(cp.config, sort_keys=True).encode("utf-8")
    buf.write(_U32.pack(len(cfg)))
    buf.write(cfg)
    buf.write(_U32.pack(cp.epoch))
    buf.write(_U64.pack(cp.optimizer_step))
    buf.write(_U32.pack(len(cp.loss_history)))
    buf.write(np.asarray(cp.loss_history, dtype=_F64).tobytes())
    blobs = [(f"param/{k}", v) for k, v in cp.params.items()]
    blobs += [(f"opt/{k}", v) for k, v in cp.optimizer_state.items()]
    buf.write(_U32.pack(len(blobs)))
    for name, arr in blobs:
        _blob(buf, name, arr)
    body = buf.getvalue()
    return body + _U32.pack(zlib.crc32(body))


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < 8 or data[:4] != MAGIC:
        raise FormatError(f"not a checkpoint: bad magic {data[:4]!r}")
    version = _U32.unpack_from(data, 4)[0]
    if version != VERSION:
        raise FormatError(f"checkpoint version {version} is not supported (expected {VERSION})")
    if len(data) < 12 or zlib.crc32(data[:-4]) != _U32.unpack_from(data, len(data) - 4)[0]:
        raise FormatError("checkpoint checksum mismatch (file corrupted or truncated)")
    body = data[:-4]
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(body):
            raise FormatError(f"checkpoint truncated at offset {pos}")
        out = body[pos:pos + n]
        pos += n
        return out

    def u32():
        return _U32.unpack(take(4))[0]

    try:
        config = json.loads(take(u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint config is unreadable: {exc}") from exc
    epoch = u32()
    opt_step = _U64.unpack(take(8))[0]
    n_hist = u32()
    history = np.frombuffer(take(8 * n_hist), dtype=_F64).tolist()
    params, opt = {}, {}
    for _ in range(u32()):
        name = take(u32()).decode("utf-8")
        rows, cols = u32(), u32()
        arr = np.frombuffer(take(8 * rows * cols), dtype=_F64).reshape(rows, cols).copy()
        kind, _, key = name.partition("/")
        if kind == "param":
            params[key] = arr
        elif kind == "opt":
            opt[key] = arr
        else:
            raise FormatError(f"unknown blob kind in {name!r}")
    if pos != len(body):
        raise FormatError(f"{len(body) - pos} unexpected bytes at offset {pos}")
    return Checkpoint(params, config, epoch, history, opt_step, opt)


def save_checkpoint(cp: Checkpoint, destination) -> None:
    _atomic_write(Path(destination), encode_checkpoint(cp))


def load_checkpoint(source) -> Checkpoint:
    return decode_checkpoint(Path(source).read_bytes())
