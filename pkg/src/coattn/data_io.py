"""Embedding bundles, pair manifests, caption selection and synthetic data.

``EMB1`` layout, little-endian throughout::

    b"EMB1" | u32 dim | u32 n_audio | u32 n_text | u32 n_pairs
    n_audio x (u32 id_len | id utf-8 | u32 frames | frames*dim f32, row-major)
    n_text  x (u32 id_len | id utf-8 | dim f32)
    n_pairs x (u32 len | text id | u32 len | audio id)
"""
from __future__ import annotations

import io
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

from coattn.errors import ConfigurationError, DegenerateInputError, FormatError, ValidationError
from coattn.objective import cosine_similarity

MAGIC = b"EMB1"
_U32 = struct.Struct("<I")
_HEADER = struct.Struct("<4sIIII")
_F32 = np.dtype("<f4")


@dataclass
class EmbeddingBundle:
    dim: int
    audio: dict[str, np.ndarray] = field(default_factory=dict)  # id -> frames x dim
    text: dict[str, np.ndarray] = field(default_factory=dict)   # id -> 1 x dim
    pairs: list[tuple[str, str]] = field(default_factory=list)  # (text_id, audio_id)

    def validate(self) -> "EmbeddingBundle":
        if self.dim < 1:
            raise ValidationError(f"bundle dimension must be positive, got {self.dim}")
        for aid, frames in self.audio.items():
            if frames.ndim != 2 or frames.shape[1] != self.dim or frames.shape[0] < 1:
                raise ValidationError(f"audio {aid!r} has shape {frames.shape}; need (N>=1, {self.dim})")
        for tid, vec in self.text.items():
            if vec.shape != (1, self.dim):
                raise ValidationError(f"text {tid!r} has shape {vec.shape}; need (1, {self.dim})")
        for tid, aid in self.pairs:
            if tid not in self.text:
                raise ValidationError(f"pair references unknown text id {tid!r}")
            if aid not in self.audio:
                raise ValidationError(f"pair references unknown audio id {aid!r}")
        return self

    def relevance_t2a(self) -> dict[str, frozenset]:
        out: dict[str, set] = {}
        for tid, aid in self.pairs:
            out.setdefault(tid, set()).add(aid)
        return {k: frozenset(v) for k, v in out.items()}

    def relevance_a2t(self) -> dict[str, frozenset]:
        out: dict[str, set] = {}
        for tid, aid in self.pairs:
            out.setdefault(aid, set()).add(tid)
        return {k: frozenset(v) for k, v in out.items()}

    def with_pairs(self, pairs: Sequence[tuple[str, str]]) -> "EmbeddingBundle":
        return EmbeddingBundle(self.dim, self.audio, self.text, list(pairs)).validate()


def bundle_size(bundle: EmbeddingBundle) -> int:
    """Exact byte length of the ``EMB1`` encoding."""
    size = _HEADER.size
    for aid, frames in bundle.audio.items():
        size += 8 + len(aid.encode()) + 4 * frames.size
    for tid in bundle.text:
        size += 4 + len(tid.encode()) + 4 * bundle.dim
    for tid, aid in bundle.pairs:
        size += 8 + len(tid.encode()) + len(aid.encode())
    return size


def _put_id(buf: BinaryIO, s: str) -> None:
    raw = s.encode("utf-8")
    buf.write(_U32.pack(len(raw)))
    buf.write(raw)


def encode_bundle(bundle: EmbeddingBundle) -> bytes:
    bundle.validate()
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, bundle.dim, len(bundle.audio), len(bundle.text), len(bundle.pairs)))
    for aid, frames in bundle.audio.items():
        _put_id(buf, aid)
        buf.write(_U32.pack(frames.shape[0]))
        buf.write(np.ascontiguousarray(frames, dtype=_F32).tobytes())
    for tid, vec in bundle.text.items():
        _put_id(buf, tid)
        buf.write(np.ascontiguousarray(vec, dtype=_F32).tobytes())
    for tid, aid in bundle.pairs:
        _put_id(buf, tid)
        _put_id(buf, aid)
    return buf.getvalue()


def _atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_bundle(bundle: EmbeddingBundle, destination) -> None:
    data = encode_bundle(bundle)
    if hasattr(destination, "write"):
        destination.write(data)
        return
    try:
        _atomic_write(Path(destination), data)
    except OSError as exc:
        raise OSError(f"cannot write bundle to {destination}: {exc}") from exc


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated bundle: need {n} bytes for {what} at offset {self.pos}, "
                              f"only {len(self.data) - self.pos} left")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]

    def ident(self, what: str) -> str:
        n = self.u32(f"{what} length")
        start = self.pos
        raw = self.take(n, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{what} at offset {start} is not valid UTF-8") from exc

    def floats(self, count: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(4 * count, what), dtype=_F32).astype(np.float64)


def decode_bundle(data: bytes) -> EmbeddingBundle:
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}; expected {MAGIC!r}")
    dim, n_audio, n_text, n_pairs = (r.u32(w) for w in ("dim", "audio count", "text count", "pair count"))
    bundle = EmbeddingBundle(dim)
    for _ in range(n_audio):
        aid = r.ident("audio id")
        frames = r.u32(f"frame count of {aid!r}")
        if aid in bundle.audio:
            raise ValidationError(f"duplicate audio id {aid!r}")
        bundle.audio[aid] = r.floats(frames * dim, f"frames of {aid!r}").reshape(frames, dim)
    for _ in range(n_text):
        tid = r.ident("text id")
        if tid in bundle.text:
            raise ValidationError(f"duplicate text id {tid!r}")
        bundle.text[tid] = r.floats(dim, f"vector of {tid!r}").reshape(1, dim)
    for _ in range(n_pairs):
        bundle.pairs.append((r.ident("pair text id"), r.ident("pair audio id")))
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after offset {r.pos}")
    return bundle.validate()


def read_bundle(source) -> EmbeddingBundle:
    if hasattr(source, "read"):
        return decode_bundle(source.read())
    try:
        data = Path(source).read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read bundle {source}: {exc}") from exc
    try:
        return decode_bundle(data)
    except (FormatError, ValidationError) as exc:
        raise type(exc)(f"{source}: {exc}") from exc


def read_pair_manifest(source) -> list[tuple[str, str]]:
    """Tab-separated ``text_id<TAB>audio_id`` lines, UTF-8, LF line endings."""
    raw = Path(source).read_bytes()
    if b"\r" in raw:
        raise FormatError(f"{source}: manifest must use LF line endings")
    pairs = []
    for n, line in enumerate(raw.decode("utf-8").split("\n"), start=1):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 2 or not all(fields):
            raise FormatError(f"{source}:{n}: expected 'text_id<TAB>audio_id', got {line!r}")
        pairs.append((fields[0], fields[1]))
    return pairs


def write_pair_manifest(pairs: Sequence[tuple[str, str]], destination) -> None:
    for tid, aid in pairs:
        if any(c in s for s in (tid, aid) for c in "\t\n\r"):
            raise ValidationError(f"id pair {(tid, aid)!r} contains a tab or newline")
    _atomic_write(Path(destination), "".join(f"{t}\t{a}\n" for t, a in pairs).encode("utf-8"))


@dataclass
class CandidateCaptionSet:
    original: tuple[str, np.ndarray]
    candidates: list[tuple[str, np.ndarray]]


def select_caption(caption_set: CandidateCaptionSet) -> str:
    """Id of the candidate closest in cosine similarity to the original caption."""
    if not caption_set.candidates:
        raise ConfigurationError("caption set has no candidates")
    orig = caption_set.original[1]
    best = None
    for cid, vec in caption_set.candidates:
        try:
            s = cosine_similarity(orig, vec)
        except DegenerateInputError as exc:
            raise DegenerateInputError(f"caption {cid!r}: {exc}") from exc
        if best is None or s > best[0] or (s == best[0] and cid < best[1]):
            best = (s, cid)
    return best[1]


def _f32(x: np.ndarray) -> np.ndarray:
    # Values exactly representable in the file format, so write/read is lossless.
    return x.astype(np.float32).astype(np.float64)


def generate_synthetic(num_items: int, dim: int, frames: int, noise: float, seed: int,
                       captions: int = 1, with_anchors: bool = False):
    """Aligned audio/text items scattered around random unit anchors.

    Item ``i`` owns audio ``audio-iiii`` (``frames`` noisy copies of its
    anchor) and ``captions`` texts ``text-iiii-c`` (independent noisy copies).
    """
    if num_items < 2:
        raise ConfigurationError(f"need at least 2 items, got {num_items}")
    if dim < 1 or frames < 1 or captions < 1:
        raise ConfigurationError(f"dim, frames and captions must be positive (got {dim}, {frames}, {captions})")
    if not noise >= 0:
        raise ConfigurationError(f"noise must be >= 0, got {noise}")
    rng = np.random.default_rng(seed)
    anchors = rng.standard_normal((num_items, dim))
    anchors /= np.linalg.norm(anchors, axis=1, keepdims=True)
    audio_noise = rng.standard_normal((num_items, frames, dim))
    text_noise = rng.standard_normal((num_items, captions, dim))
    bundle = EmbeddingBundle(dim)
    for i in range(num_items):
        aid = f"audio-{i:04d}"
        bundle.audio[aid] = _f32(anchors[i] + noise * audio_noise[i])
        for c in range(captions):
            tid = f"text-{i:04d}-{c}"
            bundle.text[tid] = _f32(anchors[i] + noise * text_noise[i, c]).reshape(1, dim)
            bundle.pairs.append((tid, aid))
    bundle.validate()
    return (bundle, anchors) if with_anchors else bundle
