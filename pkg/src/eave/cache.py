"""On-disk store of heavy representations keyed by content and model fingerprint."""

from __future__ import annotations

import hashlib
import io
import os
import struct
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .encoder import EaveModel, HeavyReps, RepKind, heavy_encode

MAGIC = b"EAVECACH"
VERSION = 1
_KIND_CODE = {RepKind.CONTEXT: 0, RepKind.ATTRIBUTE: 1}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}
_HEADER = struct.Struct("<8sIQQBII")


class CacheIntegrityError(IOError):
    pass


@dataclass(frozen=True)
class CacheKey:
    content_hash: int
    fingerprint: int

    @classmethod
    def for_tokens(cls, kind: str, tokens, fingerprint: int) -> "CacheKey":
        return cls(content_hash(kind, tokens), fingerprint)

    @property
    def filename(self) -> str:
        return f"{self.fingerprint:016x}-{self.content_hash:016x}"


@dataclass
class CacheEntry:
    key: CacheKey
    reps: HeavyReps
    created_at: float
    byte_size: int


def content_hash(kind: str, tokens) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(bytes([_KIND_CODE[kind]]))
    h.update(np.ascontiguousarray(tokens, dtype="<i8").tobytes())
    return int.from_bytes(h.digest(), "little")


def serialize(reps: HeavyReps, content: int) -> bytes:
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION, reps.fingerprint, content, _KIND_CODE[reps.kind],
                           reps.seq_len, len(reps.per_layer)))
    for idx in sorted(reps.per_layer):
        arr = np.ascontiguousarray(reps.per_layer[idx], dtype="<f4")
        buf.write(struct.pack("<III", idx, *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def deserialize(raw: bytes, source: str = "<bytes>") -> tuple[HeavyReps, int]:
    """Parse an entry; return the reps and their content hash."""
    try:
        magic, version, fp, content, kind, seq_len, n_layers = _HEADER.unpack_from(raw, 0)
    except struct.error as exc:
        raise CacheIntegrityError(f"{source}: truncated header") from exc
    if magic != MAGIC:
        raise CacheIntegrityError(f"{source}: bad magic {magic!r}")
    if version != VERSION:
        raise CacheIntegrityError(f"{source}: unsupported version {version}")
    if kind not in _CODE_KIND:
        raise CacheIntegrityError(f"{source}: unknown kind code {kind}")
    pos = _HEADER.size
    per_layer = {}
    for _ in range(n_layers):
        if pos + 12 > len(raw):
            raise CacheIntegrityError(f"{source}: truncated layer header")
        idx, rows, cols = struct.unpack_from("<III", raw, pos)
        pos += 12
        n = rows * cols
        if pos + 4 * n > len(raw):
            raise CacheIntegrityError(f"{source}: truncated layer {idx} data")
        per_layer[idx] = np.frombuffer(raw, dtype="<f4", count=n, offset=pos).reshape(rows, cols).astype(np.float32)
        pos += 4 * n
    if pos != len(raw):
        raise CacheIntegrityError(f"{source}: {len(raw) - pos} trailing bytes")
    try:
        reps = HeavyReps(kind=_CODE_KIND[kind], fingerprint=fp, per_layer=per_layer, seq_len=seq_len)
    except ValueError as exc:
        raise CacheIntegrityError(f"{source}: {exc}") from exc
    return reps, content


class RepCache:
    """One file per entry, named ``<fingerprint>-<content_hash>`` in hex.

    Writes go to a temp file that is renamed into place, so concurrent
    readers never see a partial entry.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0

    def path_for(self, key: CacheKey) -> Path:
        return self.root / key.filename

    def __contains__(self, key: CacheKey) -> bool:
        return self.path_for(key).exists()

    def get(self, key: CacheKey) -> HeavyReps | None:
        path = self.path_for(key)
        try:
            raw = path.read_bytes()
        except FileNotFoundError:
            self.misses += 1
            return None
        reps, content = deserialize(raw, str(path))
        if reps.fingerprint != key.fingerprint or content != key.content_hash:
            raise CacheIntegrityError(f"{path}: header does not match its file name")
        self.hits += 1
        return reps

    def put(self, key: CacheKey, reps: HeavyReps) -> CacheEntry:
        if reps.fingerprint != key.fingerprint:
            raise ValueError("reps fingerprint does not match the cache key")
        data = serialize(reps, key.content_hash)
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, self.path_for(key))
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return CacheEntry(key, reps, time.time(), len(data))

    def entries(self) -> list[Path]:
        return sorted(p for p in self.root.iterdir() if p.is_file() and not p.name.startswith("."))

    def total_bytes(self) -> int:
        return sum(p.stat().st_size for p in self.entries())

    def gc(self, max_bytes: int) -> list[Path]:
        """Delete oldest entries until the store fits in ``max_bytes``."""
        files = sorted(self.entries(), key=lambda p: (p.stat().st_mtime, p.name))
        total = sum(p.stat().st_size for p in files)
        removed = []
        for p in files:
            if total <= max_bytes:
                break
            total -= p.stat().st_size
            p.unlink()
            removed.append(p)
        return removed


def get_or_compute(cache: RepCache | None, kind: str, tokens, model: EaveModel,
                   fingerprint: int, memo: dict | None = None) -> tuple[HeavyReps, bool]:
    """Fetch reps from ``memo`` or ``cache``, else encode and store. Returns (reps, was_hit)."""
    key = CacheKey.for_tokens(kind, tokens, fingerprint)
    if memo is not None and key in memo:
        return memo[key], True
    reps = cache.get(key) if cache is not None else None
    hit = reps is not None
    if reps is None:
        reps = heavy_encode(tokens, kind, model, fingerprint)
        if cache is not None:
            cache.put(key, reps)
    if memo is not None:
        memo[key] = reps
    return reps, hit


def precompute_corpus(examples: Iterable, model: EaveModel, cache: RepCache) -> dict:
    """Encode every distinct context and attribute sequence once.

    ``examples`` are :class:`~eave.data.TokenizedExample` objects.
    """
    fp = model.fingerprint()
    stats = {"contexts_encoded": 0, "attributes_encoded": 0, "bytes_written": 0}
    seen: set[CacheKey] = set()
    for ex in examples:
        for kind, tokens, counter in ((RepKind.CONTEXT, ex.context_ids, "contexts_encoded"),
                                      (RepKind.ATTRIBUTE, ex.attribute_ids, "attributes_encoded")):
            key = CacheKey.for_tokens(kind, tokens, fp)
            if key in seen:
                continue
            seen.add(key)
            if key in cache:
                continue
            entry = cache.put(key, heavy_encode(tokens, kind, model, fp))
            stats[counter] += 1
            stats["bytes_written"] += entry.byte_size
    return stats
