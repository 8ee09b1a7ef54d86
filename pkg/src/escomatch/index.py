"""Exact cosine top-k search over dense skill-label / sentence embeddings.

Brute-force by design: the corpus is desk-scale (tens of thousands of label
vectors, a few hundred thousand sentence vectors), so a flat contiguous
float32 matrix with a full scan is both exact and fast enough. Ties are
broken by ascending entry key for determinism.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .providers import EmbeddingProvider, unit_normalize

INDEX_KINDS = ("labels", "sentences")
_MAGIC = b"ESCOIDX1\n"


class IndexError_(ValueError):
    """Index build/load contract violation."""


@dataclass
class VectorIndex:
    dimension: int
    kind: str
    keys: list[str]
    skill_ids: list[str]
    vectors: np.ndarray  # (n, dimension) float32, unit rows

    def __post_init__(self) -> None:
        if self.kind not in INDEX_KINDS:
            raise IndexError_(f"unknown index kind: {self.kind!r}")
        if self.vectors.shape != (len(self.keys), self.dimension):
            raise IndexError_("vector matrix shape does not match keys/dimension")
        if len(self.keys) != len(self.skill_ids):
            raise IndexError_("keys and skill_ids length mismatch")
        # Cached sort key array for vectorized tie-breaking in top_k.
        self._keys_arr = np.asarray(self.keys)

    def __len__(self) -> int:
        return len(self.keys)

    def vector_for(self, key: str) -> np.ndarray:
        return self.vectors[self.keys.index(key)]


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity; for unit vectors this is the dot product."""
    if u.shape != v.shape:
        raise IndexError_(f"dimension mismatch: {u.shape} vs {v.shape}")
    u64 = np.asarray(u, dtype=np.float64)
    v64 = np.asarray(v, dtype=np.float64)
    denom = float(np.linalg.norm(u64)) * float(np.linalg.norm(v64))
    if denom == 0.0:
        raise IndexError_("cosine undefined for zero vector")
    return float(np.dot(u64, v64) / denom)


def build_index(
    items: Iterable[tuple[str, str, str]],
    provider: EmbeddingProvider,
    kind: str,
    embed_kind: str = "passage",
) -> VectorIndex:
    """Embed (key, text, skill_id) items into a new index.

    Labels and sentences are both indexed as passages by default; the
    query/passage policy is configurable through ``embed_kind``.
    """
    items = list(items)
    if not items:
        raise IndexError_("empty index: no items to embed")
    keys: list[str] = []
    skill_ids: list[str] = []
    rows: list[np.ndarray] = []
    seen: set[str] = set()
    dimension: int | None = None
    for key, text, skill_id in items:
        if key in seen:
            raise IndexError_(f"duplicate index key: {key!r}")
        seen.add(key)
        vector = provider.embed_text(text, kind=embed_kind)
        if dimension is None:
            dimension = vector.shape[0]
        elif vector.shape[0] != dimension:
            raise IndexError_(f"dimension drift mid-build: {vector.shape[0]} != {dimension}")
        keys.append(key)
        skill_ids.append(skill_id)
        rows.append(unit_normalize(vector))
    return VectorIndex(
        dimension=int(dimension),
        kind=kind,
        keys=keys,
        skill_ids=skill_ids,
        vectors=np.vstack(rows).astype(np.float32),
    )


def top_k(index: VectorIndex, query: np.ndarray, k: int) -> list[tuple[str, str, float]]:
    """Exact top-k entries by cosine descending, ties by ascending key."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if query.shape[0] != index.dimension:
        raise IndexError_(f"query dimension {query.shape[0]} != index dimension {index.dimension}")
    if k == 0 or len(index) == 0:
        return []
    q = unit_normalize(np.asarray(query, dtype=np.float32))
    scores = index.vectors @ q
    # lexsort: primary -score, secondary key ascending.
    order = np.lexsort((index._keys_arr, -scores))[: min(k, len(index))]
    return [(index.keys[i], index.skill_ids[i], float(scores[i])) for i in order]


def save_index(index: VectorIndex, path: str | Path) -> None:
    """Persist: magic, JSON header with checksum, raw LE float32, string table."""
    vector_bytes = np.ascontiguousarray(index.vectors, dtype="<f4").tobytes()
    table_bytes = json.dumps(
        {"keys": index.keys, "skill_ids": index.skill_ids}, ensure_ascii=False
    ).encode("utf-8")
    checksum = hashlib.sha256(vector_bytes + table_bytes).hexdigest()
    header = json.dumps(
        {
            "dimension": index.dimension,
            "kind": index.kind,
            "count": len(index),
            "checksum": checksum,
            "table_bytes": len(table_bytes),
        }
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(vector_bytes)
        f.write(table_bytes)


def load_index(path: str | Path) -> VectorIndex:
    with open(path, "rb") as f:
        if f.read(len(_MAGIC)) != _MAGIC:
            raise IndexError_(f"{path}: not an index file")
        (header_len,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(header_len).decode("utf-8"))
        count, dimension = header["count"], header["dimension"]
        vector_bytes = f.read(count * dimension * 4)
        table_bytes = f.read(header["table_bytes"])
    if hashlib.sha256(vector_bytes + table_bytes).hexdigest() != header["checksum"]:
        raise IndexError_(f"{path}: checksum mismatch, file corrupt")
    table = json.loads(table_bytes.decode("utf-8"))
    vectors = np.frombuffer(vector_bytes, dtype="<f4").reshape(count, dimension).copy()
    return VectorIndex(
        dimension=dimension,
        kind=header["kind"],
        keys=table["keys"],
        skill_ids=table["skill_ids"],
        vectors=vectors,
    )
