"""Exact top-k cosine-similarity search over the example store.

Store sizes here are a few thousand vectors at most, so search is a full
scan: exhaustive, exact, and trivially oracle-testable. Ties are broken by
insertion ordinal, which keeps duplicated tweets retrieving in a stable
order on every platform.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .embed import Vector
from .errors import RagcError

SNAPSHOT_VERSION = 1


class IndexingError(RagcError):
    pass


class DimensionMismatch(IndexingError):
    pass


class ZeroVector(IndexingError):
    pass


class DuplicateSampleId(IndexingError):
    pass


class EmptyIndex(IndexingError):
    pass


class ModelMismatch(IndexingError):
    pass


class SnapshotError(IndexingError):
    pass


@dataclass(frozen=True)
class Neighbor:
    """One retrieved example: id, cosine similarity, rank and payload."""

    sample_id: str
    similarity: float
    retrieval_rank: int
    text: str
    label: int | None


def cosine(u: Vector, v: Vector) -> float:
    """Cosine similarity (u·v)/(|u||v|), clamped to [-1, 1]."""
    if u.dimension != v.dimension:
        raise DimensionMismatch(f"dimensions differ: {u.dimension} vs {v.dimension}")
    dot = sum(a * b for a, b in zip(u.values, v.values))
    nu = math.sqrt(sum(a * a for a in u.values))
    nv = math.sqrt(sum(b * b for b in v.values))
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector("cosine undefined for zero vectors")
    return max(-1.0, min(1.0, dot / (nu * nv)))


class VectorIndex:
    """Immutable exact-search index over (sample_id, vector, text, label) entries."""

    def __init__(self, model_id: str, dimension: int, ids, texts, labels, matrix, norms):
        self.model_id = model_id
        self.dimension = dimension
        self._ids = ids
        self._texts = texts
        self._labels = labels
        self._matrix = matrix
        self._norms = norms

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def fingerprint(self) -> str:
        return store_fingerprint(self.model_id, zip(self._ids, self._texts))

    def entries(self) -> Iterable[tuple[str, Vector, str, int | None]]:
        for i, sample_id in enumerate(self._ids):
            vec = Vector(tuple(float(x) for x in self._matrix[i]), self.model_id)
            yield sample_id, vec, self._texts[i], self._labels[i]

    def query(self, q: Vector, k: int) -> list[Neighbor]:
        """Top ``min(k, size)`` entries by cosine similarity, descending.

        Ties are broken by ascending insertion ordinal. Repeated queries
        return identical results.
        """
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if len(self._ids) == 0:
            raise EmptyIndex("cannot query an empty index")
        if q.dimension != self.dimension:
            raise DimensionMismatch(f"query dimension {q.dimension} != index dimension {self.dimension}")
        if q.model_id != self.model_id:
            raise ModelMismatch(f"query embedded with {q.model_id!r}, index built with {self.model_id!r}")
        qvec = np.asarray(q.values, dtype=np.float64)
        qnorm = float(np.linalg.norm(qvec))
        if qnorm == 0.0:
            raise ZeroVector("cannot query with a zero vector")
        sims = (self._matrix @ qvec) / (self._norms * qnorm)
        np.clip(sims, -1.0, 1.0, out=sims)
        # stable argsort on -sims = similarity descending, ordinal ascending on ties
        order = np.argsort(-sims, kind="stable")[: min(k, len(self._ids))]
        return [
            Neighbor(
                sample_id=self._ids[i],
                similarity=float(sims[i]),
                retrieval_rank=rank,
                text=self._texts[i],
                label=self._labels[i],
            )
            for rank, i in enumerate(int(i) for i in order)
        ]


def build(entries: Sequence[tuple[str, Vector, str, int | None]], model_id: str | None = None) -> VectorIndex:
    """Build an index from ``(sample_id, vector, text, label)`` tuples.

    Vectors must be homogeneous in dimension and model, non-zero, and ids
    unique. An empty entry list yields an empty index (size 0).
    """
    ids: list[str] = []
    texts: list[str] = []
    labels: list[int | None] = []
    rows: list[tuple[float, ...]] = []
    dimension: int | None = None
    seen: set[str] = set()
    for sample_id, vec, text, label in entries:
        if model_id is None:
            model_id = vec.model_id
        elif vec.model_id != model_id:
            raise ModelMismatch(f"entry {sample_id!r} embedded with {vec.model_id!r}, expected {model_id!r}")
        if dimension is None:
            dimension = vec.dimension
        elif vec.dimension != dimension:
            raise DimensionMismatch(f"entry {sample_id!r} has dimension {vec.dimension}, expected {dimension}")
        if sample_id in seen:
            raise DuplicateSampleId(f"duplicate sample id {sample_id!r}")
        if all(x == 0.0 for x in vec.values):
            raise ZeroVector(f"entry {sample_id!r} has a zero vector")
        seen.add(sample_id)
        ids.append(sample_id)
        texts.append(text)
        labels.append(label)
        rows.append(vec.values)

    matrix = np.asarray(rows, dtype=np.float64) if rows else np.zeros((0, 0))
    norms = np.linalg.norm(matrix, axis=1) if rows else np.zeros(0)
    return VectorIndex(model_id or "", dimension or 0, ids, texts, labels, matrix, norms)


def store_fingerprint(model_id: str, id_text_pairs: Iterable[tuple[str, str]]) -> str:
    """Cache invalidation key: hash of the embedding model and all (id, text) pairs."""
    h = hashlib.sha256()
    h.update(model_id.encode("utf-8"))
    for sample_id, text in id_text_pairs:
        h.update(b"\x00")
        h.update(sample_id.encode("utf-8"))
        h.update(b"\x01")
        h.update(text.encode("utf-8"))
    return h.hexdigest()


def save_snapshot(index: VectorIndex, path) -> None:
    """Persist the index as line-JSON: a header record, then one record per entry."""
    header = {
        "version": SNAPSHOT_VERSION,
        "model_id": index.model_id,
        "dimension": index.dimension,
        "count": len(index),
        "fingerprint": index.fingerprint,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for sample_id, vec, text, label in index.entries():
            record = {"id": sample_id, "vector": list(vec.values), "text": text, "label": label}
            fh.write(json.dumps(record) + "\n")


def load_snapshot(path) -> VectorIndex:
    with open(path, encoding="utf-8") as fh:
        try:
            header = json.loads(fh.readline())
        except ValueError as err:
            raise SnapshotError(f"{path}: bad snapshot header: {err}") from err
        if header.get("version") != SNAPSHOT_VERSION:
            raise SnapshotError(f"{path}: unsupported snapshot version {header.get('version')!r}")
        model_id = header["model_id"]
        entries = []
        for line in fh:
            record = json.loads(line)
            vec = Vector(tuple(float(x) for x in record["vector"]), model_id)
            entries.append((record["id"], vec, record["text"], record["label"]))
    if len(entries) != header["count"]:
        raise SnapshotError(f"{path}: header says {header['count']} entries, found {len(entries)}")
    index = build(entries, model_id=model_id)
    if index.fingerprint != header["fingerprint"]:
        raise SnapshotError(f"{path}: fingerprint mismatch (snapshot is stale or corrupt)")
    return index
