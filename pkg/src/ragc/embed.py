"""Sentence embedding behind a pluggable provider interface.

Three providers share one contract (deterministic, fixed dimension):

* ``RemoteEmbeddings`` — an embeddings-API compatible HTTP endpoint, for
  running against real sentence encoders served elsewhere.
* ``FileEmbeddings`` — precomputed vectors loaded from a JSON-lines file,
  keyed by sample id.
* ``HashEmbeddings`` — a fully specified hashing embedder used by the test
  suite and offline runs; no ML runtime involved.

The hashing scheme: lowercase the text, split on whitespace, take a 64-bit
FNV-1a hash of each token, add 1.0 to component ``hash % dimension``, then
L2-normalize. A text with no tokens maps to the unit basis vector e_0.
"""

from __future__ import annotations

import json
import math
import os
import random
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Sequence

from . import remote
from .errors import RagcError
from .remote import RemoteFailure

ENV_ENDPOINT = "RAGC_EMBED_ENDPOINT"
ENV_API_KEY = "RAGC_EMBED_API_KEY"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = (1 << 64) - 1


class EmbedError(RagcError):
    pass


class MissingVector(EmbedError):
    pass


@dataclass(frozen=True)
class Vector:
    """A fixed-dimension embedding tagged with the model that produced it."""

    values: tuple[float, ...]
    model_id: str

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("vector has non-finite entries")

    @property
    def dimension(self) -> int:
        return len(self.values)


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _U64
    return h


class EmbeddingProvider(ABC):
    """Deterministic text-to-vector mapping with a fixed dimension."""

    model_id: str
    dimension: int
    kind: str
    # file providers embed by sample id, not by text
    lookup_by_id: bool = False

    @abstractmethod
    def embed_text(self, text: str) -> Vector:
        ...

    def embed_batch(self, texts: Sequence[str]) -> list[Vector]:
        """Map embed_text over ``texts``; order preserved.

        The first provider error is re-raised with ``batch_index`` set to
        the failing position.
        """
        out = []
        for i, text in enumerate(texts):
            try:
                out.append(self.embed_text(text))
            except RagcError as err:
                err.batch_index = i
                raise
        return out


class HashEmbeddings(EmbeddingProvider):
    """The bundled deterministic embedder (FNV-1a token hashing)."""

    kind = "test"

    def __init__(self, dimension: int = 64, model_id: str = "fnv1a-hash"):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        self.dimension = dimension
        self.model_id = model_id

    def embed_text(self, text: str) -> Vector:
        values = [0.0] * self.dimension
        tokens = text.lower().split()
        if not tokens:
            values[0] = 1.0
            return Vector(tuple(values), self.model_id)
        for token in tokens:
            values[fnv1a64(token.encode("utf-8")) % self.dimension] += 1.0
        norm = math.sqrt(sum(v * v for v in values))
        return Vector(tuple(v / norm for v in values), self.model_id)


class FileEmbeddings(EmbeddingProvider):
    """Precomputed vectors from a JSON-lines file: ``{"id": ..., "vector": [...]}``.

    Lookup is by id (the ``text`` argument of embed_text is treated as the
    key); the mapping is immutable after load.
    """

    kind = "file"
    lookup_by_id = True

    def __init__(self, vectors: dict[str, tuple[float, ...]], model_id: str):
        if not vectors:
            raise EmbedError("file provider needs at least one vector")
        dims = {len(v) for v in vectors.values()}
        if len(dims) != 1:
            raise EmbedError(f"inhomogeneous vector dimensions in file: {sorted(dims)}")
        self.model_id = model_id
        self.dimension = dims.pop()
        self._vectors = vectors

    @classmethod
    def load(cls, path, model_id: str) -> "FileEmbeddings":
        vectors: dict[str, tuple[float, ...]] = {}
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    key = str(record["id"])
                    vec = tuple(float(x) for x in record["vector"])
                except (ValueError, KeyError, TypeError) as err:
                    raise EmbedError(f"{path}:{line_no}: bad vector record: {err}") from err
                vectors[key] = vec
        return cls(vectors, model_id)

    def embed_text(self, text: str) -> Vector:
        try:
            return Vector(self._vectors[text], self.model_id)
        except KeyError:
            raise MissingVector(f"no precomputed vector for id {text!r}") from None


class RemoteEmbeddings(EmbeddingProvider):
    """Embeddings-API compatible HTTP provider.

    Request: ``{"model": <id>, "input": [<texts>]}``; response
    ``{"data": [{"index": i, "embedding": [...]}]}``. In-flight requests are
    capped by ``max_in_flight``.
    """

    kind = "remote"

    def __init__(
        self,
        endpoint: str,
        model_id: str,
        dimension: int,
        *,
        api_key: str = "",
        max_in_flight: int = 8,
        timeout: float = remote.DEFAULT_TIMEOUT,
        post: Callable[..., dict] = remote.post_json,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.endpoint = endpoint
        self.model_id = model_id
        self.dimension = dimension
        self._headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._semaphore = threading.Semaphore(max_in_flight)
        self._timeout = timeout
        self._post = post
        self._sleep = sleep
        self._rng = rng

    @classmethod
    def from_env(cls, model_id: str, dimension: int, **kwargs) -> "RemoteEmbeddings":
        endpoint = os.environ.get(ENV_ENDPOINT, "")
        if not endpoint:
            raise EmbedError(f"{ENV_ENDPOINT} is not set")
        return cls(endpoint, model_id, dimension, api_key=os.environ.get(ENV_API_KEY, ""), **kwargs)

    def _request(self, texts: Sequence[str]) -> list[Vector]:
        payload = {"model": self.model_id, "input": list(texts)}
        with self._semaphore:
            data, _ = remote.call_with_retries(
                lambda: self._post(self.endpoint, payload, headers=self._headers, timeout=self._timeout),
                sleep=self._sleep,
                rng=self._rng,
            )
        try:
            rows = sorted(data["data"], key=lambda r: r["index"])
            vectors = [Vector(tuple(float(x) for x in r["embedding"]), self.model_id) for r in rows]
        except (KeyError, TypeError, ValueError) as err:
            raise RemoteFailure(200, f"malformed embeddings response: {err}") from err
        if len(vectors) != len(texts):
            raise RemoteFailure(200, f"expected {len(texts)} embeddings, got {len(vectors)}")
        for v in vectors:
            if v.dimension != self.dimension:
                raise RemoteFailure(200, f"embedding dimension {v.dimension} != declared {self.dimension}")
        return vectors

    def embed_text(self, text: str) -> Vector:
        return self._request([text])[0]

    def embed_batch(self, texts: Sequence[str]) -> list[Vector]:
        if not texts:
            return []
        return self._request(texts)
