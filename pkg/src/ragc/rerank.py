"""Candidate over-retrieval and relevance re-ranking.

In ``rag_rerank`` mode the index is asked for a pool of ``pool_multiplier
* k`` candidates (3x by default); a relevance scorer then reorders the pool
and the top k survive. The bundled scorer is token-set Jaccard, which is
deterministic and needs no model; a cross-encoder served over HTTP can be
plugged in via ``RemoteScorer``.
"""

from __future__ import annotations

import math
import os
import random
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import Callable, Sequence

from . import remote
from .errors import RagcError
from .index import Neighbor, VectorIndex
from .embed import Vector
from .remote import RemoteFailure

ENV_ENDPOINT = "RAGC_RERANK_ENDPOINT"
ENV_API_KEY = "RAGC_RERANK_API_KEY"

MODES = ("zero_shot", "fixed_few_shot", "rag", "rag_rerank")


class RerankError(RagcError):
    pass


@dataclass(frozen=True)
class RetrievalConfig:
    """How examples are chosen for a prompt: mode, k and pool sizing."""

    mode: str
    k: int = 0
    pool_multiplier: int = 3
    scorer_id: str = "jaccard"

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.mode == "zero_shot":
            if self.k != 0:
                raise ValueError("zero_shot requires k = 0")
        elif self.k < 1:
            raise ValueError(f"mode {self.mode!r} requires k >= 1")
        if self.pool_multiplier < 1:
            raise ValueError("pool_multiplier must be >= 1")

    @property
    def pool_size(self) -> int:
        return self.pool_multiplier * self.k


@dataclass(frozen=True)
class ScoredCandidate:
    neighbor: Neighbor
    relevance: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.relevance):
            raise ValueError(f"non-finite relevance for {self.neighbor.sample_id!r}")


class RelevanceScorer(ABC):
    """Joint query/candidate relevance; higher = more relevant."""

    scorer_id: str

    @abstractmethod
    def score(self, query_text: str, candidate_text: str) -> float:
        ...

    def score_batch(self, query_text: str, candidate_texts: Sequence[str]) -> list[float]:
        return [self.score(query_text, text) for text in candidate_texts]


class JaccardScorer(RelevanceScorer):
    """Token-set Jaccard over lowercased whitespace tokens.

    Equal token sets (including both empty) score 1.0; disjoint sets 0.0.
    """

    scorer_id = "jaccard"

    def score(self, query_text: str, candidate_text: str) -> float:
        a = set(query_text.lower().split())
        b = set(candidate_text.lower().split())
        if not a and not b:
            return 1.0
        union = len(a | b)
        return len(a & b) / union


class RemoteScorer(RelevanceScorer):
    """Cross-encoder scorer over HTTP: ``{"query", "documents"}`` -> ``{"scores"}``."""

    def __init__(
        self,
        endpoint: str,
        scorer_id: str = "remote-cross-encoder",
        *,
        api_key: str = "",
        timeout: float = remote.DEFAULT_TIMEOUT,
        post: Callable[..., dict] = remote.post_json,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.endpoint = endpoint
        self.scorer_id = scorer_id
        self._headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._timeout = timeout
        self._post = post
        self._sleep = sleep
        self._rng = rng

    @classmethod
    def from_env(cls, **kwargs) -> "RemoteScorer":
        endpoint = os.environ.get(ENV_ENDPOINT, "")
        if not endpoint:
            raise RerankError(f"{ENV_ENDPOINT} is not set")
        return cls(endpoint, api_key=os.environ.get(ENV_API_KEY, ""), **kwargs)

    def score(self, query_text: str, candidate_text: str) -> float:
        return self.score_batch(query_text, [candidate_text])[0]

    def score_batch(self, query_text: str, candidate_texts: Sequence[str]) -> list[float]:
        if not candidate_texts:
            return []
        payload = {"query": query_text, "documents": list(candidate_texts)}
        data, _ = remote.call_with_retries(
            lambda: self._post(self.endpoint, payload, headers=self._headers, timeout=self._timeout),
            sleep=self._sleep,
            rng=self._rng,
        )
        try:
            scores = [float(s) for s in data["scores"]]
        except (KeyError, TypeError, ValueError) as err:
            raise RemoteFailure(200, f"malformed rerank response: {err}") from err
        if len(scores) != len(candidate_texts):
            raise RemoteFailure(200, f"expected {len(candidate_texts)} scores, got {len(scores)}")
        return scores


def retrieve_pool(index: VectorIndex, q: Vector, cfg: RetrievalConfig) -> list[Neighbor]:
    """Index candidates for one query: k for plain rag, pool_multiplier*k for rag_rerank."""
    if cfg.mode not in ("rag", "rag_rerank"):
        raise ValueError(f"retrieve_pool needs a retrieval mode, got {cfg.mode!r}")
    n = cfg.k if cfg.mode == "rag" else cfg.pool_size
    return index.query(q, n)


def rerank_top_k(
    scorer: RelevanceScorer,
    query_text: str,
    pool: Sequence[Neighbor],
    k: int,
) -> list[Neighbor]:
    """Keep the ``min(k, |pool|)`` most relevant candidates.

    Ordering is by relevance descending; ties keep the original retrieval
    order. Ranks are rewritten to the new positions.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    scores = scorer.score_batch(query_text, [n.text for n in pool])
    scored = [ScoredCandidate(n, s) for n, s in zip(pool, scores)]
    # stable sort on -relevance preserves retrieval order among ties
    scored.sort(key=lambda c: -c.relevance)
    return [
        replace(c.neighbor, retrieval_rank=rank)
        for rank, c in enumerate(scored[: min(k, len(scored))])
    ]
