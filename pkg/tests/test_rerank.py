from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ragc.embed import Vector
from ragc.index import Neighbor, build
from ragc.remote import RemoteFailure
from ragc.rerank import (
    JaccardScorer,
    RelevanceScorer,
    RemoteScorer,
    RetrievalConfig,
    ScoredCandidate,
    rerank_top_k,
    retrieve_pool,
)

MODEL = "test-model"


class ConstantScorer(RelevanceScorer):
    scorer_id = "constant"

    def score(self, query_text, candidate_text):
        return 0.5


def neighbor(i, text="t", label=1):
    return Neighbor(f"id{i}", 1.0 - i * 0.01, i, text, label)


def grid_index(n, dim=4):
    # points spread along a quarter circle so similarities are distinct
    import math

    entries = []
    for i in range(n):
        angle = (i + 1) / (n + 1) * math.pi / 2
        values = [math.cos(angle), math.sin(angle)] + [0.0] * (dim - 2)
        entries.append((f"id{i}", Vector(tuple(values), MODEL), f"text {i}", 1))
    return build(entries, model_id=MODEL)


def test_config_zero_shot_forces_k_zero():
    assert RetrievalConfig("zero_shot").k == 0
    with pytest.raises(ValueError):
        RetrievalConfig("zero_shot", k=3)


def test_config_retrieval_modes_need_positive_k():
    for mode in ("fixed_few_shot", "rag", "rag_rerank"):
        with pytest.raises(ValueError):
            RetrievalConfig(mode, k=0)


def test_config_rejects_unknown_mode():
    with pytest.raises(ValueError):
        RetrievalConfig("few_shot", k=2)


def test_config_pool_size():
    cfg = RetrievalConfig("rag_rerank", k=6)
    assert cfg.pool_multiplier == 3
    assert cfg.pool_size == 18


def test_scored_candidate_rejects_non_finite():
    with pytest.raises(ValueError):
        ScoredCandidate(neighbor(0), float("inf"))


def test_pool_sizes_for_published_grid():
    idx = grid_index(699)
    q = Vector((1.0, 0.0, 0.0, 0.0), MODEL)
    for k in (4, 6, 8):
        pool = retrieve_pool(idx, q, RetrievalConfig("rag_rerank", k=k))
        assert len(pool) == 3 * k
        plain = retrieve_pool(idx, q, RetrievalConfig("rag", k=k))
        assert len(plain) == k


def test_pool_capped_by_index_size():
    idx = grid_index(10)
    q = Vector((1.0, 0.0, 0.0, 0.0), MODEL)
    pool = retrieve_pool(idx, q, RetrievalConfig("rag_rerank", k=6))
    assert len(pool) == 10


def test_retrieve_pool_rejects_non_retrieval_modes():
    idx = grid_index(5)
    q = Vector((1.0, 0.0, 0.0, 0.0), MODEL)
    with pytest.raises(ValueError):
        retrieve_pool(idx, q, RetrievalConfig("zero_shot"))


def test_plain_rag_pool_is_prefix_of_rerank_pool():
    idx = grid_index(50)
    q = Vector((0.9, 0.1, 0.0, 0.0), MODEL)
    plain = retrieve_pool(idx, q, RetrievalConfig("rag", k=6))
    pooled = retrieve_pool(idx, q, RetrievalConfig("rag_rerank", k=6))
    assert pooled[:6] == plain


def test_jaccard_identical_texts():
    assert JaccardScorer().score("a B c", "A b C") == 1.0


def test_jaccard_disjoint_texts():
    assert JaccardScorer().score("a b", "c d") == 0.0


def test_jaccard_hand_computed_overlap():
    # |{b,c}| / |{a,b,c,d}| = 2/4
    assert JaccardScorer().score("a b c", "b c d") == 0.5


def test_jaccard_empty_texts():
    scorer = JaccardScorer()
    assert scorer.score("", "") == 1.0
    assert scorer.score("", "a") == 0.0


def test_rerank_full_sort_when_k_covers_pool():
    pool = [
        neighbor(0, "zz zz"),
        neighbor(1, "match match"),
        neighbor(2, "half match"),
    ]
    out = rerank_top_k(JaccardScorer(), "match", pool, 10)
    assert [n.sample_id for n in out] == ["id1", "id2", "id0"]
    assert [n.retrieval_rank for n in out] == [0, 1, 2]


def test_rerank_constant_scores_keep_retrieval_order():
    pool = [neighbor(i) for i in range(5)]
    out = rerank_top_k(ConstantScorer(), "q", pool, 5)
    assert [n.sample_id for n in out] == [f"id{i}" for i in range(5)]


def test_rerank_fixture_pool_of_six():
    # scores hand-computed in a scratch script:
    # 2/3, 0, 4/7, 1/8, 3/8, 1/8 -> order 0, 2, 4, 3, 5, 1
    query = "climate strike in berlin today"
    texts = [
        "huge climate strike in berlin",
        "my cat sleeps all day",
        "strike today in berlin against coal",
        "climate policy debate tonight",
        "today we strike for the climate",
        "berlin weather looks grim",
    ]
    pool = [neighbor(i, t) for i, t in enumerate(texts)]
    out = rerank_top_k(JaccardScorer(), query, pool, 3)
    assert [n.sample_id for n in out] == ["id0", "id2", "id4"]
    full = rerank_top_k(JaccardScorer(), query, pool, 6)
    assert [n.sample_id for n in full] == ["id0", "id2", "id4", "id3", "id5", "id1"]


def test_rerank_never_invents_candidates():
    pool = [neighbor(i, f"text {i}") for i in range(6)]
    out = rerank_top_k(JaccardScorer(), "text 3", pool, 4)
    pool_ids = {n.sample_id for n in pool}
    assert all(n.sample_id in pool_ids for n in out)
    assert len(out) == 4


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.text(alphabet="abcd ", max_size=12), min_size=0, max_size=10),
    st.integers(min_value=0, max_value=12),
)
def test_rerank_size_and_membership_properties(texts, k):
    pool = [neighbor(i, t) for i, t in enumerate(texts)]
    out = rerank_top_k(JaccardScorer(), "a b", pool, k)
    assert len(out) == min(k, len(pool))
    ids = [n.sample_id for n in pool]
    assert all(n.sample_id in ids for n in out)
    assert [n.retrieval_rank for n in out] == list(range(len(out)))


def test_constant_scorer_reduces_rerank_to_plain_rag():
    idx = grid_index(40)
    q = Vector((0.7, 0.7, 0.0, 0.0), MODEL)
    for k in (4, 6, 8):
        pool = retrieve_pool(idx, q, RetrievalConfig("rag_rerank", k=k, scorer_id="constant"))
        reranked = rerank_top_k(ConstantScorer(), "whatever", pool, k)
        plain = retrieve_pool(idx, q, RetrievalConfig("rag", k=k))
        assert [n.sample_id for n in reranked] == [n.sample_id for n in plain]


class FakePost:
    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.calls = []

    def __call__(self, url, payload, headers=None, timeout=None):
        self.calls.append((url, payload))
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


def test_remote_scorer_batches_one_request():
    post = FakePost([{"scores": [0.2, 0.9, 0.5]}])
    scorer = RemoteScorer("http://rerank.test", post=post, sleep=lambda _: None)
    scores = scorer.score_batch("q", ["a", "b", "c"])
    assert scores == [0.2, 0.9, 0.5]
    assert post.calls[0][1] == {"query": "q", "documents": ["a", "b", "c"]}


def test_remote_scorer_malformed_response():
    post = FakePost([{"nope": []}])
    scorer = RemoteScorer("http://rerank.test", post=post, sleep=lambda _: None)
    with pytest.raises(RemoteFailure):
        scorer.score("q", "a")


def test_remote_scorer_retries_transient_failures():
    post = FakePost([RemoteFailure(429, "slow down"), {"scores": [1.0]}])
    scorer = RemoteScorer("http://rerank.test", post=post, sleep=lambda _: None)
    assert scorer.score("q", "a") == 1.0
    assert len(post.calls) == 2
