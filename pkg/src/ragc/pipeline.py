"""End-to-end classification: embed, retrieve, (re-rank), prompt, complete, parse.

One pipeline instance owns the resources for a subtask run: the example
store, the vector index built from it, the prompt template and the LLM
client. Per-sample work items are independent, so a run is just a bounded
parallel map over the evaluation split; with the deterministic providers
the whole thing is bit-reproducible.

A sample never ends without a code: a completion whose output cannot be
parsed is retried once with a terse format instruction, and if that fails
too (or the provider is down) the majority training class is assigned and
the sample is flagged as a fallback.
"""

from __future__ import annotations

import csv
import json
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

from . import index as index_mod
from . import rerank as rerank_mod
from .dataset import SUBTASKS, DatasetSplit, LabeledSample, STAGES
from .embed import EmbeddingProvider
from .errors import RagcError
from .index import Neighbor, VectorIndex
from .llm import BatchReport, LlmClient, LlmParams, ParseFailure, parse_prediction
from .prompt import PromptTemplate, assemble, load_template
from .remote import RemoteFailure
from .rerank import RelevanceScorer, RetrievalConfig

RETRY_INSTRUCTION = "Answer with only 'Prediction: <code>'."

PARSE_STATUSES = ("ok", "retried", "fallback")


class ConfigError(RagcError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Everything that varies between the experiment grid's runs."""

    subtask: str
    retrieval: RetrievalConfig
    llm: LlmParams
    stage: str = "evaluation"
    fixed_examples: tuple[str, ...] | None = None
    embedding_model_id: str = ""
    worker_count: int = 1
    seed: int = 0
    exclude_self: bool = False

    def __post_init__(self) -> None:
        if self.subtask not in SUBTASKS:
            raise ConfigError(f"unknown subtask {self.subtask!r}")
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.worker_count < 1:
            raise ConfigError("worker_count must be >= 1")
        mode = self.retrieval.mode
        if mode == "fixed_few_shot":
            if not self.fixed_examples:
                raise ConfigError("fixed_few_shot requires fixed_examples")
            if len(self.fixed_examples) != self.retrieval.k:
                raise ConfigError(
                    f"fixed_examples has {len(self.fixed_examples)} ids, expected k={self.retrieval.k}"
                )
        if mode in ("rag", "rag_rerank") and not self.embedding_model_id:
            raise ConfigError(f"mode {mode!r} requires an embedding model id")


@dataclass(frozen=True)
class Prediction:
    sample_id: str
    code: int
    parse_status: str
    raw_response: str
    examples_used: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.parse_status not in PARSE_STATUSES:
            raise ValueError(f"parse_status must be one of {PARSE_STATUSES}")


@dataclass
class _SampleOutcome:
    prediction: Prediction
    llm_completed: bool
    primary_from_cache: bool


class ClassificationPipeline:
    """Resources plus per-sample classification for one configured run."""

    def __init__(
        self,
        cfg: RunConfig,
        store: Sequence[LabeledSample],
        llm_client: LlmClient,
        *,
        embedder: EmbeddingProvider | None = None,
        scorer: RelevanceScorer | None = None,
        template: PromptTemplate | None = None,
        event_sink: Callable[[dict], None] | None = None,
        index_snapshot: str | Path | None = None,
    ):
        self.cfg = cfg
        self.spec = SUBTASKS[cfg.subtask]
        self.store = tuple(store)
        self.template = template or load_template(cfg.subtask)
        self._client = llm_client
        self._embedder = embedder
        self._scorer = scorer
        self._snapshot = Path(index_snapshot) if index_snapshot else None
        self._emit = event_sink or (lambda event: None)

        mode = cfg.retrieval.mode
        self.index: VectorIndex | None = None
        if mode in ("rag", "rag_rerank"):
            if embedder is None:
                raise ConfigError(f"mode {mode!r} requires an embedding provider")
            if not self.store:
                raise ConfigError(f"mode {mode!r} needs a non-empty example store")
            if embedder.model_id != cfg.embedding_model_id:
                raise ConfigError(
                    f"configured embedding model {cfg.embedding_model_id!r} but provider "
                    f"is {embedder.model_id!r}; the index and queries must share one model"
                )
            self.index = self._build_index()
        if mode == "rag_rerank":
            if scorer is None:
                self._scorer = rerank_mod.JaccardScorer()
            elif getattr(scorer, "scorer_id", None) != cfg.retrieval.scorer_id:
                raise ConfigError(
                    f"configured scorer {cfg.retrieval.scorer_id!r} but provider is "
                    f"{getattr(scorer, 'scorer_id', None)!r}"
                )

        self._fixed: tuple[LabeledSample, ...] = ()
        if mode == "fixed_few_shot":
            by_id = {s.id: s for s in self.store}
            missing = [i for i in cfg.fixed_examples or () if i not in by_id]
            if missing:
                raise ConfigError(f"fixed example ids not in store: {missing}")
            self._fixed = tuple(by_id[i] for i in cfg.fixed_examples or ())

        self.fallback_code = self._majority_code()

    def _build_index(self) -> VectorIndex:
        assert self._embedder is not None
        expected = index_mod.store_fingerprint(
            self._embedder.model_id, ((s.id, s.text) for s in self.store)
        )
        if self._snapshot is not None and self._snapshot.exists():
            try:
                snapshot = index_mod.load_snapshot(self._snapshot)
                if snapshot.fingerprint == expected:
                    self._emit({"event": "index_loaded", "path": str(self._snapshot)})
                    return snapshot
            except index_mod.SnapshotError:
                pass  # stale or damaged: fall through and rebuild
        keys = [s.id if self._embedder.lookup_by_id else s.text for s in self.store]
        vectors = self._embedder.embed_batch(keys)
        entries = [
            (s.id, vec, s.text, s.label) for s, vec in zip(self.store, vectors)
        ]
        built = index_mod.build(entries, model_id=self._embedder.model_id)
        if self._snapshot is not None:
            index_mod.save_snapshot(built, self._snapshot)
        return built

    def _majority_code(self) -> int:
        counts = Counter(s.label for s in self.store if s.label is not None)
        if not counts:
            return self.spec.codes[0]
        top = max(counts.values())
        return min(c for c, n in counts.items() if n == top)

    def _embed_query(self, sample: LabeledSample):
        assert self._embedder is not None
        key = sample.id if self._embedder.lookup_by_id else sample.text
        return self._embedder.embed_text(key)

    def _retrieve(self, sample: LabeledSample) -> list[Neighbor]:
        assert self.index is not None
        cfg = self.cfg.retrieval
        want = cfg.k if cfg.mode == "rag" else cfg.pool_size
        ask = min(want + 1, len(self.index)) if self.cfg.exclude_self else want
        pool = self.index.query(self._embed_query(sample), ask)
        if self.cfg.exclude_self:
            pool = [n for n in pool if n.sample_id != sample.id][:want]
            pool = [replace(n, retrieval_rank=i) for i, n in enumerate(pool)]
        return pool

    def select_examples(self, sample: LabeledSample) -> list[LabeledSample]:
        """The demonstrations this sample's prompt will carry, in prompt order."""
        mode = self.cfg.retrieval.mode
        if mode == "zero_shot":
            return []
        if mode == "fixed_few_shot":
            return list(self._fixed)
        neighbors = self._retrieve(sample)
        if mode == "rag_rerank":
            assert self._scorer is not None
            neighbors = rerank_mod.rerank_top_k(
                self._scorer, sample.text, neighbors, self.cfg.retrieval.k
            )
        return [LabeledSample(n.sample_id, n.text, n.label) for n in neighbors]

    def build_prompt(self, sample: LabeledSample):
        examples = self.select_examples(sample)
        mode = self.cfg.retrieval.mode
        source = {"zero_shot": "zero", "fixed_few_shot": "fixed"}.get(mode, "retrieved")
        if not examples:
            source = "zero"
        return assemble(self.template, examples, source=source), examples

    def classify_one(self, sample: LabeledSample) -> Prediction:
        return self._classify(sample).prediction

    def _classify(self, sample: LabeledSample) -> _SampleOutcome:
        prompt, examples = self.build_prompt(sample)
        ids = tuple(s.id for s in examples)
        try:
            response = self._client.complete(prompt.text, self.cfg.llm)
        except RemoteFailure as err:
            self._emit({"event": "sample_failed", "sample_id": sample.id, "error": str(err)})
            return _SampleOutcome(
                Prediction(sample.id, self.fallback_code, "fallback", "", ids),
                llm_completed=False,
                primary_from_cache=False,
            )

        code = parse_prediction(response.text, self.spec)
        if not isinstance(code, ParseFailure):
            return _SampleOutcome(
                Prediction(sample.id, code, "ok", response.text, ids),
                llm_completed=True,
                primary_from_cache=response.from_cache,
            )

        retry_text = prompt.text + "\n" + RETRY_INSTRUCTION + "\n"
        try:
            retry = self._client.complete(retry_text, self.cfg.llm)
        except RemoteFailure:
            retry = None
        if retry is not None:
            retry_code = parse_prediction(retry.text, self.spec)
            if not isinstance(retry_code, ParseFailure):
                self._emit({"event": "sample_retried", "sample_id": sample.id})
                return _SampleOutcome(
                    Prediction(sample.id, retry_code, "retried", retry.text, ids),
                    llm_completed=True,
                    primary_from_cache=response.from_cache,
                )

        self._emit({"event": "sample_fallback", "sample_id": sample.id, "reason": code.reason})
        return _SampleOutcome(
            Prediction(sample.id, self.fallback_code, "fallback", response.text, ids),
            llm_completed=True,
            primary_from_cache=response.from_cache,
        )

    def run(self, eval_split: DatasetSplit | Sequence[LabeledSample]) -> tuple[list[Prediction], BatchReport]:
        """Classify every sample of the split, in split order.

        Report counts are per sample: ``completed`` samples got at least one
        LLM response, ``failed`` ones exhausted retries and fell back,
        ``cache_hits`` counts samples whose primary completion was cached.
        """
        samples = eval_split.samples if isinstance(eval_split, DatasetSplit) else tuple(eval_split)
        started = time.monotonic()
        outcomes: list[_SampleOutcome | None] = [None] * len(samples)

        def job(i: int) -> None:
            outcomes[i] = self._classify(samples[i])

        if samples:
            with ThreadPoolExecutor(max_workers=self.cfg.worker_count) as pool:
                for _ in pool.map(job, range(len(samples))):
                    pass

        done = [o for o in outcomes if o is not None]
        completed = sum(1 for o in done if o.llm_completed)
        failures = tuple(
            (i, f"sample {samples[i].id!r}: provider unavailable")
            for i, o in enumerate(done)
            if not o.llm_completed
        )
        report = BatchReport(
            total=len(samples),
            completed=completed,
            failed=len(samples) - completed,
            cache_hits=sum(1 for o in done if o.primary_from_cache),
            wall_time_ms=int((time.monotonic() - started) * 1000),
            failures=failures,
        )
        return [o.prediction for o in done], report


def write_predictions_csv(predictions: Sequence[Prediction], path) -> None:
    """Submission format: ``index,prediction``."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "prediction"])
        for p in predictions:
            writer.writerow([p.sample_id, p.code])


def read_predictions_csv(path) -> list[Prediction]:
    """Load a submission-format file back into bare Prediction records."""
    with open(path, encoding="utf-8-sig", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["index", "prediction"]:
            raise ConfigError(f"{path}: expected 'index,prediction' header, got {header!r}")
        return [Prediction(row[0], int(row[1]), "ok", "") for row in reader if row]


def write_audit_jsonl(predictions: Sequence[Prediction], path) -> None:
    """One JSON record per sample with the raw response and examples used."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in predictions:
            record = {
                "sample_id": p.sample_id,
                "code": p.code,
                "parse_status": p.parse_status,
                "raw_response": p.raw_response,
                "examples_used": list(p.examples_used),
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
