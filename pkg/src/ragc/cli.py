"""Command-line entry point: ingest, run, grid, eval, annotate, report.

Settings resolve with precedence env > flag > config file > default (the
environment wins so deployment credentials never end up in checked-in
files). Each run executes inside a locked run directory and appends one
JSON line per pipeline event to ``run.log``.

Exit codes: 0 success, 2 configuration or data errors, 3 provider outage
after retries.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import tomli

from . import annotate as annotate_mod
from . import dataset as dataset_mod
from . import evaluation as eval_mod
from . import llm as llm_mod
from . import pipeline as pipeline_mod
from .dataset import SUBTASKS, CsvSchema
from .embed import FileEmbeddings, HashEmbeddings, RemoteEmbeddings
from .errors import RagcError
from .pipeline import ClassificationPipeline, RunConfig
from .remote import RemoteFailure
from .rerank import MODES as RETRIEVAL_MODES
from .rerank import JaccardScorer, RemoteScorer, RetrievalConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PROVIDER = 3


class CliError(RagcError):
    pass


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as err:
        raise CliError(f"bad TOML in {path}: {err}") from None


def _setting(env_name: str | None, flag_value, file_value, default):
    """Resolve one setting with precedence env > flag > file > default."""
    if env_name:
        env_value = os.environ.get(env_name)
        if env_value:
            return env_value
    if flag_value is not None:
        return flag_value
    if file_value is not None:
        return file_value
    return default


def _schema_from(args, cfg: dict) -> CsvSchema:
    section = cfg.get("schema", {})
    label = _setting(None, args.schema_label, section.get("label"), "label")
    if getattr(args, "no_label_column", False) or label == "":
        label = None
    return CsvSchema(
        id_column=_setting(None, args.schema_id, section.get("id"), "index"),
        text_column=_setting(None, args.schema_text, section.get("text"), "tweet"),
        label_column=label,
    )


def _add_schema_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--schema-id", help="id column name (default: index)")
    parser.add_argument("--schema-text", help="text column name (default: tweet)")
    parser.add_argument("--schema-label", help="label column name (default: label)")
    parser.add_argument(
        "--no-label-column", action="store_true", help="file has no label column"
    )


class RunLog:
    """JSON-lines event log for one run directory."""

    def __init__(self, path: Path):
        self._fh = open(path, "a", encoding="utf-8")

    def emit(self, event: dict) -> None:
        record = {"ts_ms": int(time.time() * 1000), **event}
        self._fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


class RunLock:
    """One run at a time per run directory."""

    def __init__(self, run_dir: Path):
        self._path = run_dir / ".lock"

    def __enter__(self):
        try:
            fd = os.open(self._path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise CliError(
                f"run directory is locked ({self._path}); another run in progress?"
            ) from None
        os.close(fd)
        return self

    def __exit__(self, *exc):
        try:
            os.unlink(self._path)
        except FileNotFoundError:
            pass
        return False


# ---------------------------------------------------------------- ingest


def cmd_ingest(args) -> int:
    cfg = _load_config_file(args.config)
    spec = SUBTASKS[args.subtask]
    schema = _schema_from(args, cfg)
    invalid: list = []
    split = dataset_mod.load_split(
        args.file,
        spec,
        args.split,
        schema,
        allow_degenerate=args.allow_degenerate,
        skip_invalid=args.skip_invalid,
        invalid_sink=invalid,
    )
    for row_no, reason in invalid:
        print(f"warning: {reason}")
    print(f"split {split.name} (subtask {spec.id}): {len(split)} samples")
    labeled = [s for s in split.samples if s.label is not None]
    if labeled and len(labeled) == len(split):
        stats = dataset_mod.class_stats(split, spec)
        for code, name in spec.classes:
            print(f"  {name} ({code}): {stats[code]}")
    else:
        print(f"  labeled: {len(labeled)}, unlabeled: {len(split) - len(labeled)}")
    if invalid:
        print(f"{len(invalid)} invalid row(s) skipped")
    return EXIT_OK


# ------------------------------------------------------------------- run


def _build_embedder(args, cfg: dict):
    section = cfg.get("embedding", {})
    provider = _setting(None, args.embedder, section.get("provider"), "test")
    model = _setting(None, args.embed_model, section.get("model"), None)
    dimension = int(_setting(None, args.embed_dim, section.get("dimension"), 64))
    if provider == "test":
        return HashEmbeddings(dimension, model_id=model or "fnv1a-hash")
    if provider == "file":
        path = _setting(None, args.vectors_file, section.get("vectors_file"), None)
        if not path or not model:
            raise CliError("file embedder needs --vectors-file and --embed-model")
        return FileEmbeddings.load(path, model_id=model)
    if provider == "remote":
        endpoint = _setting(
            "RAGC_EMBED_ENDPOINT", args.embed_endpoint, section.get("endpoint"), None
        )
        if not endpoint or not model:
            raise CliError("remote embedder needs an endpoint and --embed-model")
        api_key = _setting("RAGC_EMBED_API_KEY", None, section.get("api_key"), "")
        return RemoteEmbeddings(endpoint, model, dimension, api_key=api_key)
    raise CliError(f"unknown embedder {provider!r} (use test, file or remote)")


def _build_scorer(args, cfg: dict):
    section = cfg.get("rerank", {})
    scorer = _setting(None, args.scorer, section.get("scorer"), "jaccard")
    if scorer == "jaccard":
        return JaccardScorer()
    if scorer == "remote":
        endpoint = _setting(
            "RAGC_RERANK_ENDPOINT", args.rerank_endpoint, section.get("endpoint"), None
        )
        if not endpoint:
            raise CliError("remote scorer needs an endpoint")
        api_key = _setting("RAGC_RERANK_API_KEY", None, section.get("api_key"), "")
        return RemoteScorer(endpoint, scorer_id="remote", api_key=api_key)
    raise CliError(f"unknown scorer {scorer!r} (use jaccard or remote)")


def _build_transport(args, cfg: dict, seed: int):
    if args.mock_llm:
        return llm_mod.mock_from_policy(
            args.mock_llm, seed=seed, max_latency_ms=args.mock_latency_ms
        )
    section = cfg.get("llm", {})
    endpoint = _setting("RAGC_LLM_ENDPOINT", args.llm_endpoint, section.get("endpoint"), None)
    if not endpoint:
        raise CliError("no LLM endpoint configured; set RAGC_LLM_ENDPOINT or use --mock-llm")
    api_key = _setting("RAGC_LLM_API_KEY", None, section.get("api_key"), "")
    return llm_mod.HttpChatTransport(endpoint, api_key=api_key)


def _data_paths(args, cfg: dict, subtask: str) -> dict:
    section = cfg.get("data", {}).get(subtask, {})
    return {
        "train": _setting(None, args.train, section.get("train"), None),
        "valid": _setting(None, args.valid, section.get("valid"), None),
        "test": _setting(None, getattr(args, "test", None), section.get("test"), None),
    }


def _resolve_subtask(args, cfg: dict) -> str:
    subtask = _setting(None, args.subtask, cfg.get("run", {}).get("subtask"), None)
    if not subtask or subtask not in SUBTASKS:
        raise CliError(f"no valid subtask configured (got {subtask!r})")
    return subtask


def _run_one(args, cfg: dict, subtask: str, mode: str, k: int, out_dir: Path) -> int:
    spec = SUBTASKS[subtask]
    schema = _schema_from(args, cfg)
    run_section = cfg.get("run", {})
    stage = _setting(None, args.stage, run_section.get("stage"), "evaluation")
    workers = int(_setting(None, args.workers, run_section.get("workers"), 1))
    seed = int(_setting(None, args.seed, run_section.get("seed"), 0))
    multiplier = int(_setting(None, args.multiplier, run_section.get("multiplier"), 3))

    paths = _data_paths(args, cfg, subtask)
    if not paths["train"]:
        raise CliError(f"no train file configured for subtask {subtask}")
    train = dataset_mod.load_split(paths["train"], spec, "train", schema)
    valid = (
        dataset_mod.load_split(paths["valid"], spec, "valid", schema)
        if paths["valid"]
        else None
    )
    store = dataset_mod.example_store(train, valid, stage)

    eval_path = args.eval_file or (paths["valid"] if stage == "evaluation" else paths["test"])
    if not eval_path:
        raise CliError(f"no evaluation file for stage {stage!r}")
    eval_schema = schema
    try:
        eval_split = dataset_mod.load_split(eval_path, spec, "test", eval_schema)
    except dataset_mod.MissingColumn:
        # test files may ship without the label column
        eval_schema = CsvSchema(schema.id_column, schema.text_column, None)
        eval_split = dataset_mod.load_split(eval_path, spec, "test", eval_schema)

    scorer_obj = _build_scorer(args, cfg) if mode == "rag_rerank" else None
    embedder = _build_embedder(args, cfg) if mode in ("rag", "rag_rerank") else None
    fixed = tuple(args.fixed_ids.split(",")) if args.fixed_ids else None
    if fixed is not None and mode == "fixed_few_shot":
        # grids reuse one id list across k values; the first k ids apply
        fixed = fixed[:k]

    llm_section = cfg.get("llm", {})
    params = llm_mod.LlmParams(
        model_id=_setting(None, args.llm_model, llm_section.get("model"), "gpt-4"),
        temperature=float(_setting(None, args.temperature, llm_section.get("temperature"), 0.0)),
        max_tokens=int(_setting(None, args.max_tokens, llm_section.get("max_tokens"), 1024)),
        api_version=_setting(
            "RAGC_LLM_API_VERSION", args.api_version, llm_section.get("api_version"), ""
        ),
    )
    retrieval = RetrievalConfig(
        mode=mode,
        k=k,
        pool_multiplier=multiplier,
        scorer_id=getattr(scorer_obj, "scorer_id", "jaccard"),
    )
    run_cfg = RunConfig(
        subtask=subtask,
        retrieval=retrieval,
        llm=params,
        stage=stage,
        fixed_examples=fixed,
        embedding_model_id=embedder.model_id if embedder else "",
        worker_count=workers,
        seed=seed,
        exclude_self=args.exclude_self,
    )

    out_dir.mkdir(parents=True, exist_ok=True)
    cache_dir = Path(args.cache_dir) if args.cache_dir else out_dir / "cache"
    transport = _build_transport(args, cfg, seed)
    # injected mock failures are not transient; skip the backoff sleeps offline
    sleep = (lambda _delay: None) if args.mock_llm else None
    client = (
        llm_mod.LlmClient(transport, cache_dir, sleep=sleep)
        if sleep
        else llm_mod.LlmClient(transport, cache_dir)
    )

    with RunLock(out_dir):
        log = RunLog(out_dir / "run.log")
        try:
            log.emit(
                {
                    "event": "run_started",
                    "subtask": subtask,
                    "mode": mode,
                    "k": k,
                    "stage": stage,
                    "workers": workers,
                    "eval_file": str(eval_path),
                }
            )
            pipe = ClassificationPipeline(
                run_cfg,
                store,
                client,
                embedder=embedder,
                scorer=scorer_obj,
                event_sink=log.emit,
                index_snapshot=args.index_snapshot,
            )
            predictions, batch = pipe.run(eval_split)
            pipeline_mod.write_predictions_csv(predictions, out_dir / "predictions.csv")
            pipeline_mod.write_audit_jsonl(predictions, out_dir / "audit.jsonl")
            meta = {
                "subtask": subtask,
                "mode": mode,
                "k": k,
                "stage": stage,
                "eval_file": str(eval_path),
                "schema": {
                    "id": eval_schema.id_column,
                    "text": eval_schema.text_column,
                    "label": eval_schema.label_column,
                },
                "label": f"{mode} (k={k})" if k else mode,
                "gold_available": all(s.label is not None for s in eval_split.samples),
            }
            (out_dir / "run_meta.json").write_text(
                json.dumps(meta, indent=2) + "\n", encoding="utf-8"
            )
            log.emit(
                {
                    "event": "run_finished",
                    "total": batch.total,
                    "completed": batch.completed,
                    "failed": batch.failed,
                    "cache_hits": batch.cache_hits,
                    "wall_time_ms": batch.wall_time_ms,
                }
            )
        finally:
            log.close()

    print(
        f"run {out_dir}: {batch.total} samples, {batch.completed} completed, "
        f"{batch.failed} failed, {batch.cache_hits} cache hits"
    )
    if meta["gold_available"]:
        matrix = eval_mod.confusion(predictions, eval_split, spec)
        m = eval_mod.metrics(matrix, include_weighted=args.weighted)
        eval_mod.report(m, matrix, spec, out_dir, baseline_f1=args.baseline)
        print(f"macro F1: {m.macro_f1:.3f} (accuracy {m.accuracy:.3f})")
    if batch.failed > 0:
        # outputs and cache are in place, so the run is resumable; signal the outage
        print(f"{batch.failed} sample(s) fell back after provider failures", file=sys.stderr)
        return EXIT_PROVIDER
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config_file(args.config)
    run_section = cfg.get("run", {})
    subtask = _resolve_subtask(args, cfg)
    mode = _setting(None, args.mode, run_section.get("mode"), "zero_shot")
    k = int(_setting(None, args.k, run_section.get("k"), 0))
    out_dir = Path(args.out or "runs/latest")
    return _run_one(args, cfg, subtask, mode, k, out_dir)


def cmd_grid(args) -> int:
    cfg = _load_config_file(args.config)
    grid = cfg.get("grid")
    if not grid:
        raise CliError("grid config needs a [grid] table with 'modes' and 'k'")
    modes = grid.get("modes", ["zero_shot"])
    ks = [int(k) for k in grid.get("k", [0])]
    subtask = _resolve_subtask(args, cfg)
    base = Path(args.out or "runs/grid")
    for mode in modes:
        for k in ks if mode != "zero_shot" else [0]:
            label = f"{mode}_k{k}" if mode != "zero_shot" else mode
            print(f"== {label}")
            code = _run_one(args, cfg, subtask, mode, k, base / label)
            if code != EXIT_OK:
                return code
    return EXIT_OK


# ------------------------------------------------------------------ eval


def cmd_eval(args) -> int:
    cfg = _load_config_file(args.config)
    spec = SUBTASKS[args.subtask]
    schema = _schema_from(args, cfg)
    predictions = pipeline_mod.read_predictions_csv(args.pred)
    gold = dataset_mod.load_split(args.gold, spec, "test", schema)
    matrix = eval_mod.confusion(predictions, gold, spec)
    m = eval_mod.metrics(matrix, include_weighted=args.weighted)
    out_dir = Path(args.out or Path(args.pred).parent)
    eval_mod.report(m, matrix, spec, out_dir, baseline_f1=args.baseline)
    print(f"accuracy:  {m.accuracy:.3f}")
    print(f"macro P:   {m.macro_precision:.3f}")
    print(f"macro R:   {m.macro_recall:.3f}")
    print(f"macro F1:  {m.macro_f1:.3f}")
    if args.baseline is not None:
        print(f"delta F1:  {m.macro_f1 - args.baseline:+.3f} vs baseline {args.baseline:.3f}")
    print(f"report written to {out_dir}")
    return EXIT_OK


# -------------------------------------------------------------- annotate


def cmd_annotate(args) -> int:
    cfg = _load_config_file(args.config)
    if args.run:
        run_dir = Path(args.run)
        meta = json.loads((run_dir / "run_meta.json").read_text(encoding="utf-8"))
        subtask = meta["subtask"]
        pred_path = run_dir / "predictions.csv"
        gold_path = args.gold or meta["eval_file"]
        schema = CsvSchema(meta["schema"]["id"], meta["schema"]["text"], meta["schema"]["label"])
        session = Path(args.session or run_dir / "annotations.jsonl")
    else:
        if not (args.pred and args.gold and args.subtask):
            raise CliError("annotate needs --run DIR or --pred/--gold/--subtask")
        subtask = args.subtask
        pred_path = args.pred
        gold_path = args.gold
        schema = _schema_from(args, cfg)
        session = Path(args.session or "annotations.jsonl")

    spec = SUBTASKS[subtask]
    predictions = pipeline_mod.read_predictions_csv(pred_path)
    gold = dataset_mod.load_split(gold_path, spec, "test", schema)
    records = annotate_mod.list_errors(predictions, gold)
    if not records:
        print("nothing to annotate")
        return EXIT_OK

    if not args.aggregate_only:
        decisions = None
        if args.from_file:
            decisions = Path(args.from_file).read_text(encoding="utf-8").splitlines()
        new = annotate_mod.annotate_loop(
            records, session, annotator=args.annotator, decisions=decisions
        )
        print(f"{len(new)} annotation(s) recorded in {session}")

    annotations = annotate_mod.load_annotations(session)
    if annotations:
        table = annotate_mod.aggregate(annotations, predictions, gold)
        print(annotate_mod.aggregate_to_markdown(table, spec))
        done = len(annotations)
        print(f"annotated {done}/{len(records)} misprediction(s)")
    return EXIT_OK


# ---------------------------------------------------------------- report


def cmd_report(args) -> int:
    rows = []
    for run in args.runs.split(","):
        run_dir = Path(run.strip())
        try:
            meta = json.loads((run_dir / "run_meta.json").read_text(encoding="utf-8"))
            metrics_data = json.loads((run_dir / "metrics.json").read_text(encoding="utf-8"))
        except FileNotFoundError as err:
            raise CliError(f"{run_dir}: not a scored run directory ({err.filename} missing)") from None
        rows.append((meta.get("label", run_dir.name), meta.get("subtask", "?"), metrics_data))

    lines = [
        "| Model | Subtask | Acc | P | R | F1 |",
        "| --- | --- | --- | --- | --- | --- |",
    ]
    for label, subtask, data in rows:
        macro = data["macro"]
        lines.append(
            f"| {label} | {subtask} | {data['accuracy']:.3f} | {macro['p']:.3f} "
            f"| {macro['r']:.3f} | {macro['f1']:.3f} |"
        )
    table = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK


# ------------------------------------------------------------------ main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ragc",
        description="Retrieval-augmented LLM classification pipeline and evaluation harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a CSV split and print class stats")
    p.add_argument("--subtask", required=True, choices=sorted(SUBTASKS))
    p.add_argument("--split", required=True, choices=dataset_mod.SPLIT_NAMES)
    p.add_argument("--file", required=True)
    p.add_argument("--config")
    p.add_argument("--skip-invalid", action="store_true")
    p.add_argument("--allow-degenerate", action="store_true", help="keep empty-text rows")
    _add_schema_flags(p)
    p.set_defaults(func=cmd_ingest)

    for name, helptext in (
        ("run", "classify one split with one configuration"),
        ("grid", "expand a mode x k grid into sequential runs"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--subtask", choices=sorted(SUBTASKS))
        if name == "run":
            p.add_argument("--mode", choices=RETRIEVAL_MODES)
            p.add_argument("-k", type=int)
        p.add_argument("--config")
        p.add_argument("--stage", choices=dataset_mod.STAGES)
        p.add_argument("--train")
        p.add_argument("--valid")
        p.add_argument("--test")
        p.add_argument("--eval-file", help="override the split to classify")
        p.add_argument("--out")
        p.add_argument("--cache-dir")
        p.add_argument("--workers", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--multiplier", type=int, help="re-rank pool multiplier")
        p.add_argument(
            "--fixed-ids",
            help="comma-separated ids for fixed_few_shot (the first k apply)",
        )
        p.add_argument("--exclude-self", action="store_true")
        p.add_argument("--baseline", type=float)
        p.add_argument("--weighted", action="store_true")
        p.add_argument(
            "--mock-llm",
            help="offline transport: 'majority', 'constant:<code>' or 'outage'",
        )
        p.add_argument("--mock-latency-ms", type=int, default=0)
        p.add_argument("--llm-model")
        p.add_argument("--llm-endpoint")
        p.add_argument("--api-version")
        p.add_argument("--temperature", type=float)
        p.add_argument("--max-tokens", type=int)
        p.add_argument("--embedder", choices=("test", "file", "remote"))
        p.add_argument("--embed-model")
        p.add_argument("--embed-dim", type=int)
        p.add_argument("--embed-endpoint")
        p.add_argument("--vectors-file")
        p.add_argument("--scorer", choices=("jaccard", "remote"))
        p.add_argument("--rerank-endpoint")
        p.add_argument("--index-snapshot", help="reuse the vector index across runs")
        _add_schema_flags(p)
        p.set_defaults(func=cmd_run if name == "run" else cmd_grid)

    p = sub.add_parser("eval", help="score predictions against gold labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--subtask", required=True, choices=sorted(SUBTASKS))
    p.add_argument("--baseline", type=float)
    p.add_argument("--weighted", action="store_true")
    p.add_argument("--out")
    p.add_argument("--config")
    _add_schema_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("annotate", help="review mispredictions interactively")
    p.add_argument("--run", help="run directory with run_meta.json")
    p.add_argument("--pred")
    p.add_argument("--gold")
    p.add_argument("--subtask", choices=sorted(SUBTASKS))
    p.add_argument("--session", help="annotation JSONL (default: <run>/annotations.jsonl)")
    p.add_argument("--from-file", help="batch decisions file instead of interactive input")
    p.add_argument("--annotator", default="annotator")
    p.add_argument("--aggregate-only", action="store_true")
    p.add_argument("--config")
    _add_schema_flags(p)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("report", help="side-by-side metrics table for finished runs")
    p.add_argument("--runs", required=True, help="comma-separated run directories")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RemoteFailure as err:
        print(f"provider failure: {err}", file=sys.stderr)
        return EXIT_PROVIDER
    except RagcError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as err:
        print(f"error: file not found: {err.filename}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
