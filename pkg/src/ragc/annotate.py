"""Error-analysis workflow: list mispredictions, annotate them, aggregate.

Mispredicted samples are reviewed one by one (interactively or replayed
from a decision file) and sorted into three categories: Error (the model
was wrong), Unclear (cannot tell), WrongLabel (the gold label looks
wrong). The session log is append-only JSON lines with last-write-wins on
re-annotation, so sessions are crash-safe and resumable, and the log can
be shipped alongside a submission.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .dataset import DatasetSplit, SubtaskSpec, UnlabeledSample
from .errors import RagcError
from .evaluation import MissingPrediction
from .pipeline import Prediction

CATEGORIES = ("Error", "Unclear", "WrongLabel")
_KEY_TO_CATEGORY = {"e": "Error", "u": "Unclear", "w": "WrongLabel"}


class AnnotateError(RagcError):
    pass


class OrphanAnnotation(AnnotateError):
    pass


@dataclass(frozen=True)
class ErrorRecord:
    sample_id: str
    predicted: int
    gold: int
    text: str

    def __post_init__(self) -> None:
        if self.predicted == self.gold:
            raise ValueError(f"sample {self.sample_id!r} is not a misprediction")


@dataclass(frozen=True)
class Annotation:
    sample_id: str
    predicted: int
    gold: int
    category: str
    note: str = ""
    annotator: str = "annotator"
    ts: str = ""

    def __post_init__(self) -> None:
        if self.category not in CATEGORIES:
            raise ValueError(f"category must be one of {CATEGORIES}, got {self.category!r}")


def list_errors(predictions: Sequence[Prediction], gold: DatasetSplit) -> list[ErrorRecord]:
    """All and only the mispredicted samples, in split order."""
    by_id = {p.sample_id: p for p in predictions}
    records = []
    for sample in gold.samples:
        if sample.label is None:
            raise UnlabeledSample(f"gold sample {sample.id!r} has no label")
        pred = by_id.get(sample.id)
        if pred is None:
            raise MissingPrediction(f"no prediction for sample {sample.id!r}")
        if pred.code != sample.label:
            records.append(
                ErrorRecord(sample.id, predicted=pred.code, gold=sample.label, text=sample.text)
            )
    return records


def append_annotation(session_file, annotation: Annotation) -> None:
    record = {
        "sample_id": annotation.sample_id,
        "predicted": annotation.predicted,
        "gold": annotation.gold,
        "category": annotation.category,
        "note": annotation.note,
        "annotator": annotation.annotator,
        "ts": annotation.ts,
    }
    with open(session_file, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_annotations(session_file) -> list[Annotation]:
    """Replay the session log; the latest record per sample id wins."""
    path = Path(session_file)
    if not path.exists():
        return []
    latest: dict[str, Annotation] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                r = json.loads(line)
                ann = Annotation(
                    sample_id=str(r["sample_id"]),
                    predicted=int(r["predicted"]),
                    gold=int(r["gold"]),
                    category=r["category"],
                    note=r.get("note", ""),
                    annotator=r.get("annotator", "annotator"),
                    ts=r.get("ts", ""),
                )
            except (ValueError, KeyError, TypeError) as err:
                raise AnnotateError(f"{session_file}:{line_no}: bad annotation record: {err}") from err
            latest[ann.sample_id] = ann
    return list(latest.values())


def _parse_decision(line: str) -> tuple[str, str] | None:
    """Split one input line into (action, note); action is e/u/w/s/q or ''."""
    stripped = line.strip()
    if not stripped:
        return None
    head, _, note = stripped.partition(" ")
    action = head.lower()
    if action in ("s", "skip"):
        return ("s", "")
    if action in ("q", "quit"):
        return ("q", "")
    if action in _KEY_TO_CATEGORY:
        return (action, note.strip())
    if action in ("error", "unclear", "wronglabel", "wrong-label"):
        return (action[0], note.strip())
    return None


def annotate_loop(
    records: Sequence[ErrorRecord],
    session_file,
    *,
    annotator: str = "annotator",
    decisions: Iterable[str] | None = None,
    input_fn: Callable[[str], str] = input,
    output_fn: Callable[[str], None] = print,
    now_fn: Callable[[], str] | None = None,
) -> list[Annotation]:
    """Step through pending records assigning categories; returns new annotations.

    Records already present in the session file are skipped, which makes
    sessions resumable. Input lines are ``E``/``U``/``W`` (optionally
    followed by a note), ``s`` to skip, ``q`` to quit; anything else
    re-prompts. ``decisions`` replays a prepared line stream instead of
    prompting (batch mode); each annotation is appended to the log as soon
    as it is made.
    """
    now_fn = now_fn or (lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))
    done = {a.sample_id for a in load_annotations(session_file)}
    pending = [r for r in records if r.sample_id not in done]
    batch = iter(decisions) if decisions is not None else None
    new: list[Annotation] = []

    for pos, record in enumerate(pending, start=1):
        output_fn(f"[{pos}/{len(pending)}] sample {record.sample_id}")
        output_fn(f"  predicted: {record.predicted}   gold: {record.gold}")
        output_fn(f"  text: {record.text}")
        action_note = None
        while action_note is None:
            if batch is not None:
                line = next(batch, None)
                if line is None:
                    return new
                parsed = _parse_decision(line)
                if parsed is None:
                    raise AnnotateError(f"bad decision line {line!r} in batch input")
                action_note = parsed
            else:
                try:
                    line = input_fn("[E]rror / [U]nclear / [W]rong-label / [s]kip / [q]uit: ")
                except EOFError:
                    return new
                action_note = _parse_decision(line)
                if action_note is None:
                    output_fn("  unrecognized input, try again")
        action, note = action_note
        if action == "q":
            return new
        if action == "s":
            continue
        annotation = Annotation(
            sample_id=record.sample_id,
            predicted=record.predicted,
            gold=record.gold,
            category=_KEY_TO_CATEGORY[action],
            note=note,
            annotator=annotator,
            ts=now_fn(),
        )
        append_annotation(session_file, annotation)
        new.append(annotation)
    return new


def aggregate(
    annotations: Sequence[Annotation],
    predictions: Sequence[Prediction],
    gold: DatasetSplit,
) -> dict[tuple[int, int], dict[str, int]]:
    """Category counts keyed by (predicted, gold) code pairs, row-ordered.

    Every annotated id must be an actual misprediction of the run being
    analyzed; anything else is an OrphanAnnotation.
    """
    errors = {r.sample_id: r for r in list_errors(predictions, gold)}
    table: dict[tuple[int, int], dict[str, int]] = {}
    for ann in annotations:
        record = errors.get(ann.sample_id)
        if record is None:
            raise OrphanAnnotation(f"annotation for {ann.sample_id!r} is not a misprediction")
        cell = table.setdefault((record.predicted, record.gold), {c: 0 for c in CATEGORIES})
        cell[ann.category] += 1
    return {key: table[key] for key in sorted(table)}


def aggregate_to_markdown(
    table: dict[tuple[int, int], dict[str, int]], spec: SubtaskSpec
) -> str:
    lines = [
        "| Prediction | Label | Error | Unclear | Wrong-Label |",
        "| --- | --- | --- | --- | --- |",
    ]
    for (predicted, gold), cell in table.items():
        lines.append(
            f"| {spec.name_of(predicted)} | {spec.name_of(gold)} | "
            f"{cell['Error']} | {cell['Unclear']} | {cell['WrongLabel']} |"
        )
    return "\n".join(lines) + "\n"


def aggregate_to_csv(table: dict[tuple[int, int], dict[str, int]], spec: SubtaskSpec) -> str:
    lines = ["prediction,label,error,unclear,wrong_label"]
    for (predicted, gold), cell in table.items():
        lines.append(
            f"{spec.name_of(predicted)},{spec.name_of(gold)},"
            f"{cell['Error']},{cell['Unclear']},{cell['WrongLabel']}"
        )
    return "\n".join(lines) + "\n"
