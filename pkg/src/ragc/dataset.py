"""Corpus ingestion: subtask definitions, CSV split loading and the example store.

Tweets are stored verbatim; no normalization of any kind is applied to the
text. The CSV schema (column names) is configurable because different
releases of shared-task data name their columns differently; the default is
``index,tweet,label`` with a header row.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass

from .errors import RagcError

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "valid", "test")
STAGES = ("evaluation", "testing")


class DatasetError(RagcError):
    pass


class MissingColumn(DatasetError):
    pass


class InvalidLabelCode(DatasetError):
    pass


class DuplicateId(DatasetError):
    pass


class EmptyFile(DatasetError):
    pass


class EmptyText(DatasetError):
    pass


class MalformedRow(DatasetError):
    pass


class UnlabeledSample(DatasetError):
    pass


class SpecMismatch(DatasetError):
    pass


@dataclass(frozen=True)
class SubtaskSpec:
    """A classification task: ordered classes with integer prediction codes."""

    id: str
    classes: tuple[tuple[int, str], ...]

    def __post_init__(self) -> None:
        if len(self.classes) < 2:
            raise ValueError(f"subtask {self.id!r} needs at least 2 classes")
        codes = [code for code, _ in self.classes]
        if len(set(codes)) != len(codes):
            raise ValueError(f"subtask {self.id!r} has duplicate class codes")

    @property
    def codes(self) -> tuple[int, ...]:
        return tuple(code for code, _ in self.classes)

    def name_of(self, code: int) -> str:
        for c, name in self.classes:
            if c == code:
                return name
        raise KeyError(code)


SUBTASKS: dict[str, SubtaskSpec] = {
    "A": SubtaskSpec("A", ((0, "Non-Hate"), (1, "Hate"))),
    "B": SubtaskSpec("B", ((1, "Individual"), (2, "Organization"), (3, "Community"))),
    "C": SubtaskSpec("C", ((1, "Support"), (2, "Oppose"), (3, "Neutral"))),
}


@dataclass(frozen=True)
class LabeledSample:
    """One tweet. ``label`` is None for unlabeled (test-stage) rows."""

    id: str
    text: str
    label: int | None = None


@dataclass(frozen=True)
class DatasetSplit:
    name: str
    subtask: str
    samples: tuple[LabeledSample, ...]

    def __post_init__(self) -> None:
        if self.name not in SPLIT_NAMES:
            raise ValueError(f"split name must be one of {SPLIT_NAMES}, got {self.name!r}")
        seen: set[str] = set()
        for sample in self.samples:
            if sample.id in seen:
                raise DuplicateId(f"duplicate sample id {sample.id!r} in split {self.name!r}")
            seen.add(sample.id)

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for split files. ``label_column=None`` means no label column."""

    id_column: str = "index"
    text_column: str = "tweet"
    label_column: str | None = "label"


DEFAULT_SCHEMA = CsvSchema()


def _parse_label(raw: str, spec: SubtaskSpec, row_no: int) -> int | None:
    raw = raw.strip()
    if raw == "":
        return None
    try:
        code = int(raw)
    except ValueError:
        raise InvalidLabelCode(f"row {row_no}: label {raw!r} is not an integer") from None
    if code not in spec.codes:
        raise InvalidLabelCode(
            f"row {row_no}: label {code} not a valid code for subtask {spec.id} "
            f"(valid: {list(spec.codes)})"
        )
    return code


def load_split(
    path,
    spec: SubtaskSpec,
    name: str,
    schema: CsvSchema = DEFAULT_SCHEMA,
    *,
    allow_degenerate: bool = False,
    skip_invalid: bool = False,
    invalid_sink: list | None = None,
) -> DatasetSplit:
    """Load one CSV split, validating ids and labels against ``spec``.

    Row order is preserved. An empty label cell yields an unlabeled sample
    (test files may ship without labels). Rows that fail validation abort
    the load unless ``skip_invalid`` is set, in which case they are logged,
    reported through ``invalid_sink`` (a list receiving ``(row_no, reason)``
    tuples) and dropped.
    """
    with open(path, encoding="utf-8-sig", newline="") as fh:
        return _read_split(fh, spec, name, schema, allow_degenerate, skip_invalid, invalid_sink)


def read_split_text(
    text: str,
    spec: SubtaskSpec,
    name: str,
    schema: CsvSchema = DEFAULT_SCHEMA,
    *,
    allow_degenerate: bool = False,
) -> DatasetSplit:
    """Parse a split from an in-memory CSV string (BOM tolerated)."""
    if text.startswith("﻿"):
        text = text[1:]
    return _read_split(io.StringIO(text), spec, name, schema, allow_degenerate, False, None)


def _read_split(fh, spec, name, schema, allow_degenerate, skip_invalid, invalid_sink):
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyFile("split file has no header row") from None

    columns = {col: i for i, col in enumerate(header)}
    wanted = [schema.id_column, schema.text_column]
    if schema.label_column is not None:
        wanted.append(schema.label_column)
    for col in wanted:
        if col not in columns:
            raise MissingColumn(f"column {col!r} not in header {header!r}")
    id_ix = columns[schema.id_column]
    text_ix = columns[schema.text_column]
    label_ix = columns[schema.label_column] if schema.label_column is not None else None

    samples: list[LabeledSample] = []
    seen: set[str] = set()
    for row_no, row in enumerate(reader, start=2):
        try:
            if len(row) <= max(ix for ix in (id_ix, text_ix, label_ix) if ix is not None):
                raise MalformedRow(f"row {row_no}: too few fields ({len(row)})")
            sample_id = row[id_ix]
            text = row[text_ix]
            if sample_id in seen:
                raise DuplicateId(f"row {row_no}: duplicate id {sample_id!r}")
            if text == "" and not allow_degenerate:
                raise EmptyText(f"row {row_no}: empty tweet text (pass allow_degenerate to keep)")
            label = _parse_label(row[label_ix], spec, row_no) if label_ix is not None else None
        except DatasetError as err:
            if not skip_invalid:
                raise
            logger.warning("skipping invalid row: %s", err)
            if invalid_sink is not None:
                invalid_sink.append((row_no, str(err)))
            continue
        seen.add(sample_id)
        samples.append(LabeledSample(sample_id, text, label))

    return DatasetSplit(name=name, subtask=spec.id, samples=tuple(samples))


def dump_split(split: DatasetSplit, schema: CsvSchema = DEFAULT_SCHEMA) -> str:
    """Serialize a split back to normalized CSV (RFC 4180, LF line endings, UTF-8).

    Loading a dumped split and dumping it again is byte-stable, which is how
    the lossless-ingestion property is checked.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = [schema.id_column, schema.text_column]
    if schema.label_column is not None:
        header.append(schema.label_column)
    writer.writerow(header)
    for sample in split.samples:
        row = [sample.id, sample.text]
        if schema.label_column is not None:
            row.append("" if sample.label is None else str(sample.label))
        writer.writerow(row)
    return buf.getvalue()


def write_split(split: DatasetSplit, path, schema: CsvSchema = DEFAULT_SCHEMA) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(dump_split(split, schema))


def class_stats(split: DatasetSplit, spec: SubtaskSpec) -> dict[int, int]:
    """Per-class sample counts; every spec code is present as a key."""
    counts = {code: 0 for code in spec.codes}
    for sample in split.samples:
        if sample.label is None:
            raise UnlabeledSample(f"sample {sample.id!r} has no label")
        if sample.label not in counts:
            raise InvalidLabelCode(
                f"sample {sample.id!r} label {sample.label} not in subtask {spec.id} codes"
            )
        counts[sample.label] += 1
    return counts


def example_store(
    train: DatasetSplit,
    valid: DatasetSplit | None,
    stage: str,
) -> tuple[LabeledSample, ...]:
    """The retrieval store for a run stage.

    At the evaluation stage only the train split is available; at the
    testing stage validation labels are released, so the store is train
    followed by valid, in stable order.
    """
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}, got {stage!r}")
    if valid is not None and valid.subtask != train.subtask:
        raise SpecMismatch(
            f"train is subtask {train.subtask!r} but valid is subtask {valid.subtask!r}"
        )
    if stage == "evaluation" or valid is None:
        return train.samples
    return train.samples + valid.samples
