"""Scoring: confusion matrices, accuracy and macro P/R/F1, report emission.

Averaging is macro (unweighted over classes), the shared-task convention
for imbalanced data; a weighted alternative can be computed for
comparison. Degenerate classes follow the 0/0 -> 0 convention so a
one-class gold set still scores without errors.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .dataset import DatasetSplit, SubtaskSpec, UnlabeledSample
from .errors import RagcError
from .pipeline import Prediction


class EvalError(RagcError):
    pass


class MissingPrediction(EvalError):
    pass


class UnknownId(EvalError):
    pass


class EmptyMatrix(EvalError):
    pass


class IoFailure(EvalError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    """Gold-by-predicted counts; rows are gold classes, columns predictions."""

    classes: tuple[int, ...]
    counts: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        n = len(self.classes)
        if len(self.counts) != n or any(len(row) != n for row in self.counts):
            raise ValueError("counts must be a |classes| x |classes| grid")
        if any(c < 0 for row in self.counts for c in row):
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.counts)

    def at(self, gold: int, predicted: int) -> int:
        gi = self.classes.index(gold)
        pi = self.classes.index(predicted)
        return self.counts[gi][pi]


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: dict[int, ClassMetrics]
    total: int
    weighted: tuple[float, float, float] | None = None


def confusion(
    predictions: Sequence[Prediction],
    gold: DatasetSplit,
    spec: SubtaskSpec,
) -> ConfusionMatrix:
    """Tally counts[gold][predicted] over the split; every sample needs one prediction."""
    by_id: dict[str, Prediction] = {}
    gold_ids = {s.id for s in gold.samples}
    for p in predictions:
        if p.sample_id not in gold_ids:
            raise UnknownId(f"prediction for unknown sample id {p.sample_id!r}")
        by_id[p.sample_id] = p
    codes = spec.codes
    ix = {code: i for i, code in enumerate(codes)}
    grid = [[0] * len(codes) for _ in codes]
    for sample in gold.samples:
        if sample.label is None:
            raise UnlabeledSample(f"gold sample {sample.id!r} has no label")
        pred = by_id.get(sample.id)
        if pred is None:
            raise MissingPrediction(f"no prediction for sample {sample.id!r}")
        grid[ix[sample.label]][ix[pred.code]] += 1
    return ConfusionMatrix(classes=codes, counts=tuple(tuple(row) for row in grid))


def metrics(matrix: ConfusionMatrix, *, include_weighted: bool = False) -> Metrics:
    """Accuracy plus per-class and macro precision/recall/F1 (0/0 counts as 0)."""
    total = matrix.total
    if total < 1:
        raise EmptyMatrix("cannot score an empty matrix")
    n = len(matrix.classes)
    per_class: dict[int, ClassMetrics] = {}
    for i, code in enumerate(matrix.classes):
        tp = matrix.counts[i][i]
        fp = sum(matrix.counts[g][i] for g in range(n)) - tp
        fn = sum(matrix.counts[i]) - tp
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[code] = ClassMetrics(precision, recall, f1, support=tp + fn)

    values = list(per_class.values())
    weighted = None
    if include_weighted:
        weighted = tuple(
            sum(getattr(m, name) * m.support for m in values) / total
            for name in ("precision", "recall", "f1")
        )
    return Metrics(
        accuracy=sum(matrix.counts[i][i] for i in range(n)) / total,
        macro_precision=sum(m.precision for m in values) / n,
        macro_recall=sum(m.recall for m in values) / n,
        macro_f1=sum(m.f1 for m in values) / n,
        per_class=per_class,
        total=total,
        weighted=weighted,
    )


def metrics_to_dict(m: Metrics) -> dict:
    out = {
        "accuracy": m.accuracy,
        "macro": {"p": m.macro_precision, "r": m.macro_recall, "f1": m.macro_f1},
        "per_class": {
            str(code): {"p": cm.precision, "r": cm.recall, "f1": cm.f1, "support": cm.support}
            for code, cm in m.per_class.items()
        },
        "total": m.total,
    }
    if m.weighted is not None:
        out["weighted"] = {"p": m.weighted[0], "r": m.weighted[1], "f1": m.weighted[2]}
    return out


def confusion_to_csv(matrix: ConfusionMatrix, spec: SubtaskSpec) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    names = [spec.name_of(code) for code in matrix.classes]
    writer.writerow([""] + names)
    for name, row in zip(names, matrix.counts):
        writer.writerow([name] + list(row))
    return buf.getvalue()


def confusion_to_svg(matrix: ConfusionMatrix, spec: SubtaskSpec) -> str:
    """A simple shaded grid with the counts printed in the cells."""
    n = len(matrix.classes)
    cell = 80
    margin = 110
    width = margin + n * cell + 20
    height = margin + n * cell + 20
    peak = max((c for row in matrix.counts for c in row), default=0) or 1
    names = [spec.name_of(code) for code in matrix.classes]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="12">',
        f'<text x="{margin + n * cell / 2}" y="20" text-anchor="middle">predicted</text>',
        f'<text x="18" y="{margin + n * cell / 2}" text-anchor="middle" '
        f'transform="rotate(-90 18 {margin + n * cell / 2})">gold</text>',
    ]
    for j, name in enumerate(names):
        x = margin + j * cell + cell / 2
        parts.append(f'<text x="{x}" y="{margin - 10}" text-anchor="middle">{name}</text>')
    for i, name in enumerate(names):
        y = margin + i * cell + cell / 2
        parts.append(
            f'<text x="{margin - 10}" y="{y + 4}" text-anchor="end">{name}</text>'
        )
    for i in range(n):
        for j in range(n):
            count = matrix.counts[i][j]
            shade = 255 - int(160 * count / peak)
            x = margin + j * cell
            y = margin + i * cell
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="rgb({shade},{shade},255)" stroke="black"/>'
            )
            parts.append(
                f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" text-anchor="middle">{count}</text>'
            )
    parts.append("</svg>")
    return "\n".join(parts)


def report_markdown(m: Metrics, spec: SubtaskSpec, baseline_f1: float | None = None) -> str:
    lines = [
        f"# Subtask {spec.id} results",
        "",
        "| metric | value |",
        "| --- | --- |",
        f"| accuracy | {m.accuracy:.3f} |",
        f"| macro precision | {m.macro_precision:.3f} |",
        f"| macro recall | {m.macro_recall:.3f} |",
        f"| macro F1 | {m.macro_f1:.3f} |",
    ]
    if m.weighted is not None:
        lines.append(f"| weighted F1 | {m.weighted[2]:.3f} |")
    if baseline_f1 is not None:
        lines.append(f"| baseline F1 | {baseline_f1:.3f} |")
        lines.append(f"| delta F1 vs baseline | {m.macro_f1 - baseline_f1:+.3f} |")
    lines += ["", "## Per-class", "", "| class | precision | recall | F1 | support |", "| --- | --- | --- | --- | --- |"]
    for code, cm in m.per_class.items():
        lines.append(
            f"| {spec.name_of(code)} ({code}) | {cm.precision:.3f} | {cm.recall:.3f} | "
            f"{cm.f1:.3f} | {cm.support} |"
        )
    lines.append("")
    return "\n".join(lines)


def report(
    m: Metrics,
    matrix: ConfusionMatrix,
    spec: SubtaskSpec,
    out_dir,
    baseline_f1: float | None = None,
) -> dict[str, Path]:
    """Emit metrics.json, confusion.csv, report.md and confusion.svg into out_dir."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "metrics": out / "metrics.json",
            "confusion_csv": out / "confusion.csv",
            "report": out / "report.md",
            "confusion_svg": out / "confusion.svg",
        }
        paths["metrics"].write_text(
            json.dumps(metrics_to_dict(m), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        paths["confusion_csv"].write_text(confusion_to_csv(matrix, spec), encoding="utf-8")
        paths["report"].write_text(report_markdown(m, spec, baseline_f1), encoding="utf-8")
        paths["confusion_svg"].write_text(confusion_to_svg(matrix, spec), encoding="utf-8")
    except OSError as err:
        raise IoFailure(f"could not write report files to {out}: {err}") from err
    return paths
