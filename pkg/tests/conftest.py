"""Shared fixtures: tiny synthetic splits and corpus-statistics CSV builders."""

from __future__ import annotations

import csv
from pathlib import Path

import pytest

from ragc.dataset import SUBTASKS, DatasetSplit, LabeledSample


def pytest_runtest_logreport(report):
    # one visible pass/fail line per acceptance criterion
    if "test_acceptance.py" in report.nodeid and report.when == "call":
        name = report.nodeid.split("::")[-1].replace("test_", "", 1)
        print(f"\nACCEPTANCE {name}: {'PASS' if report.passed else 'FAIL'}")

# Published per-class split sizes used as ingestion-validation fixtures.
CORPUS_COUNTS = {
    "A": {
        "train": {0: 6385, 1: 899},
        "valid": {0: 1371, 1: 190},
        "test": {0: 1374, 1: 188},
    },
    "B": {
        "train": {1: 563, 2: 105, 3: 31},
        "valid": {1: 120, 2: 23, 3: 7},
        "test": {1: 121, 2: 23, 3: 6},
    },
    "C": {
        "train": {1: 4328, 2: 700, 3: 2256},
        "valid": {1: 897, 2: 153, 3: 511},
        "test": {1: 921, 2: 141, 3: 500},
    },
}

# The example pairs frozen into the k=2 prompt goldens.
GOLDEN_EXAMPLES = {
    "A": (
        LabeledSample("g1", "Climate protest downtown today. #FridaysForFuture", 0),
        LabeledSample("g2", "You've been fooled by Greta Thunberg #hoax", 1),
    ),
    "B": (
        LabeledSample("g1", "Greta Thunberg is a fraud and you all know it", 1),
        LabeledSample("g2", "Big Oil keeps lying about emissions.\nShame on them!", 2),
    ),
    "C": (
        LabeledSample("g1", "Join the climate strike on Friday! #ClimateJustice", 1),
        LabeledSample("g2", "Recycling is literally a scam!!", 2),
    ),
}

GOLDEN_DIR = Path(__file__).parent / "golden"

# Parser fixture corpus: (response text, subtask, expected code or failure reason).
PARSER_CASES = [
    ("Prediction: 1", "A", 1),
    ("Prediction: 0\nBecause the tweet is friendly.", "A", 0),
    ("The tweet is aggressive.\nPrediction: 1", "A", 1),
    ("Prediction: 1 ... on reflection, though ... Prediction: 0", "A", 0),
    ("Prediction: 0 at first glance\nbut finally Prediction: 1", "A", 1),
    ("the tweet is neutral", "A", "no_keyword"),
    ("", "A", "no_keyword"),
    ("Prediction: 7", "B", "invalid_code"),
    ("prediction: 2", "B", 2),
    ("PREDICTION: 3", "B", 3),
    ("Prediction:1", "C", 1),
    ("Prediction:   2", "C", 2),
    ("Prediction:\n3", "C", 3),
    ("After chain of thought reasoning I conclude Prediction: 2 fits best.", "C", 2),
    ("Prediction: -1", "A", "invalid_code"),
    ("Prediction: 01", "B", 1),
    ("Prediction: 1 Prediction: oops", "A", 1),
    ("Prediction: 999999999999999999999", "A", "invalid_code"),
    ("Is it Prediction: 2? No wait, Prediction: 3.", "B", 3),
    ("The prediction: final verdict is Prediction: 0", "A", 0),
]


def write_csv(path, rows, header=("index", "tweet", "label")) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if header:
            writer.writerow(header)
        writer.writerows(rows)
    return Path(path)


def synthetic_rows(counts: dict[int, int], *, start: int = 0):
    """Rows with the exact per-class counts, interleaved deterministically."""
    rows = []
    i = start
    for code in sorted(counts):
        for j in range(counts[code]):
            rows.append((str(i), f"synthetic tweet {code}-{j}", str(code)))
            i += 1
    return rows


def corpus_csv(tmp_path: Path, subtask: str, split: str) -> Path:
    rows = synthetic_rows(CORPUS_COUNTS[subtask][split])
    return write_csv(tmp_path / f"{subtask}_{split}.csv", rows)


def make_split(subtask: str, labeled, name: str = "train") -> DatasetSplit:
    samples = tuple(
        LabeledSample(str(i), text, label) for i, (text, label) in enumerate(labeled)
    )
    return DatasetSplit(name=name, subtask=subtask, samples=samples)


@pytest.fixture
def spec_a():
    return SUBTASKS["A"]


@pytest.fixture
def spec_b():
    return SUBTASKS["B"]


@pytest.fixture
def spec_c():
    return SUBTASKS["C"]


@pytest.fixture
def tiny_store_c():
    """Eight labeled stance samples with distinct texts."""
    return tuple(
        LabeledSample(f"s{i}", text, label)
        for i, (text, label) in enumerate(
            [
                ("climate strike in berlin today", 1),
                ("my cat sleeps all day", 3),
                ("strike today in berlin against coal", 1),
                ("climate policy debate tonight", 3),
                ("today we strike for the climate", 1),
                ("berlin weather looks grim", 2),
                ("greta speaks at the un again", 2),
                ("oil lobby buys another politician", 2),
            ]
        )
    )
