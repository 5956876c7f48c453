#!/usr/bin/env python3
"""End-to-end offline demo: synthetic corpus, mode x k grid, summary table.

Builds a small stance-detection corpus, runs the retrieval grid with the
deterministic mock LLM and hashing embedder (no network, no keys), then
prints the side-by-side report. Useful as a smoke test of the whole
pipeline and as a template for wiring real providers.

    python scripts/offline_demo.py --workdir demo_workdir
"""

from __future__ import annotations

import argparse
import csv
import random
import sys
from pathlib import Path

from ragc.cli import main as ragc_main

VOCABULARY = {
    1: ["join", "strike", "support", "mobilize", "climate", "justice", "future", "act"],
    2: ["fooled", "scam", "hoax", "waste", "greta", "lies", "fake", "agenda"],
    3: ["report", "meeting", "locations", "update", "schedule", "event", "news", "brief"],
}


def make_corpus(path: Path, count: int, seed: int) -> None:
    rng = random.Random(seed)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "tweet", "label"])
        for i in range(count):
            label = rng.choice([1, 1, 2, 3, 3])  # mildly imbalanced
            words = rng.choices(VOCABULARY[label], k=rng.randint(4, 8))
            writer.writerow([i, " ".join(words) + " #FridaysForFuture", label])


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="demo_workdir")
    parser.add_argument("--train-size", type=int, default=300)
    parser.add_argument("--valid-size", type=int, default=60)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    train, valid = workdir / "train.csv", workdir / "valid.csv"
    make_corpus(train, args.train_size, args.seed)
    make_corpus(valid, args.valid_size, args.seed + 1)

    grid_config = workdir / "grid.toml"
    grid_config.write_text(
        f"""[run]
subtask = "C"
stage = "evaluation"
workers = 8

[data.C]
train = "{train}"
valid = "{valid}"

[grid]
modes = ["zero_shot", "fixed_few_shot", "rag", "rag_rerank"]
k = [4, 6, 8]
""",
        encoding="utf-8",
    )

    fixed_ids = ",".join(str(i) for i in range(8))
    code = ragc_main(
        [
            "grid",
            "--config", str(grid_config),
            "--mock-llm", "majority",
            "--fixed-ids", fixed_ids,
            "--out", str(workdir / "runs"),
            "--baseline", "0.545",
        ]
    )
    if code != 0:
        return code

    run_dirs = sorted(p for p in (workdir / "runs").iterdir() if (p / "metrics.json").exists())
    print()
    return ragc_main(["report", "--runs", ",".join(str(p) for p in run_dirs)])


if __name__ == "__main__":
    sys.exit(main())
