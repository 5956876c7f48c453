#!/usr/bin/env python3
"""Build the prompt-drafting request for a binary subtask.

Samples n tweets per class from a train split and prints the request text
that asks the LLM to find the patterns separating the classes (the first
step of producing a new prompt template, before human editing). Pipe the
output wherever the completion should happen.

    python scripts/build_draft_request.py --train a_train.csv --n 30
"""

from __future__ import annotations

import argparse
import random
import sys

from ragc.dataset import SUBTASKS, load_split
from ragc.prompt import PromptDraftRequest, build_draft_request, load_draft_prefix


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--train", required=True, help="labeled train split CSV")
    parser.add_argument("--subtask", default="A", choices=["A"], help="binary subtask")
    parser.add_argument("--n", type=int, default=30, help="samples per class")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    spec = SUBTASKS[args.subtask]
    split = load_split(args.train, spec, "train")
    rng = random.Random(args.seed)
    negative_code, positive_code = spec.codes  # A: 0 = Non-Hate, 1 = Hate
    positives = [s for s in split.samples if s.label == positive_code]
    negatives = [s for s in split.samples if s.label == negative_code]
    if len(positives) < args.n or len(negatives) < args.n:
        print(
            f"need {args.n} samples per class, have {len(positives)} / {len(negatives)}",
            file=sys.stderr,
        )
        return 2

    request = PromptDraftRequest(
        n_examples=args.n,
        positive_samples=tuple(rng.sample(positives, args.n)),
        negative_samples=tuple(rng.sample(negatives, args.n)),
    )
    print(build_draft_request(request, load_draft_prefix()), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
