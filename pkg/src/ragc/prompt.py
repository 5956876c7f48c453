"""Prompt templates and few-shot example rendering.

Each subtask ships a fixed template asset that ends with a ``## Examples``
section; retrieved or hardcoded examples are appended there, each rendered
as ``Tweet: {text}\\nPrediction: {code}`` with the tweet text embedded
verbatim. Assembly is byte-deterministic so prompts can be golden-tested
and cached.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

from .dataset import LabeledSample, UnlabeledSample
from .errors import RagcError

EXAMPLES_HEADER = "## Examples"

TEMPLATE_ASSETS = {"A": "prompt_a.txt", "B": "prompt_b.txt", "C": "prompt_c.txt"}
DRAFT_PREFIX_ASSET = "draft_prefix.txt"

# One rendered example: tweet text (possibly multi-line) up to the nearest
# following prediction line that closes the block.
_EXAMPLE_RE = re.compile(
    r"Tweet: (.*?)\nPrediction: ([+-]?\d+)\n(?:\n(?=Tweet: )|\Z)", re.DOTALL
)

SOURCES = ("zero", "fixed", "retrieved")


class PromptError(RagcError):
    pass


class CountMismatch(PromptError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    """A subtask's instruction text, ending with the examples header."""

    subtask: str
    body: str
    examples_header: str = EXAMPLES_HEADER

    def __post_init__(self) -> None:
        if not self.body.endswith("\n"):
            object.__setattr__(self, "body", self.body + "\n")
        if self.body.count(self.examples_header) != 1:
            raise PromptError(
                f"template body must contain {self.examples_header!r} exactly once"
            )
        if not self.body.endswith(self.examples_header + "\n"):
            raise PromptError(f"template body must end with {self.examples_header!r}")


@dataclass(frozen=True)
class AssembledPrompt:
    text: str
    example_count: int
    source: str

    def __post_init__(self) -> None:
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got {self.source!r}")
        if (self.example_count == 0) != (self.source == "zero"):
            raise ValueError("example_count 0 iff source is 'zero'")


@dataclass(frozen=True)
class PromptDraftRequest:
    """Input for the template-drafting request sent to the LLM itself."""

    n_examples: int
    positive_samples: tuple[LabeledSample, ...]
    negative_samples: tuple[LabeledSample, ...]

    def __post_init__(self) -> None:
        if self.n_examples < 1:
            raise ValueError("n_examples must be >= 1")
        if len(self.positive_samples) != self.n_examples or len(self.negative_samples) != self.n_examples:
            raise CountMismatch(
                f"need {self.n_examples} samples per side, got "
                f"{len(self.positive_samples)} positive / {len(self.negative_samples)} negative"
            )


def _read_asset(name: str) -> str:
    return resources.files(__package__).joinpath("assets", name).read_text(encoding="utf-8")


def load_template(subtask: str) -> PromptTemplate:
    """Load the bundled template for subtask A, B or C."""
    try:
        asset = TEMPLATE_ASSETS[subtask]
    except KeyError:
        raise PromptError(f"no template for subtask {subtask!r}") from None
    return PromptTemplate(subtask=subtask, body=_read_asset(asset))


def load_draft_prefix() -> str:
    return _read_asset(DRAFT_PREFIX_ASSET)


def render_example(sample: LabeledSample) -> str:
    """``Tweet: {text}\\nPrediction: {code}\\n`` — text embedded verbatim."""
    if sample.label is None:
        raise UnlabeledSample(f"sample {sample.id!r} has no label to render")
    return f"Tweet: {sample.text}\nPrediction: {sample.label}\n"


def assemble(
    template: PromptTemplate,
    examples: Sequence[LabeledSample],
    source: str | None = None,
) -> AssembledPrompt:
    """Append rendered examples to the template body, one blank line apart.

    An empty example list is the zero-shot prompt: the body unchanged.
    """
    if source is None:
        source = "zero" if not examples else "retrieved"
    if not examples:
        return AssembledPrompt(text=template.body, example_count=0, source=source)
    section = "\n".join(render_example(s) for s in examples)
    return AssembledPrompt(
        text=template.body + "\n" + section,
        example_count=len(examples),
        source=source,
    )


def parse_examples_section(text: str, examples_header: str = EXAMPLES_HEADER) -> list[tuple[str, int]]:
    """Recover (text, code) pairs from an assembled prompt's examples section.

    Inverse of assemble for tweets that do not themselves contain a
    ``\\nPrediction: <int>\\n`` line followed by a block boundary.
    """
    try:
        start = text.index(examples_header) + len(examples_header)
    except ValueError:
        raise PromptError(f"no {examples_header!r} section found") from None
    section = text[start:]
    return [(m.group(1), int(m.group(2))) for m in _EXAMPLE_RE.finditer(section)]


def build_draft_request(req: PromptDraftRequest, prefix_template: str) -> str:
    """Fill ``$n_examples`` in the prefix and append the two sample blocks.

    Positive samples come first, then negative, matching the prefix's
    framing. Draft samples are sent as bare tweets (no prediction lines).
    """
    if len(req.positive_samples) != req.n_examples or len(req.negative_samples) != req.n_examples:
        raise CountMismatch("sample counts do not match n_examples")
    prefix = prefix_template.replace("$n_examples", str(req.n_examples))
    parts = [prefix.rstrip("\n")]
    for title, samples in (
        ("## Positive examples", req.positive_samples),
        ("## Negative examples", req.negative_samples),
    ):
        parts.append("")
        parts.append(title)
        parts.append("")
        parts.append("\n\n".join(f"Tweet: {s.text}" for s in samples))
    return "\n".join(parts) + "\n"
