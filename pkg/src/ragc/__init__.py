"""Retrieval-augmented LLM classification for tweet stance / target / hate detection."""

__version__ = "0.1.0"

from .dataset import SUBTASKS, DatasetSplit, LabeledSample, SubtaskSpec
from .errors import RagcError

__all__ = [
    "SUBTASKS",
    "DatasetSplit",
    "LabeledSample",
    "SubtaskSpec",
    "RagcError",
    "__version__",
]
