"""Satirical image comprehension: multi-agent decoupling, chain-of-thought
reasoning with uncertainty-guided temperature selection, and evaluation."""

from .core import (
    Caption,
    ImageRef,
    ImageSample,
    RunRecord,
    SemanticBundle,
    SubtaskTrace,
    TagSet,
    normalize_tag,
)
from .cot import build_prompt, parse_subtask_response, run_subtasks
from .decouple import SplitRule, decouple, split_image
from .uncertainty import SweepConfig, jaccard, semantic_similarity, sweep, u1, u2

__version__ = "0.1.0"

__all__ = [
    "Caption",
    "ImageRef",
    "ImageSample",
    "RunRecord",
    "SemanticBundle",
    "SplitRule",
    "SubtaskTrace",
    "SweepConfig",
    "TagSet",
    "build_prompt",
    "decouple",
    "jaccard",
    "normalize_tag",
    "parse_subtask_response",
    "run_subtasks",
    "semantic_similarity",
    "split_image",
    "sweep",
    "u1",
    "u2",
]
