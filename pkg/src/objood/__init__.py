"""Zero-shot object-level out-of-distribution scoring with visual prompts
and a text-augmented in-distribution embedding space."""

from .encoder import BackendError, MockBackend, SemanticStubBackend
from .idspace import IdSpace, build_id_space, load_id_space, save_id_space
from .imaging import BoundingBox, MalformedRegionError
from .metrics import EvalReport, auroc, fpr_at_tpr, summarize
from .prompts import PromptKind, PromptSet, PromptSpec, apply_visual_prompt, default_prompt_set, render_text_prompt
from .scoring import (
    ScoredInstance,
    ScoringConfig,
    calibrate_gamma,
    classify,
    encode_object,
    score_batch,
    similarities,
    uncertainty,
)

__version__ = "0.1.0"

__all__ = [
    "BackendError", "MockBackend", "SemanticStubBackend",
    "IdSpace", "build_id_space", "load_id_space", "save_id_space",
    "BoundingBox", "MalformedRegionError",
    "EvalReport", "auroc", "fpr_at_tpr", "summarize",
    "PromptKind", "PromptSet", "PromptSpec", "apply_visual_prompt", "default_prompt_set", "render_text_prompt",
    "ScoredInstance", "ScoringConfig", "calibrate_gamma", "classify", "encode_object", "score_batch",
    "similarities", "uncertainty",
]
