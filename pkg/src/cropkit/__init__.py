"""Aesthetic-cropping toolkit: rectangle metrics, rule-grounded candidate
proposal, overlay rendering, a pluggable VLM pipeline, corpus builders,
preference objectives, evaluation, and a pairwise preference study."""

__version__ = "0.1.0"

from .elements import CompositionElement, ElementCategory, RuleKind, rule_kind
from .geometry import DEFAULT_EQUIVALENCE_EPSILON, ImageDims, PixelBox, bde, clamp, equivalent, iou
from .rules import CandidateSet, CropCandidate, ProposalConfig, generate_candidates

__all__ = [
    "__version__",
    "CompositionElement",
    "ElementCategory",
    "RuleKind",
    "rule_kind",
    "DEFAULT_EQUIVALENCE_EPSILON",
    "ImageDims",
    "PixelBox",
    "bde",
    "clamp",
    "equivalent",
    "iou",
    "CandidateSet",
    "CropCandidate",
    "ProposalConfig",
    "generate_candidates",
]
