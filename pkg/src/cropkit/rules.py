"""Deterministic generation of rule-grounded candidate crops.

Placement rules (thirds, golden ratio, center) pin the subject's center to
a power point of the crop; layout rules require the crop to contain the whole
structure with a safety margin. Both reduce to one-dimensional interval
feasibility problems solved per axis, combined under aspect bounds with a
maximum-area objective.
"""

import json
import math
import random
import string
from dataclasses import dataclass
from typing import Callable, Optional

from .elements import CompositionElement, ElementCategory, RuleKind, rule_kind
from .geometry import ImageDims, PixelBox, clamp, iou, union_bounds

_EPS = 1e-9

THIRDS_FRACTIONS = (1.0 / 3.0, 2.0 / 3.0)
GOLDEN_FRACTIONS = (0.382, 0.618)

PERTURBATION_TAG = "perturbation"
COMBINED_TAG = "combined"


class NoFeasibleCropError(Exception):
    """No crop satisfies the rule's constraints inside the frame."""


@dataclass(frozen=True)
class ProposalConfig:
    target_count: int = 8
    aspect_bounds: tuple[float, float] = (0.5, 2.0)
    layout_margin: float = 0.05
    jitter_scale: float = 0.10
    jitter_shift: float = 0.05
    rng_seed: int = 0
    dedupe_iou: float = 0.95

    def __post_init__(self) -> None:
        if self.target_count < 1:
            raise ValueError("target_count must be >= 1")
        lo, hi = self.aspect_bounds
        if not (0 < lo <= hi):
            raise ValueError(f"aspect bounds must be positive and ordered, got {self.aspect_bounds}")
        for name in ("layout_margin", "jitter_scale", "jitter_shift", "dedupe_iou"):
            value = getattr(self, name)
            if not (0.0 < value < 1.0):
                raise ValueError(f"{name} must be in (0, 1), got {value}")


@dataclass(frozen=True)
class CropCandidate:
    box: PixelBox
    provenance: str
    anchor: Optional[tuple[float, float]] = None
    id: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.provenance:
            raise ValueError("candidate provenance must be nonempty")


@dataclass(frozen=True)
class CandidateSet:
    candidates: tuple[CropCandidate, ...]

    def __post_init__(self) -> None:
        ids = [c.id for c in self.candidates]
        if any(i is None for i in ids) or len(set(ids)) != len(ids):
            raise ValueError("candidate set requires unique letter IDs")

    def ids(self) -> list[str]:
        return [c.id for c in self.candidates]

    def by_id(self, candidate_id: str) -> CropCandidate:
        for c in self.candidates:
            if c.id == candidate_id:
                return c
        raise KeyError(candidate_id)

    def to_json(self) -> str:
        return json.dumps(
            {
                "candidates": [
                    {"id": c.id, "box": c.box.as_list(), "provenance": c.provenance}
                    for c in self.candidates
                ]
            },
            separators=(", ", ": "),
        )

    @classmethod
    def from_json(cls, text: str) -> "CandidateSet":
        payload = json.loads(text)
        return cls(
            tuple(
                CropCandidate(
                    box=PixelBox.from_list(r["box"]),
                    provenance=r["provenance"],
                    id=r["id"],
                )
                for r in payload["candidates"]
            )
        )


def letter_id(index: int) -> str:
    """A, B, ..., Z, AA, AB, ... in emission order."""
    letters = string.ascii_uppercase
    if index < 26:
        return letters[index]
    return letters[index // 26 - 1] + letters[index % 26]


# ---------------------------------------------------------------------------
# Per-axis solves


@dataclass(frozen=True)
class _AxisSpec:
    size_min: float
    size_max: float
    place: Callable[[float], float]


def _anchored_axis(length: float, anchor_pos: float, frac: float, lo: float, hi: float) -> _AxisSpec:
    """Crop sizes for which ``anchor_pos`` can sit at fraction ``frac`` of the
    crop while the crop covers [lo, hi] and stays inside [0, length]."""
    size_max = min(anchor_pos / frac, (length - anchor_pos) / (1.0 - frac))
    size_min = max((anchor_pos - lo) / frac, (hi - anchor_pos) / (1.0 - frac), 0.0)
    return _AxisSpec(size_min, size_max, lambda s: anchor_pos - frac * s)


def _free_axis(length: float, lo: float, hi: float) -> _AxisSpec:
    """Crop sizes that can cover [lo, hi] inside [0, length]; the crop is
    centered on the covered interval where the frame allows."""

    def place(s: float) -> float:
        left_min = max(0.0, hi - s)
        left_max = min(lo, length - s)
        want = (lo + hi) / 2.0 - s / 2.0
        return min(max(want, left_min), left_max)

    return _AxisSpec(hi - lo, length, place)


def _finish_box(x1: float, y1: float, w: float, h: float, dims: ImageDims) -> PixelBox:
    # Snap away sub-nanopixel float residue, then clip to the frame.
    coords = [x1, y1, x1 + w, y1 + h]
    coords = [round(v, 9) for v in coords]
    return PixelBox(
        min(max(coords[0], 0.0), dims.width),
        min(max(coords[1], 0.0), dims.height),
        min(max(coords[2], 0.0), dims.width),
        min(max(coords[3], 0.0), dims.height),
    )


def _solve_max_area(
    x_spec: _AxisSpec, y_spec: _AxisSpec, dims: ImageDims, aspect_bounds: tuple[float, float]
) -> Optional[PixelBox]:
    """Maximum-area (width, height) within both axis ranges and aspect bounds."""
    w_min, w_max = x_spec.size_min, min(x_spec.size_max, float(dims.width))
    h_min, h_max = y_spec.size_min, min(y_spec.size_max, float(dims.height))
    if w_min > w_max + _EPS or h_min > h_max + _EPS or w_max <= 0 or h_max <= 0:
        return None
    r_lo, r_hi = aspect_bounds
    w, h = w_max, h_max
    if w / h > r_hi:
        w = r_hi * h
        if w < w_min - _EPS:
            return None
    elif w / h < r_lo:
        h = w / r_lo
        if h < h_min - _EPS:
            return None
    return _finish_box(x_spec.place(w), y_spec.place(h), w, h, dims)


def _solve_min_area(
    x_spec: _AxisSpec, y_spec: _AxisSpec, dims: ImageDims, aspect_bounds: tuple[float, float]
) -> Optional[PixelBox]:
    """Minimum-area (width, height) within both axis ranges and aspect
    bounds: the tightest crop satisfying every constraint."""
    w_min, w_max = x_spec.size_min, min(x_spec.size_max, float(dims.width))
    h_min, h_max = y_spec.size_min, min(y_spec.size_max, float(dims.height))
    if w_min > w_max + _EPS or h_min > h_max + _EPS or w_max <= 0 or h_max <= 0:
        return None
    r_lo, r_hi = aspect_bounds
    w, h = max(w_min, _EPS), max(h_min, _EPS)
    if w / h > r_hi:
        h = w / r_hi
        if h > h_max + _EPS:
            return None
    elif w / h < r_lo:
        w = r_lo * h
        if w > w_max + _EPS:
            return None
    return _finish_box(x_spec.place(w), y_spec.place(h), w, h, dims)


def _anchor_points(category: ElementCategory) -> list[tuple[float, float]]:
    if category is ElementCategory.RULE_OF_THIRDS:
        fr = THIRDS_FRACTIONS
    elif category is ElementCategory.GOLDEN_RATIO:
        fr = GOLDEN_FRACTIONS
    elif category is ElementCategory.CENTER:
        return [(0.5, 0.5)]
    else:
        raise ValueError(f"{category.value} is not a placement category")
    return [(fx, fy) for fx in fr for fy in fr]


# ---------------------------------------------------------------------------
# Proposal operations


def propose_placement(
    element: CompositionElement, dims: ImageDims, cfg: ProposalConfig
) -> list[CropCandidate]:
    """Maximum-area crops putting each subject box's center at the rule's
    power points. Anchors that cannot contain the full subject are dropped."""
    if rule_kind(element.category) is not RuleKind.PLACEMENT:
        raise ValueError(f"{element.category.value} is not a placement rule")
    out: list[CropCandidate] = []
    for subject in element.boxes:
        cx, cy = subject.center
        for fx, fy in _anchor_points(element.category):
            box = _solve_max_area(
                _anchored_axis(dims.width, cx, fx, subject.x1, subject.x2),
                _anchored_axis(dims.height, cy, fy, subject.y1, subject.y2),
                dims,
                cfg.aspect_bounds,
            )
            if box is not None:
                out.append(
                    CropCandidate(box=box, provenance=element.category.value, anchor=(fx, fy))
                )
    if not out:
        raise NoFeasibleCropError(
            f"no feasible placement crop for {element.category.value} in {dims.width}x{dims.height}"
        )
    return out


def layout_region(element: CompositionElement, dims: ImageDims, cfg: ProposalConfig) -> PixelBox:
    """Union of element boxes expanded by the layout margin, clipped to frame.

    The margin is a fraction of the union's larger extent, applied uniformly
    on all four sides.
    """
    union = union_bounds(element.boxes)
    margin = cfg.layout_margin * max(union.width, union.height)
    return clamp(
        PixelBox(union.x1 - margin, union.y1 - margin, union.x2 + margin, union.y2 + margin),
        dims,
    )


def propose_layout(
    element: CompositionElement, dims: ImageDims, cfg: ProposalConfig
) -> list[CropCandidate]:
    """Crops fully containing the margin-expanded element union, plus
    rule-specific alignment variants."""
    if rule_kind(element.category) is not RuleKind.LAYOUT:
        raise ValueError(f"{element.category.value} is not a layout rule")
    region = layout_region(element, dims, cfg)
    rcx, rcy = region.center
    tag = element.category.value
    out: list[CropCandidate] = []

    def free_x() -> _AxisSpec:
        return _free_axis(dims.width, region.x1, region.x2)

    def free_y() -> _AxisSpec:
        return _free_axis(dims.height, region.y1, region.y2)

    if element.category is ElementCategory.SYMMETRIC:
        # Every emitted crop keeps the mirror axis on the crop midline.
        box = _solve_max_area(
            _anchored_axis(dims.width, rcx, 0.5, region.x1, region.x2),
            free_y(),
            dims,
            cfg.aspect_bounds,
        )
        if box is not None:
            out.append(CropCandidate(box=box, provenance=tag, anchor=(0.5, None)))
    elif element.category is ElementCategory.VANISHING_POINT:
        box = _solve_max_area(free_x(), free_y(), dims, cfg.aspect_bounds)
        if box is not None and not _point_in_middle(box, rcx, rcy, 0.8):
            centered = _solve_max_area(
                _anchored_axis(dims.width, rcx, 0.5, region.x1, region.x2),
                _anchored_axis(dims.height, rcy, 0.5, region.y1, region.y2),
                dims,
                cfg.aspect_bounds,
            )
            if centered is not None:
                box = centered
        if box is not None:
            out.append(CropCandidate(box=box, provenance=tag))
    else:
        box = _solve_max_area(free_x(), free_y(), dims, cfg.aspect_bounds)
        if box is not None:
            out.append(CropCandidate(box=box, provenance=tag))
        if element.category is ElementCategory.HORIZONTAL:
            for fy in THIRDS_FRACTIONS:
                variant = _solve_max_area(
                    free_x(),
                    _anchored_axis(dims.height, rcy, fy, region.y1, region.y2),
                    dims,
                    cfg.aspect_bounds,
                )
                if variant is not None:
                    out.append(CropCandidate(box=variant, provenance=tag, anchor=(None, fy)))

    if not out:
        raise NoFeasibleCropError(
            f"no crop within aspect bounds contains the {tag} structure in {dims.width}x{dims.height}"
        )
    return out


def _point_in_middle(box: PixelBox, px: float, py: float, fraction: float) -> bool:
    pad = (1.0 - fraction) / 2.0
    fx = (px - box.x1) / box.width
    fy = (py - box.y1) / box.height
    return pad <= fx <= 1.0 - pad and pad <= fy <= 1.0 - pad


def propose_combined(
    placement: CompositionElement,
    layout: CompositionElement,
    dims: ImageDims,
    cfg: ProposalConfig,
) -> Optional[CropCandidate]:
    """A single crop satisfying both the placement anchor and the layout
    containment, at the feasible anchor nearest the subject's current
    relative position. Absent when the constraints cannot be met together.

    Unlike the individual proposals this takes the tightest satisfying crop,
    so it adds a genuinely new framing instead of repeating the maximum-area
    placement crop."""
    if rule_kind(placement.category) is not RuleKind.PLACEMENT:
        raise ValueError(f"{placement.category.value} is not a placement rule")
    if rule_kind(layout.category) is not RuleKind.LAYOUT:
        raise ValueError(f"{layout.category.value} is not a layout rule")
    region = layout_region(layout, dims, cfg)
    for subject in placement.boxes:
        cx, cy = subject.center
        rel = (cx / dims.width, cy / dims.height)
        anchors = sorted(
            _anchor_points(placement.category),
            key=lambda a: (math.hypot(a[0] - rel[0], a[1] - rel[1]), a),
        )
        cover_x = (min(region.x1, subject.x1), max(region.x2, subject.x2))
        cover_y = (min(region.y1, subject.y1), max(region.y2, subject.y2))
        for fx, fy in anchors:
            box = _solve_min_area(
                _anchored_axis(dims.width, cx, fx, *cover_x),
                _anchored_axis(dims.height, cy, fy, *cover_y),
                dims,
                cfg.aspect_bounds,
            )
            if box is not None:
                return CropCandidate(box=box, provenance=COMBINED_TAG, anchor=(fx, fy))
    return None


# ---------------------------------------------------------------------------
# Padding and assembly


def _jitter(source: PixelBox, dims: ImageDims, cfg: ProposalConfig, rng: random.Random) -> PixelBox:
    w, h = source.width, source.height
    scale_cap = min(dims.width / w, dims.height / h)
    s = min(1.0 + rng.uniform(-cfg.jitter_scale, cfg.jitter_scale), scale_cap)
    nw, nh = w * s, h * s
    cx, cy = source.center
    cx += rng.uniform(-cfg.jitter_shift, cfg.jitter_shift) * w
    cy += rng.uniform(-cfg.jitter_shift, cfg.jitter_shift) * h
    x1 = min(max(cx - nw / 2.0, 0.0), dims.width - nw)
    y1 = min(max(cy - nh / 2.0, 0.0), dims.height - nh)
    return PixelBox(x1, y1, x1 + nw, y1 + nh)


def _dedupe(candidates: list[CropCandidate], threshold: float) -> list[CropCandidate]:
    kept: list[CropCandidate] = []
    for cand in candidates:
        if all(iou(cand.box, k.box) <= threshold for k in kept):
            kept.append(cand)
    return kept


def pad_with_perturbations(
    seed_candidates: list[CropCandidate], dims: ImageDims, cfg: ProposalConfig
) -> list[CropCandidate]:
    """Deduplicate, then pad with seeded random jitters of the source crops
    until exactly ``target_count`` remain. An empty input is seeded with the
    full-frame crop."""
    rng = random.Random(cfg.rng_seed)
    kept = _dedupe(seed_candidates, cfg.dedupe_iou)[: cfg.target_count]
    if not kept:
        full = PixelBox(0.0, 0.0, float(dims.width), float(dims.height))
        kept = [CropCandidate(box=full, provenance=PERTURBATION_TAG)]
    sources = list(kept)
    i = 0
    while len(kept) < cfg.target_count:
        source = sources[i % len(sources)]
        i += 1
        for attempt in range(200):
            box = _jitter(source.box, dims, cfg, rng)
            if all(iou(box, k.box) <= cfg.dedupe_iou for k in kept):
                kept.append(CropCandidate(box=box, provenance=PERTURBATION_TAG))
                break
        else:
            raise AssertionError("perturbation padding failed to find a distinct crop")
    return kept[: cfg.target_count]


def rule_candidates(
    elements: list[CompositionElement], dims: ImageDims, cfg: ProposalConfig
) -> list[CropCandidate]:
    """Unpadded placement, layout, and combined proposals over all elements,
    in deterministic emission order (placement, layout, combined)."""
    for element in elements:
        element.validate_within(dims)
    placements = [e for e in elements if rule_kind(e.category) is RuleKind.PLACEMENT]
    layouts = [e for e in elements if rule_kind(e.category) is RuleKind.LAYOUT]

    crops: list[CropCandidate] = []
    for element in placements:
        try:
            crops.extend(propose_placement(element, dims, cfg))
        except NoFeasibleCropError:
            continue
    for element in layouts:
        try:
            crops.extend(propose_layout(element, dims, cfg))
        except NoFeasibleCropError:
            continue
    for placement in placements:
        for layout in layouts:
            combined = propose_combined(placement, layout, dims, cfg)
            if combined is not None:
                crops.append(combined)
    return crops


def assemble_candidate_set(
    crops: list[CropCandidate], dims: ImageDims, cfg: ProposalConfig
) -> CandidateSet:
    """Pad an arbitrary candidate pool to the target count and assign IDs."""
    padded = pad_with_perturbations(crops, dims, cfg)
    labeled = tuple(
        CropCandidate(box=c.box, provenance=c.provenance, anchor=c.anchor, id=letter_id(n))
        for n, c in enumerate(padded)
    )
    return CandidateSet(labeled)


def generate_candidates(
    elements: list[CompositionElement], dims: ImageDims, cfg: ProposalConfig
) -> CandidateSet:
    """Run placement, layout, and combined proposals over all elements, pad to
    the target count, and assign letter IDs in emission order."""
    return assemble_candidate_set(rule_candidates(elements, dims, cfg), dims, cfg)
