"""Compositional element categories and their placement/layout split."""

import enum
import json
from dataclasses import dataclass

from .geometry import ImageDims, PixelBox


class ElementCategory(enum.Enum):
    """The ten compositional element categories."""

    RULE_OF_THIRDS = "rule_of_thirds"
    CENTER = "center"
    GOLDEN_RATIO = "golden_ratio"
    HORIZONTAL = "horizontal"
    SYMMETRIC = "symmetric"
    DIAGONAL = "diagonal"
    CURVED = "curved"
    VERTICAL = "vertical"
    TRIANGLE = "triangle"
    VANISHING_POINT = "vanishing_point"


class RuleKind(enum.Enum):
    """Placement rules constrain where a subject sits inside a crop;
    layout rules require the crop to contain the whole structure."""

    PLACEMENT = "placement"
    LAYOUT = "layout"


PLACEMENT_CATEGORIES = frozenset(
    {
        ElementCategory.RULE_OF_THIRDS,
        ElementCategory.CENTER,
        ElementCategory.GOLDEN_RATIO,
    }
)


def rule_kind(category: ElementCategory) -> RuleKind:
    """Total function over the ten categories."""
    if category in PLACEMENT_CATEGORIES:
        return RuleKind.PLACEMENT
    return RuleKind.LAYOUT


def parse_category(raw: str) -> ElementCategory:
    """Parse a category name tolerantly ("Rule of Thirds", "vanishing_point",
    "VanishingPoint" all map to the same member)."""
    text = raw.strip()
    # Split CamelCase before normalizing separators.
    decamel = []
    for i, ch in enumerate(text):
        if ch.isupper() and i > 0 and (text[i - 1].islower() or text[i - 1].isdigit()):
            decamel.append("_")
        decamel.append(ch)
    key = "".join(decamel).lower().replace(" ", "_").replace("-", "_")
    while "__" in key:
        key = key.replace("__", "_")
    try:
        return ElementCategory(key)
    except ValueError:
        raise ValueError(f"unknown composition element category: {raw!r}") from None


@dataclass(frozen=True)
class CompositionElement:
    """One detected compositional structure: a category plus one or more boxes."""

    category: ElementCategory
    boxes: tuple[PixelBox, ...]

    def __post_init__(self) -> None:
        if not self.boxes:
            raise ValueError("composition element needs at least one box")

    def validate_within(self, dims: ImageDims) -> None:
        for box in self.boxes:
            if not box.within(dims):
                raise ValueError(
                    f"{self.category.value} box {box.as_list()} outside {dims.width}x{dims.height} frame"
                )


def element_to_dict(element: CompositionElement) -> dict:
    return {
        "category": element.category.value,
        "boxes": [box.as_list() for box in element.boxes],
    }


def element_from_dict(record: dict) -> CompositionElement:
    """Build an element from a mapping with ``category`` and ``box``/``boxes``."""
    category = parse_category(str(record["category"]))
    if "boxes" in record:
        raw_boxes = record["boxes"]
    elif "box" in record:
        raw_boxes = [record["box"]]
    else:
        raise ValueError(f"element record has neither 'box' nor 'boxes': {record!r}")
    if not isinstance(raw_boxes, list) or not raw_boxes:
        raise ValueError(f"element {category.value} has no boxes")
    boxes = tuple(PixelBox.from_list(b) for b in raw_boxes)
    return CompositionElement(category=category, boxes=boxes)


def elements_to_json(elements: list[CompositionElement]) -> str:
    """Canonical JSON used both as analysis target text and in corpora."""
    return json.dumps(
        {"elements": [element_to_dict(e) for e in elements]},
        separators=(", ", ": "),
    )


def elements_from_obj(value: object) -> list[CompositionElement]:
    """Accept ``{"elements": [...]}`` or a bare list of element records."""
    if isinstance(value, dict):
        records = value.get("elements")
        if records is None:
            raise ValueError("analysis JSON object lacks an 'elements' key")
    elif isinstance(value, list):
        records = value
    else:
        raise ValueError(f"cannot read elements from {type(value).__name__}")
    if not isinstance(records, list):
        raise ValueError("'elements' must be a list")
    return [element_from_dict(r) for r in records]
