"""Pixel-space rectangle algebra and the crop-quality metrics used everywhere else.

Coordinates are real-valued pixels with the origin at the top-left corner;
integer rounding happens only at raster boundaries (see :mod:`cropkit.render`).
"""

from dataclasses import dataclass

#: Two crops are treated as the same view when their IoU strictly exceeds this.
DEFAULT_EQUIVALENCE_EPSILON = 0.85


class DegenerateBoxError(ValueError):
    """A crop rectangle collapsed to zero extent on at least one axis."""


@dataclass(frozen=True, order=True)
class ImageDims:
    """Integer pixel dimensions of an image frame."""

    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image dims must be >= 1, got {self.width}x{self.height}")


@dataclass(frozen=True, order=True)
class PixelBox:
    """Axis-aligned rectangle [x1, y1, x2, y2] with x1 < x2 and y1 < y2.

    Ordering is lexicographic on (x1, y1, x2, y2), which is the tie-break
    order used by dataset builders and the evaluation harness.
    """

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        for name in ("x1", "y1", "x2", "y2"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise DegenerateBoxError(f"box has no positive extent: {self.as_list()}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0

    @property
    def aspect(self) -> float:
        return self.width / self.height

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    def within(self, dims: ImageDims, tol: float = 1e-9) -> bool:
        return (
            self.x1 >= -tol
            and self.y1 >= -tol
            and self.x2 <= dims.width + tol
            and self.y2 <= dims.height + tol
        )

    def contains(self, other: "PixelBox", tol: float = 1e-9) -> bool:
        return (
            self.x1 <= other.x1 + tol
            and self.y1 <= other.y1 + tol
            and self.x2 >= other.x2 - tol
            and self.y2 >= other.y2 - tol
        )

    @classmethod
    def from_list(cls, coords: list[float] | tuple[float, ...]) -> "PixelBox":
        if len(coords) != 4:
            raise ValueError(f"expected 4 coordinates, got {len(coords)}")
        return cls(float(coords[0]), float(coords[1]), float(coords[2]), float(coords[3]))


def union_bounds(boxes: list[PixelBox] | tuple[PixelBox, ...]) -> PixelBox:
    """Smallest box covering every box in a nonempty list."""
    if not boxes:
        raise ValueError("union of an empty box list")
    return PixelBox(
        min(b.x1 for b in boxes),
        min(b.y1 for b in boxes),
        max(b.x2 for b in boxes),
        max(b.y2 for b in boxes),
    )


def iou(a: PixelBox, b: PixelBox) -> float:
    """Intersection area over union area; symmetric, in [0, 1]."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def bde(pred: PixelBox, gt: PixelBox, dims: ImageDims) -> float:
    """Boundary displacement error: mean of the four edge offsets,
    x-offsets normalized by image width and y-offsets by image height."""
    w = float(dims.width)
    h = float(dims.height)
    return (
        abs(pred.x1 - gt.x1) / w
        + abs(pred.x2 - gt.x2) / w
        + abs(pred.y1 - gt.y1) / h
        + abs(pred.y2 - gt.y2) / h
    ) / 4.0


def equivalent(a: PixelBox, b: PixelBox, epsilon: float = DEFAULT_EQUIVALENCE_EPSILON) -> bool:
    """True iff iou(a, b) strictly exceeds ``epsilon``."""
    if not (0.0 < epsilon <= 1.0):
        raise ValueError(f"epsilon must be in (0, 1], got {epsilon}")
    return iou(a, b) > epsilon


def clamp(box: PixelBox, dims: ImageDims) -> PixelBox:
    """Clip ``box`` to the image frame.

    Raises :class:`DegenerateBoxError` when clipping collapses either axis.
    """
    x1 = min(max(box.x1, 0.0), float(dims.width))
    y1 = min(max(box.y1, 0.0), float(dims.height))
    x2 = min(max(box.x2, 0.0), float(dims.width))
    y2 = min(max(box.y2, 0.0), float(dims.height))
    if x1 >= x2 or y1 >= y2:
        raise DegenerateBoxError(f"box {box.as_list()} collapses when clipped to {dims}")
    return PixelBox(x1, y1, x2, y2)
