"""Deterministic rasterization of compositional annotations and labeled
candidate thumbnails.

Hard strokes, no anti-aliasing, fixed per-category colors, and an embedded
bitmap font: identical inputs produce byte-identical pixels.
"""

import io
import math
from dataclasses import dataclass, field

from PIL import Image, ImageDraw

from .elements import CompositionElement, ElementCategory
from .geometry import DegenerateBoxError, ImageDims, PixelBox
from .rules import CandidateSet


class OutOfFrameElementError(ValueError):
    """An element box extends beyond the image frame."""


DEFAULT_COLORS: dict[ElementCategory, tuple[int, int, int, int]] = {
    ElementCategory.RULE_OF_THIRDS: (230, 57, 70, 255),
    ElementCategory.CENTER: (29, 53, 87, 255),
    ElementCategory.GOLDEN_RATIO: (244, 162, 97, 255),
    ElementCategory.HORIZONTAL: (42, 157, 143, 255),
    ElementCategory.SYMMETRIC: (138, 43, 226, 255),
    ElementCategory.DIAGONAL: (231, 111, 81, 255),
    ElementCategory.CURVED: (0, 121, 140, 255),
    ElementCategory.VERTICAL: (38, 70, 83, 255),
    ElementCategory.TRIANGLE: (233, 196, 106, 255),
    ElementCategory.VANISHING_POINT: (214, 40, 57, 255),
}

WITHIN_BOX = "within-box"
FULL_FRAME = "full-frame"


@dataclass(frozen=True)
class OverlayStyle:
    stroke_width: int = 3
    colors: dict[ElementCategory, tuple[int, int, int, int]] = field(
        default_factory=lambda: dict(DEFAULT_COLORS)
    )
    guideline_extension: str = FULL_FRAME

    def __post_init__(self) -> None:
        if self.stroke_width < 1:
            raise ValueError("stroke width must be >= 1")
        if self.guideline_extension not in (FULL_FRAME, WITHIN_BOX):
            raise ValueError(f"unknown guideline extension {self.guideline_extension!r}")
        missing = set(ElementCategory) - set(self.colors)
        if missing:
            raise ValueError(f"color map misses categories: {sorted(c.value for c in missing)}")


def image_dims(image: Image.Image) -> ImageDims:
    return ImageDims(image.width, image.height)


def png_bytes(image: Image.Image) -> bytes:
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


def image_from_png(data: bytes) -> Image.Image:
    img = Image.open(io.BytesIO(data))
    img.load()
    return img


def _color_for(image: Image.Image, rgba: tuple[int, int, int, int]):
    if image.mode == "RGBA":
        return rgba
    return rgba[:3]


def _ip(value: float) -> int:
    return int(round(value))


def _draw_polyline(draw: ImageDraw.ImageDraw, points: list[tuple[float, float]], color, width: int) -> None:
    coords = [(_ip(x), _ip(y)) for x, y in points]
    draw.line(coords, fill=color, width=width, joint=None)


def _curve_points(box: PixelBox) -> list[tuple[float, float]]:
    # Parabolic arc from bottom-left through top-center to bottom-right.
    pts = []
    for i in range(17):
        t = i / 16.0
        x = box.x1 + t * box.width
        y = box.y2 - 4.0 * box.height * t * (1.0 - t)
        pts.append((x, y))
    return pts


def render_enhancement(
    image: Image.Image, elements: list[CompositionElement], style: OverlayStyle | None = None
) -> Image.Image:
    """Overlay boxes for placement elements and guidelines for layout
    elements on a copy of ``image``. Pixels away from the strokes are
    untouched; an empty element list returns a bit-identical copy."""
    style = style or OverlayStyle()
    dims = image_dims(image)
    for element in elements:
        try:
            element.validate_within(dims)
        except ValueError as exc:
            raise OutOfFrameElementError(str(exc)) from None

    out = image.copy()
    if not elements:
        return out
    draw = ImageDraw.Draw(out)
    sw = style.stroke_width
    w, h = image.width, image.height

    for element in elements:
        color = _color_for(out, style.colors[element.category])
        for box in element.boxes:
            cx, cy = box.center
            cat = element.category
            if cat in (
                ElementCategory.RULE_OF_THIRDS,
                ElementCategory.CENTER,
                ElementCategory.GOLDEN_RATIO,
            ):
                draw.rectangle(
                    (_ip(box.x1), _ip(box.y1), _ip(box.x2) - 1, _ip(box.y2) - 1),
                    outline=color,
                    width=sw,
                )
            elif cat is ElementCategory.HORIZONTAL:
                x1, x2 = (0, w - 1) if style.guideline_extension == FULL_FRAME else (box.x1, box.x2)
                _draw_polyline(draw, [(x1, cy), (x2, cy)], color, sw)
            elif cat is ElementCategory.VERTICAL:
                y1, y2 = (0, h - 1) if style.guideline_extension == FULL_FRAME else (box.y1, box.y2)
                _draw_polyline(draw, [(cx, y1), (cx, y2)], color, sw)
            elif cat is ElementCategory.SYMMETRIC:
                y1, y2 = (0, h - 1) if style.guideline_extension == FULL_FRAME else (box.y1, box.y2)
                _draw_polyline(draw, [(cx, y1), (cx, y2)], color, sw)
            elif cat is ElementCategory.DIAGONAL:
                _draw_polyline(draw, [(box.x1, box.y1), (box.x2, box.y2)], color, sw)
            elif cat is ElementCategory.CURVED:
                draw.rectangle(
                    (_ip(box.x1), _ip(box.y1), _ip(box.x2) - 1, _ip(box.y2) - 1),
                    outline=color,
                    width=sw,
                )
                _draw_polyline(draw, _curve_points(box), color, sw)
            elif cat is ElementCategory.TRIANGLE:
                draw.rectangle(
                    (_ip(box.x1), _ip(box.y1), _ip(box.x2) - 1, _ip(box.y2) - 1),
                    outline=color,
                    width=sw,
                )
                _draw_polyline(
                    draw,
                    [(cx, box.y1), (box.x1, box.y2), (box.x2, box.y2), (cx, box.y1)],
                    color,
                    sw,
                )
            elif cat is ElementCategory.VANISHING_POINT:
                arm = min(box.width, box.height) / 2.0
                _draw_polyline(draw, [(cx - arm, cy), (cx + arm, cy)], color, sw)
                _draw_polyline(draw, [(cx, cy - arm), (cx, cy + arm)], color, sw)
    return out


# ---------------------------------------------------------------------------
# Decision-sheet thumbnails

FONT_5X7 = {
    "A": ("01110", "10001", "10001", "11111", "10001", "10001", "10001"),
    "B": ("11110", "10001", "10001", "11110", "10001", "10001", "11110"),
    "C": ("01110", "10001", "10000", "10000", "10000", "10001", "01110"),
    "D": ("11100", "10010", "10001", "10001", "10001", "10010", "11100"),
    "E": ("11111", "10000", "10000", "11110", "10000", "10000", "11111"),
    "F": ("11111", "10000", "10000", "11110", "10000", "10000", "10000"),
    "G": ("01110", "10001", "10000", "10111", "10001", "10001", "01111"),
    "H": ("10001", "10001", "10001", "11111", "10001", "10001", "10001"),
    "I": ("01110", "00100", "00100", "00100", "00100", "00100", "01110"),
    "J": ("00111", "00010", "00010", "00010", "00010", "10010", "01100"),
    "K": ("10001", "10010", "10100", "11000", "10100", "10010", "10001"),
    "L": ("10000", "10000", "10000", "10000", "10000", "10000", "11111"),
    "M": ("10001", "11011", "10101", "10101", "10001", "10001", "10001"),
    "N": ("10001", "11001", "10101", "10011", "10001", "10001", "10001"),
    "O": ("01110", "10001", "10001", "10001", "10001", "10001", "01110"),
    "P": ("11110", "10001", "10001", "11110", "10000", "10000", "10000"),
    "Q": ("01110", "10001", "10001", "10001", "10101", "10010", "01101"),
    "R": ("11110", "10001", "10001", "11110", "10100", "10010", "10001"),
    "S": ("01111", "10000", "10000", "01110", "00001", "00001", "11110"),
    "T": ("11111", "00100", "00100", "00100", "00100", "00100", "00100"),
    "U": ("10001", "10001", "10001", "10001", "10001", "10001", "01110"),
    "V": ("10001", "10001", "10001", "10001", "10001", "01010", "00100"),
    "W": ("10001", "10001", "10001", "10101", "10101", "11011", "10001"),
    "X": ("10001", "01010", "00100", "00100", "00100", "01010", "10001"),
    "Y": ("10001", "01010", "00100", "00100", "00100", "00100", "00100"),
    "Z": ("11111", "00001", "00010", "00100", "01000", "10000", "11111"),
}

STAMP_BG = (255, 255, 255, 255)
STAMP_FG = (0, 0, 0, 255)
STAMP_MARGIN = 2
STAMP_PAD = 2


def stamp_region(thumb_width: int, thumb_height: int, label: str) -> tuple[int, int, int, int]:
    """Pixel rectangle (x1, y1, x2, y2) the ID stamp occupies on a thumbnail."""
    scale = 2 if min(thumb_width, thumb_height) >= 48 else 1
    gw = len(label) * 6 * scale - scale  # 5px glyph + 1px gap, no trailing gap
    gh = 7 * scale
    return (
        STAMP_MARGIN,
        STAMP_MARGIN,
        min(STAMP_MARGIN + gw + 2 * STAMP_PAD, thumb_width),
        min(STAMP_MARGIN + gh + 2 * STAMP_PAD, thumb_height),
    )


def _stamp_label(image: Image.Image, label: str) -> None:
    x1, y1, x2, y2 = stamp_region(image.width, image.height, label)
    scale = 2 if min(image.width, image.height) >= 48 else 1
    draw = ImageDraw.Draw(image)
    draw.rectangle((x1, y1, x2 - 1, y2 - 1), fill=_color_for(image, STAMP_BG))
    px = x1 + STAMP_PAD
    py = y1 + STAMP_PAD
    fg = _color_for(image, STAMP_FG)
    for ch in label:
        glyph = FONT_5X7.get(ch)
        if glyph is None:
            continue
        for row, bits in enumerate(glyph):
            for col, bit in enumerate(bits):
                if bit == "1":
                    bx = px + col * scale
                    by = py + row * scale
                    draw.rectangle((bx, by, bx + scale - 1, by + scale - 1), fill=fg)
        px += 6 * scale


def outer_int_box(box: PixelBox, dims: ImageDims) -> tuple[int, int, int, int]:
    """Round a crop box outward to whole pixels, clipped to the frame."""
    x1 = max(0, math.floor(box.x1))
    y1 = max(0, math.floor(box.y1))
    x2 = min(dims.width, math.ceil(box.x2))
    y2 = min(dims.height, math.ceil(box.y2))
    if x1 >= x2 or y1 >= y2:
        raise DegenerateBoxError(f"box {box.as_list()} rounds to an empty pixel region")
    return x1, y1, x2, y2


def render_decision_sheet(
    image: Image.Image, candidates: CandidateSet, style: OverlayStyle | None = None
) -> list[tuple[str, Image.Image]]:
    """One ID-stamped thumbnail per candidate, in candidate order."""
    dims = image_dims(image)
    sheet = []
    for cand in candidates.candidates:
        region = outer_int_box(cand.box, dims)
        thumb = image.crop(region)
        _stamp_label(thumb, cand.id)
        sheet.append((cand.id, thumb))
    return sheet
