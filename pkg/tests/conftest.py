import random

import pytest
from PIL import Image

from cropkit.elements import CompositionElement, ElementCategory
from cropkit.geometry import ImageDims, PixelBox


@pytest.fixture
def checker_image() -> Image.Image:
    """Deterministic 300x300 RGB test image with spatial structure."""
    img = Image.new("RGB", (300, 300))
    px = img.load()
    for y in range(300):
        for x in range(300):
            px[x, y] = ((x * 7) % 256, (y * 5) % 256, ((x + y) * 3) % 256)
    return img


def random_box(rng: random.Random, dims: ImageDims, min_size: float = 5.0) -> PixelBox:
    w = rng.uniform(min_size, dims.width * 0.8)
    h = rng.uniform(min_size, dims.height * 0.8)
    x1 = rng.uniform(0, dims.width - w)
    y1 = rng.uniform(0, dims.height - h)
    return PixelBox(x1, y1, x1 + w, y1 + h)


def make_element(category: ElementCategory, *boxes: PixelBox) -> CompositionElement:
    return CompositionElement(category=category, boxes=tuple(boxes))
