"""Tolerant extraction of structured values from model responses.

Models wrap their answers in prose and code fences, so extraction scans for
the first balanced JSON value / bracketed list instead of parsing the whole
document.
"""

import json
import re


def extract_first_json(text: str):
    """Return the first balanced JSON value (object or array) in ``text``.

    Raises ValueError when no position yields a parseable value.
    """
    decoder = json.JSONDecoder()
    for match in re.finditer(r"[\[{]", text):
        try:
            value, _ = decoder.raw_decode(text, match.start())
        except json.JSONDecodeError:
            continue
        return value
    raise ValueError("no JSON value found in response")


def parse_box_list(text: str) -> list[list[float]]:
    """Parse a response carrying ``[[x1, y1, x2, y2], ...]``.

    A flat four-number list is accepted as a single box. Inner lists of any
    other arity are an error.
    """
    value = extract_first_json(text)
    if not isinstance(value, list):
        raise ValueError(f"expected a list of boxes, got {type(value).__name__}")
    if value and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        if len(value) != 4:
            raise ValueError(f"box needs 4 numbers, got {len(value)}")
        return [[float(v) for v in value]]
    boxes: list[list[float]] = []
    for entry in value:
        if not isinstance(entry, list):
            raise ValueError(f"box entry is not a list: {entry!r}")
        if len(entry) != 4:
            raise ValueError(f"box needs 4 numbers, got {len(entry)}: {entry!r}")
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in entry):
            raise ValueError(f"box has non-numeric coordinates: {entry!r}")
        boxes.append([float(v) for v in entry])
    return boxes


def parse_single_box(text: str) -> list[float]:
    """Parse a response carrying a single ``[x1, y1, x2, y2]``."""
    boxes = parse_box_list(text)
    if len(boxes) != 1:
        raise ValueError(f"expected exactly one box, got {len(boxes)}")
    return boxes[0]


_ID_TOKEN = re.compile(r"\b[A-Za-z]{1,2}\b")


def parse_letter_choice(text: str, valid_ids: list[str]) -> str | None:
    """First standalone letter token matching an assigned candidate ID."""
    ids = {i.upper() for i in valid_ids}
    for match in _ID_TOKEN.finditer(text):
        token = match.group(0).upper()
        if token in ids:
            return token
    return None
