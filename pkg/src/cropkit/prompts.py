"""Prompt registry: the four stage prompts plus fixed correction strings.

Prompts live in a plain JSON file so runs can override them wholesale;
corrections are fixed strings so retry transcripts stay reproducible.
"""

import importlib.resources
import json
from dataclasses import dataclass, fields
from pathlib import Path


@dataclass(frozen=True)
class PromptRegistry:
    baseline: str
    analysis: str
    proposal: str
    decision: str
    analysis_correction: str
    proposal_correction: str
    decision_correction: str

    def __post_init__(self) -> None:
        for f in fields(self):
            if not getattr(self, f.name).strip():
                raise ValueError(f"prompt {f.name!r} is empty")

    @classmethod
    def from_dict(cls, payload: dict) -> "PromptRegistry":
        defaults = _default_payload()
        merged = {**defaults, **{k: v for k, v in payload.items() if k in defaults}}
        return cls(**merged)

    @classmethod
    def from_file(cls, path: str | Path) -> "PromptRegistry":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _default_payload() -> dict:
    resource = importlib.resources.files("cropkit.data").joinpath("prompts.json")
    return json.loads(resource.read_text(encoding="utf-8"))


def default_prompts() -> PromptRegistry:
    return PromptRegistry(**_default_payload())
