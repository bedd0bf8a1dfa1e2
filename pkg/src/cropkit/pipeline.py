"""The three-stage analysis, proposal, decision loop over a chat backend.

Each stage sends a prompt (plus images), parses the response strictly, and
retries with a fixed correction instruction on validation failure. The final
crop is always a member of the ID-assigned candidate set: an unusable decision
response falls back to candidate 'A' with a recorded warning.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from PIL import Image

from .backends import ChatBackend, ChatMessage, ImagePart, TextPart
from .elements import CompositionElement, element_to_dict, elements_from_obj, elements_to_json
from .geometry import DegenerateBoxError, ImageDims, PixelBox, clamp
from .parsing import extract_first_json, parse_box_list, parse_letter_choice, parse_single_box
from .prompts import PromptRegistry, default_prompts
from .render import OverlayStyle, image_dims, png_bytes, render_decision_sheet, render_enhancement
from .rules import (
    CandidateSet,
    CropCandidate,
    ProposalConfig,
    assemble_candidate_set,
    rule_candidates,
)

VLM_TAG = "vlm"

MODE_HYBRID = "hybrid"
MODE_VLM_ONLY = "vlm-only"
MODE_BASELINE = "baseline"

STAGE_ANALYSIS = "analysis"
STAGE_PROPOSAL = "proposal"
STAGE_DECISION = "decision"
STAGE_BASELINE = "baseline"


class StageError(Exception):
    """A pipeline stage failed after exhausting its retry budget."""

    def __init__(self, message: str, transcripts: list["StageTranscript"]):
        super().__init__(message)
        self.transcripts = transcripts


class AnalysisParseError(StageError):
    pass


class ProposalParseError(StageError):
    pass


class EmptyProposalError(StageError):
    pass


class BaselineParseError(StageError):
    pass


@dataclass(frozen=True)
class StageTranscript:
    stage: str
    attempt: int
    request: tuple[ChatMessage, ...]
    response_text: str
    parsed: object = None
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "attempt": self.attempt,
            "request": [_message_to_dict(m) for m in self.request],
            "response_text": self.response_text,
            "parsed": self.parsed,
            "error": self.error,
        }


def _message_to_dict(message: ChatMessage) -> dict:
    parts = []
    for part in message.parts:
        if isinstance(part, TextPart):
            parts.append({"type": "text", "text": part.text})
        else:
            parts.append({"type": "image", "png_sha256": hashlib.sha256(part.png).hexdigest()})
    return {"role": message.role, "parts": parts}


@dataclass(frozen=True)
class PipelineSettings:
    mode: str = MODE_HYBRID
    send_original_with_enhanced: bool = False
    decision_thumbnails: bool = True
    style: OverlayStyle = field(default_factory=OverlayStyle)

    def __post_init__(self) -> None:
        if self.mode not in (MODE_HYBRID, MODE_VLM_ONLY, MODE_BASELINE):
            raise ValueError(f"unknown pipeline mode {self.mode!r}")


@dataclass
class PipelineResult:
    elements: list[CompositionElement]
    enhanced_png: Optional[bytes]
    candidates: CandidateSet
    final_id: str
    final_box: PixelBox
    transcripts: list[StageTranscript]
    warnings: list[str]

    def __post_init__(self) -> None:
        member = self.candidates.by_id(self.final_id)
        if member.box != self.final_box:
            raise ValueError("final crop does not match its candidate")

    def to_dict(self) -> dict:
        return {
            "elements": [element_to_dict(e) for e in self.elements],
            "candidates": json.loads(self.candidates.to_json())["candidates"],
            "final": {"id": self.final_id, "box": self.final_box.as_list()},
            "warnings": list(self.warnings),
            "transcripts": [t.to_dict() for t in self.transcripts],
        }


def _retries(backend: ChatBackend, retries: Optional[int]) -> int:
    if retries is not None:
        return retries
    return getattr(backend, "max_retries", 2)


def run_analysis(
    image: Image.Image,
    backend: ChatBackend,
    prompts: PromptRegistry,
    retries: Optional[int] = None,
) -> tuple[list[CompositionElement], list[StageTranscript]]:
    """Stage 1: detect compositional elements, validated against the frame
    and the ten-category enumeration."""
    dims = image_dims(image)
    budget = _retries(backend, retries)
    messages = [
        ChatMessage(role="user", parts=(TextPart(prompts.analysis), ImagePart(png_bytes(image))))
    ]
    transcripts: list[StageTranscript] = []
    for attempt in range(1, budget + 2):
        raw = backend.complete(messages, STAGE_ANALYSIS)
        try:
            value = extract_first_json(raw)
            elements = elements_from_obj(value)
            for element in elements:
                element.validate_within(dims)
        except ValueError as exc:
            transcripts.append(
                StageTranscript(STAGE_ANALYSIS, attempt, tuple(messages), raw, error=str(exc))
            )
            messages = messages + [
                ChatMessage.text("assistant", raw),
                ChatMessage.text("user", prompts.analysis_correction),
            ]
            continue
        transcripts.append(
            StageTranscript(
                STAGE_ANALYSIS,
                attempt,
                tuple(messages),
                raw,
                parsed=[element_to_dict(e) for e in elements],
            )
        )
        return elements, transcripts
    raise AnalysisParseError(
        f"analysis failed after {budget + 1} attempts: {transcripts[-1].error}", transcripts
    )


def run_proposal(
    enhanced_image: Image.Image,
    elements_text: str,
    backend: ChatBackend,
    prompts: PromptRegistry,
    retries: Optional[int] = None,
    original_image: Optional[Image.Image] = None,
) -> tuple[list[PixelBox], list[StageTranscript]]:
    """Stage 2: candidate boxes from the enhanced image plus the serialized
    analysis, clamped to the frame; degenerate boxes are dropped."""
    dims = image_dims(enhanced_image)
    budget = _retries(backend, retries)
    parts: list = [ImagePart(png_bytes(enhanced_image))]
    if original_image is not None:
        parts.append(ImagePart(png_bytes(original_image)))
    parts.extend([TextPart(elements_text), TextPart(prompts.proposal)])
    messages = [ChatMessage(role="user", parts=tuple(parts))]
    transcripts: list[StageTranscript] = []
    parse_ok = False
    for attempt in range(1, budget + 2):
        raw = backend.complete(messages, STAGE_PROPOSAL)
        error: Optional[str] = None
        boxes: list[PixelBox] = []
        try:
            raw_boxes = parse_box_list(raw)
            parse_ok = True
            for coords in raw_boxes:
                try:
                    boxes.append(clamp(PixelBox.from_list(coords), dims))
                except DegenerateBoxError:
                    continue
            if not boxes:
                error = "no usable boxes in proposal response"
        except ValueError as exc:
            error = str(exc)
        if error is None:
            transcripts.append(
                StageTranscript(
                    STAGE_PROPOSAL,
                    attempt,
                    tuple(messages),
                    raw,
                    parsed=[b.as_list() for b in boxes],
                )
            )
            return boxes, transcripts
        transcripts.append(StageTranscript(STAGE_PROPOSAL, attempt, tuple(messages), raw, error=error))
        messages = messages + [
            ChatMessage.text("assistant", raw),
            ChatMessage.text("user", prompts.proposal_correction),
        ]
    message = f"proposal failed after {budget + 1} attempts: {transcripts[-1].error}"
    if parse_ok:
        raise EmptyProposalError(message, transcripts)
    raise ProposalParseError(message, transcripts)


def run_decision(
    candidates: CandidateSet,
    thumbnails: Optional[list[tuple[str, Image.Image]]],
    backend: ChatBackend,
    prompts: PromptRegistry,
    retries: Optional[int] = None,
) -> tuple[CropCandidate, list[StageTranscript], list[str]]:
    """Stage 3: pick a candidate by letter ID. Falls back to candidate 'A'
    after the retry budget, recording a warning instead of failing."""
    budget = _retries(backend, retries)
    ids = candidates.ids()
    parts: list = [TextPart(prompts.decision)]
    if thumbnails is not None:
        for candidate_id, thumb in thumbnails:
            parts.append(TextPart(f"Candidate {candidate_id}:"))
            parts.append(ImagePart(png_bytes(thumb)))
    else:
        listing = "\n".join(f"{c.id}: {c.box.as_list()}" for c in candidates.candidates)
        parts.append(TextPart(listing))
    messages = [ChatMessage(role="user", parts=tuple(parts))]
    transcripts: list[StageTranscript] = []
    for attempt in range(1, budget + 2):
        raw = backend.complete(messages, STAGE_DECISION)
        choice = parse_letter_choice(raw, ids)
        if choice is not None:
            transcripts.append(
                StageTranscript(STAGE_DECISION, attempt, tuple(messages), raw, parsed=choice)
            )
            return candidates.by_id(choice), transcripts, []
        transcripts.append(
            StageTranscript(
                STAGE_DECISION, attempt, tuple(messages), raw, error="no valid candidate ID in response"
            )
        )
        messages = messages + [
            ChatMessage.text("assistant", raw),
            ChatMessage.text("user", prompts.decision_correction),
        ]
    warning = f"decision stage returned no valid ID after {budget + 1} attempts; falling back to 'A'"
    return candidates.candidates[0], transcripts, [warning]


def run_baseline(
    image: Image.Image,
    backend: ChatBackend,
    prompts: PromptRegistry,
    retries: Optional[int] = None,
) -> tuple[PixelBox, list[StageTranscript]]:
    """Single-shot crop prediction without the reasoning stages."""
    dims = image_dims(image)
    budget = _retries(backend, retries)
    messages = [
        ChatMessage(role="user", parts=(TextPart(prompts.baseline), ImagePart(png_bytes(image))))
    ]
    transcripts: list[StageTranscript] = []
    for attempt in range(1, budget + 2):
        raw = backend.complete(messages, STAGE_BASELINE)
        try:
            box = clamp(PixelBox.from_list(parse_single_box(raw)), dims)
        except (ValueError, DegenerateBoxError) as exc:
            transcripts.append(
                StageTranscript(STAGE_BASELINE, attempt, tuple(messages), raw, error=str(exc))
            )
            messages = messages + [
                ChatMessage.text("assistant", raw),
                ChatMessage.text("user", prompts.proposal_correction),
            ]
            continue
        transcripts.append(
            StageTranscript(STAGE_BASELINE, attempt, tuple(messages), raw, parsed=box.as_list())
        )
        return box, transcripts
    raise BaselineParseError(
        f"baseline failed after {budget + 1} attempts: {transcripts[-1].error}", transcripts
    )


def run_pipeline(
    image: Image.Image,
    backend: ChatBackend,
    proposal_cfg: Optional[ProposalConfig] = None,
    prompts: Optional[PromptRegistry] = None,
    settings: Optional[PipelineSettings] = None,
) -> PipelineResult:
    """Analysis, enhancement, proposal, candidate assembly, decision."""
    proposal_cfg = proposal_cfg or ProposalConfig()
    prompts = prompts or default_prompts()
    settings = settings or PipelineSettings()
    dims = image_dims(image)
    transcripts: list[StageTranscript] = []
    warnings: list[str] = []

    if settings.mode == MODE_BASELINE:
        box, ts = run_baseline(image, backend, prompts)
        transcripts.extend(ts)
        candidate = CropCandidate(box=box, provenance=VLM_TAG, id="A")
        return PipelineResult(
            elements=[],
            enhanced_png=None,
            candidates=CandidateSet((candidate,)),
            final_id="A",
            final_box=box,
            transcripts=transcripts,
            warnings=warnings,
        )

    elements, ts = run_analysis(image, backend, prompts)
    transcripts.extend(ts)

    enhanced = render_enhancement(image, elements, settings.style)
    elements_text = elements_to_json(elements)

    vlm_boxes: list[PixelBox] = []
    try:
        vlm_boxes, ts = run_proposal(
            enhanced,
            elements_text,
            backend,
            prompts,
            original_image=image if settings.send_original_with_enhanced else None,
        )
        transcripts.extend(ts)
    except EmptyProposalError as exc:
        transcripts.extend(exc.transcripts)
        warnings.append("proposal stage yielded no usable boxes; continuing with rule candidates")

    pool = [CropCandidate(box=b, provenance=VLM_TAG) for b in vlm_boxes]
    if settings.mode == MODE_HYBRID:
        pool.extend(rule_candidates(elements, dims, proposal_cfg))
    candidates = assemble_candidate_set(pool, dims, proposal_cfg)

    thumbnails = None
    if settings.decision_thumbnails:
        thumbnails = render_decision_sheet(image, candidates, settings.style)
    final, ts, decision_warnings = run_decision(candidates, thumbnails, backend, prompts)
    transcripts.extend(ts)
    warnings.extend(decision_warnings)

    return PipelineResult(
        elements=elements,
        enhanced_png=png_bytes(enhanced),
        candidates=candidates,
        final_id=final.id,
        final_box=final.box,
        transcripts=transcripts,
        warnings=warnings,
    )


def write_bundle(
    result: PipelineResult, out_dir: str | Path, image: Optional[Image.Image] = None
) -> list[Path]:
    """Persist result.json, the enhanced PNG, and (when the source image is
    supplied) the ID-stamped decision thumbnails.

    Returns the written paths; content is byte-deterministic for a given
    result.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    result_path = out / "result.json"
    with open(result_path, "w", encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, indent=2, sort_keys=False)
        fh.write("\n")
    written.append(result_path)

    if result.enhanced_png is not None:
        enhanced_path = out / "enhanced.png"
        enhanced_path.write_bytes(result.enhanced_png)
        written.append(enhanced_path)

    if image is not None:
        thumbs_dir = out / "thumbs"
        thumbs_dir.mkdir(exist_ok=True)
        for candidate_id, thumb in render_decision_sheet(image, result.candidates):
            thumb_path = thumbs_dir / f"{candidate_id}.png"
            thumb_path.write_bytes(png_bytes(thumb))
            written.append(thumb_path)
    return written
