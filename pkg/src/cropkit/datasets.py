"""Deterministic JSONL builders for the three training corpora: reasoning
dialogues (analysis + proposal), decision SFT samples, and DPO preference
pairs.

Corpus schemas (stable field order for diff-ability):
  dialogue   {"image", "messages": [{"role", "content"}], "target"}
  preference {"image", "prompt", "candidates": [{"id", "box"}], "chosen",
              "rejected", "mos_chosen", "mos_rejected", "provenance"}
"""

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .elements import CompositionElement, element_from_dict, elements_to_json
from .geometry import ImageDims, PixelBox
from .prompts import PromptRegistry, default_prompts
from .rules import ProposalConfig, generate_candidates, letter_id


class EmptyElementsError(ValueError):
    pass


class InsufficientCropsError(ValueError):
    pass


class NoPreferenceSignalError(ValueError):
    pass


class SchemaError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(frozen=True)
class ScoredCrop:
    box: PixelBox
    mos: float

    def __post_init__(self) -> None:
        if not (1.0 <= self.mos <= 5.0):
            raise ValueError(f"MOS must be in [1, 5], got {self.mos}")


@dataclass(frozen=True)
class MosStrata:
    good_threshold: float = 3.5
    poor_threshold: float = 2.5

    def __post_init__(self) -> None:
        if not self.poor_threshold < self.good_threshold:
            raise ValueError("poor threshold must be below good threshold")

    def stratum(self, mos: float) -> str:
        if mos > self.good_threshold:
            return "good"
        if mos < self.poor_threshold:
            return "poor"
        return "average"


@dataclass(frozen=True)
class AnnotatedImage:
    image: str
    dims: ImageDims
    elements: tuple[CompositionElement, ...]

    def __post_init__(self) -> None:
        for element in self.elements:
            element.validate_within(self.dims)


@dataclass(frozen=True)
class DialogueSample:
    image: str
    messages: tuple[dict, ...]
    target: str

    def to_dict(self) -> dict:
        return {"image": self.image, "messages": list(self.messages), "target": self.target}


@dataclass(frozen=True)
class PreferencePair:
    image: str
    prompt: str
    candidates: tuple[dict, ...]
    chosen: str
    rejected: str
    mos_chosen: Optional[float] = None
    mos_rejected: Optional[float] = None
    provenance: str = "mos"

    def __post_init__(self) -> None:
        ids = {c["id"] for c in self.candidates}
        if self.chosen not in ids or self.rejected not in ids:
            raise ValueError("chosen/rejected must reference the shared candidate list")
        if self.mos_chosen is not None and self.mos_rejected is not None:
            if not self.mos_chosen > self.mos_rejected:
                raise ValueError("chosen MOS must strictly exceed rejected MOS")

    def to_dict(self) -> dict:
        record = {
            "image": self.image,
            "prompt": self.prompt,
            "candidates": list(self.candidates),
            "chosen": self.chosen,
            "rejected": self.rejected,
        }
        if self.mos_chosen is not None:
            record["mos_chosen"] = self.mos_chosen
        if self.mos_rejected is not None:
            record["mos_rejected"] = self.mos_rejected
        record["provenance"] = self.provenance
        return record


def format_coord(value: float) -> str:
    if float(value).is_integer():
        return str(int(value))
    return str(round(value, 2))


def serialize_box(box: PixelBox) -> str:
    return "[" + ", ".join(format_coord(v) for v in box.as_list()) + "]"


def serialize_box_list(boxes: Iterable[PixelBox]) -> str:
    return "[" + ", ".join(serialize_box(b) for b in boxes) + "]"


# ---------------------------------------------------------------------------
# Reasoning dialogues (analysis + proposal)


def build_crp_samples(
    annotated: AnnotatedImage,
    cfg: Optional[ProposalConfig] = None,
    prompts: Optional[PromptRegistry] = None,
) -> tuple[DialogueSample, DialogueSample]:
    """Analysis dialogue targeting the canonical element JSON, and a proposal
    dialogue (with the analysis as context) targeting the rule-engine
    candidate boxes."""
    if not annotated.elements:
        raise EmptyElementsError(f"{annotated.image} has no composition elements")
    cfg = cfg or ProposalConfig()
    prompts = prompts or default_prompts()

    analysis_target = elements_to_json(list(annotated.elements))
    analysis_sample = DialogueSample(
        image=annotated.image,
        messages=({"role": "user", "content": prompts.analysis},),
        target=analysis_target,
    )

    candidates = generate_candidates(list(annotated.elements), annotated.dims, cfg)
    proposal_sample = DialogueSample(
        image=annotated.image,
        messages=(
            {"role": "user", "content": prompts.analysis},
            {"role": "assistant", "content": analysis_target},
            {"role": "user", "content": prompts.proposal},
        ),
        target=serialize_box_list(c.box for c in candidates.candidates),
    )
    return analysis_sample, proposal_sample


# ---------------------------------------------------------------------------
# Decision SFT samples and DPO preference pairs


def best_crop(crops: list[ScoredCrop]) -> ScoredCrop:
    """Maximum-MOS crop; ties broken by lexicographic box order."""
    return max(crops, key=lambda c: (c.mos, [-v for v in c.box.as_list()]))


def proportional_allocation(available: list[int], total: int) -> list[int]:
    """Largest-remainder allocation of ``total`` over groups, capped at each
    group's availability."""
    pool = sum(available)
    if pool < total:
        raise ValueError(f"cannot allocate {total} from {pool} available")
    raw = [total * a / pool for a in available]
    counts = [min(math.floor(r), a) for r, a in zip(raw, available)]
    while sum(counts) < total:
        best_i = max(
            range(len(available)),
            key=lambda i: (raw[i] - counts[i] if counts[i] < available[i] else -math.inf, -i),
        )
        counts[best_i] += 1
    return counts


def _sample_candidates(
    crops: list[ScoredCrop], strata: MosStrata, count: int, rng: random.Random
) -> list[ScoredCrop]:
    """Stratified sample of ``count`` crops, proportional to availability,
    with the best crop always included."""
    best = best_crop(crops)
    groups: dict[str, list[ScoredCrop]] = {"good": [], "average": [], "poor": []}
    for crop in sorted(crops, key=lambda c: (-c.mos, c.box)):
        groups[strata.stratum(crop.mos)].append(crop)
    names = ["good", "average", "poor"]
    counts = proportional_allocation([len(groups[n]) for n in names], count)

    best_group = strata.stratum(best.mos)
    if counts[names.index(best_group)] == 0:
        # Shift one slot into the best crop's stratum from the largest other.
        donor = max(
            (i for i in range(3) if counts[i] > 0),
            key=lambda i: counts[i],
        )
        counts[donor] -= 1
        counts[names.index(best_group)] += 1

    sampled: list[ScoredCrop] = []
    for name, n in zip(names, counts):
        pool = list(groups[name])
        if name == best_group:
            pool.remove(best)
            picks = rng.sample(pool, n - 1) if n > 1 else []
            picks.append(best)
        else:
            picks = rng.sample(pool, n)
        sampled.extend(picks)

    # Guarantee a strictly-lower crop when one exists anywhere.
    lower_exists = any(c.mos < best.mos for c in crops)
    if lower_exists and all(c.mos >= best.mos for c in sampled):
        replacement = max(
            (c for c in crops if c.mos < best.mos), key=lambda c: (c.mos, [-v for v in c.box.as_list()])
        )
        victims = [c for c in sampled if c is not best]
        sampled[sampled.index(victims[-1])] = replacement

    rng.shuffle(sampled)
    return sampled


def build_sft_decision(
    image: str,
    crops: list[ScoredCrop],
    strata: Optional[MosStrata] = None,
    seed: int = 0,
    prompts: Optional[PromptRegistry] = None,
) -> DialogueSample:
    """Eight letter-indexed candidates sampled across the MOS strata; the
    target is the letter of the maximum-MOS candidate."""
    strata = strata or MosStrata()
    prompts = prompts or default_prompts()
    if len(crops) < 8:
        raise InsufficientCropsError(f"{image}: need at least 8 scored crops, got {len(crops)}")
    rng = random.Random(seed)
    sampled = _sample_candidates(crops, strata, 8, rng)

    best = best_crop(sampled)
    target = letter_id(sampled.index(best))
    listing = "\n".join(f"{letter_id(i)}: {serialize_box(c.box)}" for i, c in enumerate(sampled))
    return DialogueSample(
        image=image,
        messages=({"role": "user", "content": f"{prompts.decision}\n{listing}"},),
        target=target,
    )


def build_dpo_pairs(
    image: str,
    crops: list[ScoredCrop],
    strata: Optional[MosStrata] = None,
    k: int = 4,
    seed: int = 0,
    prompts: Optional[PromptRegistry] = None,
) -> list[PreferencePair]:
    """``k`` preference pairs sharing one candidate list: chosen is the
    maximum-MOS candidate, rejected are strictly-lower candidates with at
    least ceil(k/4) drawn from the band just below the maximum."""
    strata = strata or MosStrata()
    prompts = prompts or default_prompts()
    if k < 1:
        raise ValueError("k must be >= 1")
    if len({c.mos for c in crops}) < 2:
        raise NoPreferenceSignalError(f"{image}: all MOS values are equal")
    rng = random.Random(seed)
    sampled = _sample_candidates(crops, strata, min(8, len(crops)), rng)

    best = best_crop(sampled)
    best_index = sampled.index(best)
    lower = [(i, c) for i, c in enumerate(sampled) if c.mos < best.mos]
    suboptimal = [(i, c) for i, c in lower if c.mos >= best.mos - 0.5]

    n_sub = min(k, math.ceil(k / 4)) if suboptimal else 0
    picks = _cyclic_sample(suboptimal, n_sub, rng) + _cyclic_sample(lower, k - n_sub, rng)

    candidate_records = tuple(
        {"id": letter_id(i), "box": c.box.as_list()} for i, c in enumerate(sampled)
    )
    listing = "\n".join(f"{letter_id(i)}: {serialize_box(c.box)}" for i, c in enumerate(sampled))
    prompt_text = f"{prompts.decision}\n{listing}"
    pairs = []
    for index, crop in picks:
        pairs.append(
            PreferencePair(
                image=image,
                prompt=prompt_text,
                candidates=candidate_records,
                chosen=letter_id(best_index),
                rejected=letter_id(index),
                mos_chosen=best.mos,
                mos_rejected=crop.mos,
            )
        )
    return pairs


def _cyclic_sample(pool: list, count: int, rng: random.Random) -> list:
    """Sample without replacement, reshuffling the pool on exhaustion."""
    if count <= 0 or not pool:
        return []
    out: list = []
    batch: list = []
    while len(out) < count:
        if not batch:
            batch = list(pool)
            rng.shuffle(batch)
        out.append(batch.pop())
    return out


# ---------------------------------------------------------------------------
# JSONL persistence


def write_jsonl(path: str | Path, records: Iterable[dict]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, separators=(", ", ": ")))
            fh.write("\n")
            n += 1
    return n


def read_jsonl(path: str | Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                value = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(str(exc), line=lineno) from None
            if not isinstance(value, dict):
                raise SchemaError(f"expected a JSON object, got {type(value).__name__}", line=lineno)
            records.append(value)
    return records


def load_annotated_images(path: str | Path) -> list[AnnotatedImage]:
    """CADB-style records {image, width, height, elements: [{category, boxes}]}."""
    out = []
    for lineno, record in enumerate(read_jsonl(path), start=1):
        try:
            dims = ImageDims(int(record["width"]), int(record["height"]))
            elements = tuple(element_from_dict(e) for e in record["elements"])
            out.append(AnnotatedImage(image=str(record["image"]), dims=dims, elements=elements))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(str(exc), line=lineno) from None
    return out


def load_scored_crops(path: str | Path) -> list[tuple[str, ImageDims, list[ScoredCrop]]]:
    """GAICD-style records {image, width, height, crops: [{box, mos}]}."""
    out = []
    for lineno, record in enumerate(read_jsonl(path), start=1):
        try:
            dims = ImageDims(int(record["width"]), int(record["height"]))
            crops = [
                ScoredCrop(box=PixelBox.from_list(c["box"]), mos=float(c["mos"]))
                for c in record["crops"]
            ]
            out.append((str(record["image"]), dims, crops))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(str(exc), line=lineno) from None
    return out
