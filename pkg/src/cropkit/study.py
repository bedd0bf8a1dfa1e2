"""Pairwise preference study: anonymized item scheduling, idempotent vote
persistence, aggregation into preference rates, and export of votes as
preference pairs.

Method labels never leave the server side; clients only see item ids and
left/right crop references.
"""

import hashlib
import json
import random
import threading
import time
import uuid
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Optional

from .datasets import PreferencePair
from .prompts import default_prompts

CHOICES = ("left", "right")


class MissingMethodOutputError(ValueError):
    pass


class UnknownSessionError(KeyError):
    pass


class UnknownItemError(KeyError):
    pass


@dataclass(frozen=True)
class StudyItem:
    item_id: str
    image_id: str
    pair: tuple[str, str]
    left_method: str
    right_method: str
    left_crop: str
    right_crop: str

    def __post_init__(self) -> None:
        if self.left_method == self.right_method:
            raise ValueError("study item needs two distinct methods")


@dataclass(frozen=True)
class Vote:
    session: str
    item_id: str
    choice: str
    ts: int

    def __post_init__(self) -> None:
        if self.choice not in CHOICES:
            raise ValueError(f"choice must be left or right, got {self.choice!r}")


@dataclass(frozen=True)
class PairResult:
    method_a: str
    method_b: str
    votes_a: int
    votes_b: int
    rate_a: float
    rate_b: float

    def to_dict(self) -> dict:
        return {
            "method_a": self.method_a,
            "method_b": self.method_b,
            "votes_a": self.votes_a,
            "votes_b": self.votes_b,
            "rate_a": self.rate_a,
            "rate_b": self.rate_b,
        }


@dataclass(frozen=True)
class StudyResult:
    pairs: tuple[PairResult, ...]
    total_votes: int

    def to_dict(self) -> dict:
        return {"pairs": [p.to_dict() for p in self.pairs], "total_votes": self.total_votes}


def create_study(
    images: list[str],
    method_outputs: dict[str, dict[str, str]],
    seed: int,
    pairs: Optional[list[tuple[str, str]]] = None,
) -> list[StudyItem]:
    """One item per (image, method pair) with a seeded-random side flip."""
    if pairs is None:
        pairs = list(combinations(sorted(method_outputs), 2))
    rng = random.Random(seed)
    items = []
    for image in images:
        for method_a, method_b in pairs:
            for method in (method_a, method_b):
                if image not in method_outputs.get(method, {}):
                    raise MissingMethodOutputError(f"method {method!r} has no crop for {image!r}")
            if rng.random() < 0.5:
                left, right = method_a, method_b
            else:
                left, right = method_b, method_a
            items.append(
                StudyItem(
                    item_id=f"item-{len(items):04d}",
                    image_id=image,
                    pair=(method_a, method_b),
                    left_method=left,
                    right_method=right,
                    left_crop=method_outputs[left][image],
                    right_crop=method_outputs[right][image],
                )
            )
    return items


def dedupe_votes(votes: list[Vote]) -> list[Vote]:
    """First vote per (session, item) wins; later duplicates are dropped."""
    seen: set[tuple[str, str]] = set()
    unique = []
    for vote in votes:
        key = (vote.session, vote.item_id)
        if key in seen:
            continue
        seen.add(key)
        unique.append(vote)
    return unique


def aggregate_results(votes: list[Vote], items: list[StudyItem]) -> StudyResult:
    """De-anonymize via the server-side item table and recount the log."""
    by_id = {item.item_id: item for item in items}
    counts: dict[tuple[str, str], dict[str, int]] = {}
    for item in items:
        counts.setdefault(item.pair, {item.pair[0]: 0, item.pair[1]: 0})
    unique = [v for v in dedupe_votes(votes) if v.item_id in by_id]
    for vote in unique:
        item = by_id[vote.item_id]
        method = item.left_method if vote.choice == "left" else item.right_method
        counts[item.pair][method] += 1
    results = []
    for pair in sorted(counts):
        a, b = pair
        votes_a, votes_b = counts[pair][a], counts[pair][b]
        total = votes_a + votes_b
        rate_a = 100.0 * votes_a / total if total else 0.0
        rate_b = 100.0 * votes_b / total if total else 0.0
        results.append(PairResult(a, b, votes_a, votes_b, rate_a, rate_b))
    return StudyResult(pairs=tuple(results), total_votes=len(unique))


def export_votes_to_dpo(
    votes: list[Vote],
    items: list[StudyItem],
    crops: dict[str, dict[str, list[float]]],
) -> list[PreferencePair]:
    """Turn each deduplicated vote into a preference pair: chosen is the
    preferred crop, with human-vote provenance and no MOS fields."""
    by_id = {item.item_id: item for item in items}
    prompts = default_prompts()
    pairs = []
    for vote in dedupe_votes(votes):
        item = by_id.get(vote.item_id)
        if item is None:
            continue
        left_box = crops[item.left_method][item.image_id]
        right_box = crops[item.right_method][item.image_id]
        candidates = ({"id": "A", "box": list(left_box)}, {"id": "B", "box": list(right_box)})
        chosen, rejected = ("A", "B") if vote.choice == "left" else ("B", "A")
        listing = "\n".join(f"{c['id']}: {c['box']}" for c in candidates)
        pairs.append(
            PreferencePair(
                image=item.image_id,
                prompt=f"{prompts.decision}\n{listing}",
                candidates=candidates,
                chosen=chosen,
                rejected=rejected,
                provenance="human_vote",
            )
        )
    return pairs


class VoteLog:
    """Append-only JSONL vote log; appends are serialized by a lock."""

    def __init__(self, path: Optional[str | Path] = None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._votes: list[Vote] = []
        if self.path is not None and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    rec = json.loads(line)
                    self._votes.append(
                        Vote(
                            session=rec["session"],
                            item_id=rec["item_id"],
                            choice=rec["choice"],
                            ts=int(rec["ts"]),
                        )
                    )

    def append(self, vote: Vote) -> None:
        with self._lock:
            self._votes.append(vote)
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(
                        json.dumps(
                            {
                                "ts": vote.ts,
                                "session": vote.session,
                                "item_id": vote.item_id,
                                "choice": vote.choice,
                            }
                        )
                    )
                    fh.write("\n")

    def snapshot(self) -> list[Vote]:
        with self._lock:
            return list(self._votes)


@dataclass
class StudyService:
    """Scheduling, voting, and aggregation over a fixed item table."""

    items: list[StudyItem]
    log: VoteLog = field(default_factory=VoteLog)
    seed: int = 0

    def __post_init__(self) -> None:
        self._by_id = {item.item_id: item for item in self.items}
        self._sessions: set[str] = set()
        self._lock = threading.Lock()

    # -- sessions ----------------------------------------------------------

    def register_session(self, session_id: Optional[str] = None) -> str:
        sid = session_id or uuid.uuid4().hex[:12]
        with self._lock:
            self._sessions.add(sid)
        return sid

    def _known(self, session: str) -> bool:
        if session in self._sessions:
            return True
        # Sessions survive restarts through their votes in the log.
        return any(v.session == session for v in self.log.snapshot())

    def session_order(self, session: str) -> list[StudyItem]:
        digest = hashlib.sha256(f"{self.seed}:{session}".encode("utf-8")).hexdigest()
        rng = random.Random(int(digest[:16], 16))
        order = list(self.items)
        rng.shuffle(order)
        return order

    def progress(self, session: str) -> tuple[int, int]:
        voted = {v.item_id for v in dedupe_votes(self.log.snapshot()) if v.session == session}
        return len(voted & set(self._by_id)), len(self.items)

    def next_item(self, session: str) -> Optional[StudyItem]:
        """The session's next unvoted item in its fixed order, or None when
        the session is done."""
        if not self._known(session):
            raise UnknownSessionError(session)
        voted = {v.item_id for v in self.log.snapshot() if v.session == session}
        for item in self.session_order(session):
            if item.item_id not in voted:
                return item
        return None

    # -- votes -------------------------------------------------------------

    def record_vote(self, session: str, item_id: str, choice: str, ts: Optional[int] = None) -> bool:
        """Append a vote; returns False (without double count) for a
        duplicate (session, item)."""
        if item_id not in self._by_id:
            raise UnknownItemError(item_id)
        vote = Vote(session=session, item_id=item_id, choice=choice, ts=ts or int(time.time()))
        with self._lock:
            duplicate = any(
                v.session == session and v.item_id == item_id for v in self.log.snapshot()
            )
            self.log.append(vote)
            self._sessions.add(session)
        return not duplicate

    def results(self) -> StudyResult:
        return aggregate_results(self.log.snapshot(), self.items)
