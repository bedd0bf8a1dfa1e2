"""Scalar preference objectives over per-token log-probabilities.

Natural-log convention throughout. The cross-entropy loss uses sum reduction
over response tokens; a token-mean variant is exposed under its own name and
the two are never silently interchanged. The pairwise preference loss
-log(sigmoid(delta)) is computed through softplus(-delta) so large reward
gaps cannot overflow.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .datasets import read_jsonl


class LengthMismatchError(ValueError):
    pass


class EmptyBatchError(ValueError):
    pass


@dataclass(frozen=True)
class SequenceLogProb:
    """Per-token natural-log probabilities of one response."""

    token_logprobs: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.token_logprobs:
            raise ValueError("sequence needs at least one token")
        for lp in self.token_logprobs:
            if lp > 0.0:
                raise ValueError(f"log-probabilities must be <= 0, got {lp}")

    @classmethod
    def of(cls, values: Sequence[float]) -> "SequenceLogProb":
        return cls(tuple(float(v) for v in values))

    def __len__(self) -> int:
        return len(self.token_logprobs)

    @property
    def total(self) -> float:
        return math.fsum(self.token_logprobs)


@dataclass(frozen=True)
class PolicyPairLogProbs:
    """Chosen and rejected responses under the policy and the frozen reference."""

    policy_w: SequenceLogProb
    ref_w: SequenceLogProb
    policy_l: SequenceLogProb
    ref_l: SequenceLogProb

    def __post_init__(self) -> None:
        if len(self.policy_w) != len(self.ref_w):
            raise LengthMismatchError(
                f"chosen response: policy has {len(self.policy_w)} tokens, reference {len(self.ref_w)}"
            )
        if len(self.policy_l) != len(self.ref_l):
            raise LengthMismatchError(
                f"rejected response: policy has {len(self.policy_l)} tokens, reference {len(self.ref_l)}"
            )


@dataclass(frozen=True)
class DpoConfig:
    """beta scales the log-probability ratio; 0 is a degenerate limit kept
    valid for tests."""

    beta: float = 0.2

    def __post_init__(self) -> None:
        if self.beta < 0.0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")


def sft_loss(target: SequenceLogProb) -> float:
    """Negative sum of token log-probabilities (sum reduction)."""
    return -target.total


def sft_loss_token_mean(target: SequenceLogProb) -> float:
    """Token-mean variant of :func:`sft_loss`; not interchangeable with it."""
    return -target.total / len(target)


def implicit_reward(policy: SequenceLogProb, ref: SequenceLogProb, cfg: DpoConfig) -> float:
    """beta * (log policy(y|x) - log reference(y|x)) for one response."""
    if len(policy) != len(ref):
        raise LengthMismatchError(f"policy has {len(policy)} tokens, reference {len(ref)}")
    return cfg.beta * (policy.total - ref.total)


def _softplus(x: float) -> float:
    # log(1 + e^x), stable for any magnitude.
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def _sigmoid(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def reward_margin(pair: PolicyPairLogProbs, cfg: DpoConfig) -> float:
    """Implicit reward of the chosen response minus the rejected one."""
    return implicit_reward(pair.policy_w, pair.ref_w, cfg) - implicit_reward(
        pair.policy_l, pair.ref_l, cfg
    )


def dpo_loss(pair: PolicyPairLogProbs, cfg: DpoConfig) -> float:
    """-log(sigmoid(margin)), computed as softplus(-margin)."""
    return _softplus(-reward_margin(pair, cfg))


@dataclass(frozen=True)
class DpoGradients:
    """d(loss)/d(token log-probability) under the policy; reference tokens
    receive zero gradient."""

    policy_w: tuple[float, ...]
    policy_l: tuple[float, ...]


def dpo_gradient(pair: PolicyPairLogProbs, cfg: DpoConfig) -> DpoGradients:
    """Every chosen-response token gets -beta*sigmoid(-margin); every
    rejected-response token gets +beta*sigmoid(-margin)."""
    g = cfg.beta * _sigmoid(-reward_margin(pair, cfg))
    return DpoGradients(
        policy_w=tuple(-g for _ in pair.policy_w.token_logprobs),
        policy_l=tuple(g for _ in pair.policy_l.token_logprobs),
    )


def batch_mean(losses: Sequence[float]) -> float:
    if not losses:
        raise EmptyBatchError("empty loss batch")
    return math.fsum(losses) / len(losses)


def gradient_check(pair: PolicyPairLogProbs, cfg: DpoConfig, h: float = 1e-6) -> float:
    """Maximum relative error between analytic token gradients and central
    finite differences of :func:`dpo_loss`."""
    analytic = dpo_gradient(pair, cfg)
    worst = 0.0

    def bump(seq: SequenceLogProb, i: int, d: float) -> SequenceLogProb:
        values = list(seq.token_logprobs)
        values[i] = values[i] + d
        return SequenceLogProb(tuple(values))

    for side, grads in (("policy_w", analytic.policy_w), ("policy_l", analytic.policy_l)):
        seq = getattr(pair, side)
        for i, g in enumerate(grads):
            # Tokens at logprob 0 cannot be bumped upward; shrink that step.
            up = min(h, -seq.token_logprobs[i])
            plus = PolicyPairLogProbs(**{**_pair_fields(pair), side: bump(seq, i, +up)})
            minus = PolicyPairLogProbs(**{**_pair_fields(pair), side: bump(seq, i, -h)})
            fd = (dpo_loss(plus, cfg) - dpo_loss(minus, cfg)) / (up + h)
            denom = max(abs(fd), abs(g), 1e-12)
            worst = max(worst, abs(fd - g) / denom)
    return worst


def _pair_fields(pair: PolicyPairLogProbs) -> dict:
    return {
        "policy_w": pair.policy_w,
        "ref_w": pair.ref_w,
        "policy_l": pair.policy_l,
        "ref_l": pair.ref_l,
    }


def load_logprob_records(path: str | Path) -> list[tuple[str, PolicyPairLogProbs]]:
    """JSONL rows {pair_id, policy_w: [...], ref_w: [...], policy_l: [...],
    ref_l: [...]} for auditing externally computed log-probabilities."""
    out = []
    for record in read_jsonl(path):
        pair = PolicyPairLogProbs(
            policy_w=SequenceLogProb.of(record["policy_w"]),
            ref_w=SequenceLogProb.of(record["ref_w"]),
            policy_l=SequenceLogProb.of(record["policy_l"]),
            ref_l=SequenceLogProb.of(record["ref_l"]),
        )
        out.append((str(record.get("pair_id", len(out))), pair))
    return out
