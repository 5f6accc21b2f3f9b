"""Shaped rewards, group-normalized advantages and candidate downsampling."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .consensus import (
    AnswerDistribution,
    LabelDecision,
    LabelingConfig,
    build_distribution,
    majority_vote,
)
from .exceptions import ConsistencyError, ValidationError
from .rollouts import QueryGroup
from .uncertainty import decide_labels

DEFAULT_EPS = 1e-8
DEFAULT_SEED = 0

POSITIVE = "positive"
NEGATIVE = "negative"
UNLABELED = "unlabeled"
INVALID = "invalid"

METHODS = ("scrl", "ttrl")


@dataclass(frozen=True)
class RewardRecord:
    rollout_id: str
    reward: float
    advantage: float
    label_role: str


@dataclass(frozen=True)
class RewardedGroup:
    query_id: str
    records: Tuple[RewardRecord, ...]
    decision: LabelDecision

    def to_jsonl(self) -> str:
        """One JSON line per training rollout, newline-terminated."""
        negatives = sorted(self.decision.negatives)
        lines = []
        for rec in self.records:
            lines.append(
                json.dumps(
                    {
                        "query_id": self.query_id,
                        "rollout_id": rec.rollout_id,
                        "reward": rec.reward,
                        "advantage": rec.advantage,
                        "label_role": rec.label_role,
                        "positive_label": self.decision.positive,
                        "negative_labels": negatives,
                        "top_p": self.decision.top_proportion,
                        "margin": self.decision.margin,
                    }
                )
                + "\n"
            )
        return "".join(lines)


@dataclass(frozen=True)
class AmplificationReport:
    f: float
    a_plus: float


def amplification_factor(f: float) -> float:
    """Advantage given to each positive rollout when a fraction f of a binary group is positive."""
    if not (0.0 < f < 1.0):
        raise ValidationError(f"positive fraction must lie in (0, 1), got {f!r}")
    return math.sqrt((1.0 - f) / f)


def amplification_report(f: float) -> AmplificationReport:
    return AmplificationReport(f=f, a_plus=amplification_factor(f))


def group_advantages(rewards: Sequence[float], eps: float = DEFAULT_EPS) -> np.ndarray:
    """(R - mean) / std with the population std; all zeros when std < eps."""
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or r.size == 0:
        raise ValidationError("rewards must be a nonempty 1-d sequence")
    mu = r.mean()
    centered = r - mu
    sigma = math.sqrt(float(np.mean(centered * centered)))
    if sigma < eps:
        return np.zeros_like(r)
    return centered / sigma


def answer_reward(
    answer: str,
    dist: AnswerDistribution,
    decision: LabelDecision,
    cfg: LabelingConfig,
) -> float:
    """Shaped reward shared by every rollout that produced ``answer``."""
    entry = dist.entry(answer)
    if entry is None:
        raise ConsistencyError(
            f"answer {answer!r} is not in the candidate distribution of {dist.query_id!r}"
        )
    reward = 0.0
    if answer == decision.positive:
        reward += entry.proportion
    if answer in decision.negatives:
        reward += entry.proportion - cfg.tau_neg
    if entry.mean_entropy is not None and dist.query_mean_entropy is not None:
        reward -= cfg.lambda_h * (entry.mean_entropy - dist.query_mean_entropy)
    return reward


def invalid_reward(cfg: LabelingConfig, penalize_invalid: bool = True) -> float:
    return -cfg.tau_neg if penalize_invalid else 0.0


def label_role(answer: Optional[str], decision: LabelDecision) -> str:
    if answer is None:
        return INVALID
    if answer == decision.positive:
        return POSITIVE
    if answer in decision.negatives:
        return NEGATIVE
    return UNLABELED


def shape_rewards(
    group: QueryGroup,
    dist: AnswerDistribution,
    decision: LabelDecision,
    cfg: LabelingConfig,
    penalize_invalid: bool = True,
) -> Tuple[float, ...]:
    """Per-rollout shaped rewards.

    ``dist`` and ``decision`` may come from a larger candidate set than
    ``group``; proportions and entropy statistics are always taken from
    ``dist``. Rollouts without an answer get ``-tau_neg`` (or 0 when
    ``penalize_invalid`` is off) and no entropy term.
    """
    cache: dict = {}
    out = []
    for r in group.rollouts:
        if r.answer is None:
            out.append(invalid_reward(cfg, penalize_invalid))
            continue
        if r.answer not in cache:
            cache[r.answer] = answer_reward(r.answer, dist, decision, cfg)
        out.append(cache[r.answer])
    return tuple(out)


def ttrl_rewards(group: QueryGroup, dist: AnswerDistribution) -> Tuple[float, ...]:
    """Binary majority-vote rewards: 1 for the voted answer, 0 otherwise."""
    vote = majority_vote(dist)
    out = []
    for r in group.rollouts:
        if r.answer is not None and dist.entry(r.answer) is None:
            raise ConsistencyError(
                f"answer {r.answer!r} is not in the candidate distribution of {dist.query_id!r}"
            )
        out.append(1.0 if vote is not None and r.answer == vote else 0.0)
    return tuple(out)


def query_seed(seed: int, query_id: str) -> np.random.SeedSequence:
    """Seed sequence for one query, independent of processing order."""
    digest = hashlib.sha256(query_id.encode("utf-8")).digest()
    return np.random.SeedSequence([int(seed), int.from_bytes(digest[:8], "little")])


def downsample(group: QueryGroup, m: int, seed: int = DEFAULT_SEED) -> QueryGroup:
    """Uniform subset of ``m`` rollouts without replacement, in original order."""
    n = len(group.rollouts)
    if isinstance(m, bool) or not isinstance(m, (int, np.integer)) or m < 1:
        raise ValidationError(f"sample size must be a positive integer, got {m!r}")
    if m > n:
        raise ValidationError(f"cannot draw {m} rollouts from a group of {n}")
    rng = np.random.default_rng(query_seed(seed, group.query_id))
    idx = np.sort(rng.choice(n, size=int(m), replace=False))
    return QueryGroup(group.query_id, tuple(group.rollouts[i] for i in idx))


def ttrl_decision(dist: AnswerDistribution) -> LabelDecision:
    return LabelDecision(
        positive=majority_vote(dist),
        top_proportion=dist.top_proportion,
        margin=dist.margin,
    )


def score_group(
    group: QueryGroup,
    cfg: LabelingConfig,
    method: str = "scrl",
    train_size: Optional[int] = None,
    seed: int = DEFAULT_SEED,
    penalize_invalid: bool = True,
    eps: float = DEFAULT_EPS,
) -> RewardedGroup:
    """Label the full candidate group, then reward and normalize the training subset."""
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}; expected one of {METHODS}")
    dist = build_distribution(group)
    train = group
    if train_size is not None and train_size < len(group):
        train = downsample(group, train_size, seed)
    if method == "scrl":
        decision = decide_labels(dist, cfg)
        rewards = shape_rewards(train, dist, decision, cfg, penalize_invalid)
    else:
        decision = ttrl_decision(dist)
        rewards = ttrl_rewards(train, dist)
    adv = group_advantages(rewards, eps)
    records = tuple(
        RewardRecord(r.rollout_id, float(rw), float(a), label_role(r.answer, decision))
        for r, rw, a in zip(train.rollouts, rewards, adv)
    )
    return RewardedGroup(group.query_id, records, decision)
