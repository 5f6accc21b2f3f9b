"""Answer distributions, majority voting and selective positive labeling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import FrozenSet, Optional, Sequence, Tuple

from .exceptions import ValidationError
from .rollouts import QueryGroup


@dataclass(frozen=True)
class AnswerEntry:
    answer: str
    count: int
    proportion: float
    mean_entropy: Optional[float] = None


@dataclass(frozen=True)
class AnswerDistribution:
    """Histogram of the parseable answers of one query.

    Entries are ordered by count (descending), then answer string (ascending).
    ``query_mean_entropy`` averages every rollout carrying entropy evidence,
    including rollouts without an answer.
    """

    query_id: str
    entries: Tuple[AnswerEntry, ...]
    n_valid: int
    n_invalid: int
    query_mean_entropy: Optional[float] = None

    @property
    def num_answers(self) -> int:
        return len(self.entries)

    @property
    def has_entropy(self) -> bool:
        return self.query_mean_entropy is not None

    def entry(self, answer: str) -> Optional[AnswerEntry]:
        for e in self.entries:
            if e.answer == answer:
                return e
        return None

    def proportion(self, answer: str) -> float:
        e = self.entry(answer)
        return 0.0 if e is None else e.proportion

    @property
    def top_proportion(self) -> float:
        return self.entries[0].proportion if self.entries else 0.0

    @property
    def second_proportion(self) -> float:
        return self.entries[1].proportion if len(self.entries) > 1 else 0.0

    @property
    def margin(self) -> float:
        """Top proportion minus the runner-up's (0 when there is no runner-up)."""
        if not self.entries:
            return 0.0
        second = self.entries[1].count if len(self.entries) > 1 else 0
        # one rounding on the count difference keeps exact ties exact
        return (self.entries[0].count - second) / self.n_valid


@dataclass(frozen=True)
class LabelingConfig:
    tau_pos: float = 0.375
    tau_marg: float = 0.125
    tau_neg: float = 0.125
    lambda_h: float = 0.1

    def __post_init__(self):
        for name in ("tau_pos", "tau_marg", "tau_neg"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and 0.0 <= value <= 1.0):
                raise ValidationError(f"{name} must lie in [0, 1], got {value!r}")
        if not (isinstance(self.lambda_h, (int, float)) and math.isfinite(self.lambda_h)
                and self.lambda_h >= 0.0):
            raise ValidationError(f"lambda_h must be finite and >= 0, got {self.lambda_h!r}")


@dataclass(frozen=True)
class LabelDecision:
    positive: Optional[str]
    negatives: FrozenSet[str] = field(default_factory=frozenset)
    top_proportion: float = 0.0
    margin: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "negatives", frozenset(self.negatives))
        if self.positive is not None and self.positive in self.negatives:
            raise ValidationError("positive label cannot also be a negative label")

    @property
    def abstained(self) -> bool:
        return self.positive is None


def distribution_from_samples(
    query_id: str,
    answers: Sequence[Optional[str]],
    entropies: Optional[Sequence[Optional[float]]] = None,
) -> AnswerDistribution:
    """Build a distribution from parallel answer / trajectory-entropy sequences."""
    if entropies is None:
        entropies = [None] * len(answers)
    if len(entropies) != len(answers):
        raise ValidationError("answers and entropies differ in length")
    counts: dict = {}
    ent_by_answer: dict = {}
    all_ent = []
    n_invalid = 0
    for a, h in zip(answers, entropies):
        if h is not None:
            all_ent.append(float(h))
        if a is None:
            n_invalid += 1
            continue
        counts[a] = counts.get(a, 0) + 1
        if h is not None:
            ent_by_answer.setdefault(a, []).append(float(h))
    n_valid = sum(counts.values())
    order = sorted(counts, key=lambda a: (-counts[a], a))
    entries = tuple(
        AnswerEntry(
            answer=a,
            count=counts[a],
            proportion=counts[a] / n_valid,
            mean_entropy=(
                math.fsum(ent_by_answer[a]) / len(ent_by_answer[a]) if a in ent_by_answer else None
            ),
        )
        for a in order
    )
    query_mean = math.fsum(all_ent) / len(all_ent) if all_ent else None
    return AnswerDistribution(query_id, entries, n_valid, n_invalid, query_mean)


def build_distribution(group: QueryGroup) -> AnswerDistribution:
    """Answer histogram of a query group with per-answer and query-level entropy."""
    return distribution_from_samples(
        group.query_id,
        [r.answer for r in group.rollouts],
        [r.traj_entropy for r in group.rollouts],
    )


def majority_vote(dist: AnswerDistribution) -> Optional[str]:
    """Most frequent answer, ties broken by the smaller answer string."""
    return dist.entries[0].answer if dist.entries else None


def select_positive(dist: AnswerDistribution, cfg: LabelingConfig) -> Optional[str]:
    """Emit the mode only when it has enough support and a clear margin.

    Support uses ``>=`` against ``tau_pos``; the margin over the runner-up must
    be strictly greater than ``tau_marg``. Returns ``None`` to abstain.
    """
    if not dist.entries:
        return None
    if dist.top_proportion >= cfg.tau_pos and dist.margin > cfg.tau_marg:
        return dist.entries[0].answer
    return None
