"""Entropy-gated negative pseudo-labels."""

from __future__ import annotations

from typing import FrozenSet, Optional

from .consensus import AnswerDistribution, LabelDecision, LabelingConfig, select_positive


def negative_set(
    dist: AnswerDistribution,
    cfg: LabelingConfig,
    positive: Optional[str] = None,
) -> FrozenSet[str]:
    """Answers that are both rare (``p < tau_neg``) and uncertain (``H_j >= H``).

    Without any entropy evidence the gate cannot be evaluated and the set is
    empty; there is no frequency-only fallback. Answers whose rollouts carry
    no entropy are never gated in. ``positive`` is removed from the result.
    """
    query_h = dist.query_mean_entropy
    if query_h is None:
        return frozenset()
    return frozenset(
        e.answer
        for e in dist.entries
        if e.proportion < cfg.tau_neg
        and e.mean_entropy is not None
        and e.mean_entropy >= query_h
        and e.answer != positive
    )


def decide_labels(dist: AnswerDistribution, cfg: LabelingConfig) -> LabelDecision:
    positive = select_positive(dist, cfg)
    return LabelDecision(
        positive=positive,
        negatives=negative_set(dist, cfg, positive=positive),
        top_proportion=dist.top_proportion,
        margin=dist.margin,
    )
