"""Answer-bandit simulator for test-time RL labeling dynamics.

Each query is a categorical policy over ``num_answers`` candidate answers. One
rollout is one draw from ``softmax(logits)`` plus a trajectory entropy drawn
from a normal whose mean depends on whether the answer is correct. Each
iteration samples a candidate pool, labels it (SCRL or majority voting),
downsamples a training group, computes group-normalized advantages and takes
``inner_epochs`` gradient-ascent steps on the clipped surrogate.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .consensus import AnswerDistribution, AnswerEntry, LabelDecision, LabelingConfig, majority_vote
from .exceptions import ValidationError
from .rewards import METHODS, answer_reward, group_advantages, ttrl_decision
from .rollouts import QueryGroup, Rollout
from .uncertainty import decide_labels

INIT_KINDS = ("uniform", "dirichlet", "probs", "logits")

# seed-sequence tags for the independent per-query streams
_INIT_STREAM = 0
_ROLLOUT_STREAM = 1


@dataclass(frozen=True)
class SimConfig:
    num_queries: int = 200
    num_answers: int = 8
    ground_truth: object = 0
    init: str = "dirichlet"
    dirichlet_alpha: object = 1.0
    init_table: Optional[tuple] = None
    mu_correct: float = 0.23
    mu_incorrect: float = 0.29
    sigma_h: float = 0.05
    rollout_budget: int = 32
    train_size: int = 16
    iterations: int = 100
    learning_rate: float = 0.5
    method: str = "scrl"
    tau_pos: float = 0.375
    tau_marg: float = 0.125
    tau_neg: float = 0.125
    lambda_h: float = 0.1
    clip_eps: float = 0.2
    inner_epochs: int = 1
    seed: int = 0

    def __post_init__(self):
        def positive_int(name, minimum=1):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
                raise ValidationError(f"{name}: expected integer >= {minimum}, got {v!r}")

        def real(name, lo=None, strict=False):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ValidationError(f"{name}: expected a finite number, got {v!r}")
            if lo is not None and (v <= lo if strict else v < lo):
                op = ">" if strict else ">="
                raise ValidationError(f"{name}: expected {op} {lo}, got {v!r}")

        positive_int("num_queries")
        positive_int("num_answers")
        positive_int("rollout_budget")
        positive_int("train_size")
        positive_int("iterations", minimum=0)
        positive_int("inner_epochs")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ValidationError(f"seed: expected a nonnegative integer, got {self.seed!r}")
        if self.train_size > self.rollout_budget:
            raise ValidationError(
                f"train_size: {self.train_size} exceeds rollout_budget {self.rollout_budget}"
            )
        real("mu_correct", 0.0)
        real("mu_incorrect", 0.0)
        real("sigma_h", 0.0)
        real("learning_rate", 0.0, strict=True)
        real("clip_eps", 0.0)
        alpha = self.dirichlet_alpha
        if isinstance(alpha, (list, tuple)):
            alpha = tuple(alpha)
            object.__setattr__(self, "dirichlet_alpha", alpha)
            if len(alpha) != self.num_answers:
                raise ValidationError(
                    f"dirichlet_alpha: expected {self.num_answers} concentrations, got {len(alpha)}"
                )
        else:
            alpha = (alpha,)
        for a in alpha:
            if isinstance(a, bool) or not isinstance(a, (int, float)) or not a > 0 or not math.isfinite(a):
                raise ValidationError(f"dirichlet_alpha: expected positive values, got {a!r}")
        if self.method not in METHODS:
            raise ValidationError(f"method: expected one of {METHODS}, got {self.method!r}")
        if self.init not in INIT_KINDS:
            raise ValidationError(f"init: expected one of {INIT_KINDS}, got {self.init!r}")
        try:
            self.labeling
        except ValidationError as exc:
            raise ValidationError(f"labeling: {exc}") from None

        gt = self.ground_truth
        if isinstance(gt, (list, tuple)):
            gt = tuple(gt)
            object.__setattr__(self, "ground_truth", gt)
            if len(gt) != self.num_queries:
                raise ValidationError(
                    f"ground_truth: {len(gt)} entries for {self.num_queries} queries"
                )
        else:
            gt = (gt,)
        for g in gt:
            if isinstance(g, bool) or not isinstance(g, int) or not 0 <= g < self.num_answers:
                raise ValidationError(
                    f"ground_truth: expected answer index in [0, {self.num_answers}), got {g!r}"
                )

        if self.init in ("probs", "logits"):
            if self.init_table is None:
                raise ValidationError(f"init_table: required when init={self.init!r}")
            table = np.asarray(self.init_table, dtype=float)
            if table.ndim == 1:
                table = table[None, :]
            if table.ndim != 2 or table.shape[1] != self.num_answers or table.shape[0] not in (
                1,
                self.num_queries,
            ):
                raise ValidationError(
                    "init_table: expected one row or one row per query, "
                    f"each with {self.num_answers} values"
                )
            if not np.all(np.isfinite(table)):
                raise ValidationError("init_table: values must be finite")
            if self.init == "probs" and (
                np.any(table <= 0.0) or np.any(np.abs(table.sum(axis=1) - 1.0) > 1e-6)
            ):
                raise ValidationError("init_table: probability rows must be positive and sum to 1")
            object.__setattr__(
                self, "init_table", tuple(tuple(float(v) for v in row) for row in table)
            )

    @property
    def labeling(self) -> LabelingConfig:
        return LabelingConfig(self.tau_pos, self.tau_marg, self.tau_neg, self.lambda_h)

    def truth(self, query: int) -> int:
        gt = self.ground_truth
        return gt[query] if isinstance(gt, tuple) else gt

    def replace(self, **changes) -> "SimConfig":
        return SimConfig(**{**self.to_dict(), **changes})

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("ground_truth", "dirichlet_alpha"):
            if isinstance(d[key], tuple):
                d[key] = list(d[key])
        if d["init_table"] is not None:
            d["init_table"] = [list(row) for row in d["init_table"]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        if not isinstance(d, dict):
            raise ValidationError("simulation config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValidationError(f"unknown config field(s): {', '.join(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class PolicyState:
    """Per-query logits; row ``q`` parametrizes the answer policy of query ``q``."""

    logits: np.ndarray

    def __post_init__(self):
        arr = np.array(self.logits, dtype=float)
        if arr.ndim != 2 or not np.all(np.isfinite(arr)):
            raise ValidationError("logits must be a finite 2-d array")
        arr.setflags(write=False)
        object.__setattr__(self, "logits", arr)

    def probs(self, query: int) -> np.ndarray:
        return softmax(self.logits[query])

    def with_row(self, query: int, row: np.ndarray) -> "PolicyState":
        arr = self.logits.copy()
        arr[query] = row
        return PolicyState(arr)


@dataclass(frozen=True)
class IterationMetrics:
    iteration: int
    positive_label_accuracy: Optional[float]
    positive_label_ratio: float
    negative_label_accuracy: Optional[float]
    mean_negatives_per_query: float
    greedy_accuracy: float
    mean_reward: float
    majority_label_accuracy: Optional[float]
    num_positive: int
    num_negative: int


METRIC_FIELDS = tuple(f.name for f in fields(IterationMetrics))


@dataclass(frozen=True)
class SimMetrics:
    """One record per iteration; record 0 describes the initial policy."""

    records: Tuple[IterationMetrics, ...] = field(default_factory=tuple)

    def __len__(self):
        return len(self.records)

    @property
    def final(self) -> IterationMetrics:
        return self.records[-1]

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.records]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r)) + "\n" for r in self.records)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(METRIC_FIELDS)
        for r in self.records:
            writer.writerow(["" if v is None else repr(v) for v in astuple_ordered(r)])
        return buf.getvalue()


def astuple_ordered(record: IterationMetrics) -> tuple:
    return tuple(getattr(record, name) for name in METRIC_FIELDS)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits)
    e = np.exp(z)
    return e / e.sum()


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits)
    return z - math.log(float(np.exp(z).sum()))


def answer_labels(num_answers: int) -> Tuple[str, ...]:
    width = len(str(num_answers - 1))
    return tuple(f"{j:0{width}d}" for j in range(num_answers))


def initial_policy(cfg: SimConfig) -> PolicyState:
    k = cfg.num_answers
    if cfg.init == "uniform":
        logits = np.zeros((cfg.num_queries, k))
    elif cfg.init == "dirichlet":
        rows = []
        alpha = np.broadcast_to(np.asarray(cfg.dirichlet_alpha, dtype=float), (k,))
        for q in range(cfg.num_queries):
            rng = np.random.default_rng([cfg.seed, q, _INIT_STREAM])
            # concentrations are indexed relative to the query's ground truth
            p = np.roll(rng.dirichlet(alpha), cfg.truth(q))
            rows.append(np.log(np.maximum(p, 1e-12)))
        logits = np.array(rows)
    else:
        table = np.asarray(cfg.init_table, dtype=float)
        if cfg.init == "probs":
            table = np.log(table)
        logits = np.broadcast_to(table, (cfg.num_queries, k)).copy()
    return PolicyState(logits)


def query_rng(cfg: SimConfig, query: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, query, _ROLLOUT_STREAM])


def _draw(logits, truth, n, rng, cfg):
    cdf = np.cumsum(softmax(logits))
    answers = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
    answers = np.minimum(answers, len(cdf) - 1)
    mu = np.where(answers == truth, cfg.mu_correct, cfg.mu_incorrect)
    entropies = np.maximum(mu + cfg.sigma_h * rng.standard_normal(n), 0.0)
    return answers, entropies


def sample_rollouts(
    policy: PolicyState, query: int, n: int, rng: np.random.Generator, cfg: SimConfig
) -> QueryGroup:
    """Draw ``n`` single-decision rollouts for one query."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    labels = answer_labels(cfg.num_answers)
    answers, entropies = _draw(policy.logits[query], cfg.truth(query), n, rng, cfg)
    qid = f"q{query}"
    return QueryGroup(
        qid,
        tuple(
            Rollout(qid, str(i), labels[a], length=1, traj_entropy=float(h))
            for i, (a, h) in enumerate(zip(answers.tolist(), entropies.tolist()))
        ),
    )


def surrogate(logits, old_log_probs, answers, advantages, clip_eps) -> float:
    """Mean clipped importance-weighted advantage of one query's training group."""
    ratio = np.exp(log_softmax(logits)[answers] - old_log_probs[answers])
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    return float(np.mean(np.minimum(ratio * advantages, clipped * advantages)))


def surrogate_grad(logits, old_log_probs, answers, advantages, clip_eps) -> np.ndarray:
    """Gradient of :func:`surrogate` with respect to ``logits``.

    Where the two arguments of the min coincide the gradient is the average
    of both branches, which is the symmetric limit a central difference sees.
    """
    advantages = np.asarray(advantages, dtype=float)
    log_probs = log_softmax(logits)
    probs = np.exp(log_probs)
    ratio = np.exp(log_probs[answers] - old_log_probs[answers])
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    plain = ratio * advantages
    capped = clipped * advantages
    inside = (ratio > 1.0 - clip_eps) & (ratio < 1.0 + clip_eps)
    d_capped = np.where(inside, advantages, 0.0)
    coef = np.where(plain < capped, advantages, np.where(plain > capped, d_capped,
                                                          0.5 * (advantages + d_capped)))
    w = coef * ratio
    grad = np.bincount(answers, weights=w, minlength=len(logits)) - probs * w.sum()
    return grad / len(answers)


def update_logits(logits, answers, advantages, learning_rate, clip_eps, inner_epochs):
    """``inner_epochs`` ascent steps with the sampling policy frozen at ``logits``."""
    advantages = np.asarray(advantages, dtype=float)
    if not advantages.any():
        return logits
    old_log_probs = log_softmax(logits)
    theta = np.array(logits, dtype=float)
    for _ in range(inner_epochs):
        theta = theta + learning_rate * surrogate_grad(
            theta, old_log_probs, answers, advantages, clip_eps
        )
    return theta


def policy_update(
    policy: PolicyState,
    query: int,
    group: QueryGroup,
    advantages: Sequence[float],
    cfg: SimConfig,
) -> PolicyState:
    """Clipped-surrogate update of one query's logits from a rollout group."""
    if len(advantages) != len(group):
        raise ValidationError("advantages must align with the group")
    index = {lab: j for j, lab in enumerate(answer_labels(cfg.num_answers))}
    answers = np.array([index[r.answer] for r in group.rollouts], dtype=int)
    row = update_logits(
        policy.logits[query], answers, advantages, cfg.learning_rate, cfg.clip_eps,
        cfg.inner_epochs,
    )
    return policy.with_row(query, row)


def index_distribution(query_id, answers, entropies, labels) -> AnswerDistribution:
    """Distribution of integer-coded answers that all carry entropy evidence.

    Same result as :func:`scrl.consensus.distribution_from_samples` up to
    floating-point summation order in the entropy means.
    """
    k = len(labels)
    n = len(answers)
    counts = np.bincount(answers, minlength=k).tolist()
    sums = np.bincount(answers, weights=entropies, minlength=k).tolist()
    present = sorted((j for j in range(k) if counts[j]), key=lambda j: (-counts[j], labels[j]))
    entries = tuple(
        AnswerEntry(labels[j], counts[j], counts[j] / n, sums[j] / counts[j]) for j in present
    )
    return AnswerDistribution(query_id, entries, n, 0, float(entropies.sum()) / n)


def greedy_credit(logits: np.ndarray, truth: int) -> float:
    """1 if the truth is the unique argmax; split evenly across ties."""
    winners = np.flatnonzero(logits == logits.max())
    return (1.0 / len(winners)) if truth in winners else 0.0


@dataclass
class _Tally:
    pos_emitted: int = 0
    pos_correct: int = 0
    neg_emitted: int = 0
    neg_correct: int = 0
    vote_emitted: int = 0
    vote_correct: int = 0
    greedy: float = 0.0
    reward_sum: float = 0.0
    reward_n: int = 0

    def record(self, iteration: int, num_queries: int) -> IterationMetrics:
        def ratio(num, den):
            return num / den if den else None

        return IterationMetrics(
            iteration=iteration,
            positive_label_accuracy=ratio(self.pos_correct, self.pos_emitted),
            positive_label_ratio=self.pos_emitted / num_queries,
            negative_label_accuracy=ratio(self.neg_correct, self.neg_emitted),
            mean_negatives_per_query=self.neg_emitted / num_queries,
            greedy_accuracy=self.greedy / num_queries,
            mean_reward=self.reward_sum / self.reward_n if self.reward_n else 0.0,
            majority_label_accuracy=ratio(self.vote_correct, self.vote_emitted),
            num_positive=self.pos_emitted,
            num_negative=self.neg_emitted,
        )


UpdateHook = Callable[[int, int, np.ndarray, np.ndarray, LabelDecision], None]


def run_simulation(cfg: SimConfig, on_update: Optional[UpdateHook] = None) -> SimMetrics:
    """Run ``cfg.iterations`` updates and return ``iterations + 1`` metric records.

    Record ``t`` labels a fresh candidate pool drawn from the policy after
    ``t`` updates; every record but the last is followed by an update.
    ``on_update(iteration, query, before, after, decision)`` is called after
    each per-query update.
    """
    labeling = cfg.labeling
    labels = answer_labels(cfg.num_answers)
    logits = np.array(initial_policy(cfg).logits)
    rngs = [query_rng(cfg, q) for q in range(cfg.num_queries)]
    records = []
    for t in range(cfg.iterations + 1):
        tally = _Tally()
        for q in range(cfg.num_queries):
            truth = cfg.truth(q)
            truth_label = labels[truth]
            row = logits[q]
            rng = rngs[q]
            tally.greedy += greedy_credit(row, truth)

            answers, entropies = _draw(row, truth, cfg.rollout_budget, rng, cfg)
            dist = index_distribution(f"q{q}", answers, entropies, labels)
            vote = majority_vote(dist)
            tally.vote_emitted += 1
            tally.vote_correct += vote == truth_label
            if cfg.method == "scrl":
                decision = decide_labels(dist, labeling)
            else:
                decision = ttrl_decision(dist)
            if decision.positive is not None:
                tally.pos_emitted += 1
                tally.pos_correct += decision.positive == truth_label
            tally.neg_emitted += len(decision.negatives)
            tally.neg_correct += sum(1 for a in decision.negatives if a != truth_label)

            table = np.zeros(cfg.num_answers)
            for e in dist.entries:
                j = int(e.answer)
                if cfg.method == "scrl":
                    table[j] = answer_reward(e.answer, dist, decision, labeling)
                else:
                    table[j] = 1.0 if e.answer == decision.positive else 0.0

            if cfg.train_size < cfg.rollout_budget:
                idx = np.sort(rng.choice(cfg.rollout_budget, cfg.train_size, replace=False))
                train = answers[idx]
            else:
                train = answers
            rewards = table[train]
            tally.reward_sum += float(rewards.sum())
            tally.reward_n += len(rewards)

            if t == cfg.iterations:
                continue
            adv = group_advantages(rewards)
            new_row = update_logits(
                row, train, adv, cfg.learning_rate, cfg.clip_eps, cfg.inner_epochs
            )
            if on_update is not None:
                on_update(t, q, row, new_row, decision)
            logits[q] = new_row
        records.append(tally.record(t, cfg.num_queries))
    return SimMetrics(tuple(records))


def load_sim_config(path, overrides: Optional[dict] = None) -> SimConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: simulation config must be a JSON object")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return SimConfig.from_dict(data)
