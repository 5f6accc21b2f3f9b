"""Rollout records, JSONL ingestion and entropy summaries.

A rollout is one sampled response to a query, reduced to the canonical answer
it produced (or ``None`` when no answer could be extracted) and the entropy
evidence recorded by the serving stack at sampling time. Entropies are in nats.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Optional, Sequence, TextIO, Tuple

import numpy as np

from .exceptions import ParseError, ValidationError

PROB_ATOL = 1e-9
TRAJ_MEAN_ATOL = 1e-9

_KNOWN_FIELDS = ("query_id", "rollout_id", "answer", "token_entropies", "traj_entropy", "length")


def token_entropy(probabilities: Sequence[float]) -> float:
    """Shannon entropy (nats) of a next-token distribution, with 0 ln 0 = 0."""
    p = np.asarray(probabilities, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValidationError("probabilities must be a nonempty 1-d sequence")
    if not np.all(np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise ValidationError("probabilities must lie in [0, 1]")
    if abs(math.fsum(p.tolist()) - 1.0) > PROB_ATOL:
        raise ValidationError("probabilities must sum to 1")
    nz = p[p > 0.0]
    h = -float(np.sum(nz * np.log(nz)))
    # cancellation can leave a -0.0 or a 1-ulp negative on one-hot inputs
    return max(h, 0.0)


def trajectory_entropy(token_entropies: Sequence[float]) -> float:
    """Mean per-token entropy of one response."""
    values = [float(v) for v in token_entropies]
    if not values:
        raise ValidationError("trajectory_entropy needs at least one token entropy")
    if any(not math.isfinite(v) or v < 0.0 for v in values):
        raise ValidationError("token entropies must be finite and nonnegative")
    return math.fsum(values) / len(values)


@dataclass(frozen=True)
class Rollout:
    query_id: str
    rollout_id: str
    answer: Optional[str]
    length: int
    token_entropies: Optional[Tuple[float, ...]] = None
    traj_entropy: Optional[float] = None
    extra: Mapping = field(default_factory=dict, hash=False)

    def __post_init__(self):
        if not isinstance(self.query_id, str) or not isinstance(self.rollout_id, str):
            raise ValidationError("query_id and rollout_id must be strings")
        if self.answer is not None and not isinstance(self.answer, str):
            raise ValidationError("answer must be a string or null")
        if isinstance(self.length, bool) or not isinstance(self.length, int) or self.length < 1:
            raise ValidationError(f"length must be a positive integer, got {self.length!r}")
        if self.token_entropies is not None:
            toks = tuple(float(v) for v in self.token_entropies)
            object.__setattr__(self, "token_entropies", toks)
            if any(not math.isfinite(v) or v < 0.0 for v in toks):
                raise ValidationError("token entropies must be finite and nonnegative")
            if len(toks) != self.length:
                raise ValidationError(
                    f"{len(toks)} token entropies given for length {self.length}"
                )
        if self.traj_entropy is not None:
            h = float(self.traj_entropy)
            object.__setattr__(self, "traj_entropy", h)
            if not math.isfinite(h) or h < 0.0:
                raise ValidationError(f"traj_entropy must be finite and nonnegative, got {h}")
            if self.token_entropies is not None:
                mean = trajectory_entropy(self.token_entropies)
                if abs(mean - h) > TRAJ_MEAN_ATOL:
                    raise ValidationError(
                        f"traj_entropy {h} disagrees with token mean {mean}"
                    )

    @property
    def has_entropy(self) -> bool:
        return self.traj_entropy is not None


@dataclass(frozen=True)
class QueryGroup:
    query_id: str
    rollouts: Tuple[Rollout, ...]

    def __post_init__(self):
        rollouts = tuple(self.rollouts)
        object.__setattr__(self, "rollouts", rollouts)
        if not rollouts:
            raise ValidationError(f"query {self.query_id!r} has no rollouts")
        seen = set()
        for r in rollouts:
            if r.query_id != self.query_id:
                raise ValidationError(
                    f"rollout {r.rollout_id!r} belongs to {r.query_id!r}, not {self.query_id!r}"
                )
            if r.rollout_id in seen:
                raise ValidationError(
                    f"duplicate rollout_id {r.rollout_id!r} in query {self.query_id!r}"
                )
            seen.add(r.rollout_id)

    def __len__(self):
        return len(self.rollouts)

    def __iter__(self):
        return iter(self.rollouts)


def _require(obj, key, kinds, line_number, nullable=False):
    if key not in obj:
        raise ParseError(f"missing field {key!r}", line_number)
    value = obj[key]
    if value is None and nullable:
        return None
    if isinstance(value, bool) or not isinstance(value, kinds):
        raise ParseError(f"field {key!r} has wrong type {type(value).__name__}", line_number)
    return value


def parse_rollout_record(line: str, line_number: Optional[int] = None) -> Rollout:
    """Decode one JSONL record into a validated :class:`Rollout`.

    ``traj_entropy`` is filled from ``token_entropies`` when only the latter is
    present. Fields outside the schema are kept on ``Rollout.extra``.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc.msg})", line_number) from None
    if not isinstance(obj, dict):
        raise ParseError("record must be a JSON object", line_number)

    query_id = _require(obj, "query_id", str, line_number)
    rollout_id = _require(obj, "rollout_id", str, line_number)
    answer = _require(obj, "answer", str, line_number, nullable=True)
    length = _require(obj, "length", int, line_number)
    toks = obj.get("token_entropies")
    if toks is not None:
        if not isinstance(toks, list) or any(
            isinstance(v, bool) or not isinstance(v, (int, float)) for v in toks
        ):
            raise ParseError("token_entropies must be a list of numbers", line_number)
    traj = obj.get("traj_entropy")
    if traj is not None and (isinstance(traj, bool) or not isinstance(traj, (int, float))):
        raise ParseError("traj_entropy must be a number", line_number)

    try:
        if traj is None and toks:
            traj = trajectory_entropy(toks)
        return Rollout(
            query_id=query_id,
            rollout_id=rollout_id,
            answer=answer,
            length=length,
            token_entropies=tuple(toks) if toks is not None else None,
            traj_entropy=traj,
            extra={k: v for k, v in obj.items() if k not in _KNOWN_FIELDS},
        )
    except ParseError:
        raise
    except ValidationError as exc:
        prefix = f"line {line_number}: " if line_number is not None else ""
        raise ValidationError(f"{prefix}{exc}") from None


def serialize_rollout(rollout: Rollout) -> str:
    obj = {
        "query_id": rollout.query_id,
        "rollout_id": rollout.rollout_id,
        "answer": rollout.answer,
        "token_entropies": list(rollout.token_entropies)
        if rollout.token_entropies is not None
        else None,
        "traj_entropy": rollout.traj_entropy,
        "length": rollout.length,
    }
    obj.update(rollout.extra)
    return json.dumps(obj)


def iter_rollouts(stream: TextIO) -> Iterator[Rollout]:
    """Yield rollouts from a JSONL text stream, skipping blank lines."""
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        yield parse_rollout_record(line, line_number=lineno)


def group_by_query(records: Iterable[Rollout]) -> list:
    """Collect rollouts into one :class:`QueryGroup` per query_id.

    Groups appear in order of first occurrence; rollouts keep stream order.
    """
    buckets: dict = {}
    for r in records:
        buckets.setdefault(r.query_id, []).append(r)
    return [QueryGroup(qid, tuple(rs)) for qid, rs in buckets.items()]


def iter_query_groups(records: Iterable[Rollout]) -> Iterator[QueryGroup]:
    """Stream contiguous query groups, holding one group in memory at a time.

    Raises ValidationError if a query_id reappears after its block ended.
    """
    finished = set()
    current_id = None
    current: list = []
    for r in records:
        if r.query_id != current_id:
            if current:
                yield QueryGroup(current_id, tuple(current))
                finished.add(current_id)
            if r.query_id in finished:
                raise ValidationError(
                    f"query {r.query_id!r} is not contiguous; input must be grouped by query_id"
                )
            current_id, current = r.query_id, []
        current.append(r)
    if current:
        yield QueryGroup(current_id, tuple(current))
