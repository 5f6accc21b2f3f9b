import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scrl.exceptions import ParseError, ValidationError
from scrl.rollouts import (
    QueryGroup,
    Rollout,
    group_by_query,
    iter_query_groups,
    iter_rollouts,
    parse_rollout_record,
    serialize_rollout,
    token_entropy,
    trajectory_entropy,
)


def rec(**kw):
    base = {"query_id": "q1", "rollout_id": "r0", "answer": "a", "token_entropies": None,
            "traj_entropy": 0.3, "length": 5}
    base.update(kw)
    return json.dumps(base)


class TestTokenEntropy:
    def test_uniform_four(self):
        assert token_entropy([0.25] * 4) == pytest.approx(1.386294, abs=1e-6)
        assert token_entropy([0.25] * 4) == pytest.approx(math.log(4), abs=1e-12)

    def test_one_hot(self):
        assert token_entropy([0.0, 1.0, 0.0]) == 0.0

    def test_binary_symmetric_with_zeros(self):
        assert token_entropy([0.5, 0.5, 0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-12)

    @pytest.mark.parametrize("bad", [[0.5, 0.6], [-0.1, 1.1], [0.2, 0.2], [], [float("nan"), 1.0]])
    def test_rejects_invalid(self, bad):
        with pytest.raises(ValidationError):
            token_entropy(bad)

    @given(st.lists(st.floats(0.01, 10.0), min_size=2, max_size=40), st.randoms())
    def test_permutation_invariant_and_bounded(self, weights, rnd):
        p = np.array(weights) / np.sum(weights)
        p = p / p.sum()
        if abs(math.fsum(p) - 1.0) > 1e-9:
            return
        q = list(p)
        rnd.shuffle(q)
        h = token_entropy(p)
        assert token_entropy(q) == pytest.approx(h, abs=1e-12)
        assert 0.0 <= h <= math.log(len(p)) + 1e-12


class TestTrajectoryEntropy:
    @pytest.mark.parametrize(
        "values, expected", [([0.2, 0.4], 0.3), ([0.7], 0.7), ([0.0, 0.0, 0.9], 0.3)]
    )
    def test_examples(self, values, expected):
        assert trajectory_entropy(values) == pytest.approx(expected, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            trajectory_entropy([])

    def test_negative_rejected(self):
        with pytest.raises(ValidationError):
            trajectory_entropy([0.1, -0.2])

    @given(st.floats(0.0, 50.0), st.integers(1, 200))
    def test_constant_sequence(self, c, n):
        assert trajectory_entropy([c] * n) == pytest.approx(c, rel=1e-12, abs=1e-15)


class TestParse:
    def test_fills_traj_entropy(self):
        r = parse_rollout_record(rec(token_entropies=[0.2, 0.4], traj_entropy=None, length=2))
        assert r.traj_entropy == pytest.approx(0.3)

    def test_null_answer(self):
        assert parse_rollout_record(rec(answer=None)).answer is None

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            parse_rollout_record(rec(token_entropies=[0.1, 0.2, 0.3], traj_entropy=None, length=2))

    def test_traj_mean_disagreement(self):
        with pytest.raises(ValidationError):
            parse_rollout_record(rec(token_entropies=[0.2, 0.4], traj_entropy=0.31, length=2))

    def test_negative_entropy_names_line(self):
        with pytest.raises(ValidationError, match="line 7"):
            parse_rollout_record(rec(traj_entropy=-0.1), line_number=7)

    def test_malformed_json_names_line(self):
        with pytest.raises(ParseError, match="line 3") as info:
            parse_rollout_record("{not json", line_number=3)
        assert info.value.line_number == 3

    @pytest.mark.parametrize("missing", ["query_id", "rollout_id", "answer", "length"])
    def test_missing_field(self, missing):
        obj = json.loads(rec())
        del obj[missing]
        with pytest.raises(ParseError):
            parse_rollout_record(json.dumps(obj))

    def test_length_must_be_positive_int(self):
        for bad in (0, 2.5, True, "3"):
            with pytest.raises(ValidationError):
                parse_rollout_record(rec(length=bad))

    def test_unknown_fields_preserved(self):
        r = parse_rollout_record(rec(model="m-1", temperature=0.6))
        assert r.extra == {"model": "m-1", "temperature": 0.6}
        assert json.loads(serialize_rollout(r))["model"] == "m-1"

    def test_no_entropy_accepted(self):
        r = parse_rollout_record(rec(traj_entropy=None))
        assert r.traj_entropy is None and not r.has_entropy

    @given(
        answer=st.one_of(st.none(), st.text(max_size=8)),
        toks=st.one_of(st.none(), st.lists(st.floats(0.0, 5.0), min_size=1, max_size=12)),
        extra=st.dictionaries(st.sampled_from(["x", "meta", "score"]), st.integers()),
    )
    def test_round_trip(self, answer, toks, extra):
        length = len(toks) if toks else 4
        obj = {"query_id": "q", "rollout_id": "r", "answer": answer, "token_entropies": toks,
               "traj_entropy": None, "length": length, **extra}
        first = parse_rollout_record(json.dumps(obj))
        second = parse_rollout_record(serialize_rollout(first))
        assert second == first


class TestGrouping:
    def _r(self, q, i, answer="a"):
        return Rollout(q, str(i), answer, length=1, traj_entropy=0.1)

    def test_two_groups(self):
        groups = group_by_query([self._r("q1", 0), self._r("q1", 1), self._r("q2", 0)])
        assert [len(g) for g in groups] == [2, 1]

    def test_empty(self):
        assert group_by_query([]) == []

    def test_interleaved_order(self):
        stream = [self._r("q1", 0), self._r("q2", 0), self._r("q1", 1), self._r("q2", 1),
                  self._r("q1", 2)]
        groups = {g.query_id: g for g in group_by_query(stream)}
        expected = [r.rollout_id for r in stream if r.query_id == "q1"]
        assert [r.rollout_id for r in groups["q1"]] == expected == ["0", "1", "2"]

    def test_duplicate_rollout_id(self):
        with pytest.raises(ValidationError):
            group_by_query([self._r("q1", 0), self._r("q1", 0)])

    def test_group_requires_matching_query(self):
        with pytest.raises(ValidationError):
            QueryGroup("q1", (self._r("q2", 0),))
        with pytest.raises(ValidationError):
            QueryGroup("q1", ())

    def test_streaming_detects_noncontiguous(self):
        stream = [self._r("q1", 0), self._r("q2", 0), self._r("q1", 1)]
        with pytest.raises(ValidationError, match="contiguous"):
            list(iter_query_groups(stream))

    def test_iter_rollouts_skips_blank_lines(self):
        text = rec(rollout_id="a") + "\n\n   \n" + rec(rollout_id="b") + "\n"
        assert [r.rollout_id for r in iter_rollouts(io.StringIO(text))] == ["a", "b"]


@settings(max_examples=50)
@given(st.integers(2, 1024))
def test_uniform_entropy_is_log_v(v):
    assert abs(token_entropy([1.0 / v] * v) - math.log(v)) <= 1e-12
