import numpy as np
import pytest
from sklearn.base import clone

from oracles import random_samples, to_group
from scrl.consensus import LabelingConfig
from scrl.estimators import BanditSimulator, RewardScorer, check_groups
from scrl.exceptions import ValidationError
from scrl.rewards import score_group
from scrl.sim import SimConfig, run_simulation


def groups(n=5, seed=0):
    rng = np.random.default_rng(seed)
    return [to_group(random_samples(rng), query_id=f"q{i}") for i in range(n)]


class TestRewardScorer:
    def test_params_round_trip(self):
        s = RewardScorer(tau_pos=0.5, train_size=8)
        params = s.get_params()
        assert params["tau_pos"] == 0.5 and params["train_size"] == 8
        assert clone(s).get_params() == params
        assert s.set_params(lambda_h=0.0).lambda_h == 0.0

    def test_fit_returns_self(self):
        s = RewardScorer()
        assert s.fit(groups()) is s
        assert s.labeling_ == LabelingConfig()

    def test_transform_matches_score_group(self):
        gs = groups()
        out = RewardScorer(seed=3).fit_transform(gs)
        for g, rg in zip(gs, out):
            assert rg == score_group(g, LabelingConfig(), seed=3)

    @pytest.mark.parametrize("params", [
        {"tau_pos": 1.5}, {"method": "vote"}, {"train_size": 0}, {"seed": -1},
        {"candidates": 4, "train_size": 8},
    ])
    def test_bad_params(self, params):
        with pytest.raises(ValidationError):
            RewardScorer(**params).fit()

    def test_candidates_enforced(self):
        g = to_group([("a", 0.1)] * 3)
        with pytest.raises(ValidationError, match="expected 4 candidates"):
            RewardScorer(candidates=4).fit().transform([g])

    def test_duplicate_queries_rejected(self):
        g = to_group([("a", 0.1)])
        with pytest.raises(ValidationError, match="more than one group"):
            check_groups([g, g])

    def test_non_group_rejected(self):
        with pytest.raises(ValidationError, match="QueryGroup"):
            RewardScorer().fit([{"query_id": "q"}])


class TestBanditSimulator:
    base = SimConfig(num_queries=5, iterations=3)

    def test_matches_run_simulation(self):
        est = BanditSimulator(config=self.base).fit()
        assert est.metrics_ == run_simulation(self.base)

    def test_threshold_params_override_config(self):
        est = BanditSimulator(config=self.base.to_dict()).set_params(tau_neg=0.0)
        assert est.resolved_config() == self.base.replace(tau_neg=0.0)
        est.fit()
        assert all(r.num_negative == 0 for r in est.metrics_.records)

    def test_default_config(self):
        assert BanditSimulator().resolved_config() == SimConfig()
