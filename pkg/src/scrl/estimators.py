"""scikit-learn style wrappers around the scoring pipeline.

The inputs are query groups rather than feature matrices, so these classes
borrow only the parameter handling and the fit/transform calling convention.
"""

from typing import Iterable, List, Optional

from sklearn.base import BaseEstimator, TransformerMixin

from .consensus import LabelingConfig
from .exceptions import ValidationError
from .rewards import DEFAULT_EPS, DEFAULT_SEED, RewardedGroup, score_group
from .rollouts import QueryGroup
from .sim import SimConfig, SimMetrics, run_simulation


def check_groups(groups: Iterable[QueryGroup], candidates: Optional[int] = None) -> List[QueryGroup]:
    """Materialize ``groups`` and check their types, uniqueness and sizes."""
    out = list(groups)
    seen = set()
    for g in out:
        if not isinstance(g, QueryGroup):
            raise ValidationError(f"expected QueryGroup, got {type(g).__name__}")
        if g.query_id in seen:
            raise ValidationError(f"query {g.query_id!r} appears in more than one group")
        seen.add(g.query_id)
        if candidates is not None and len(g) != candidates:
            raise ValidationError(
                f"query {g.query_id!r}: expected {candidates} candidates, got {len(g)}"
            )
    return out


class RewardScorer(TransformerMixin, BaseEstimator):
    """Turns candidate groups into per-rollout rewards and advantages.

    ``fit`` only validates the hyperparameters; the scorer has no learned
    state, so ``transform`` works on any batch of groups.
    """

    def __init__(
        self,
        method="scrl",
        tau_pos=0.375,
        tau_marg=0.125,
        tau_neg=0.125,
        lambda_h=0.1,
        candidates=None,
        train_size=None,
        seed=DEFAULT_SEED,
        penalize_invalid=True,
        eps=DEFAULT_EPS,
    ):
        self.method = method
        self.tau_pos = tau_pos
        self.tau_marg = tau_marg
        self.tau_neg = tau_neg
        self.lambda_h = lambda_h
        self.candidates = candidates
        self.train_size = train_size
        self.seed = seed
        self.penalize_invalid = penalize_invalid
        self.eps = eps

    def labeling(self) -> LabelingConfig:
        return LabelingConfig(self.tau_pos, self.tau_marg, self.tau_neg, self.lambda_h)

    def _validate_params(self):
        self.labeling()
        if self.method not in ("scrl", "ttrl"):
            raise ValidationError(f"method: expected 'scrl' or 'ttrl', got {self.method!r}")
        for name in ("candidates", "train_size"):
            v = getattr(self, name)
            if v is not None and (isinstance(v, bool) or not isinstance(v, int) or v < 1):
                raise ValidationError(f"{name}: expected a positive integer, got {v!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ValidationError(f"seed: expected a nonnegative integer, got {self.seed!r}")
        if self.candidates and self.train_size and self.train_size > self.candidates:
            raise ValidationError(
                f"train_size: {self.train_size} exceeds candidates {self.candidates}"
            )

    def fit(self, X=None, y=None):
        self._validate_params()
        if X is not None:
            check_groups(X, self.candidates)
        self.labeling_ = self.labeling()
        return self

    def score_one(self, group: QueryGroup) -> RewardedGroup:
        if self.candidates is not None and len(group) != self.candidates:
            raise ValidationError(
                f"query {group.query_id!r}: expected {self.candidates} candidates, got {len(group)}"
            )
        return score_group(
            group,
            self.labeling(),
            method=self.method,
            train_size=self.train_size,
            seed=self.seed,
            penalize_invalid=self.penalize_invalid,
            eps=self.eps,
        )

    def transform(self, X) -> List[RewardedGroup]:
        self._validate_params()
        return [self.score_one(g) for g in check_groups(X, self.candidates)]


class BanditSimulator(BaseEstimator):
    """Runs the synthetic answer-bandit experiment for one ``SimConfig``.

    Labeling thresholds are exposed as top-level parameters so that
    ``set_params`` can drive a sweep; everything else lives in ``config``.
    """

    def __init__(self, config=None, tau_pos=None, tau_marg=None, tau_neg=None, lambda_h=None):
        self.config = config
        self.tau_pos = tau_pos
        self.tau_marg = tau_marg
        self.tau_neg = tau_neg
        self.lambda_h = lambda_h

    def resolved_config(self) -> SimConfig:
        base = self.config if self.config is not None else SimConfig()
        if isinstance(base, dict):
            base = SimConfig.from_dict(base)
        changes = {
            k: v
            for k, v in self.get_params(deep=False).items()
            if k != "config" and v is not None
        }
        return base.replace(**changes) if changes else base

    def fit(self, X=None, y=None):
        self.config_ = self.resolved_config()
        self.metrics_: SimMetrics = run_simulation(self.config_)
        return self

