"""Selective-confidence pseudo-rewards for reinforcement learning on unlabeled rollouts."""

from .consensus import (
    AnswerDistribution,
    AnswerEntry,
    LabelDecision,
    LabelingConfig,
    build_distribution,
    distribution_from_samples,
    majority_vote,
    select_positive,
)
from .estimators import BanditSimulator, RewardScorer
from .exceptions import ConsistencyError, ParseError, ValidationError
from .rewards import (
    RewardedGroup,
    RewardRecord,
    amplification_factor,
    downsample,
    group_advantages,
    score_group,
    shape_rewards,
    ttrl_rewards,
)
from .rollouts import (
    QueryGroup,
    Rollout,
    iter_query_groups,
    iter_rollouts,
    parse_rollout_record,
    token_entropy,
    trajectory_entropy,
)
from .sim import IterationMetrics, SimConfig, SimMetrics, run_simulation
from .uncertainty import decide_labels, negative_set

__version__ = "0.1.0"
