"""Tabular TD, QTD(m) and PQTD(m) policy evaluation with DP fixed points."""

from .agents import (
    UpdateDiagnostics,
    pqtd_expected_update,
    pqtd_update,
    qtd_expected_update,
    qtd_update,
    qtd_update_fast,
    quantile_levels,
    td_update,
    value_from_quantiles,
)
from .dp import (
    BoundReport,
    DpResult,
    bound_prop41,
    bound_prop42,
    fixed_point_error_curve,
    pqtd_fixed_point,
    qdp_fixed_point,
    target_cdf,
    target_quantile,
)
from .envs import EnvSpec, TransitionKind, make_env, make_skewed_pair
from .harness import (
    Agent,
    ExperimentConfig,
    ImprovementCurve,
    SweepSummary,
    improvement_curve,
    optimal_mse,
    reward_scale_sweep,
    run_single,
    sweep,
)
from .mrp import Mrp, Transition, reward_support_bounds, step, true_value
from .rewards import RewardKind, RewardModel

__version__ = "0.1.0"
