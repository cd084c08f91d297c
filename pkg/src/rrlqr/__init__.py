"""Robust exploration/exploitation for LQR with unknown linear dynamics.

Learned policies minimize a worst-case quadratic cost over a data-driven
credibility region, with exploration planned through a convex SDP.
"""

from rrlqr.simulation import (
    CostSpec,
    EpochSchedule,
    LinearSystem,
    Policy,
    Trajectory,
    apply_policy,
    empirical_cost,
    epoch_index,
    rollout,
    step,
)
from rrlqr.estimation import (
    Dataset,
    Posterior,
    UncertainModel,
    chi2_quantile,
    ellipsoid_contains,
    information,
    ols_posterior,
    spectral_contains,
    spectral_model,
)
from rrlqr.synthesis import (
    CovarianceBlock,
    SynthesisResult,
    build_S,
    evaluate_wc_cost,
    lqr_riccati,
    synthesize_robust,
)
from rrlqr.baselines import greedy_policy, nom_policy
from rrlqr.rrl import (
    EpochPlan,
    RRLConfig,
    TrialResult,
    propagate_D,
    receding_horizon_run,
    select_multipliers,
    solve_rrl,
)

__version__ = "0.1.0"
