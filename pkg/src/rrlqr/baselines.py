"""Comparison policies: robust exploitation only, and isotropic greedy exploration."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from rrlqr.estimation import UncertainModel
from rrlqr.simulation import CostSpec, Policy
from rrlqr.synthesis import SolverFailure, SynthesisResult, evaluate_wc_cost, synthesize_robust

log = logging.getLogger(__name__)

NOM_SIGMA_TRACE_MAX = 1e-4
ALPHA_MAX = 1e3
GREEDY_RTOL = 1e-3
GREEDY_MAX_ITER = 100


def nom_policy(model: UncertainModel, cost: CostSpec, sigma_w: float, **tols) -> SynthesisResult:
    res = synthesize_robust(model, cost, sigma_w, **tols)
    tr = float(np.trace(res.policy.Sigma))
    if tr >= NOM_SIGMA_TRACE_MAX:
        raise SolverFailure(f"robust synthesis returned exploration trace {tr:.2e}")
    return SynthesisResult(Policy.deterministic(res.policy.K), res.xi, res.lam, res.wc_cost)


@dataclass(frozen=True)
class GreedyResult:
    policy: Policy
    alpha: float
    wc_cost: float
    saturated: bool = False


def greedy_policy(
    model: UncertainModel,
    cost: CostSpec,
    sigma_w: float,
    target_wc_cost: float,
    nom: SynthesisResult | None = None,
    **tols,
) -> GreedyResult:
    """Nominal gain with Sigma = alpha^2 I inflated until the worst-case cost hits the target."""
    if nom is None:
        nom = nom_policy(model, cost, sigma_w, **tols)
    K = nom.policy.K
    n_u = K.shape[0]

    def wc(alpha: float) -> float:
        pol = Policy(K, alpha**2 * np.eye(n_u))
        return evaluate_wc_cost(pol, model, cost, sigma_w, **tols).wc_cost

    def done(value: float) -> bool:
        return abs(value - target_wc_cost) <= GREEDY_RTOL * abs(target_wc_cost)

    if target_wc_cost <= nom.wc_cost or done(nom.wc_cost):
        return GreedyResult(nom.policy, 0.0, nom.wc_cost)

    lo, hi = 0.0, 1.0
    hi_cost = wc(hi)
    while hi_cost < target_wc_cost and hi < ALPHA_MAX:
        lo, hi = hi, min(2.0 * hi, ALPHA_MAX)
        hi_cost = wc(hi)
    if hi_cost < target_wc_cost:
        log.warning("greedy exploration saturated at alpha=%g (cost %.4g < target %.4g)", hi, hi_cost, target_wc_cost)
        return GreedyResult(Policy(K, hi**2 * np.eye(n_u)), hi, hi_cost, saturated=True)

    alpha, value = hi, hi_cost
    for _ in range(GREEDY_MAX_ITER):
        if done(value):
            break
        alpha = 0.5 * (lo + hi)
        value = wc(alpha)
        if value < target_wc_cost:
            lo = alpha
        else:
            hi = alpha
    return GreedyResult(Policy(K, alpha**2 * np.eye(n_u)), alpha, value, saturated=not done(value))
