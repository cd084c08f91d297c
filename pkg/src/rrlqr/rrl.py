"""Receding-horizon robust exploration planner.

At epoch i the planner picks covariance blocks Xi_i..Xi_{i+H} minimizing
sum_j T_j tr(blkdiag(Q, R) Xi_j). The first block must be robust for the
current model; block j > i must be robust for the model predicted to hold
once epochs i..j-1 have been run, whose uncertainty matrix is

    D_i + (1 / (sigma_w^2 c_delta)) * sum_{k=i}^{j-1} T_k Xi_k.

With the S-procedure multipliers of the future epochs fixed in advance, every
constraint stays affine in the stacked Xi and the plan is one SDP. Only the
first policy is deployed; the model is refreshed from data every epoch.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np

from rrlqr.baselines import greedy_policy, nom_policy
from rrlqr.conic import ConicProgram, Status, solve
from rrlqr.estimation import Dataset, UncertainModel, information, spectral_model
from rrlqr.simulation import CostSpec, EpochSchedule, LinearSystem, Policy, empirical_cost, rollout
from rrlqr.synthesis import (
    CovarianceBlock,
    SynthesisError,
    build_S,
    evaluate_wc_cost,
    synthesize_robust,
)

log = logging.getLogger(__name__)

Planner = Literal["rrl", "nom", "greedy"]
PLANNERS = ("rrl", "nom", "greedy")


class MultiplierSelectionFailed(SynthesisError):
    def __init__(self, epoch: int, reason: str):
        super().__init__(f"multiplier selection failed at epoch {epoch}: {reason}")
        self.epoch = epoch


class PlanInfeasible(SynthesisError):
    pass


class TrialFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class RRLConfig:
    schedule: EpochSchedule
    h: int
    delta: float
    cost: CostSpec
    sigma_w: float
    feas_tol: float | None = None
    opt_tol: float | None = None

    def __post_init__(self):
        if self.h < 0:
            raise ValueError("look-ahead horizon h must be nonnegative")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")

    @property
    def tols(self) -> dict:
        return {"feas_tol": self.feas_tol, "opt_tol": self.opt_tol}

    def durations_from(self, i: int) -> list[int]:
        """Durations of epochs i..i+h; epochs past tau_N repeat the last duration."""
        d = self.schedule.durations
        return [d[min(j, len(d)) - 1] for j in range(i, i + self.h + 1)]


@dataclass(frozen=True)
class PropagatedModel:
    base: UncertainModel
    Dtilde: np.ndarray

    def model(self) -> UncertainModel:
        return self.base.with_D(self.Dtilde)


@dataclass
class EpochPlan:
    policies: list[Policy]
    xis: list[CovarianceBlock]
    multipliers: list[float]
    planned_cost: float
    durations: list[int]


def propagate_D(D_i, xis, durations, sigma_w: float, c_delta: float) -> np.ndarray:
    """D_i plus the Gram matrix expected from running each block for its duration."""
    D = np.array(D_i, dtype=float, copy=True)
    if len(xis) != len(durations):
        raise ValueError("xis and durations must be aligned")
    for xi, T in zip(xis, durations):
        Xi = xi.xi if isinstance(xi, CovarianceBlock) else np.asarray(xi, dtype=float)
        if Xi.shape != D.shape:
            raise ValueError(f"block shape {Xi.shape} does not match D {D.shape}")
        D = D + (T / (sigma_w**2 * c_delta)) * Xi
    return D


@dataclass
class MultiplierSelection:
    lams: list[float]
    reference: object  # SynthesisResult of the current model
    predicted: list[PropagatedModel]
    costs: list[float]


def _select(model: UncertainModel, config: RRLConfig, i: int) -> MultiplierSelection:
    try:
        ref = synthesize_robust(model, config.cost, config.sigma_w, **config.tols)
    except SynthesisError as exc:
        raise MultiplierSelectionFailed(i, str(exc)) from exc
    durations = config.durations_from(i)
    lams, predicted, costs = [], [], []
    for j in range(len(durations)):
        Dj = propagate_D(model.D, [ref.xi] * j, durations[:j], config.sigma_w, model.c_delta)
        pm = PropagatedModel(model, Dj)
        try:
            ev = evaluate_wc_cost(ref.policy, pm.model(), config.cost, config.sigma_w, **config.tols)
        except SynthesisError as exc:
            raise MultiplierSelectionFailed(i + j, str(exc)) from exc
        lams.append(ev.lam)
        predicted.append(pm)
        costs.append(ev.wc_cost)
    return MultiplierSelection(lams, ref, predicted, costs)


def select_multipliers(model: UncertainModel, config: RRLConfig, i: int) -> list[float]:
    """Multipliers for epochs i..i+H from deploying the robust policy throughout."""
    return _select(model, config, i).lams


def _plan_program(model, config, i, multipliers, fixed_policy: Policy | None = None):
    durations = config.durations_from(i)
    H = len(durations) - 1
    if len(multipliers) != H + 1:
        raise ValueError(f"expected {H + 1} multipliers, got {len(multipliers)}")
    if any(m < 0 for m in multipliers[1:]):
        raise ValueError("multipliers must be nonnegative")
    n_x, p = model.n_x, model.n_x + model.n_u
    Hw = config.cost.weight
    scale = 1.0 / (config.sigma_w**2 * model.c_delta)
    names = [f"xi{j}" for j in range(H + 1)]

    prog = ConicProgram()
    if fixed_policy is None:
        for name in names:
            prog.add_matrix_var(name, p, psd=True)

        def block(v, j):
            return v[names[j]]
    else:
        K, Sigma = fixed_policy.K, fixed_policy.Sigma
        for name in names:
            prog.add_matrix_var(name, n_x, psd=True)

        def block(v, j):
            W = v[names[j]]
            return np.block([[W, W @ K.T], [K @ W, K @ W @ K.T + Sigma]])

    prog.add_scalar_var("lam", nonneg=True)
    prog.set_objective(lambda v: sum(T * np.trace(Hw @ block(v, j)) for j, T in enumerate(durations)), names)
    prog.add_lmi(
        lambda v: build_S(v["lam"], block(v, 0), model.Ahat, model.Bhat, model.D, config.sigma_w),
        ["lam", names[0]],
        label="epoch 0",
    )
    for j in range(1, H + 1):

        def lmi(v, j=j):
            Dj = model.D + scale * sum(durations[k] * block(v, k) for k in range(j))
            return build_S(multipliers[j], block(v, j), model.Ahat, model.Bhat, Dj, config.sigma_w)

        prog.add_lmi(lmi, names[: j + 1], label=f"epoch {j}")
    return prog, names, block, durations


def solve_rrl(model: UncertainModel, config: RRLConfig, i: int, multipliers) -> EpochPlan:
    """Joint exploration/exploitation plan for epochs i..i+H (first multiplier is free)."""
    prog, names, block, durations = _plan_program(model, config, i, list(multipliers))
    sol = solve(prog, config.feas_tol, config.opt_tol)
    if sol.status is not Status.OPTIMAL:
        raise PlanInfeasible(f"epoch {i}: {sol.status.value} ({sol.message})")
    xis = [CovarianceBlock.from_matrix(sol[n], model.n_x) for n in names]
    policies = [b.policy() for b in xis]
    lams = [max(sol["lam"], 0.0)] + [float(m) for m in list(multipliers)[1:]]
    return EpochPlan(policies, xis, lams, sol.objective_value, durations)


def fixed_policy_plan_cost(model: UncertainModel, config: RRLConfig, i: int, multipliers, policy: Policy) -> float:
    """Planned cost when every epoch deploys ``policy`` (same multipliers)."""
    prog, names, block, durations = _plan_program(model, config, i, list(multipliers), fixed_policy=policy)
    sol = solve(prog, config.feas_tol, config.opt_tol)
    if sol.status is not Status.OPTIMAL:
        raise PlanInfeasible(f"fixed-policy plan at epoch {i}: {sol.status.value}")
    return sol.objective_value


@dataclass
class EpochRecord:
    epoch: int
    duration: int
    K: list
    Sigma: list
    empirical_cost: float
    wc_cost_data: float
    wc_cost_theoretical: float
    information: float
    fallback: bool = False
    multipliers: list = field(default_factory=list)
    planned_cost: float | None = None
    greedy_alpha: float | None = None
    note: str = ""


@dataclass
class TrialResult:
    planner: str
    seed: list | int | None
    epochs: list[EpochRecord]
    final_information: float
    config: dict = field(default_factory=dict)

    def series(self, metric: str) -> np.ndarray:
        return np.array([getattr(e, metric) for e in self.epochs], dtype=float)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrialResult":
        d = dict(d)
        d["epochs"] = [EpochRecord(**e) for e in d["epochs"]]
        return cls(**d)


def _plan_rrl(model, config, i):
    lams = select_multipliers(model, config, i)
    return solve_rrl(model, config, i, lams)


def receding_horizon_run(
    true_sys: LinearSystem,
    initial_data: Dataset,
    config: RRLConfig,
    rng: np.random.Generator,
    planner: Planner = "rrl",
    seed=None,
) -> TrialResult:
    """Run one trial: re-plan at each epoch, deploy on the continuing true system."""
    if planner not in PLANNERS:
        raise ValueError(f"unknown planner {planner!r}")
    sched = config.schedule
    sigma_w = config.sigma_w
    epoch_rngs = rng.spawn(sched.N)
    data = initial_data
    x = np.zeros(true_sys.n_x)
    D_theory = None
    deployed: Policy | None = None
    records: list[EpochRecord] = []

    for i in range(1, sched.N + 1):
        T_i = sched.durations[i - 1]
        model = spectral_model(data, sigma_w, config.delta)
        if D_theory is None:
            D_theory = model.D.copy()
        fallback, note = False, ""
        multipliers, planned, alpha = [], None, None
        try:
            nom = nom_policy(model, config.cost, sigma_w, **config.tols)
        except SynthesisError as exc:
            if deployed is None:
                raise TrialFailure(f"epoch {i}: no robustly stabilizing policy ({exc})") from exc
            nom = None
            note = f"nom infeasible, kept previous policy: {exc}"
        base_policy = nom.policy if nom is not None else deployed

        policy = base_policy
        if planner in ("rrl", "greedy") and nom is not None:
            try:
                plan = _plan_rrl(model, config, i)
                rrl_pol = plan.policies[0]
                multipliers, planned = plan.multipliers, plan.planned_cost
            except SynthesisError as exc:
                log.info("epoch %d: rrl plan failed (%s); falling back to nom", i, exc)
                rrl_pol, fallback, note = nom.policy, True, str(exc)
            if planner == "rrl":
                policy = rrl_pol
            else:
                target = evaluate_wc_cost(rrl_pol, model, config.cost, sigma_w, **config.tols).wc_cost
                g = greedy_policy(model, config.cost, sigma_w, target, nom=nom, **config.tols)
                policy, alpha = g.policy, g.alpha
                if g.saturated:
                    note = (note + "; " if note else "") + "greedy saturated"

        try:
            ev = evaluate_wc_cost(policy, model, config.cost, sigma_w, **config.tols)
            wc_data = T_i * ev.wc_cost
            xi_data = ev.xi
        except SynthesisError:
            wc_data, xi_data = float("inf"), None
        try:
            ev_t = evaluate_wc_cost(policy, model.with_D(D_theory), config.cost, sigma_w, **config.tols)
            wc_theory, xi_theory = T_i * ev_t.wc_cost, ev_t.xi
        except SynthesisError:
            wc_theory, xi_theory = float("inf"), xi_data
        if xi_theory is not None:
            D_theory = propagate_D(D_theory, [xi_theory], [T_i], sigma_w, model.c_delta)

        traj = rollout(true_sys, policy, x, T_i, epoch_rngs[i - 1])
        emp = empirical_cost(traj, config.cost).total
        x = traj.states[-1]
        data = data | Dataset.from_trajectories([traj])
        deployed = policy
        records.append(
            EpochRecord(
                epoch=i,
                duration=T_i,
                K=policy.K.tolist(),
                Sigma=policy.Sigma.tolist(),
                empirical_cost=float(emp),
                wc_cost_data=float(wc_data),
                wc_cost_theoretical=float(wc_theory),
                information=information(model),
                fallback=fallback,
                multipliers=[float(m) for m in multipliers],
                planned_cost=planned,
                greedy_alpha=alpha,
                note=note,
            )
        )
    final = information(spectral_model(data, sigma_w, config.delta))
    return TrialResult(planner, seed, records, final)


__all__ = [
    "EpochPlan",
    "MultiplierSelectionFailed",
    "PlanInfeasible",
    "PropagatedModel",
    "RRLConfig",
    "TrialResult",
    "fixed_policy_plan_cost",
    "propagate_D",
    "receding_horizon_run",
    "select_multipliers",
    "solve_rrl",
]
