import numpy as np
import pytest

import rrlqr.rrl as rrl_mod
from rrlqr.conic import AFFINE_TOL
from rrlqr.baselines import nom_policy
from rrlqr.estimation import information, spectral_model
from rrlqr.rrl import (
    RRLConfig,
    TrialResult,
    _plan_program,
    _select,
    fixed_policy_plan_cost,
    propagate_D,
    receding_horizon_run,
    select_multipliers,
    solve_rrl,
)
from rrlqr.simulation import EpochSchedule, LinearSystem, empirical_cost, make_rng, rollout
from rrlqr.synthesis import SynthesisError, evaluate_wc_cost, synthesize_robust

from conftest import A5, B5, SIGMA5, excitation_data


def config(cost, h=3, T=300, N=3):
    return RRLConfig(EpochSchedule.uniform(T, N), h, 0.05, cost, SIGMA5)


def test_propagate_examples():
    D = np.diag([1.0, 2.0])
    assert np.array_equal(propagate_D(D, [], [], 1.0, 1.0), D)
    assert np.allclose(propagate_D(D, [np.eye(2)], [100], 1.0, 1.0), D + 100 * np.eye(2))
    rng = np.random.default_rng(0)
    X1, X2 = (lambda G: G @ G.T)(rng.normal(size=(2, 2))), (lambda G: G @ G.T)(rng.normal(size=(2, 2)))
    joint = propagate_D(D, [X1, X2], [10, 20], 0.5, 3.0)
    seq = propagate_D(propagate_D(D, [X1], [10], 0.5, 3.0), [X2], [20], 0.5, 3.0)
    assert np.array_equal(joint, seq)


def test_multipliers_h0(model5, cost5):
    cfg = config(cost5, h=0)
    lams = select_multipliers(model5, cfg, 1)
    ref = synthesize_robust(model5, cost5, SIGMA5)
    assert len(lams) == 1
    assert lams[0] == pytest.approx(evaluate_wc_cost(ref.policy, model5, cost5, SIGMA5).lam, rel=1e-6)


def test_multipliers_full_horizon(model5, cost5):
    cfg = RRLConfig(EpochSchedule.uniform(1000, 10), 10, 0.05, cost5, SIGMA5)
    sel = _select(model5, cfg, 1)
    assert len(sel.lams) == 11
    assert all(np.isfinite(l) and l >= 0 for l in sel.lams)
    assert all(b <= a + 1e-6 * abs(a) for a, b in zip(sel.costs, sel.costs[1:]))
    for pm in sel.predicted:
        assert np.linalg.eigvalsh(pm.Dtilde - model5.D).min() >= -1e-9 * max(1.0, np.abs(model5.D).max())


def test_h0_plan_is_robust_synthesis(model5, cost5):
    cfg = config(cost5, h=0, T=100, N=1)
    plan = solve_rrl(model5, cfg, 1, select_multipliers(model5, cfg, 1))
    ref = synthesize_robust(model5, cost5, SIGMA5)
    assert plan.planned_cost == pytest.approx(100 * ref.wc_cost, rel=1e-6)
    assert np.allclose(plan.policies[0].K, ref.policy.K, rtol=1e-3, atol=1e-5)


def test_plan_consistency_and_nesting(model5, cost5):
    cfg = config(cost5)
    lams = select_multipliers(model5, cfg, 1)
    plan = solve_rrl(model5, cfg, 1, lams)
    assert len(plan.policies) == len(plan.xis) == len(plan.multipliers) == cfg.h + 1
    assert all(m >= 0 for m in plan.multipliers)
    recomputed = sum(T * np.trace(cost5.weight @ b.xi) for T, b in zip(plan.durations, plan.xis))
    assert plan.planned_cost == pytest.approx(recomputed, rel=1e-6)
    kbar = synthesize_robust(model5, cost5, SIGMA5).policy
    assert plan.planned_cost <= fixed_policy_plan_cost(model5, cfg, 1, lams, kbar) * (1 + 1e-6)


@pytest.mark.xfail(
    strict=True,
    reason="on this system the plan explores through the gain K; the recovered Sigma stays at solver noise",
)
def test_exploration_covariance_emerges(model5, cost5):
    cfg = RRLConfig(EpochSchedule.uniform(1000, 10), 10, 0.05, cost5, SIGMA5)
    plan = solve_rrl(model5, cfg, 1, select_multipliers(model5, cfg, 1))
    assert np.trace(plan.policies[0].Sigma) > 1e-6


def test_constraints_affine_in_blocks(model5, cost5):
    cfg = config(cost5, h=2)
    lams = select_multipliers(model5, cfg, 1)
    prog, *_ = _plan_program(model5, cfg, 1, lams)
    rng = np.random.default_rng(3)
    y1, y2 = rng.normal(size=(2, prog.n_vars))
    for lmi in prog.lmi_constraints:
        F = lmi.evaluate
        resid = F(y1 + y2) - F(y1) - F(y2) + F(np.zeros(prog.n_vars))
        scale = 1 + np.abs(F(y1)).max() + np.abs(F(y2)).max()
        assert np.abs(resid).max() < 1e-9 * scale
    assert AFFINE_TOL <= 1e-9


def test_rejects_bad_multipliers(model5, cost5):
    cfg = config(cost5, h=2)
    with pytest.raises(ValueError):
        solve_rrl(model5, cfg, 1, [0.0, 1.0])
    with pytest.raises(ValueError):
        solve_rrl(model5, cfg, 1, [0.0, -1.0, 1.0])


def test_single_epoch_nom_matches_manual(sys5, cost5):
    data = excitation_data(sys5, seed=5)
    cfg = RRLConfig(EpochSchedule.uniform(100, 1), 2, 0.05, cost5, SIGMA5)
    res = receding_horizon_run(sys5, data, cfg, make_rng(7), "nom")
    model = spectral_model(data, SIGMA5, 0.05)
    pol = nom_policy(model, cost5, SIGMA5).policy
    epoch_rng = make_rng(7).spawn(1)[0]
    tr = rollout(sys5, pol, np.zeros(3), 100, epoch_rng)
    rec = res.epochs[0]
    assert np.allclose(rec.K, pol.K)
    assert rec.empirical_cost == pytest.approx(empirical_cost(tr, cost5).total, rel=1e-12)


@pytest.mark.parametrize("planner", ["rrl", "nom", "greedy"])
def test_trial_properties(sys5, cost5, planner):
    data = excitation_data(sys5, seed=6)
    cfg = config(cost5)
    res = receding_horizon_run(sys5, data, cfg, make_rng(8), planner, seed=8)
    info = res.series("information")
    assert len(res.epochs) == 3
    assert np.all(np.diff(info) >= -1e-9) and res.final_information >= info[-1] - 1e-9
    assert np.all(np.isfinite(res.series("wc_cost_data")))
    # wc_data is T_i times the evaluation on the model built from the data seen so far
    model = spectral_model(data, SIGMA5, 0.05)
    rec = res.epochs[0]
    from rrlqr.simulation import Policy

    ev = evaluate_wc_cost(Policy(np.array(rec.K), np.array(rec.Sigma)), model, cost5, SIGMA5)
    assert rec.wc_cost_data == pytest.approx(100 * ev.wc_cost, rel=1e-5)
    back = TrialResult.from_dict(res.to_dict())
    assert back.to_json() == res.to_json()


def test_fallback_deploys_nom(sys5, cost5, monkeypatch):
    def boom(*a, **k):
        raise SynthesisError("forced")

    monkeypatch.setattr(rrl_mod, "_plan_rrl", boom)
    data = excitation_data(sys5, seed=6)
    cfg = config(cost5, N=2, T=200)
    res = receding_horizon_run(sys5, data, cfg, make_rng(1), "rrl")
    model = spectral_model(data, SIGMA5, 0.05)
    assert res.epochs[0].fallback
    assert np.array_equal(np.array(res.epochs[0].K), nom_policy(model, cost5, SIGMA5).policy.K)
    assert np.array_equal(np.array(res.epochs[0].Sigma), np.zeros((2, 2)))
