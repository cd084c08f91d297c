import numpy as np
import pytest

from rrlqr.baselines import greedy_policy, nom_policy
from rrlqr.estimation import Dataset, UncertainModel, information, spectral_model
from rrlqr.simulation import CostSpec, LinearSystem, make_rng, rollout
from rrlqr.synthesis import evaluate_wc_cost, synthesize_robust

from conftest import A5, B5, SIGMA5


def scalar_greedy_oracle(alpha):
    """Stationary cost with A=0, B=0, K=0, Q=R=1, sigma_w=1: state variance 1 plus input variance alpha^2."""
    return 1.0 + alpha**2


def test_nom_matches_synthesis(model5, cost5):
    nom = nom_policy(model5, cost5, SIGMA5)
    res = synthesize_robust(model5, cost5, SIGMA5)
    assert np.array_equal(nom.policy.K, res.policy.K)
    assert np.array_equal(nom.policy.Sigma, np.zeros((2, 2)))
    assert nom.wc_cost == pytest.approx(res.wc_cost, abs=1e-6)


def test_degenerate_target(model5, cost5):
    nom = nom_policy(model5, cost5, SIGMA5)
    g = greedy_policy(model5, cost5, SIGMA5, nom.wc_cost, nom=nom)
    assert g.alpha == 0.0 and np.array_equal(g.policy.K, nom.policy.K)
    assert np.array_equal(g.policy.Sigma, nom.policy.Sigma)


def test_scalar_oracle():
    m = UncertainModel(np.zeros((1, 1)), np.zeros((1, 1)), 1e8 * np.eye(2), 0.05, 1.0)
    cost = CostSpec(np.eye(1), np.eye(1))
    g = greedy_policy(m, cost, 1.0, 2.0)
    assert not g.saturated
    assert scalar_greedy_oracle(g.alpha) == pytest.approx(2.0, rel=2e-3)
    assert g.alpha == pytest.approx(1.0, rel=2e-3)


def test_matches_target_and_monotone(model5, cost5):
    nom = nom_policy(model5, cost5, SIGMA5)
    out = []
    for f in (1.02, 1.05, 1.1, 1.2, 1.4):
        target = f * nom.wc_cost
        g = greedy_policy(model5, cost5, SIGMA5, target, nom=nom)
        assert not g.saturated
        assert np.array_equal(g.policy.K, nom.policy.K)
        ev = evaluate_wc_cost(g.policy, model5, cost5, SIGMA5).wc_cost
        assert ev == pytest.approx(target, rel=1e-3)
        out.append(g.wc_cost)
    assert all(a <= b for a, b in zip(out, out[1:]))


def test_saturation_flag():
    m = UncertainModel(np.zeros((1, 1)), np.zeros((1, 1)), 1e8 * np.eye(2), 0.05, 1.0)
    g = greedy_policy(m, CostSpec(np.eye(1), np.eye(1)), 1.0, 1e12)
    assert g.saturated and g.alpha == 1e3


def test_greedy_gains_information_over_nom(model5, cost5):
    """Equal-cost-budget comparison after one epoch, median over 50 seeds."""
    sys = LinearSystem(A5, B5, SIGMA5)
    nom = nom_policy(model5, cost5, SIGMA5)
    g = greedy_policy(model5, cost5, SIGMA5, 1.1 * nom.wc_cost, nom=nom)
    gram0 = model5.D * SIGMA5**2 * model5.c_delta

    def info_after(policy, rng):
        tr = rollout(sys, policy, np.zeros(3), 100, rng)
        new = Dataset.from_trajectories([tr])
        return np.linalg.eigvalsh(gram0 + new.gram()).min() / (SIGMA5**2 * model5.c_delta)

    # common random numbers: both policies see the same noise sequence
    diffs = [info_after(g.policy, make_rng(s)) - info_after(nom.policy, make_rng(s)) for s in range(50)]
    assert np.median(diffs) >= 0
