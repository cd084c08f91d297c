import math

import numpy as np
import pytest
from scipy.integrate import quad

from rrlqr.estimation import (
    Dataset,
    RankDeficient,
    UncertainModel,
    chi2_quantile,
    ellipsoid_contains,
    information,
    ols_posterior,
    sample_spectral_region,
    spectral_contains,
    spectral_model,
)
from rrlqr.simulation import LinearSystem, Policy, make_rng, rollout

from conftest import A5, B5, SIGMA5, excitation_data


def random_dataset(n, n_x=2, n_u=1, seed=0, noise=0.1):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n_x, n_x)) * 0.5
    B = rng.normal(size=(n_x, n_u))
    x = rng.normal(size=(n, n_x))
    u = rng.normal(size=(n, n_u))
    xn = x @ A.T + u @ B.T + noise * rng.normal(size=(n, n_x))
    return Dataset(x, u, xn), A, B


def chi2_oracle(dof, delta):
    """Root of 1 - delta = int_0^c chi2 density, by quadrature + bisection."""
    k = dof / 2.0
    dens = lambda t: t ** (k - 1) * math.exp(-t / 2) / (2**k * math.gamma(k))  # noqa: E731
    lo, hi = 0.0, 100.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if quad(dens, 0, mid, epsabs=1e-13, epsrel=1e-13)[0] < 1 - delta:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_noise_free_interpolation():
    data, A, B = random_dataset(10, noise=0.0)
    post = ols_posterior(data, 1.0)
    assert np.allclose(post.Ahat, A, atol=1e-8) and np.allclose(post.Bhat, B, atol=1e-8)


def test_orthogonal_regressors_scalar():
    data = Dataset(np.array([[1.0], [0.0]]), np.array([[0.0], [1.0]]), np.array([[0.8], [0.3]]))
    post = ols_posterior(data, 1.0)
    assert post.Ahat[0, 0] == pytest.approx(0.8) and post.Bhat[0, 0] == pytest.approx(0.3)


def test_posterior_mean_matches_pinv_oracle():
    data, _, _ = random_dataset(200, n_x=3, n_u=2, seed=4)
    Z = np.hstack([data.x, data.u])
    AB = (np.linalg.pinv(Z) @ data.x_next).T
    post = ols_posterior(data, 0.5)
    assert np.allclose(post.AB, AB, atol=1e-8)


def test_precision_elementwise():
    # theta stacks [A B] column by column: theta[r + n_x c] = AB[r, c]
    data, _, _ = random_dataset(30, n_x=2, n_u=1, seed=2)
    s = 0.7
    post = ols_posterior(data, s)
    Z = np.hstack([data.x, data.u])
    n_x, p = 2, 3
    P = np.zeros((n_x * p, n_x * p))
    for c1 in range(p):
        for r1 in range(n_x):
            for c2 in range(p):
                for r2 in range(n_x):
                    if r1 == r2:
                        P[r1 + n_x * c1, r2 + n_x * c2] = np.dot(Z[:, c1], Z[:, c2]) / s**2
    assert np.allclose(post.precision, P, rtol=1e-12, atol=1e-12)


def test_rank_deficient():
    data = Dataset(np.ones((5, 1)), np.ones((5, 1)), np.ones((5, 1)))
    with pytest.raises(RankDeficient):
        ols_posterior(data, 1.0)
    with pytest.raises(RankDeficient):
        ols_posterior(Dataset.empty(2, 1), 1.0)


@pytest.mark.parametrize("delta", [0.05, 0.5])
def test_chi2_closed_form_dof2(delta):
    assert chi2_quantile(2, delta) == pytest.approx(-2 * math.log(delta), abs=1e-9)


def test_chi2_quadrature_dof12():
    assert chi2_quantile(12, 0.05) == pytest.approx(chi2_oracle(12, 0.05), abs=1e-6)


def test_chi2_monotone_in_confidence():
    vals = [chi2_quantile(6, d) for d in (0.5, 0.2, 0.1, 0.05, 0.01)]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_single_record_D():
    data = Dataset(np.array([[1.0, 0.0]]), np.zeros((1, 1)), np.zeros((1, 2)))
    # one record cannot identify; build D directly through the Gram path
    D = data.gram() / (1.0 * 1.0)
    assert np.array_equal(D, np.diag([1.0, 0.0, 0.0]))


def test_D_is_gram_over_sigma2_c_and_doubles():
    data, _, _ = random_dataset(40, seed=1)
    m = spectral_model(data, 0.5, 0.05)
    assert np.allclose(m.D, data.gram() / (0.25 * chi2_quantile(6, 0.05)))
    m2 = spectral_model(data | data, 0.5, 0.05)
    assert np.allclose(m2.D, 2 * m.D)
    m3 = spectral_model(data, 1.0, 0.05, c_delta=1.0)
    assert np.allclose(m3.D, data.gram())


def test_information_scales_linearly_with_rollouts():
    sys = LinearSystem(A5, B5, SIGMA5)
    small = information(spectral_model(excitation_data(sys, 200, seed=3), SIGMA5, 0.05))
    big = information(spectral_model(excitation_data(sys, 1000, seed=4), SIGMA5, 0.05))
    assert 0.8 * 5 <= big / small <= 1.2 * 5


def test_ellipsoid_center_boundary_outside():
    data, _, _ = random_dataset(20, seed=7)
    post = ols_posterior(data, 1.0)
    c = 3.0
    assert ellipsoid_contains(post, post.mu_theta, c)
    v = np.random.default_rng(0).normal(size=post.mu_theta.size)
    q = v @ post.precision @ v
    assert ellipsoid_contains(post, post.mu_theta + v * math.sqrt(c / q), c)
    assert not ellipsoid_contains(post, post.mu_theta + v * math.sqrt(2 * c / q), c)


def test_spectral_contains_examples():
    m = UncertainModel(np.zeros((1, 1)), np.zeros((1, 1)), np.eye(2), 0.05, 1.0)
    assert spectral_contains(m, np.zeros((1, 1)), np.zeros((1, 1)))
    assert not spectral_contains(m, np.array([[2.0]]), np.zeros((1, 1)))


def test_information_examples():
    mk = lambda D: UncertainModel(np.zeros((1, 1)), np.zeros((1, 1)), D, 0.05, 1.0)  # noqa: E731
    assert information(mk(np.diag([2.0, 3.0]))) == 2.0
    assert information(mk(np.eye(2))) == 1.0
    assert information(mk(np.diag([1.0, 0.0]))) == 0.0


def test_sampled_points_lie_in_region(model5):
    rng = make_rng(0)
    for _ in range(50):
        A, B = sample_spectral_region(model5, rng, radius=1.0)
        assert spectral_contains(model5, A, B)


def test_csv_round_trip(tmp_path):
    sys = LinearSystem(A5, B5, SIGMA5)
    rng = make_rng(9)
    pol = Policy(np.zeros((2, 3)), np.eye(2))
    trajs = [rollout(sys, pol, np.zeros(3), 4, r) for r in rng.spawn(3)]
    data = Dataset.from_trajectories(trajs)
    path = tmp_path / "d.csv"
    data.to_csv(path)
    back = Dataset.from_csv(path)
    assert np.array_equal(back.x, data.x) and np.array_equal(back.u, data.u)
    assert np.array_equal(back.x_next, data.x_next)
