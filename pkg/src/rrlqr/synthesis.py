"""Worst-case infinite-horizon LQR over a spectral uncertainty region.

The stationary covariance of [x; u] under u = Kx + Sigma^{1/2} e is

    Xi = [[W, W K'], [K W, K W K' + Sigma]],

and the Lyapunov inequality W >= [A B] Xi [A B]' + sigma_w^2 I is required
for every (A, B) with X' D X <= I, X = [Ahat - A, Bhat - B]'. An
S-procedure multiplier lam turns that robust constraint into the single LMI
assembled by :func:`build_S`. Treating Xi as a free PSD variable gives a
convex synthesis problem; the policy is recovered from its blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rrlqr.conic import ConicProgram, ConicSolution, Status, solve
from rrlqr.estimation import UncertainModel
from rrlqr.simulation import CostSpec, Policy

SIGMA_CLAMP_TOL = 1e-8


class SynthesisError(RuntimeError):
    pass


class NoRobustlyStabilizingPolicy(SynthesisError):
    """The robust synthesis SDP is infeasible: uncertainty is too large."""


class PolicyNotRobustlyStabilizing(SynthesisError):
    """A fixed policy cannot be certified over the whole uncertainty region."""


class SolverFailure(SynthesisError):
    """Backend reported numerical trouble, or the returned point failed re-verification."""


class NotStabilizable(SynthesisError):
    pass


@dataclass(frozen=True)
class CovarianceBlock:
    W: np.ndarray
    Z: np.ndarray
    Y: np.ndarray

    @property
    def n_x(self) -> int:
        return self.W.shape[0]

    @property
    def xi(self) -> np.ndarray:
        return np.block([[self.W, self.Z], [self.Z.T, self.Y]])

    @classmethod
    def from_matrix(cls, xi: np.ndarray, n_x: int) -> "CovarianceBlock":
        xi = 0.5 * (xi + xi.T)
        return cls(xi[:n_x, :n_x].copy(), xi[:n_x, n_x:].copy(), xi[n_x:, n_x:].copy())

    @classmethod
    def from_policy(cls, W: np.ndarray, policy: Policy) -> "CovarianceBlock":
        K = policy.K
        return cls(W, W @ K.T, K @ W @ K.T + policy.Sigma)

    def policy(self) -> Policy:
        """K = Z' W^{-1}, Sigma = Y - Z' W^{-1} Z (clamped when within tolerance)."""
        if np.linalg.eigvalsh(self.W).min() <= 1e-10:
            raise SolverFailure("stationary state covariance W is not positive definite")
        K = np.linalg.solve(self.W, self.Z).T
        Sigma = self.Y - K @ self.Z
        Sigma = 0.5 * (Sigma + Sigma.T)
        vals, vecs = np.linalg.eigh(Sigma)
        if vals.min() < -SIGMA_CLAMP_TOL * max(1.0, np.abs(self.Y).max()):
            raise SolverFailure(f"recovered Sigma has eigenvalue {vals.min():.3e}")
        Sigma = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
        return Policy(K, Sigma)


@dataclass(frozen=True)
class SynthesisResult:
    policy: Policy
    xi: CovarianceBlock
    lam: float
    wc_cost: float


@dataclass(frozen=True)
class PolicyEvaluation:
    """Worst-case stationary cost of a fixed policy and its certificate."""

    wc_cost: float
    lam: float
    xi: CovarianceBlock

    def __iter__(self):
        # (cost, multiplier) unpacking
        return iter((self.wc_cost, self.lam))


def build_S(lam: float, xi, Ahat, Bhat, D, sigma_w: float) -> np.ndarray:
    """Robust Lyapunov LMI of size 3 n_x + n_u; PSD iff the inequality holds over the region."""
    Xi = xi.xi if isinstance(xi, CovarianceBlock) else np.asarray(xi, dtype=float)
    Ahat = np.atleast_2d(Ahat)
    Bhat = np.atleast_2d(Bhat)
    AB = np.hstack([Ahat, Bhat])
    n_x, p = AB.shape
    if Xi.shape != (p, p) or np.shape(D) != (p, p):
        raise ValueError(f"Xi and D must be {p}x{p}; got {Xi.shape} and {np.shape(D)}")
    W = Xi[:n_x, :n_x]
    I = np.eye(n_x)
    ABXi = AB @ Xi
    return np.block(
        [
            [I, sigma_w * I, np.zeros((n_x, p))],
            [sigma_w * I, W - ABXi @ AB.T - lam * I, ABXi],
            [np.zeros((p, n_x)), ABXi.T, lam * np.asarray(D) - Xi],
        ]
    )


def _lyapunov_residual(xi: np.ndarray, A, B, sigma_w: float) -> np.ndarray:
    n_x = A.shape[0]
    AB = np.hstack([A, B])
    return xi[:n_x, :n_x] - AB @ xi @ AB.T - sigma_w**2 * np.eye(n_x)


def lyapunov_min_eig(xi, A, B, sigma_w: float) -> float:
    """min eig of W - [A B] Xi [A B]' - sigma_w^2 I."""
    Xi = xi.xi if isinstance(xi, CovarianceBlock) else np.asarray(xi)
    R = _lyapunov_residual(Xi, np.atleast_2d(A), np.atleast_2d(B), sigma_w)
    return float(np.linalg.eigvalsh(0.5 * (R + R.T)).min())


def _raise_for(sol: ConicSolution, infeasible: type[SynthesisError], what: str) -> None:
    if sol.status is Status.INFEASIBLE:
        raise infeasible(f"{what}: {sol.message}")
    if sol.status is not Status.OPTIMAL:
        raise SolverFailure(f"{what}: {sol.message}")


def synthesize_robust(
    model: UncertainModel,
    cost: CostSpec,
    sigma_w: float,
    feas_tol: float | None = None,
    opt_tol: float | None = None,
) -> SynthesisResult:
    """Minimize the worst-case stationary cost over all static policies."""
    n_x, p = model.n_x, model.n_x + model.n_u
    H = cost.weight
    prog = ConicProgram()
    prog.add_matrix_var("xi", p, psd=True)
    prog.add_scalar_var("lam", nonneg=True)
    prog.set_objective(lambda v: np.trace(H @ v["xi"]), ["xi"])
    prog.add_lmi(
        lambda v: build_S(v["lam"], v["xi"], model.Ahat, model.Bhat, model.D, sigma_w),
        label="robust lyapunov",
    )
    sol = solve(prog, feas_tol, opt_tol)
    _raise_for(sol, NoRobustlyStabilizingPolicy, "robust synthesis")
    block = CovarianceBlock.from_matrix(sol["xi"], n_x)
    return SynthesisResult(block.policy(), block, max(sol["lam"], 0.0), sol.objective_value)


def evaluate_wc_cost(
    policy: Policy,
    model: UncertainModel,
    cost: CostSpec,
    sigma_w: float,
    feas_tol: float | None = None,
    opt_tol: float | None = None,
) -> PolicyEvaluation:
    """Worst-case stationary cost bound for a fixed policy, over (W, lam)."""
    n_x = model.n_x
    H = cost.weight
    K, Sigma = policy.K, policy.Sigma
    if K.shape != (model.n_u, n_x):
        raise ValueError(f"K has shape {K.shape}, expected {(model.n_u, n_x)}")

    def xi_of(W):
        return np.block([[W, W @ K.T], [K @ W, K @ W @ K.T + Sigma]])

    prog = ConicProgram()
    prog.add_matrix_var("W", n_x, psd=True)
    prog.add_scalar_var("lam", nonneg=True)
    prog.set_objective(lambda v: np.trace(H @ xi_of(v["W"])), ["W"])
    prog.add_lmi(
        lambda v: build_S(v["lam"], xi_of(v["W"]), model.Ahat, model.Bhat, model.D, sigma_w),
        label="robust lyapunov (fixed policy)",
    )
    sol = solve(prog, feas_tol, opt_tol)
    _raise_for(sol, PolicyNotRobustlyStabilizing, "policy evaluation")
    W = 0.5 * (sol["W"] + sol["W"].T)
    return PolicyEvaluation(sol.objective_value, max(sol["lam"], 0.0), CovarianceBlock.from_policy(W, policy))


def lqr_riccati(A, B, Q, R, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Infinite-horizon discrete LQR gain by Riccati iteration, as u = K x."""
    A, B = np.atleast_2d(A).astype(float), np.atleast_2d(B).astype(float)
    Q, R = np.atleast_2d(Q).astype(float), np.atleast_2d(R).astype(float)
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        K = -np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ (A + B @ K)
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            break
        if np.abs(P_next - P).max() <= tol * max(1.0, np.abs(P_next).max()):
            BtP = B.T @ P_next
            return -np.linalg.solve(R + BtP @ B, BtP @ A)
        P = P_next
    raise NotStabilizable("Riccati iteration did not converge")


def riccati_cost(A, B, Q, R, sigma_w: float) -> float:
    """Stationary average cost of the LQR gain under w ~ N(0, sigma_w^2 I)."""
    K = lqr_riccati(A, B, Q, R)
    return stationary_cost(A, B, K, np.zeros((K.shape[0], K.shape[0])), Q, R, sigma_w)


def stationary_cost(A, B, K, Sigma, Q, R, sigma_w: float) -> float:
    """tr(Q W) + tr(R (K W K' + Sigma)) with W the exact closed-loop covariance."""
    from scipy.linalg import solve_discrete_lyapunov

    A, B, K = np.atleast_2d(A), np.atleast_2d(B), np.atleast_2d(K)
    Acl = A + B @ K
    if np.abs(np.linalg.eigvals(Acl)).max() >= 1.0:
        return float("inf")
    W = solve_discrete_lyapunov(Acl, B @ Sigma @ B.T + sigma_w**2 * np.eye(A.shape[0]))
    return float(np.trace(Q @ W) + np.trace(R @ (K @ W @ K.T + Sigma)))
