"""Exact simulation of x_{t+1} = A x_t + B u_t + w_t under static-gain policies.

Policies have the form u = K x + Sigma^{1/2} e with e ~ N(0, I). Noise for
the process (w) and the excitation (e) come from two child streams spawned
from the generator handed to :func:`rollout`, so changing the exploration
covariance never perturbs the process-noise sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PSD_CLAMP_TOL = 1e-9


class InvalidCovariance(ValueError):
    """Covariance matrix is not symmetric PSD within tolerance."""


def _as_matrix(a, name: str) -> np.ndarray:
    m = np.atleast_2d(np.asarray(a, dtype=float))
    if m.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got shape {m.shape}")
    return m


def check_psd(M: np.ndarray, name: str, tol: float = PSD_CLAMP_TOL) -> None:
    if M.shape[0] != M.shape[1]:
        raise InvalidCovariance(f"{name} must be square, got {M.shape}")
    if not np.allclose(M, M.T, atol=1e-10, rtol=0.0):
        raise InvalidCovariance(f"{name} is not symmetric")
    if M.size and np.linalg.eigvalsh(M).min() < -tol:
        raise InvalidCovariance(
            f"{name} has eigenvalue {np.linalg.eigvalsh(M).min():.3e} < {-tol:.0e}"
        )


def psd_sqrt(M: np.ndarray, tol: float = PSD_CLAMP_TOL) -> np.ndarray:
    """Symmetric square root of a PSD matrix; eigenvalues in [-tol, 0) are clamped."""
    M = 0.5 * (M + M.T)
    vals, vecs = np.linalg.eigh(M)
    if vals.size and vals.min() < -tol:
        raise InvalidCovariance(f"eigenvalue {vals.min():.3e} below -{tol:.0e}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


@dataclass(frozen=True)
class LinearSystem:
    A: np.ndarray
    B: np.ndarray
    sigma_w: float

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ValueError(f"B has {B.shape[0]} rows, A has {A.shape[0]}")
        if self.sigma_w < 0:
            raise ValueError("sigma_w must be nonnegative")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "sigma_w", float(self.sigma_w))

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class Policy:
    """Static feedback gain ``K`` plus exploration covariance ``Sigma``."""

    K: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        K = _as_matrix(self.K, "K")
        Sigma = _as_matrix(self.Sigma, "Sigma")
        if Sigma.shape != (K.shape[0], K.shape[0]):
            raise ValueError(f"Sigma shape {Sigma.shape} does not match K {K.shape}")
        check_psd(Sigma, "Sigma")
        Sigma = 0.5 * (Sigma + Sigma.T)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "Sigma", Sigma)
        object.__setattr__(self, "_root", psd_sqrt(Sigma))

    @classmethod
    def deterministic(cls, K) -> "Policy":
        K = _as_matrix(K, "K")
        return cls(K, np.zeros((K.shape[0], K.shape[0])))

    @property
    def sigma_root(self) -> np.ndarray:
        return self._root

    @property
    def n_u(self) -> int:
        return self.K.shape[0]

    @property
    def n_x(self) -> int:
        return self.K.shape[1]


@dataclass
class Trajectory:
    """States x_0..x_n and inputs u_0..u_{n-1}; triple t is (x_t, u_t, x_{t+1})."""

    states: np.ndarray
    inputs: np.ndarray

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.inputs = np.asarray(self.inputs, dtype=float)
        if self.inputs.ndim == 1:
            self.inputs = self.inputs.reshape(len(self.inputs), -1)
        extra = len(self.states) - len(self.inputs)
        if extra not in (0, 1):
            raise ValueError(
                f"{len(self.states)} states cannot align with {len(self.inputs)} inputs"
            )

    @property
    def transitions(self) -> int:
        return len(self.states) - 1

    def triples(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = self.transitions
        return self.states[:n], self.inputs[:n], self.states[1 : n + 1]


@dataclass(frozen=True)
class EpochSchedule:
    """Epoch boundaries tau_0 = 0 < tau_1 < ... < tau_N = T."""

    boundaries: tuple[int, ...]

    def __post_init__(self):
        b = tuple(int(v) for v in self.boundaries)
        if len(b) < 2 or b[0] != 0:
            raise ValueError("boundaries must start at 0 and contain at least one epoch")
        if any(b1 <= b0 for b0, b1 in zip(b, b[1:])):
            raise ValueError(f"boundaries must be strictly increasing: {b}")
        object.__setattr__(self, "boundaries", b)

    @classmethod
    def uniform(cls, T: int, N: int) -> "EpochSchedule":
        if T % N:
            raise ValueError(f"T={T} is not divisible into N={N} equal epochs")
        return cls(tuple(range(0, T + 1, T // N)))

    @property
    def N(self) -> int:
        return len(self.boundaries) - 1

    @property
    def T(self) -> int:
        return self.boundaries[-1]

    @property
    def durations(self) -> list[int]:
        b = self.boundaries
        return [b1 - b0 for b0, b1 in zip(b, b[1:])]


@dataclass(frozen=True)
class CostSpec:
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = _as_matrix(self.Q, "Q")
        R = _as_matrix(self.R, "R")
        for M, name in ((Q, "Q"), (R, "R")):
            try:
                check_psd(M, name)
            except InvalidCovariance as exc:
                raise ValueError(str(exc)) from None
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    @property
    def weight(self) -> np.ndarray:
        """blkdiag(Q, R)."""
        nx, nu = self.Q.shape[0], self.R.shape[0]
        H = np.zeros((nx + nu, nx + nu))
        H[:nx, :nx] = self.Q
        H[nx:, nx:] = self.R
        return H


def apply_policy(policy: Policy, x, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != policy.n_x:
        raise ValueError(f"state has dimension {x.shape[0]}, policy expects {policy.n_x}")
    e = rng.standard_normal(policy.n_u)
    return policy.K @ x + policy.sigma_root @ e


def step(sys: LinearSystem, x, u, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.shape[0] != sys.n_x or u.shape[0] != sys.n_u:
        raise ValueError(
            f"expected x in R^{sys.n_x}, u in R^{sys.n_u}; got {x.shape[0]}, {u.shape[0]}"
        )
    w = sys.sigma_w * rng.standard_normal(sys.n_x)
    return sys.A @ x + sys.B @ u + w


def rollout(
    sys: LinearSystem,
    policy: Policy,
    x0,
    steps: int,
    rng: np.random.Generator,
) -> Trajectory:
    """Apply ``policy`` to ``sys`` for ``steps`` transitions starting at ``x0``."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if policy.n_x != sys.n_x or policy.n_u != sys.n_u:
        raise ValueError("policy dimensions do not match system")
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.shape[0] != sys.n_x:
        raise ValueError(f"x0 has dimension {x.shape[0]}, system has {sys.n_x}")
    w_rng, e_rng = rng.spawn(2)
    w = sys.sigma_w * w_rng.standard_normal((steps, sys.n_x))
    e = e_rng.standard_normal((steps, sys.n_u))
    exc = e @ policy.sigma_root.T

    states = np.empty((steps + 1, sys.n_x))
    inputs = np.empty((steps, sys.n_u))
    states[0] = x
    A, B, K = sys.A, sys.B, policy.K
    for t in range(steps):
        u = K @ x + exc[t]
        x = A @ x + B @ u + w[t]
        inputs[t] = u
        states[t + 1] = x
    return Trajectory(states, inputs)


def epoch_index(schedule: EpochSchedule, t: int) -> int:
    """Smallest epoch i with t <= tau_i."""
    if not 0 < t <= schedule.T:
        raise ValueError(f"t={t} outside (0, {schedule.T}]")
    return int(np.searchsorted(schedule.boundaries, t, side="left"))


@dataclass
class CostBreakdown:
    per_step: np.ndarray
    total: float
    per_epoch: list[float] = field(default_factory=list)


def empirical_cost(
    traj: Trajectory, cost: CostSpec, schedule: EpochSchedule | None = None
) -> CostBreakdown:
    """Per-step x'Qx + u'Ru for every state that has an input.

    With a schedule, step t (1-indexed) is attributed to epoch
    ``epoch_index(schedule, t)`` exactly once.
    """
    n = len(traj.inputs)
    X = traj.states[:n]
    U = traj.inputs
    if X.shape[1] != cost.Q.shape[0] or U.shape[1] != cost.R.shape[0]:
        raise ValueError("trajectory dimensions do not match cost matrices")
    per_step = np.einsum("ti,ij,tj->t", X, cost.Q, X) + np.einsum(
        "ti,ij,tj->t", U, cost.R, U
    )
    out = CostBreakdown(per_step=per_step, total=float(per_step.sum()))
    if schedule is not None:
        if schedule.T != n:
            raise ValueError(f"schedule covers {schedule.T} steps, trajectory has {n}")
        b = schedule.boundaries
        out.per_epoch = [float(per_step[b0:b1].sum()) for b0, b1 in zip(b, b[1:])]
    return out


def make_rng(seed: int | Sequence[int] | np.random.SeedSequence) -> np.random.Generator:
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.PCG64(seed))
