"""Bayesian least-squares identification and credibility regions.

With a flat prior the posterior over theta = vec([A B]) (column stacking) is
Gaussian around the OLS estimate with precision (Gram kron I) / sigma_w^2.
Two regions are built from it: the ellipsoid on theta, and the looser
spectral region {X' D X <= I} on the error matrix X = [Ahat - A, Bhat - B]'
that the robust synthesis works with.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.special import gammainc

from rrlqr.simulation import Trajectory

MEMBERSHIP_TOL = 1e-9


class RankDeficient(ValueError):
    """Regressor Gram matrix is numerically singular (insufficient excitation)."""


@dataclass(frozen=True)
class Dataset:
    """Transition triples (x_t, u_t, x_{t+1}), stored row-wise."""

    x: np.ndarray
    u: np.ndarray
    x_next: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        u = np.asarray(self.u, dtype=float)
        if u.ndim != 2:
            u = u.reshape(len(x), -1) if len(x) else u.reshape(0, 0)
        xn = np.atleast_2d(np.asarray(self.x_next, dtype=float))
        if not (len(x) == len(u) == len(xn)):
            raise ValueError("x, u, x_next must have the same number of rows")
        if xn.shape[1] != x.shape[1]:
            raise ValueError("x and x_next dimensions differ")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "x_next", xn)

    @classmethod
    def empty(cls, n_x: int, n_u: int) -> "Dataset":
        return cls(np.zeros((0, n_x)), np.zeros((0, n_u)), np.zeros((0, n_x)))

    @classmethod
    def from_trajectories(cls, trajs: Iterable[Trajectory]) -> "Dataset":
        parts = [t.triples() for t in trajs]
        if not parts:
            raise ValueError("no trajectories given")
        return cls(*(np.concatenate(p) for p in zip(*parts)))

    def union(self, other: "Dataset") -> "Dataset":
        if self.n_x != other.n_x or self.n_u != other.n_u:
            raise ValueError("cannot merge datasets of different dimensions")
        return Dataset(
            np.concatenate([self.x, other.x]),
            np.concatenate([self.u, other.u]),
            np.concatenate([self.x_next, other.x_next]),
        )

    __or__ = union

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def n_x(self) -> int:
        return self.x.shape[1]

    @property
    def n_u(self) -> int:
        return self.u.shape[1]

    @property
    def regressors(self) -> np.ndarray:
        return np.hstack([self.x, self.u])

    def gram(self) -> np.ndarray:
        Z = self.regressors
        return Z.T @ Z

    # CSV: columns t, x0.., u0..; blank line between trajectories. The final
    # state of each trajectory is written with empty input fields.
    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["t"] + [f"x{i}" for i in range(self.n_x)] + [f"u{j}" for j in range(self.n_u)]
        w.writerow(header)
        if self.n == 0:
            text = buf.getvalue()
            if path is not None:
                Path(path).write_text(text)
            return text
        breaks = [k for k in range(self.n - 1) if not np.array_equal(self.x_next[k], self.x[k + 1])]
        start = 0
        for stop in breaks + [self.n - 1]:
            for t, k in enumerate(range(start, stop + 1)):
                w.writerow([t] + [repr(float(v)) for v in self.x[k]] + [repr(float(v)) for v in self.u[k]])
            w.writerow([stop - start + 1] + [repr(float(v)) for v in self.x_next[stop]] + [""] * self.n_u)
            if stop != self.n - 1:
                buf.write("\n")
            start = stop + 1
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path: str | Path) -> "Dataset":
        return cls.from_csv_text(Path(path).read_text())

    @classmethod
    def from_csv_text(cls, text: str) -> "Dataset":
        lines = text.splitlines()
        header = next(csv.reader([lines[0]]))
        n_x = sum(h.startswith("x") for h in header)
        n_u = sum(h.startswith("u") for h in header)
        blocks: list[list[list[str]]] = [[]]
        for line in lines[1:]:
            if not line.strip():
                if blocks[-1]:
                    blocks.append([])
                continue
            blocks[-1].append(next(csv.reader([line])))
        trajs = []
        for rows in blocks:
            if not rows:
                continue
            states = np.array([[float(v) for v in r[1 : 1 + n_x]] for r in rows])
            inputs = np.array(
                [[float(v) for v in r[1 + n_x : 1 + n_x + n_u]] for r in rows if r[1 + n_x :] and r[1 + n_x] != ""]
            ).reshape(-1, n_u)
            trajs.append(Trajectory(states, inputs))
        if not trajs:
            return cls.empty(n_x, n_u)
        return cls.from_trajectories(trajs)


@dataclass(frozen=True)
class Posterior:
    mu_theta: np.ndarray
    precision: np.ndarray
    n_x: int
    n_u: int

    @property
    def AB(self) -> np.ndarray:
        return self.mu_theta.reshape((self.n_x, self.n_x + self.n_u), order="F")

    @property
    def Ahat(self) -> np.ndarray:
        return self.AB[:, : self.n_x]

    @property
    def Bhat(self) -> np.ndarray:
        return self.AB[:, self.n_x :]


@dataclass(frozen=True)
class UncertainModel:
    """Nominal (Ahat, Bhat) with spectral uncertainty matrix D."""

    Ahat: np.ndarray
    Bhat: np.ndarray
    D: np.ndarray
    delta: float
    c_delta: float

    def __post_init__(self):
        D = np.asarray(self.D, dtype=float)
        if not np.allclose(D, D.T, atol=1e-9 * max(1.0, np.abs(D).max(initial=0.0))):
            raise ValueError("D must be symmetric")
        D = 0.5 * (D + D.T)
        n = self.n_x + self.n_u
        if D.shape != (n, n):
            raise ValueError(f"D has shape {D.shape}, expected {(n, n)}")
        if self.c_delta <= 0:
            raise ValueError("c_delta must be positive")
        if n and np.linalg.eigvalsh(D).min() < -MEMBERSHIP_TOL * max(1.0, np.abs(D).max()):
            raise ValueError("D must be PSD")
        object.__setattr__(self, "Ahat", np.atleast_2d(np.asarray(self.Ahat, dtype=float)))
        object.__setattr__(self, "Bhat", np.atleast_2d(np.asarray(self.Bhat, dtype=float)))
        object.__setattr__(self, "D", D)

    @property
    def n_x(self) -> int:
        return np.atleast_2d(self.Ahat).shape[0]

    @property
    def n_u(self) -> int:
        return np.atleast_2d(self.Bhat).shape[1]

    @property
    def AB(self) -> np.ndarray:
        return np.hstack([self.Ahat, self.Bhat])

    def with_D(self, D: np.ndarray) -> "UncertainModel":
        return UncertainModel(self.Ahat, self.Bhat, D, self.delta, self.c_delta)


def _check_gram(G: np.ndarray) -> None:
    vals = np.linalg.eigvalsh(G)
    if vals.size == 0 or vals.max() <= 0 or vals.min() <= 1e-10 * vals.max():
        raise RankDeficient(
            "regressor Gram matrix is numerically singular; more excitation is needed"
        )


def ols_posterior(data: Dataset, sigma_w: float) -> Posterior:
    if data.n < 1:
        raise RankDeficient("empty dataset")
    if sigma_w <= 0:
        raise ValueError("sigma_w must be positive")
    Z = data.regressors
    G = Z.T @ Z
    _check_gram(G)
    # [A B]' solves the normal equations G [A B]' = Z' X+
    AB_T = np.linalg.solve(G, Z.T @ data.x_next)
    AB = AB_T.T
    precision = np.kron(G, np.eye(data.n_x)) / sigma_w**2
    return Posterior(AB.reshape(-1, order="F"), precision, data.n_x, data.n_u)


def chi2_quantile(dof: int, delta: float, tol: float = 1e-10) -> float:
    """Value c with P(chi2_dof <= c) = 1 - delta, by bisection on the CDF."""
    if dof < 1 or int(dof) != dof:
        raise ValueError("dof must be a positive integer")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    target = 1.0 - delta
    cdf = lambda c: gammainc(dof / 2.0, c / 2.0)  # noqa: E731
    lo, hi = 0.0, float(dof)
    while cdf(hi) < target:
        lo, hi = hi, 2.0 * hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if cdf(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def spectral_model(
    data: Dataset, sigma_w: float, delta: float, c_delta: float | None = None
) -> UncertainModel:
    """OLS estimates plus D = Gram / (sigma_w^2 c_delta).

    ``c_delta`` defaults to the (1 - delta) chi-square quantile with
    n_x^2 + n_x n_u degrees of freedom.
    """
    post = ols_posterior(data, sigma_w)
    if c_delta is None:
        c_delta = chi2_quantile(data.n_x**2 + data.n_x * data.n_u, delta)
    D = data.gram() / (sigma_w**2 * c_delta)
    return UncertainModel(post.Ahat.copy(), post.Bhat.copy(), D, delta, c_delta)


def ellipsoid_contains(post: Posterior, theta, c_delta: float) -> bool:
    d = np.asarray(theta, dtype=float).reshape(-1) - post.mu_theta
    if d.shape != post.mu_theta.shape:
        raise ValueError("theta has the wrong dimension")
    q = d @ post.precision @ d
    return bool(q <= c_delta * (1.0 + MEMBERSHIP_TOL))


def error_matrix(model: UncertainModel, A, B) -> np.ndarray:
    """X = [Ahat - A, Bhat - B]', shape (n_x + n_u, n_x)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape != model.Ahat.shape or B.shape != model.Bhat.shape:
        raise ValueError("A, B shapes do not match the model")
    return np.hstack([model.Ahat - A, model.Bhat - B]).T


def spectral_contains(model: UncertainModel, A, B) -> bool:
    X = error_matrix(model, A, B)
    M = X.T @ model.D @ X
    return bool(np.linalg.eigvalsh(0.5 * (M + M.T)).max() <= 1.0 + MEMBERSHIP_TOL)


def information(model: UncertainModel) -> float:
    """lambda_min(D), i.e. 1 / lambda_max(D^{-1}); 0 when D is singular."""
    vals = np.linalg.eigvalsh(model.D)
    if vals.max() <= 0 or vals.min() <= 1e-12 * vals.max():
        return 0.0
    return float(vals.min())


def sample_spectral_region(
    model: UncertainModel, rng: np.random.Generator, radius: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Draw (A, B) with X' D X <= I from scaled Gaussian directions.

    X = D^{-1/2} U with ||U||_2 = radius; radius ~ U(0, 1] when not given.
    """
    vals, vecs = np.linalg.eigh(model.D)
    if vals.min() <= 0:
        raise ValueError("sampling needs a positive definite D")
    D_inv_half = (vecs / np.sqrt(vals)) @ vecs.T
    U = rng.standard_normal((model.n_x + model.n_u, model.n_x))
    r = rng.uniform(0.0, 1.0) if radius is None else radius
    U *= r / np.linalg.norm(U, 2)
    X = D_inv_half @ U
    AB = model.AB - X.T
    return AB[:, : model.n_x], AB[:, model.n_x :]


__all__ = [
    "Dataset",
    "Posterior",
    "RankDeficient",
    "UncertainModel",
    "chi2_quantile",
    "ellipsoid_contains",
    "error_matrix",
    "information",
    "ols_posterior",
    "sample_spectral_region",
    "spectral_contains",
    "spectral_model",
]
