"""Linear-objective programs over PSD and nonnegative cones.

A :class:`ConicProgram` stacks every declared variable into one flat vector
``y`` (symmetric matrices contribute their upper triangle) and stores each
LMI in the SDPA form ``F0 + sum_k y_k F_k >= 0``. Constraints are given as
ordinary numpy functions of the variable values; the coefficient matrices
are extracted by evaluation and the function is checked to be affine.

Backends only see ``(c, F0, F_k)`` data, so any interior-point solver can sit
behind :class:`Backend`. Solutions are re-verified by eigenvalue evaluation
rather than trusting the backend's status.
"""

from __future__ import annotations

import enum
import functools
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np
import scipy.sparse as sp

DEFAULT_FEAS_TOL = 1e-7
DEFAULT_OPT_TOL = 1e-7
AFFINE_TOL = 1e-9

Values = Mapping[str, np.ndarray]


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    NUMERICAL_TROUBLE = "NumericalTrouble"


def tolerances() -> tuple[float, float]:
    """(feas_tol, opt_tol), overridable through ``RRL_SOLVER_TOL``."""
    raw = os.environ.get("RRL_SOLVER_TOL")
    if not raw:
        return DEFAULT_FEAS_TOL, DEFAULT_OPT_TOL
    parts = [float(p) for p in raw.split(",")]
    return parts[0], parts[-1]


@functools.lru_cache(maxsize=None)
def _triu(dim: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(dim)


@dataclass(frozen=True)
class MatrixVar:
    name: str
    dim: int
    psd: bool
    offset: int

    @property
    def size(self) -> int:
        return self.dim * (self.dim + 1) // 2


@dataclass(frozen=True)
class ScalarVar:
    name: str
    nonneg: bool
    offset: int

    size = 1


@dataclass
class LMI:
    """``F0 + sum_k y_k F[k] >= 0``; ``F`` has shape (m, n, n)."""

    F0: np.ndarray
    F: np.ndarray
    label: str = ""

    @property
    def dim(self) -> int:
        return self.F0.shape[0]

    def evaluate(self, y: np.ndarray) -> np.ndarray:
        return self.F0 + np.tensordot(y, self.F, axes=1)


@dataclass
class ConicProgram:
    matrix_vars: list[MatrixVar] = field(default_factory=list)
    scalar_vars: list[ScalarVar] = field(default_factory=list)
    c: np.ndarray = field(default_factory=lambda: np.zeros(0))
    c0: float = 0.0
    lmi_constraints: list[LMI] = field(default_factory=list)
    _order: list = field(default_factory=list, repr=False)

    @property
    def n_vars(self) -> int:
        return sum(v.size for v in self._order)

    def _check_name(self, name: str) -> None:
        if self.lmi_constraints or self.c.size:
            raise ValueError("declare all variables before the objective and constraints")
        if any(v.name == name for v in self._order):
            raise ValueError(f"variable {name!r} already declared")

    def add_matrix_var(self, name: str, dim: int, psd: bool = False) -> MatrixVar:
        self._check_name(name)
        v = MatrixVar(name, int(dim), psd, self.n_vars)
        self.matrix_vars.append(v)
        self._order.append(v)
        return v

    def add_scalar_var(self, name: str, nonneg: bool = False) -> ScalarVar:
        self._check_name(name)
        v = ScalarVar(name, nonneg, self.n_vars)
        self.scalar_vars.append(v)
        self._order.append(v)
        return v

    def variable(self, name: str):
        for v in self._order:
            if v.name == name:
                return v
        raise KeyError(f"undeclared variable {name!r}")

    def unpack(self, y: np.ndarray, names: Sequence[str] | None = None) -> dict[str, np.ndarray | float]:
        out: dict[str, np.ndarray | float] = {}
        vs = self._order if names is None else [self.variable(n) for n in names]
        for v in vs:
            if isinstance(v, ScalarVar):
                out[v.name] = float(y[v.offset])
            else:
                rows, cols = _triu(v.dim)
                M = np.empty((v.dim, v.dim))
                vals = y[v.offset : v.offset + v.size]
                M[rows, cols] = vals
                M[cols, rows] = vals
                out[v.name] = M
        return out

    def _coords(self, names: Sequence[str] | None) -> np.ndarray:
        vs = self._order if names is None else [self.variable(n) for n in names]
        return np.concatenate([np.arange(v.offset, v.offset + v.size) for v in vs]) if vs else np.zeros(0, int)

    def _extract(self, fn: Callable[[Values], np.ndarray], names: Sequence[str] | None):
        """Coefficients of an affine map from the flat vector to arrays."""
        m = self.n_vars
        y = np.zeros(m)
        base = np.asarray(fn(self.unpack(y, names)), dtype=float)
        coeffs = np.zeros((m,) + base.shape)
        for k in self._coords(names):
            y[k] = 1.0
            coeffs[k] = np.asarray(fn(self.unpack(y, names)), dtype=float) - base
            y[k] = 0.0
        # one random probe catches non-affine expressions and undeclared reads
        rng = np.random.default_rng(12345)
        probe = rng.standard_normal(m)
        got = np.asarray(fn(self.unpack(probe, names)), dtype=float)
        want = base + np.tensordot(probe, coeffs, axes=1)
        scale = 1.0 + np.abs(base).max(initial=0.0) + np.abs(coeffs).max(initial=0.0) * np.abs(probe).sum()
        if np.abs(got - want).max(initial=0.0) > AFFINE_TOL * scale:
            raise ValueError("expression is not affine in the declared variables it reads")
        return base, coeffs

    def set_objective(self, fn: Callable[[Values], float], variables: Sequence[str] | None = None) -> None:
        """Minimize ``fn`` (must be affine in the variable values)."""
        base, coeffs = self._extract(lambda v: np.array(fn(v)), variables)
        self.c = coeffs
        self.c0 = float(base)

    def add_lmi(
        self,
        fn: Callable[[Values], np.ndarray],
        variables: Sequence[str] | None = None,
        label: str = "",
    ) -> LMI:
        """Require ``fn(values) >= 0`` in the PSD sense.

        ``variables`` lists the names ``fn`` reads; leaving it out scans all of
        them, which is slower but always correct.
        """
        F0, F = self._extract(fn, variables)
        if F0.ndim != 2 or F0.shape[0] != F0.shape[1]:
            raise ValueError("LMI expression must be a square matrix")
        tol = AFFINE_TOL * (1.0 + np.abs(F0).max(initial=0.0))
        if np.abs(F0 - F0.T).max(initial=0.0) > tol or np.abs(F - F.transpose(0, 2, 1)).max(initial=0.0) > tol:
            raise ValueError(f"LMI {label!r} is not symmetric")
        lmi = LMI(0.5 * (F0 + F0.T), 0.5 * (F + F.transpose(0, 2, 1)), label)
        self.lmi_constraints.append(lmi)
        return lmi

    def cone_constraints(self) -> list[LMI]:
        """Declared LMIs plus the implicit PSD / nonnegativity of variables."""
        out = list(self.lmi_constraints)
        m = self.n_vars
        for v in self._order:
            if isinstance(v, MatrixVar) and v.psd:
                F = np.zeros((m, v.dim, v.dim))
                for k, (i, j) in enumerate(zip(*np.triu_indices(v.dim))):
                    F[v.offset + k, i, j] = F[v.offset + k, j, i] = 1.0
                out.append(LMI(np.zeros((v.dim, v.dim)), F, f"{v.name} psd"))
            elif isinstance(v, ScalarVar) and v.nonneg:
                F = np.zeros((m, 1, 1))
                F[v.offset, 0, 0] = 1.0
                out.append(LMI(np.zeros((1, 1)), F, f"{v.name} >= 0"))
        return out

    def objective(self, y: np.ndarray) -> float:
        return float(self.c @ y + self.c0)

    def min_eigenvalues(self, y: np.ndarray) -> list[float]:
        return [float(np.linalg.eigvalsh(c.evaluate(y)).min()) for c in self.cone_constraints()]

    def to_sdpa(self, path: str | Path | None = None) -> str:
        """Sparse SDPA text (min c'y s.t. sum_k y_k F_k - F0' >= 0 with F0' = -F0)."""
        cones = self.cone_constraints()
        lines = [f"{self.n_vars}", f"{len(cones)}", " ".join(str(c.dim) for c in cones)]
        lines.append(" ".join(repr(float(v)) for v in self.c))
        for b, cone in enumerate(cones, start=1):
            mats = [(-cone.F0, 0)] + [(cone.F[k], k + 1) for k in range(self.n_vars)]
            for M, matno in mats:
                for i, j in zip(*np.nonzero(np.triu(M))):
                    lines.append(f"{matno} {b} {i + 1} {j + 1} {M[i, j]!r}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


@dataclass
class ConicSolution:
    status: Status
    objective_value: float
    assignments: dict[str, np.ndarray | float]
    y: np.ndarray | None = None
    min_eig: float = float("nan")
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL

    def __getitem__(self, name: str):
        return self.assignments[name]


class Backend(Protocol):
    """Adapter contract: return (status, y) for ``prog``; y may be None."""

    def solve_raw(
        self, prog: ConicProgram, feas_tol: float, opt_tol: float
    ) -> tuple[Status, np.ndarray | None, str]: ...


_SQRT2 = np.sqrt(2.0)


def _svec(M: np.ndarray) -> np.ndarray:
    """Column-major upper triangle, off-diagonals scaled by sqrt(2)."""
    n = M.shape[-1]
    col, row = np.tril_indices(n)  # tril of M' walks M's upper triangle column by column
    scale = np.where(row == col, 1.0, _SQRT2)
    return M[..., row, col] * scale


class ClarabelBackend:
    """Direct adapter to Clarabel's PSD-triangle cone."""

    def __init__(self, max_iter: int = 200):
        self.max_iter = max_iter

    def solve_raw(self, prog, feas_tol, opt_tol):
        import clarabel

        m = prog.n_vars
        A_blocks, b_blocks, cones = [], [], []
        for cone in prog.cone_constraints():
            if cone.dim == 1:
                A_blocks.append(-cone.F[:, 0, 0].reshape(1, m))
                b_blocks.append(cone.F0.reshape(1))
                cones.append(clarabel.NonnegativeConeT(1))
            else:
                A_blocks.append(-_svec(cone.F).T)
                b_blocks.append(_svec(cone.F0))
                cones.append(clarabel.PSDTriangleConeT(cone.dim))
        A = sp.csc_matrix(np.vstack(A_blocks))
        b = np.concatenate(b_blocks)
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.max_iter = self.max_iter
        settings.tol_gap_abs = opt_tol
        settings.tol_gap_rel = opt_tol
        # interior-point residuals must sit well inside the independent re-check
        settings.tol_feas = max(1e-3 * feas_tol, 1e-12)
        settings.max_threads = 1
        solver = clarabel.DefaultSolver(sp.csc_matrix((m, m)), np.asarray(prog.c, float), A, b, cones, settings)
        sol = solver.solve()
        name = str(sol.status)
        if name in ("Solved", "AlmostSolved"):
            return Status.OPTIMAL, np.asarray(sol.x), name
        if "Infeasible" in name:
            return Status.INFEASIBLE, None, name
        y = np.asarray(sol.x) if sol.x is not None and len(sol.x) == m else None
        return Status.NUMERICAL_TROUBLE, y, name


class CvxoptBackend:
    """Adapter to ``cvxopt.solvers.sdp``."""

    def solve_raw(self, prog, feas_tol, opt_tol):
        from cvxopt import matrix, solvers

        m = prog.n_vars
        Gl_rows, hl, Gs, hs = [], [], [], []
        for cone in prog.cone_constraints():
            if cone.dim == 1:
                Gl_rows.append(-cone.F[:, 0, 0])
                hl.append(cone.F0[0, 0])
            else:
                n = cone.dim
                Gs.append(matrix(-cone.F.transpose(0, 2, 1).reshape(m, n * n).T.copy()))
                hs.append(matrix(cone.F0.copy()))
        kwargs = {}
        if Gl_rows:
            kwargs["Gl"] = matrix(np.array(Gl_rows))
            kwargs["hl"] = matrix(np.array(hl, dtype=float))
        options = {"show_progress": False, "abstol": opt_tol, "reltol": opt_tol, "feastol": max(1e-3 * feas_tol, 1e-12), "maxiters": 200}
        sol = solvers.sdp(matrix(np.asarray(prog.c, float)), Gs=Gs, hs=hs, options=options, **kwargs)
        status = sol["status"]
        if status == "optimal":
            return Status.OPTIMAL, np.array(sol["x"]).reshape(-1), status
        if status in ("primal infeasible", "dual infeasible"):
            return Status.INFEASIBLE, None, status
        y = None if sol["x"] is None else np.array(sol["x"]).reshape(-1)
        return Status.NUMERICAL_TROUBLE, y, status


def default_backend() -> Backend:
    name = os.environ.get("RRL_SOLVER", "clarabel").lower()
    if name == "cvxopt":
        return CvxoptBackend()
    if name == "clarabel":
        return ClarabelBackend()
    raise ValueError(f"unknown solver backend {name!r}")


def solve(
    prog: ConicProgram,
    feas_tol: float | None = None,
    opt_tol: float | None = None,
    backend: Backend | None = None,
) -> ConicSolution:
    env_feas, env_opt = tolerances()
    feas_tol = env_feas if feas_tol is None else feas_tol
    opt_tol = env_opt if opt_tol is None else opt_tol
    backend = default_backend() if backend is None else backend
    status, y, message = backend.solve_raw(prog, feas_tol, opt_tol)
    if y is None or status is Status.INFEASIBLE:
        return ConicSolution(status, float("nan"), {}, None, message=message)
    min_eig = min(prog.min_eigenvalues(y), default=0.0)
    if status is Status.OPTIMAL and min_eig < -feas_tol:
        status = Status.NUMERICAL_TROUBLE
        message = f"{message}; re-check found min eigenvalue {min_eig:.3e}"
    return ConicSolution(status, prog.objective(y), prog.unpack(y), y, min_eig, message)
