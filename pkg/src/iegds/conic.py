"""Convex quadratic/conic programs and a thin, deterministic interface to Clarabel.

Standard form::

    minimize    1/2 u'Pu + q'u + c
    subject to  A_eq u = b_eq
                A_ub u <= b_ub
                lb <= u <= ub
                e_k(u) >= ||w_k(u)||^2        (one per squared-norm cone)

Squared-norm cones are lifted to ordinary second-order cones through
(e+1, e-1, 2w), so callers never deal with the lifting.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITER = "max_iter"


@dataclass(frozen=True, eq=False)
class SquaredNormCones:
    """Block of k cones ``epi[k] @ u + epi_off[k] >= ||vec_k @ u + vec_off_k||^2``.

    ``vec`` stacks the vector parts of all cones; ``dims[k]`` rows belong to cone k.
    """

    epi: sp.csr_matrix
    epi_off: np.ndarray
    vec: sp.csr_matrix
    vec_off: np.ndarray
    dims: np.ndarray

    @property
    def count(self) -> int:
        return len(self.dims)

    @staticmethod
    def empty(n: int) -> "SquaredNormCones":
        z = sp.csr_matrix((0, n))
        return SquaredNormCones(z, np.zeros(0), z, np.zeros(0), np.zeros(0, dtype=int))

    def slack(self, u: np.ndarray) -> np.ndarray:
        """epi(u) - ||vec(u)||^2 per cone; negative entries are violations."""
        e = self.epi @ u + self.epi_off
        w = self.vec @ u + self.vec_off
        ends = np.cumsum(self.dims)
        sq = np.add.reduceat(w * w, ends - self.dims) if len(w) else np.zeros(0)
        sq = np.where(self.dims > 0, sq, 0.0)
        return e - sq


@dataclass(frozen=True, eq=False)
class ConicProblem:
    P: sp.csc_matrix
    q: np.ndarray
    c: float
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    cones: SquaredNormCones

    def __post_init__(self):
        n = len(self.q)
        if self.P.shape != (n, n):
            raise ValueError("P must be n x n")
        for name in ("A_eq", "A_ub"):
            if getattr(self, name).shape[1] != n:
                raise ValueError(f"{name} must have n columns")
        if self.A_eq.shape[0] != len(self.b_eq) or self.A_ub.shape[0] != len(self.b_ub):
            raise ValueError("row count mismatch")
        if len(self.lb) != n or len(self.ub) != n:
            raise ValueError("bounds must have length n")
        if np.any(self.lb > self.ub):
            k = int(np.argmax(self.lb > self.ub))
            raise ValueError(f"lb > ub at variable {k}")
        if self.cones.count and self.cones.epi.shape[1] != n:
            raise ValueError("cone block must have n columns")
        asym = abs(self.P - self.P.T)
        if asym.nnz and asym.max() > 1e-12 * max(1.0, abs(self.P).max()):
            raise ValueError("P must be symmetric")

    @property
    def n(self) -> int:
        return len(self.q)

    def objective(self, u: np.ndarray) -> float:
        return float(0.5 * u @ (self.P @ u) + self.q @ u + self.c)

    def residuals(self, u: np.ndarray) -> dict[str, float]:
        """Largest absolute violation of each constraint block."""
        out = {"eq": 0.0, "ub": 0.0, "bounds": 0.0, "cone": 0.0}
        if len(self.b_eq):
            out["eq"] = float(np.abs(self.A_eq @ u - self.b_eq).max())
        if len(self.b_ub):
            out["ub"] = float(max(0.0, (self.A_ub @ u - self.b_ub).max()))
        if self.n:
            out["bounds"] = float(max(0.0, (self.lb - u).max(), (u - self.ub).max()))
        if self.cones.count:
            out["cone"] = float(max(0.0, -self.cones.slack(u).min()))
        return out

    def with_objective(self, P=None, q=None, c=None) -> "ConicProblem":
        return ConicProblem(
            P=self.P if P is None else P,
            q=self.q if q is None else q,
            c=self.c if c is None else c,
            A_eq=self.A_eq,
            b_eq=self.b_eq,
            A_ub=self.A_ub,
            b_ub=self.b_ub,
            lb=self.lb,
            ub=self.ub,
            cones=self.cones,
        )


@dataclass(frozen=True)
class SolverSettings:
    eps_abs: float = 1e-8
    eps_gap: float = 1e-8
    max_iter: int = 200
    time_limit: float = float("inf")
    # Clarabel is deterministic; the seed is kept so configs stay explicit.
    deterministic_seed: int = 0
    verbose: bool = False


@dataclass(eq=False)
class SolveResult:
    status: str
    x: np.ndarray
    objective: float
    y_eq: np.ndarray
    y_ub: np.ndarray
    y_lb: np.ndarray
    y_ub_box: np.ndarray
    y_cone: np.ndarray
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    wall_time: float
    solver_status: str = ""
    residuals: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


_STATUS = {
    "Solved": OPTIMAL,
    "PrimalInfeasible": INFEASIBLE,
    "AlmostPrimalInfeasible": INFEASIBLE,
    "DualInfeasible": UNBOUNDED,
    "AlmostDualInfeasible": UNBOUNDED,
}


def _triu(P: sp.spmatrix) -> sp.csc_matrix:
    out = sp.triu(sp.csc_matrix(P), format="csc")
    out.sort_indices()
    return out


def solve(problem: ConicProblem, settings: SolverSettings | None = None) -> SolveResult:
    """Solve a ConicProblem with Clarabel's interior-point method.

    Never raises on numerical trouble: failures come back with status
    ``max_iter`` and the residuals of the last iterate.
    """
    settings = settings or SolverSettings()
    t0 = time.perf_counter()
    n = problem.n

    # Box rows: skip infinite sides; equal sides go to the zero cone.
    fixed = np.isfinite(problem.lb) & (problem.lb == problem.ub)
    has_lo = np.isfinite(problem.lb) & ~fixed
    has_hi = np.isfinite(problem.ub) & ~fixed
    eye = sp.identity(n, format="csr")
    i_fix, i_lo, i_hi = np.flatnonzero(fixed), np.flatnonzero(has_lo), np.flatnonzero(has_hi)

    blocks_A = [problem.A_eq, eye[i_fix], problem.A_ub, -eye[i_lo], eye[i_hi]]
    blocks_b = [problem.b_eq, problem.lb[i_fix], problem.b_ub, -problem.lb[i_lo], problem.ub[i_hi]]
    n_zero = problem.A_eq.shape[0] + len(i_fix)
    n_nonneg = problem.A_ub.shape[0] + len(i_lo) + len(i_hi)

    cones = problem.cones
    soc_dims = []
    if cones.count:
        # rows per cone: [e+1, e-1, 2w]; Clarabel wants s = b - A u in the cone
        rows_A, rows_b = [], []
        start = 0
        epi = cones.epi.tocsr()
        vec = cones.vec.tocsr()
        for k, d in enumerate(cones.dims):
            e = epi[k]
            w = vec[start : start + d]
            rows_A += [-e, -e, -2.0 * w]
            rows_b += [
                np.array([cones.epi_off[k] + 1.0]),
                np.array([cones.epi_off[k] - 1.0]),
                2.0 * cones.vec_off[start : start + d],
            ]
            start += d
            soc_dims.append(2 + int(d))
        blocks_A.append(sp.vstack(rows_A, format="csr"))
        blocks_b.append(np.concatenate(rows_b))

    A = sp.vstack(blocks_A, format="csc")
    A.sort_indices()
    b = np.concatenate(blocks_b).astype(float)

    cone_spec = []
    if n_zero:
        cone_spec.append(clarabel.ZeroConeT(n_zero))
    if n_nonneg:
        cone_spec.append(clarabel.NonnegativeConeT(n_nonneg))
    for d in soc_dims:
        cone_spec.append(clarabel.SecondOrderConeT(d))

    opts = clarabel.DefaultSettings()
    opts.verbose = settings.verbose
    opts.max_iter = settings.max_iter
    opts.time_limit = settings.time_limit
    opts.tol_feas = settings.eps_abs
    opts.tol_gap_abs = settings.eps_gap
    opts.tol_gap_rel = settings.eps_gap
    opts.presolve_enable = True

    if A.shape[0] == 0:
        # Clarabel needs at least one row; add a vacuous one.
        A = sp.csc_matrix((1, n))
        b = np.zeros(1)
        cone_spec = [clarabel.NonnegativeConeT(1)]

    solver = clarabel.DefaultSolver(_triu(problem.P), np.asarray(problem.q, float), A, b, cone_spec, opts)
    sol = solver.solve()

    raw = str(sol.status)
    status = _STATUS.get(raw, MAX_ITER)
    x = np.array(sol.x, dtype=float)
    z = np.array(sol.z, dtype=float)
    if not np.all(np.isfinite(x)):
        x = np.nan_to_num(x)
        status = MAX_ITER if status == OPTIMAL else status

    res = problem.residuals(x) if status != INFEASIBLE else {}
    scale = max(1.0, float(np.abs(b).max()) if len(b) else 1.0, float(np.abs(x).max()) if n else 1.0)
    prim = max(res.values()) if res else float("inf")
    if raw == "AlmostSolved" and prim <= 1e-6 * scale:
        status = OPTIMAL

    m_eq = problem.A_eq.shape[0]
    off = 0
    y_eq = z[off : off + m_eq]
    off += m_eq
    off += len(i_fix)
    m_ub = problem.A_ub.shape[0]
    y_ub = z[off : off + m_ub]
    off += m_ub
    y_lb = np.zeros(n)
    y_lb[i_lo] = z[off : off + len(i_lo)]
    off += len(i_lo)
    y_ubx = np.zeros(n)
    y_ubx[i_hi] = z[off : off + len(i_hi)]
    off += len(i_hi)
    y_cone = z[off:]

    obj = problem.objective(x) if status == OPTIMAL else float(sol.obj_val) + problem.c
    return SolveResult(
        status=status,
        x=x,
        objective=obj,
        y_eq=y_eq,
        y_ub=y_ub,
        y_lb=y_lb,
        y_ub_box=y_ubx,
        y_cone=y_cone,
        primal_residual=prim,
        dual_residual=float(getattr(sol, "r_dual", np.nan)),
        gap=float(abs(sol.obj_val - sol.obj_val_dual)),
        iterations=int(sol.iterations),
        wall_time=time.perf_counter() - t0,
        solver_status=raw,
        residuals=res,
    )


def complementarity(problem: ConicProblem, result: SolveResult) -> float:
    """Largest |slack * multiplier| over inequality rows and active bounds."""
    u = result.x
    vals = [0.0]
    if len(problem.b_ub):
        vals.append(float(np.abs((problem.b_ub - problem.A_ub @ u) * result.y_ub).max()))
    lo = np.isfinite(problem.lb)
    if lo.any():
        vals.append(float(np.abs((u - problem.lb)[lo] * result.y_lb[lo]).max()))
    hi = np.isfinite(problem.ub)
    if hi.any():
        vals.append(float(np.abs((problem.ub - u)[hi] * result.y_ub_box[hi]).max()))
    return max(vals)


class RowBuilder:
    """Accumulates labelled sparse rows as COO triplets."""

    def __init__(self):
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []
        self.rhs: list[np.ndarray] = []
        self.labels: list[tuple[str, int, int]] = []
        self.m = 0

    def add(self, label: str, rows, cols, vals, rhs) -> None:
        """Append a block; ``rows`` are local (0..k-1) and ``rhs`` has length k."""
        rhs = np.atleast_1d(np.asarray(rhs, float))
        k = len(rhs)
        if k == 0:
            return
        rows = np.asarray(rows, dtype=np.int64)
        self.rows.append(rows + self.m)
        self.cols.append(np.asarray(cols, dtype=np.int64))
        self.vals.append(np.asarray(vals, float))
        self.rhs.append(rhs)
        if self.labels and self.labels[-1][0] == label and self.labels[-1][2] == self.m:
            name, a, _ = self.labels[-1]
            self.labels[-1] = (name, a, self.m + k)
        else:
            self.labels.append((label, self.m, self.m + k))
        self.m += k

    def matrix(self, n: int) -> tuple[sp.csr_matrix, np.ndarray]:
        if not self.rows:
            return sp.csr_matrix((0, n)), np.zeros(0)
        A = sp.csr_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=(self.m, n),
        )
        A.sum_duplicates()
        return A, np.concatenate(self.rhs)
