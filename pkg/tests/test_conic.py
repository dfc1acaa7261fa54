import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from iegds import conic
from iegds.conic import ConicProblem, RowBuilder, SolverSettings, SquaredNormCones, complementarity, solve


def problem(n, P=None, q=None, A_eq=None, b_eq=(), A_ub=None, b_ub=(), lb=None, ub=None, cones=None):
    return ConicProblem(
        P=sp.csc_matrix(P if P is not None else (n, n)),
        q=np.asarray(q if q is not None else np.zeros(n), float),
        c=0.0,
        A_eq=sp.csr_matrix(A_eq if A_eq is not None else (0, n)),
        b_eq=np.asarray(b_eq, float),
        A_ub=sp.csr_matrix(A_ub if A_ub is not None else (0, n)),
        b_ub=np.asarray(b_ub, float),
        lb=np.full(n, -np.inf) if lb is None else np.asarray(lb, float),
        ub=np.full(n, np.inf) if ub is None else np.asarray(ub, float),
        cones=cones if cones is not None else SquaredNormCones.empty(n),
    )


def test_active_bound_quadratic():
    res = solve(problem(1, P=[[2.0]], lb=[3.0]))
    assert res.ok
    assert res.x[0] == pytest.approx(3.0, abs=1e-7)
    assert res.objective == pytest.approx(9.0, abs=1e-6)


def test_infinity_norm_epigraph():
    # u = (tau, w): min tau, tau >= w, tau >= -w, w = 5
    p = problem(2, q=[1, 0], A_eq=[[0, 1]], b_eq=[5], A_ub=[[-1, 1], [-1, -1]], b_ub=[0, 0])
    res = solve(p)
    assert res.ok and res.x[0] == pytest.approx(5.0, abs=1e-6)
    assert res.primal_residual <= 1e-8 * max(1.0, 5.0 + np.abs(res.x).sum())


def test_single_cone_is_tight():
    # u = (nu, phi): min nu, nu >= phi^2 / c^2, phi = 2, c = 1
    cones = SquaredNormCones(
        sp.csr_matrix([[1.0, 0.0]]), np.zeros(1), sp.csr_matrix([[0.0, 1.0]]), np.zeros(1), np.array([1])
    )
    res = solve(problem(2, q=[1, 0], A_eq=[[0, 1]], b_eq=[2], cones=cones))
    assert res.ok and res.x[0] == pytest.approx(4.0, abs=1e-6)
    assert cones.slack(res.x)[0] == pytest.approx(0.0, abs=1e-6)


def test_infeasible_and_unbounded_statuses():
    assert solve(problem(1, lb=[1.0], A_ub=[[1.0]], b_ub=[0.0])).status == conic.INFEASIBLE
    assert solve(problem(1, q=[-1.0], lb=[0.0])).status == conic.UNBOUNDED


def test_problem_invariants():
    with pytest.raises(ValueError, match="symmetric"):
        problem(2, P=[[1.0, 1.0], [0.0, 1.0]])
    with pytest.raises(ValueError, match="lb > ub"):
        problem(1, lb=[2.0], ub=[1.0])
    with pytest.raises(ValueError):
        problem(2, A_eq=[[1.0]], b_eq=[1.0])


def test_repeat_solves_are_identical():
    rng = np.random.default_rng(3)
    M = rng.normal(size=(4, 4))
    p = problem(4, P=M @ M.T, q=rng.normal(size=4), A_ub=rng.normal(size=(3, 4)), b_ub=np.ones(3), lb=-np.ones(4), ub=np.ones(4))
    a, b = solve(p), solve(p)
    assert np.array_equal(a.x, b.x) and a.objective == b.objective


def test_row_builder_merges_adjacent_labels():
    rb = RowBuilder()
    rb.add("x", [0], [0], [1.0], [1.0])
    rb.add("x", [0], [1], [1.0], [2.0])
    rb.add("y", [0, 1], [0, 1], [1.0, 1.0], [0.0, 0.0])
    A, b = rb.matrix(2)
    assert rb.labels == [("x", 0, 2), ("y", 2, 4)]
    assert A.shape == (4, 2) and list(b) == [1, 2, 0, 0]


def vertex_oracle(c, A, b, lb, ub):
    """Best objective over all basic feasible points of a bounded LP."""
    n = len(c)
    G = np.vstack([A, np.eye(n), -np.eye(n)])
    h = np.concatenate([b, ub, -lb])
    best = np.inf
    for rows in itertools.combinations(range(len(h)), n):
        M = G[list(rows)]
        if abs(np.linalg.det(M)) < 1e-9:
            continue
        x = np.linalg.solve(M, h[list(rows)])
        if np.all(G @ x <= h + 1e-9):
            best = min(best, float(c @ x))
    return best


def random_lp(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    m = int(rng.integers(0, 6))
    c = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    x0 = rng.uniform(-0.5, 0.5, n)
    b = A @ x0 + rng.uniform(0.1, 1.0, m)
    lb, ub = -rng.uniform(1, 3, n), rng.uniform(1, 3, n)
    return c, A, b, lb, ub


@given(st.integers(0, 2**31))
@settings(max_examples=60)
def test_lp_matches_vertex_enumeration(seed):
    c, A, b, lb, ub = random_lp(seed)
    n = len(c)
    p = problem(n, q=c, A_ub=A if len(b) else None, b_ub=b, lb=lb, ub=ub)
    res = solve(p, SolverSettings(eps_abs=1e-10, eps_gap=1e-10))
    assert res.ok
    assert res.objective == pytest.approx(vertex_oracle(c, A, b, lb, ub), abs=1e-8)


@given(st.integers(0, 2**31))
@settings(max_examples=40)
def test_complementary_slackness(seed):
    rng = np.random.default_rng(seed)
    c, A, b, lb, ub = random_lp(seed)
    n = len(c)
    M = rng.normal(size=(n, n))
    p = problem(n, P=M @ M.T * rng.uniform(0, 1), q=c, A_ub=A if len(b) else None, b_ub=b, lb=lb, ub=ub)
    res = solve(p)
    assert res.ok
    assert complementarity(p, res) <= 1e-6
    assert res.primal_residual <= 1e-8 * max(1.0, np.abs(b).max(initial=0), np.abs(ub).max())
