import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iegds import gasflow
from iegds.cases import desk_network
from iegds.gasflow import build_misoc, build_pwa, pwa_eval, pwa_segments, secant_coefficients, weymouth_flow
from iegds.netmodel import load_bundled, network_from_dict

from conftest import toy_dict


def _net(psi_lo=1.0, psi_hi=4.0, phi_max=5.0, c_f=1.0):
    d = toy_dict()
    for g in d["gas_nodes"]:
        g["psi_min"], g["psi_max"] = psi_lo, psi_hi
    d["pipes"][0].update(phi_max=phi_max, c_f=c_f)
    return network_from_dict(d)


@pytest.mark.parametrize("args,want", [((4, 0, 1), 2.0), ((1, 1, 5), 0.0), ((0, 9, 2), -6.0)])
def test_weymouth_flow(args, want):
    assert weymouth_flow(*args) == want


def test_secant_examples():
    a, b = secant_coefficients(0.0, 2.0, 1.0)
    assert (a, b) == (2.0, 0.0)
    a, b = secant_coefficients(-1.0, 1.0, 1.0)
    assert (a, b) == (0.0, 1.0)


def test_uniform_breakpoints_and_tie_rule():
    seg = pwa_segments(_net(phi_max=3.0), 3)
    assert np.allclose(seg.breakpoints[0], [-3, -1, 1, 3])
    assert seg.region(0, -1.0) == 0
    assert seg.region(0, 1.0) == 1
    with pytest.raises(ValueError):
        seg.region(0, 3.5)


def test_pwa_eval_examples():
    seg = pwa_segments(_net(phi_max=2.0), 2)
    assert pwa_eval(seg, 0, 2.0) == pytest.approx(4.0)
    seg = pwa_segments(_net(phi_max=2.0), 2, breakpoints=[-1.0, 0.0, 1.0])
    assert seg.a[0, 1] == 2.0 and seg.b[0, 1] == 0.0
    assert pwa_eval(seg, 0, 1.0) - 1.0 == pytest.approx(1.0)


def test_pwa_rejects_bad_region_count():
    with pytest.raises(ValueError):
        pwa_segments(_net(), 1)
    with pytest.raises(ValueError):
        pwa_segments(_net(), 3, breakpoints=[-1.0, 0.5, 0.0, 1.0])


def _secant_checks(phi_max, c_f, r, rng):
    seg = pwa_segments(_net(phi_max=phi_max, c_f=c_f), r)
    scale = max(1.0, phi_max**2 / c_f**2)
    bp = seg.breakpoints[0]
    for m in range(r):
        for end in (bp[m], bp[m + 1]):
            assert abs(seg.a[0, m] * end + seg.b[0, m] - end**2 / c_f**2) <= 1e-12 * scale
        x = rng.uniform(bp[m], bp[m + 1], 100)
        assert np.all(seg.a[0, m] * x + seg.b[0, m] >= x**2 / c_f**2 - 1e-12 * scale)


def max_grid_error(phi_max, c_f, r):
    seg = pwa_segments(_net(phi_max=phi_max, c_f=c_f), r)
    x = np.linspace(-phi_max, phi_max, 4001)
    return float(np.max(seg.value(0, x) - x**2 / c_f**2))


@given(st.floats(0.5, 50.0), st.floats(0.2, 5.0), st.integers(2, 50), st.integers(0, 2**31))
@settings(max_examples=40)
def test_secant_exact_at_endpoints_and_above_curve(phi_max, c_f, r, seed):
    _secant_checks(phi_max, c_f, r, np.random.default_rng(seed))


@given(st.floats(0.5, 50.0), st.floats(0.2, 5.0))
@settings(max_examples=20)
def test_refinement_reduces_error(phi_max, c_f):
    assert max_grid_error(phi_max, c_f, 45) <= max_grid_error(phi_max, c_f, 20)


def _mccormick_interval(blocks, vm, psi_i, psi_j, delta):
    """Feasible nu range from the four envelope rows with the other variables fixed."""
    u = np.zeros(vm.n_local)
    u[vm.psi[0, 0]], u[vm.psi[1, 0]] = psi_i, psi_j
    u[vm.ny + vm.delta[0, 0]] = delta
    col = vm.nu[0, 0]
    lo, hi = -np.inf, np.inf
    for fam in ("mccormick_1", "mccormick_2", "mccormick_3", "mccormick_4"):
        _, rows = blocks.rows_of(fam)
        A = blocks.A_ub[rows].toarray()
        b = blocks.b_ub[rows]
        for a_row, rhs in zip(A, b):
            if a_row[col] == 0:
                continue
            other = a_row @ u - a_row[col] * u[col]
            bound = (rhs - other) / a_row[col]
            if a_row[col] > 0:
                hi = min(hi, bound)
            else:
                lo = max(lo, bound)
    return lo, hi


def check_mccormick_grid(n=11):
    vm, blocks = build_misoc(_net(psi_lo=0.0, psi_hi=10.0))
    grid = np.linspace(0.0, 10.0, n)
    for delta in (0, 1):
        for pi in grid:
            for pj in grid:
                lo, hi = _mccormick_interval(blocks, vm, pi, pj, delta)
                want = (2 * delta - 1) * (pi - pj)
                assert lo == pytest.approx(want, abs=1e-9) and hi == pytest.approx(want, abs=1e-9)


def test_mccormick_envelopes_pin_nu():
    check_mccormick_grid()


def test_mccormick_example_points():
    vm, blocks = build_misoc(_net(psi_lo=0.0, psi_hi=10.0))
    assert _mccormick_interval(blocks, vm, 4.0, 1.0, 1) == pytest.approx((3.0, 3.0))
    assert _mccormick_interval(blocks, vm, 4.0, 1.0, 0) == pytest.approx((-3.0, -3.0))


def test_misoc_counts_on_two_node_network():
    vm, blocks = build_misoc(_net())
    assert vm.node_sizes(0) == (4, 1) and vm.node_sizes(1) == (4, 1)
    assert blocks.cones.count == 2


def _check_counts(net, r):
    deg = [len(n) for n in net.gas_neighbors]
    H = net.H
    vm, blocks = build_misoc(net)
    for i, d in enumerate(deg):
        assert vm.node_sizes(i) == (H * (2 + 2 * d), H * d)
    _, vp, bp = build_pwa(net, r)
    for i, d in enumerate(deg):
        assert vp.node_sizes(i) == (H * (2 + (2 + r) * d), H * (1 + 3 * r) * d)
    assert bp.cones.count == 0
    for v in (vm, vp):
        ys = sorted(v.y_slices)
        zs = sorted(v.z_slices)
        assert ys[0][0] == 0 and ys[-1][1] == v.ny and all(a[1] == b[0] for a, b in zip(ys, ys[1:]))
        assert zs[0][0] == 0 and zs[-1][1] == v.nz and all(a[1] == b[0] for a, b in zip(zs, zs[1:]))


@given(st.integers(0, 10_000), st.integers(2, 6))
@settings(max_examples=25)
def test_variable_counts_on_random_trees(seed, r):
    _check_counts(desk_network(seed), r)


def test_variable_counts_on_bundled_tree():
    net = load_bundled()
    from iegds.netmodel import resample_horizon

    _check_counts(resample_horizon(net, 2), 3)


def _rows_stay_local(net, blocks, vm):
    allowed = []
    for i in range(net.n_gas):
        cols = set()
        for k in [i, *net.gas_neighbors[i]]:
            a, b = vm.y_slices[k]
            cols.update(range(a, b))
            a, b = vm.z_slices[k]
            cols.update(range(vm.ny + a, vm.ny + b))
        allowed.append(cols)
    for A, owner in ((blocks.A_eq, blocks.eq_owner), (blocks.A_ub, blocks.ub_owner)):
        A = A.tocsr()
        for row in range(A.shape[0]):
            cols = A.indices[A.indptr[row]:A.indptr[row + 1]]
            assert set(cols) <= allowed[owner[row]]


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_rows_reference_only_owner_and_neighbors(seed):
    net = desk_network(seed)
    vm, blocks = build_misoc(net)
    _rows_stay_local(net, blocks, vm)
    _, vp, bp = build_pwa(net, 3)
    _rows_stay_local(net, bp, vp)


def test_build_dispatch_errors(toy):
    with pytest.raises(ValueError):
        gasflow.build(toy, "linear")
    with pytest.raises(ValueError):
        gasflow.build(toy, gasflow.PWA)
