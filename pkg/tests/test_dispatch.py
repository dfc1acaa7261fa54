import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iegds import dispatch, game, gasflow
from iegds.cases import desk_network
from iegds.dispatch import DispatchSettings, PenaltyState, gasflow_deviation, run_baseline, run_two_stage, update_penalty
from iegds.netmodel import network_from_dict

from conftest import toy_dict
from oracles import potential_sandwich


def test_update_penalty_examples():
    s = update_penalty(PenaltyState(ell=1, rho=0.0), violated=True, rho_seed=1.0)
    assert s.rho == 1.0 and s.rho_lo == 0.0 and math.isinf(s.rho_hi)
    s = update_penalty(PenaltyState(ell=3, rho=2.0, rho_lo=1.0, rho_hi=4.0), violated=True)
    assert (s.rho_lo, s.rho_hi, s.rho) == (2.0, 4.0, 3.0)
    s = update_penalty(PenaltyState(ell=3, rho=2.0, rho_lo=1.0, rho_hi=4.0), violated=False)
    assert (s.rho_lo, s.rho_hi, s.rho) == (1.0, 2.0, 1.5)


@given(st.lists(st.booleans(), min_size=1, max_size=30), st.floats(0.1, 5.0), st.floats(1.5, 4.0))
def test_brackets_nest(outcomes, seed, growth):
    s = PenaltyState()
    for v in outcomes:
        nxt = update_penalty(s, v, seed, growth)
        assert nxt.rho_lo >= s.rho_lo and nxt.rho_hi <= s.rho_hi
        if not math.isinf(nxt.rho_hi):
            assert nxt.rho_lo <= nxt.rho <= nxt.rho_hi
        s = nxt


def test_deviation_examples():
    pipes = [(0, 1)]
    psi = np.array([[4.0], [0.0]])
    (d,) = gasflow_deviation(np.array([[2.0]]), psi, pipes, [1.0])
    assert d.delta == 0.0
    (d,) = gasflow_deviation(np.array([[2.2]]), psi, pipes, [1.0])
    assert d.delta == pytest.approx(0.1)
    flat = np.array([[1.0], [1.0]])
    (d,) = gasflow_deviation(np.array([[0.0]]), flat, pipes, [1.0])
    assert d.delta == 0.0 and not d.flag
    (d,) = gasflow_deviation(np.array([[0.4]]), flat, pipes, [1.0])
    assert d.delta is None and d.flag == "undefined-reference"
    assert dispatch.mean_abs_deviation([d]) == 0.0


def test_toy_misoc_is_exact(toy):
    out = run_two_stage(toy, gasflow.MISOC)
    assert out.status == dispatch.EXACT and out.eps == 0.0 and len(out.trace) == 1


def test_zero_outer_iterations_returns_first_iterate(toy):
    out = run_two_stage(toy, gasflow.PWA, 2, DispatchSettings(max_outer=0))
    assert len(out.trace) == 1
    if out.trace[0].violated:
        assert out.status == dispatch.NO_FEASIBLE


def _penalised_seed():
    for seed in range(40):
        out = run_two_stage(desk_network(seed), gasflow.MISOC)
        if out.status == dispatch.EPS:
            return out
    pytest.fail("no desk seed needed a penalty")


@pytest.fixture(scope="module")
def penalised():
    return _penalised_seed()


def test_eps_arithmetic_matches_trace(penalised):
    out = penalised
    tr = out.trace
    assert tr[0].rho == 0.0 and tr[0].violated
    best = min((t for t in tr if not t.violated), key=lambda t: t.rho)
    assert out.rho_bar == best.rho
    assert out.eps == pytest.approx(best.P - tr[0].P, abs=1e-12)
    assert out.eps >= -1e-8
    assert out.violation <= 1e-6
    for a, b in zip(tr, tr[1:]):
        assert b.rho_lo >= a.rho_lo and b.rho_hi <= a.rho_hi


def test_success_implies_feasible(penalised):
    rep = game.feasibility_residuals(penalised.instance, penalised.u)
    assert rep.feasible, rep.violated()
    inst = penalised.instance
    assert np.abs(dispatch.cone_gap(inst, penalised.u)).max() >= 0.0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_potential_sandwich_against_enumeration(seed):
    out, p_mi = potential_sandwich(seed)
    if not out.success:
        pytest.skip("algorithm did not succeed on this toy")
    assert out.P_first - 1e-6 <= p_mi <= out.P_best + 1e-6
    assert out.P_best - p_mi <= out.eps + 1e-6


def test_stage1_failure_carries_trace(toy, monkeypatch):
    from iegds import conic

    real = conic.solve
    calls = {"n": 0}

    def flaky(problem, settings=None):
        calls["n"] += 1
        res = real(problem, settings)
        if calls["n"] == 1:
            res.status = conic.MAX_ITER
        return res

    monkeypatch.setattr(dispatch, "solve", flaky)
    with pytest.raises(dispatch.DispatchError) as exc:
        run_two_stage(toy, gasflow.MISOC)
    assert exc.value.trace == []


def test_outcome_serialises(penalised):
    d = penalised.to_dict(include_strategy=True)
    assert d["status"] == dispatch.EPS and len(d["strategy"]) == len(penalised.u)
    assert all("->" in dv["pipe"] for dv in d["deviations"])


def test_baselines_on_recovered_directions(penalised):
    net = penalised.instance.net
    directions = penalised.u[penalised.instance.delta]
    fixed = run_baseline(net, "fixed_dir_soc", directions)
    assert fixed.deviations and fixed.integrality_gap <= 1e-9
    assert max(fixed.residuals.values()) <= 1e-6
    pen0 = run_baseline(net, "soc_pen", directions, weight=0.0)
    assert pen0.trace[0].objective == pytest.approx(fixed.trace[0].objective, rel=1e-9, abs=1e-9)
    pen = run_baseline(net, "soc_pen", directions, weight=10.0)
    assert dispatch.cone_gap(pen.instance, pen.u).max() <= dispatch.cone_gap(fixed.instance, fixed.u).max() + 1e-6
    scp = run_baseline(net, "soc_scp", directions, max_rounds=10)
    assert len(scp.trace) <= 10


def test_scp_stops_after_one_round_when_tight(penalised):
    net = penalised.instance.net
    directions = penalised.u[penalised.instance.delta]
    # a large penalty on nu drives the cones tight in the first solve
    pen = run_baseline(net, "soc_pen", directions, weight=1e3)
    if dispatch.cone_gap(pen.instance, pen.u).max() > 1e-6:
        pytest.skip("penalty did not tighten every cone on this case")
    tight = run_baseline(net, "soc_scp", directions, tol=np.inf)
    assert len(tight.trace) == 1


def test_baseline_errors(toy):
    with pytest.raises(ValueError):
        run_baseline(toy, "soc_magic", np.ones((2, 1)))
    with pytest.raises(ValueError):
        run_baseline(toy, "soc_pen", None)
    with pytest.raises(ValueError):
        dispatch.fix_binaries(game.assemble(toy, gasflow.MISOC), np.full((2, 1), 0.5))
