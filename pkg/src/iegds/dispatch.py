"""Outer penalty loop, epsilon-equilibrium certificate, flow deviations and SOC baselines."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import game, gasflow, recovery
from .conic import ConicProblem, SolverSettings, SquaredNormCones, solve
from .netmodel import Network, gas_graph_is_tree

log = logging.getLogger(__name__)

EXACT = "exact_gne"
EPS = "eps_gne"
NO_FEASIBLE = "max_iter_no_feasible"
STATUSES = (EXACT, EPS, NO_FEASIBLE)
SUCCESS = (EXACT, EPS)
BASELINES = ("fixed_dir_soc", "soc_pen", "soc_scp")


class DispatchError(RuntimeError):
    """Stage-1 solver failure; ``trace`` holds the iterations completed so far."""

    def __init__(self, message: str, trace: list):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class DispatchSettings:
    max_outer: int = 10
    rho_seed: float = 1.0
    rho_growth: float = 2.0
    tol: float = recovery.VIOLATION_TOL
    bracket_tol: float = 1e-3
    weights: tuple[float, float] = (1.0, 1.0)
    solver: SolverSettings = field(default_factory=SolverSettings)


@dataclass(frozen=True)
class PenaltyState:
    ell: int = 1
    rho: float = 0.0
    rho_lo: float = 0.0
    rho_hi: float = math.inf


def update_penalty(state: PenaltyState, violated: bool, rho_seed: float = 1.0, growth: float = 2.0) -> PenaltyState:
    """Move one bracket end to the current weight and pick the next weight inside."""
    lo, hi = state.rho_lo, state.rho_hi
    if violated:
        lo = state.rho
    else:
        hi = state.rho
    if math.isinf(hi):
        nxt = max(rho_seed, growth * lo)
    else:
        nxt = 0.5 * (lo + hi)
    return PenaltyState(ell=state.ell + 1, rho=nxt, rho_lo=lo, rho_hi=hi)


@dataclass
class IterationRecord:
    ell: int
    rho: float
    rho_lo: float
    rho_hi: float
    violation: float
    violated: bool
    P: float
    objective: float
    solver_status: str
    iterations: int
    wall_time: float

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["rho_hi"] = None if math.isinf(self.rho_hi) else self.rho_hi
        return d


@dataclass
class Deviation:
    pipe: tuple[int, int]
    h: int
    phi: float
    w: float
    delta: float | None
    flag: str = ""


def gasflow_deviation(phi, psi, pipes, c_f, tol: float = 1e-9) -> list[Deviation]:
    """(phi - w) / w with w the Weymouth flow at the recovered pressures.

    When w = 0 the ratio is 0 for a (numerically) zero flow and otherwise
    undefined; those entries carry the flag ``undefined-reference``.
    """
    phi = np.atleast_2d(np.asarray(phi, float))
    psi = np.atleast_2d(np.asarray(psi, float))
    c_f = np.broadcast_to(np.asarray(c_f, float), (len(pipes),))
    out = []
    for k, (i, j) in enumerate(pipes):
        w = gasflow.weymouth_flow(psi[i], psi[j], c_f[k])
        for h in range(phi.shape[1]):
            f, wh = float(phi[k, h]), float(w[h])
            if wh == 0.0:
                if abs(f) <= tol:
                    out.append(Deviation((i, j), h, f, wh, 0.0))
                else:
                    out.append(Deviation((i, j), h, f, wh, None, "undefined-reference"))
            else:
                out.append(Deviation((i, j), h, f, wh, (f - wh) / wh))
    return out


def mean_abs_deviation(devs: list[Deviation]) -> float:
    vals = [abs(d.delta) for d in devs if d.delta is not None]
    return float(np.mean(vals)) if vals else 0.0


@dataclass
class DispatchOutcome:
    status: str
    model: str
    r: int
    network: str
    u: np.ndarray
    eps: float | None
    rho_bar: float | None
    P_first: float | None
    P_best: float
    violation: float
    trace: list
    deviations: list
    residuals: dict
    integrality_gap: float
    mean_abs_J: float
    wall_time: float
    kind: str = "two_stage"
    instance: game.GameInstance | None = field(default=None, repr=False)

    @property
    def success(self) -> bool:
        return self.status in SUCCESS

    @property
    def eps_certified(self) -> bool:
        return self.eps is not None

    @property
    def eps_pct(self) -> float | None:
        if self.eps is None or self.mean_abs_J == 0:
            return None
        return 100.0 * self.eps / self.mean_abs_J

    @property
    def mean_abs_deviation(self) -> float:
        return mean_abs_deviation(self.deviations)

    def to_dict(self, include_strategy: bool = False) -> dict:
        net = self.instance.net if self.instance is not None else None

        def pid(p):
            if net is None:
                return f"{p[0]}->{p[1]}"
            return f"{net.gas_nodes[p[0]].id}->{net.gas_nodes[p[1]].id}"

        d = {
            "format": "iegds-outcome-v1",
            "kind": self.kind,
            "status": self.status,
            "model": self.model,
            "r": self.r,
            "network": self.network,
            "eps": self.eps,
            "eps_certified": self.eps_certified,
            "eps_pct": self.eps_pct,
            "mean_abs_J": self.mean_abs_J,
            "rho_bar": self.rho_bar,
            "P_first": self.P_first,
            "P_best": self.P_best,
            "violation": self.violation,
            "integrality_gap": self.integrality_gap,
            "mean_abs_deviation": self.mean_abs_deviation,
            "wall_time": self.wall_time,
            "residuals": {k: float(v) for k, v in sorted(self.residuals.items())},
            "trace": [t.to_dict() for t in self.trace],
            "deviations": [
                {"pipe": pid(dv.pipe), "h": dv.h, "phi": dv.phi, "w": dv.w, "delta": dv.delta, "flag": dv.flag}
                for dv in self.deviations
            ],
        }
        if include_strategy:
            d["strategy"] = [float(v) for v in self.u]
        return d


def _mean_abs_J(instance: game.GameInstance, u) -> float:
    return float(np.mean([abs(game.cost_J(instance, i, u)) for i in range(instance.n_agents)]))


def _deviations(instance: game.GameInstance, u) -> list[Deviation]:
    pipes = list(instance.gas_map.pipes)
    c_f = np.array([instance.net.pipe_of[p].c_f for p in pipes])
    return gasflow_deviation(u[instance.phi], u[instance.psi], pipes, c_f)


def run_two_stage(
    network: Network,
    model: str = gasflow.MISOC,
    r: int | None = None,
    settings: DispatchSettings | None = None,
    breakpoints=None,
) -> DispatchOutcome:
    """Penalised relaxation, direction recovery and pressure LP, repeated over a bracketed weight."""
    settings = settings or DispatchSettings()
    t0 = time.perf_counter()
    if model == gasflow.PWA and not gas_graph_is_tree(network):
        log.warning("gas graph is not a spanning tree: exact pressure recovery is unattainable for PWA")
    base = game.assemble(network, model, r, breakpoints)
    state = PenaltyState()
    trace: list[IterationRecord] = []
    best = None  # (rho, u, P)
    least = None  # (violation, u, P)
    P_first = None
    n_iter = max(1, settings.max_outer)
    status = NO_FEASIBLE

    for _ in range(n_iter):
        inst = game.penalized_objective(base, state.rho) if state.rho > 0 else base
        ts = time.perf_counter()
        res = solve(inst.problem, settings.solver)
        if not res.ok:
            raise DispatchError(f"stage-1 solve ended with status {res.status} at rho={state.rho}", trace)
        s2 = recovery.recover(base, res.x, settings.weights)
        violated = s2.violation > settings.tol
        P = game.potential_P(base, s2.u)
        trace.append(
            IterationRecord(
                ell=state.ell,
                rho=state.rho,
                rho_lo=state.rho_lo,
                rho_hi=state.rho_hi,
                violation=s2.violation,
                violated=violated,
                P=P,
                objective=float(res.objective),
                solver_status=res.solver_status,
                iterations=res.iterations,
                wall_time=time.perf_counter() - ts,
            )
        )
        log.info("iteration %d rho=%.6g violation=%.3e P=%.6f", state.ell, state.rho, s2.violation, P)
        if state.ell == 1:
            P_first = P
        if not violated and (best is None or state.rho <= best[0]):
            best = (state.rho, s2.u, P)
        if least is None or s2.violation < least[0]:
            least = (s2.violation, s2.u, P)
        if state.ell == 1 and not violated:
            status = EXACT
            break
        state = update_penalty(state, violated, settings.rho_seed, settings.rho_growth)
        if best is not None and not math.isinf(state.rho_hi):
            if state.rho_hi - state.rho_lo < settings.bracket_tol * max(1.0, state.rho_hi):
                break

    if best is not None:
        if status != EXACT:
            status = EPS
        rho_bar, u, P_best = best
        eps = 0.0 if status == EXACT else P_best - P_first
        violation = 0.0 if status == EXACT else min(t.violation for t in trace if not t.violated)
    else:
        violation, u, P_best = least
        rho_bar, eps = None, None
    rep = game.feasibility_residuals(base, u)
    return DispatchOutcome(
        status=status,
        model=model,
        r=base.r,
        network=network.name,
        u=u,
        eps=eps,
        rho_bar=rho_bar,
        P_first=P_first,
        P_best=P_best,
        violation=float(violation),
        trace=trace,
        deviations=_deviations(base, u),
        residuals=rep.families,
        integrality_gap=rep.integrality_gap,
        mean_abs_J=_mean_abs_J(base, u),
        wall_time=time.perf_counter() - t0,
        instance=base,
    )


# --------------------------------------------------------------------------- baselines


def fix_binaries(instance: game.GameInstance, delta: np.ndarray) -> game.GameInstance:
    """Freeze the direction binaries of a MISOC instance."""
    pr = instance.problem
    lb, ub = pr.lb.copy(), pr.ub.copy()
    idx = instance.delta
    d = np.asarray(delta, float).reshape(idx.shape)
    if np.any((d != 0) & (d != 1)):
        raise ValueError("directions must be binary")
    lb[idx] = d
    ub[idx] = d
    return instance.with_problem(replace(pr, lb=lb, ub=ub))


def cone_gap(instance: game.GameInstance, u) -> np.ndarray:
    """nu - phi^2 / c^2 per directed pipe and step (nonnegative when the cone holds)."""
    u = np.asarray(u, float)
    c = np.array([instance.net.pipe_of[p].c_f for p in instance.gas_map.pipes])[:, None]
    return u[instance.nu] - (u[instance.phi] / c) ** 2


def run_baseline(
    network: Network,
    kind: str,
    directions: np.ndarray | None,
    weight: float = 1.0,
    max_rounds: int = 20,
    slack_weight: float = 100.0,
    tol: float = 1e-6,
    solver: SolverSettings | None = None,
) -> DispatchOutcome:
    """Convex SOC relaxation with frozen directions, optionally penalised or sequentially tightened.

    ``soc_pen`` adds ``weight * sum(nu)``. ``soc_scp`` adds, each round, the cut
    ``nu <= (2 phi_k phi - phi_k^2) / c^2 + s`` around the previous flows ``phi_k``
    with ``s >= 0`` charged at ``slack_weight``, until the cone gap is below ``tol``.
    """
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}")
    if directions is None:
        raise ValueError("baselines need flow directions")
    t0 = time.perf_counter()
    base = game.assemble(network, gasflow.MISOC)
    inst = fix_binaries(base, directions)
    pr = inst.problem
    if kind == "soc_pen":
        q = pr.q.copy()
        q[inst.nu.ravel()] += weight
        pr = pr.with_objective(q=q)
    trace = []
    res = solve(pr, solver)
    rounds = 1
    if not res.ok:
        raise DispatchError(f"baseline solve ended with status {res.status}", trace)
    u = res.x[: inst.n_u]
    gap = cone_gap(inst, u)
    trace.append(_baseline_record(1, weight, gap, inst, u, res, t0))
    if kind == "soc_scp":
        while gap.max() > tol and rounds < max_rounds:
            rounds += 1
            pr = _scp_problem(inst, u, slack_weight)
            res = solve(pr, solver)
            if not res.ok:
                raise DispatchError(f"sequential cone round {rounds} ended with status {res.status}", trace)
            u = res.x[: inst.n_u]
            gap = cone_gap(inst, u)
            trace.append(_baseline_record(rounds, weight, gap, inst, u, res, t0))
    rep = game.feasibility_residuals(inst, u)
    tight = gap.max() <= tol
    status = EXACT if (tight and rep.feasible) else NO_FEASIBLE
    P = game.potential_P(inst, u)
    return DispatchOutcome(
        status=status,
        model=gasflow.MISOC,
        r=0,
        network=network.name,
        u=u,
        eps=None,
        rho_bar=None,
        P_first=None,
        P_best=P,
        violation=float(max(gap.max(), 0.0)),
        trace=trace,
        deviations=_deviations(inst, u),
        residuals=rep.families,
        integrality_gap=rep.integrality_gap,
        mean_abs_J=_mean_abs_J(inst, u),
        wall_time=time.perf_counter() - t0,
        kind=kind,
        instance=inst,
    )


def _baseline_record(ell, weight, gap, inst, u, res, t0) -> IterationRecord:
    return IterationRecord(
        ell=ell,
        rho=weight,
        rho_lo=0.0,
        rho_hi=math.inf,
        violation=float(max(gap.max(), 0.0)),
        violated=bool(gap.max() > 1e-6),
        P=game.potential_P(inst, u),
        objective=float(res.objective),
        solver_status=res.solver_status,
        iterations=res.iterations,
        wall_time=time.perf_counter() - t0,
    )


def _scp_problem(inst: game.GameInstance, u_prev: np.ndarray, slack_weight: float) -> ConicProblem:
    """Fixed-direction problem plus linearised reverse-cone cuts with a penalised slack."""
    pr = inst.problem
    n = pr.n
    nu = inst.nu.ravel()
    phi = inst.phi.ravel()
    K = len(nu)
    c2 = np.repeat(np.array([inst.net.pipe_of[p].c_f for p in inst.gas_map.pipes]) ** 2, inst.H)
    pk = u_prev[phi]
    s = n + np.arange(K)
    rows = np.repeat(np.arange(K), 3)
    cols = np.c_[nu, phi, s].ravel()
    vals = np.c_[np.ones(K), -2 * pk / c2, -np.ones(K)].ravel()
    A_cut = sp.csr_matrix((vals, (rows, cols)), shape=(K, n + K))

    def widen(A):
        A = A.tocoo()
        return sp.csr_matrix((A.data, (A.row, A.col)), shape=(A.shape[0], n + K))

    cones = pr.cones
    cones = SquaredNormCones(widen(cones.epi), cones.epi_off, widen(cones.vec), cones.vec_off, cones.dims)
    return ConicProblem(
        P=sp.block_diag([pr.P, sp.csc_matrix((K, K))], format="csc"),
        q=np.r_[pr.q, np.full(K, slack_weight)],
        c=pr.c,
        A_eq=widen(pr.A_eq),
        b_eq=pr.b_eq,
        A_ub=sp.vstack([widen(pr.A_ub), A_cut], format="csr"),
        b_ub=np.r_[pr.b_ub, -pk**2 / c2],
        lb=np.r_[pr.lb, np.zeros(K)],
        ub=np.r_[pr.ub, np.full(K, np.inf)],
        cones=cones,
    )
