"""Economic dispatch game: variables, constraints, agent costs and the exact potential.

Global variable order is ``[x | soc | y | z]`` (plus one epigraph scalar per
directed pipe when a flow penalty is attached):

* ``x`` - per agent ``[p_dg, p_ch, p_dh, p_eg, d_gu, theta, v, p_et, p_line...]``,
  each a length-H block, line flows ordered by neighbour bus index;
* ``soc`` - state of charge after each step, storage owners only;
* ``y``/``z`` - continuous and binary-relaxed gas variables (see :mod:`gasflow`).

Every constraint row is normalised to unit infinity-norm coefficients, so
residuals are comparable across families.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import gasflow
from .conic import ConicProblem, RowBuilder, SquaredNormCones
from .netmodel import Network

X_FIELDS = ("p_dg", "p_ch", "p_dh", "p_eg", "d_gu", "theta", "v", "p_et")

ELECTRICAL_FAMILIES = (
    "dg_bounds",
    "gas_conversion",
    "soc_dynamics",
    "soc_bounds",
    "storage_power",
    "grid_trade_bounds",
    "grid_purchase_nonneg",
    "angle_bounds",
    "voltage_bounds",
    "bus_balance",
    "grid_exchange",
    "transmission_tie",
    "line_flow",
)
GAS_NETWORK_FAMILIES = ("gas_balance", "flow_bounds", "pressure_bounds", "gas_source", "gas_consumption_bounds", "binary_relaxation")
PENALTY_FAMILY = "flow_penalty_epigraph"
FEAS_TOL = 1e-6


def expected_families(model: str) -> set[str]:
    gas = gasflow.MISOC_FAMILIES if model == gasflow.MISOC else gasflow.PWA_FAMILIES
    return set(ELECTRICAL_FAMILIES) | set(GAS_NETWORK_FAMILIES) | set(gas)


@dataclass(frozen=True, eq=False)
class ElectricalMap:
    """Global indices of the electrical variables, each field shaped (N, H)."""

    p_dg: np.ndarray
    p_ch: np.ndarray
    p_dh: np.ndarray
    p_eg: np.ndarray
    d_gu: np.ndarray
    theta: np.ndarray
    v: np.ndarray
    p_et: np.ndarray
    line: dict  # (i, j) -> (H,) indices of p_line seen from bus i
    soc: dict  # agent -> (H,) indices of the post-step state of charge
    x_slices: tuple
    n_x: int
    n_soc: int


def _electrical_layout(net: Network) -> ElectricalMap:
    H, N = net.H, net.n_agents
    arrs = {f: np.zeros((N, H), np.int64) for f in X_FIELDS}
    line = {}
    slices = []
    pos = 0
    for i in range(N):
        start = pos
        for f in X_FIELDS:
            arrs[f][i] = pos + np.arange(H)
            pos += H
        for j in net.elec_neighbors[i]:
            line[(i, j)] = pos + np.arange(H)
            pos += H
        slices.append((start, pos))
    n_x = pos
    soc = {}
    for i, p in enumerate(net.prosumers):
        if p.storage is not None:
            soc[i] = pos + np.arange(H)
            pos += H
    return ElectricalMap(line=line, soc=soc, x_slices=tuple(slices), n_x=n_x, n_soc=pos - n_x, **arrs)


@dataclass(frozen=True, eq=False)
class CostData:
    """Everything needed to evaluate J_i without the assembled objective."""

    q_e: np.ndarray
    l_e: np.ndarray
    q_g: np.ndarray
    l_g: np.ndarray
    fixed_gas: np.ndarray  # (N, H) d_g of the node owned by each agent
    q_ngu: np.ndarray  # (N,) zero unless non-gas-fueled
    l_ngu: np.ndarray
    Q_st: dict  # agent -> H x H


@dataclass(frozen=True, eq=False)
class GameInstance:
    net: Network
    model: str
    r: int
    segments: gasflow.PwaSegments | None
    gas_map: gasflow.GasVariableMap
    gas_blocks: gasflow.GasConstraintBlocks
    emap: ElectricalMap
    y_off: int
    z_off: int
    n_u: int
    problem: ConicProblem
    eq_labels: list
    ub_labels: list
    bound_family: np.ndarray
    cone_family: str
    pot_P: sp.csc_matrix
    pot_q: np.ndarray
    pot_c: float
    cost: CostData
    rho: float = 0.0
    t_index: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    # ---- index helpers (global) ----
    @property
    def H(self) -> int:
        return self.net.H

    @property
    def n_agents(self) -> int:
        return self.net.n_agents

    def gidx(self, local):
        """Map gas-local ``[y | z]`` indices to global ones."""
        return np.asarray(local) + self.y_off

    @property
    def psi(self):
        return self.gidx(self.gas_map.psi)

    @property
    def phi(self):
        return self.gidx(self.gas_map.phi)

    @property
    def gs(self):
        return self.gidx(self.gas_map.gs)

    @property
    def delta(self):
        return self.z_off + self.gas_map.delta

    @property
    def nu(self):
        return None if self.gas_map.nu is None else self.gidx(self.gas_map.nu)

    @property
    def nu_psi(self):
        return None if self.gas_map.nu_psi is None else self.gidx(self.gas_map.nu_psi)

    @property
    def nu_m(self):
        return None if self.gas_map.nu_m is None else self.gidx(self.gas_map.nu_m)

    def zidx(self, name: str):
        arr = getattr(self.gas_map, name)
        return None if arr is None else self.z_off + arr

    @property
    def z_range(self) -> np.ndarray:
        return self.z_off + np.arange(self.gas_map.nz)

    def x_of(self, u: np.ndarray, i: int) -> np.ndarray:
        a, b = self.emap.x_slices[i]
        return np.asarray(u)[a:b]

    def with_problem(self, problem: ConicProblem, **kw) -> "GameInstance":
        return replace(self, problem=problem, **kw)

    def base_vector(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u, float)[: self.n_u]

    def lift(self, u: np.ndarray) -> np.ndarray:
        """Extend a base point with the tightest penalty epigraph values."""
        u = self.base_vector(u)
        if not len(self.t_index):
            return u
        t = np.abs(u[self.phi]).max(axis=1)
        return np.concatenate([u, t])


def _normalise(A: sp.csr_matrix, b: np.ndarray) -> tuple[sp.csr_matrix, np.ndarray]:
    if A.shape[0] == 0:
        return A, b
    scale = np.asarray(abs(A).max(axis=1).todense()).ravel()
    scale[scale == 0] = 1.0
    D = sp.diags(1.0 / scale)
    return (D @ A).tocsr(), b / scale


def assemble(net: Network, model: str = gasflow.MISOC, r: int | None = None, breakpoints=None) -> GameInstance:
    """Build the convexified game (binaries relaxed to [0, 1]) with the potential as objective."""
    segments, vm, blocks = gasflow.build(net, model, r, breakpoints)
    em = _electrical_layout(net)
    H, N = net.H, net.n_agents
    y_off = em.n_x + em.n_soc
    z_off = y_off + vm.ny
    n = z_off + vm.nz

    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    fam = np.full(n, "", dtype=object)

    def box(idx, lo, hi, label):
        idx = np.asarray(idx)
        lb[idx] = lo
        ub[idx] = hi
        fam[idx.ravel()] = label

    eq = RowBuilder()
    ineq = RowBuilder()
    hr = np.arange(H)

    for i, p in enumerate(net.prosumers):
        bus = net.buses[i]
        if p.dg_kind == "none":
            box(em.p_dg[i], 0.0, 0.0, "dg_bounds")
        else:
            box(em.p_dg[i], p.p_dg_min, p.p_dg_max, "dg_bounds")
        if p.dg_kind == "gas_fueled":
            box(em.d_gu[i], -np.inf, np.inf, "gas_conversion")
        else:
            box(em.d_gu[i], 0.0, 0.0, "gas_conversion")
        s = p.storage
        if s is None:
            box(em.p_ch[i], 0.0, 0.0, "storage_power")
            box(em.p_dh[i], 0.0, 0.0, "storage_power")
        else:
            box(em.p_ch[i], 0.0, s.p_ch_max, "storage_power")
            box(em.p_dh[i], 0.0, s.p_dh_max, "storage_power")
            box(em.soc[i], s.x_min, s.x_max, "soc_bounds")
        box(em.p_eg[i], 0.0, np.inf, "grid_purchase_nonneg")
        box(em.theta[i], bus.theta_min, bus.theta_max, "angle_bounds")
        box(em.v[i], bus.v_min, bus.v_max, "voltage_bounds")
        if bus.has_transmission_tie:
            cap = np.inf if bus.p_et_max is None else bus.p_et_max
            box(em.p_et[i], -cap, cap, "transmission_tie")
        else:
            box(em.p_et[i], 0.0, 0.0, "transmission_tie")
        for j in net.elec_neighbors[i]:
            fam[em.line[(i, j)]] = "line_flow"

    # d_gu = eta p_dg
    gu = [i for i, p in enumerate(net.prosumers) if p.dg_kind == "gas_fueled"]
    for i in gu:
        eta = net.prosumers[i].eta_gu
        eq.add("gas_conversion", np.r_[hr, hr], np.r_[em.d_gu[i], em.p_dg[i]], np.r_[np.ones(H), -eta * np.ones(H)], np.zeros(H))

    # storage dynamics with x_1 = x_init
    T = net.horizon.T_s
    for i, soc in em.soc.items():
        s = net.prosumers[i].storage
        k = T / s.e_cap
        rows = [hr, hr, hr]
        cols = [soc, em.p_ch[i], em.p_dh[i]]
        vals = [np.ones(H), -k * s.eta_ch * np.ones(H), (k / s.eta_dh) * np.ones(H)]
        rows.append(hr[1:])
        cols.append(soc[:-1])
        vals.append(-s.eta_st * np.ones(H - 1))
        rhs = np.zeros(H)
        rhs[0] = s.eta_st * s.x_init
        eq.add("soc_dynamics", np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), rhs)

    # power balance at each bus
    for i in range(N):
        eq.add(
            "bus_balance",
            np.tile(hr, 4),
            np.concatenate([em.p_dg[i], em.p_eg[i], em.p_dh[i], em.p_ch[i]]),
            np.r_[np.ones(3 * H), -np.ones(H)],
            net.buses[i].d_e,
        )
    # p_eg = p_et - sum_j p_line
    for i in range(N):
        nb = net.elec_neighbors[i]
        cols = [em.p_eg[i], em.p_et[i]] + [em.line[(i, j)] for j in nb]
        vals = [np.ones(H), -np.ones(H)] + [np.ones(H)] * len(nb)
        eq.add("grid_exchange", np.tile(hr, len(cols)), np.concatenate(cols), np.concatenate(vals), np.zeros(H))
    # linearised line flow, one row per direction
    for (a, b), line in zip(net.line_pairs, net.lines):
        for i, j in ((a, b), (b, a)):
            cols = [em.line[(i, j)], em.theta[i], em.theta[j], em.v[i], em.v[j]]
            vals = [1.0, -line.B, line.B, line.G, -line.G]
            eq.add(
                "line_flow",
                np.tile(hr, 5),
                np.concatenate(cols),
                np.concatenate([np.full(H, v) for v in vals]),
                np.zeros(H),
            )

    m = net.market
    # aggregate trade with the main grid
    all_eg = em.p_eg.T  # (H, N)
    rows = np.repeat(hr, N)
    ineq.add("grid_trade_bounds", rows, all_eg.ravel(), np.ones(H * N), np.full(H, m.sigma_e_max))
    ineq.add("grid_trade_bounds", rows, all_eg.ravel(), -np.ones(H * N), np.full(H, -m.sigma_e_min))

    # gas balance: g_s - d_gu - sum_j phi_ij = d_g
    owner = net.gas_owner
    for g in range(net.n_gas):
        cols = [y_off + vm.gs[g], em.d_gu[owner[g]]]
        vals = [np.ones(H), -np.ones(H)]
        for j in net.gas_neighbors[g]:
            k = vm.pipes.index((g, j))
            cols.append(y_off + vm.phi[k])
            vals.append(-np.ones(H))
        eq.add("gas_balance", np.tile(hr, len(cols)), np.concatenate(cols), np.concatenate(vals), net.gas_nodes[g].d_g)

    fixed_gas_h = np.sum([g.d_g for g in net.gas_nodes], axis=0)
    all_gu = em.d_gu.T
    ineq.add("gas_consumption_bounds", rows, all_gu.ravel(), np.ones(H * N), m.sigma_g_max - fixed_gas_h)
    ineq.add("gas_consumption_bounds", rows, all_gu.ravel(), -np.ones(H * N), fixed_gas_h - m.sigma_g_min)

    A_eq_x, b_eq_x = eq.matrix(n)
    A_ub_x, b_ub_x = ineq.matrix(n)

    # gas blocks shifted into global columns ([y | z] sits contiguously at y_off)
    def shift(A):
        A = A.tocoo()
        return sp.csr_matrix((A.data, (A.row, A.col + y_off)), shape=(A.shape[0], n))

    A_eq = sp.vstack([A_eq_x, shift(blocks.A_eq)], format="csr")
    b_eq = np.concatenate([b_eq_x, blocks.b_eq])
    A_ub = sp.vstack([A_ub_x, shift(blocks.A_ub)], format="csr")
    b_ub = np.concatenate([b_ub_x, blocks.b_ub])
    off_eq, off_ub = len(b_eq_x), len(b_ub_x)
    eq_labels = list(eq.labels) + [(nm, a + off_eq, b + off_eq) for nm, a, b in blocks.eq_labels]
    ub_labels = list(ineq.labels) + [(nm, a + off_ub, b + off_ub) for nm, a, b in blocks.ub_labels]
    A_eq, b_eq = _normalise(A_eq, b_eq)
    A_ub, b_ub = _normalise(A_ub, b_ub)

    gcols = y_off + np.arange(vm.n_local)
    lb[gcols] = blocks.lb
    ub[gcols] = blocks.ub
    fam[gcols] = blocks.bound_family

    if blocks.cones.count:
        cones = SquaredNormCones(
            shift(blocks.cones.epi), blocks.cones.epi_off, shift(blocks.cones.vec), blocks.cones.vec_off, blocks.cones.dims
        )
    else:
        cones = SquaredNormCones.empty(n)

    cost = CostData(
        q_e=np.asarray(m.q_e),
        l_e=np.asarray(m.l_e),
        q_g=np.asarray(m.q_g),
        l_g=np.asarray(m.l_g),
        fixed_gas=np.array(
            [net.gas_nodes[g].d_g if g is not None else np.zeros(H) for g in net.agent_gas_node]
        ).reshape(N, H),
        q_ngu=np.array([p.q_ngu if p.dg_kind == "non_gas_fueled" else 0.0 for p in net.prosumers]),
        l_ngu=np.array([p.l_ngu if p.dg_kind == "non_gas_fueled" else 0.0 for p in net.prosumers]),
        Q_st={i: np.asarray(p.storage.Q_st) for i, p in enumerate(net.prosumers) if p.storage is not None},
    )
    Pq, qq, cq = _potential_quadratic(n, em, cost, H, N)
    problem = ConicProblem(P=Pq, q=qq, c=cq, A_eq=A_eq, b_eq=b_eq, A_ub=A_ub, b_ub=b_ub, lb=lb, ub=ub, cones=cones)
    return GameInstance(
        net=net,
        model=model,
        r=0 if r is None else r,
        segments=segments,
        gas_map=vm,
        gas_blocks=blocks,
        emap=em,
        y_off=y_off,
        z_off=z_off,
        n_u=n,
        problem=problem,
        eq_labels=eq_labels,
        ub_labels=ub_labels,
        bound_family=fam,
        cone_family="weymouth_cone" if cones.count else "",
        pot_P=Pq,
        pot_q=qq,
        pot_c=cq,
        cost=cost,
    )


def _potential_quadratic(n, em: ElectricalMap, cost: CostData, H: int, N: int):
    """Quadratic form of the exact potential.

    Per step h, with s_i = d_gu and c_i the fixed gas demand of agent i:
    q_e/2 (sigma_e^2 + sum p_eg^2) + l_e sigma_e
    + q_g/2 ((S + C)^2 + sum (s_i + c_i)^2) + l_g (S + C),
    plus every agent's local cost.
    """
    rows, cols, vals = [], [], []
    q = np.zeros(n)
    c = 0.0
    ones = np.ones((N, N)) + np.eye(N)
    for h in range(H):
        for idx, qh in ((em.p_eg[:, h], cost.q_e[h]), (em.d_gu[:, h], cost.q_g[h])):
            rr, cc = np.meshgrid(idx, idx, indexing="ij")
            rows.append(rr.ravel())
            cols.append(cc.ravel())
            vals.append((qh * ones).ravel())
        q[em.p_eg[:, h]] += cost.l_e[h]
        ch = cost.fixed_gas[:, h]
        C = ch.sum()
        q[em.d_gu[:, h]] += cost.q_g[h] * (C + ch) + cost.l_g[h]
        c += 0.5 * cost.q_g[h] * (C * C + (ch * ch).sum()) + cost.l_g[h] * C
    for i in range(N):
        if cost.q_ngu[i]:
            rows.append(em.p_dg[i])
            cols.append(em.p_dg[i])
            vals.append(np.full(H, 2.0 * cost.q_ngu[i]))
        q[em.p_dg[i]] += cost.l_ngu[i]
    for i, Q in cost.Q_st.items():
        S = Q + Q.T
        for blk in (em.p_ch[i], em.p_dh[i]):
            rr, cc = np.meshgrid(blk, blk, indexing="ij")
            rows.append(rr.ravel())
            cols.append(cc.ravel())
            vals.append(S.ravel())
    P = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    P.sum_duplicates()
    P.eliminate_zeros()
    return P, q, float(c)


# --------------------------------------------------------------------------- evaluation


def _x(instance: GameInstance, u) -> np.ndarray:
    u = np.asarray(u, float)
    if len(u) == instance.emap.n_x:
        out = np.zeros(instance.n_u)
        out[: len(u)] = u
        return out
    return u[: instance.n_u]


def cost_J(instance: GameInstance, agent: int, u) -> float:
    """J_i = f_ngu + f_st + f_e + f_g at the point u."""
    u = _x(instance, u)
    em, c = instance.emap, instance.cost
    i = agent
    p_eg = u[em.p_eg]
    d_gu = u[em.d_gu]
    sig_e = p_eg.sum(axis=0)
    gas = d_gu + c.fixed_gas
    sig_g = gas.sum(axis=0)
    f_e = np.sum((c.q_e * sig_e + c.l_e) * p_eg[i])
    f_g = np.sum((c.q_g * sig_g + c.l_g) * gas[i])
    p = u[em.p_dg[i]]
    f_ngu = c.q_ngu[i] * p @ p + c.l_ngu[i] * p.sum()
    f_st = 0.0
    if i in c.Q_st:
        Q = c.Q_st[i]
        ch, dh = u[em.p_ch[i]], u[em.p_dh[i]]
        f_st = ch @ Q @ ch + dh @ Q @ dh
    return float(f_ngu + f_st + f_e + f_g)


def local_cost(instance: GameInstance, agent: int, u) -> float:
    u = _x(instance, u)
    em, c = instance.emap, instance.cost
    i = agent
    p = u[em.p_dg[i]]
    out = c.q_ngu[i] * p @ p + c.l_ngu[i] * p.sum()
    if i in c.Q_st:
        Q = c.Q_st[i]
        ch, dh = u[em.p_ch[i]], u[em.p_dh[i]]
        out += ch @ Q @ ch + dh @ Q @ dh
    return float(out)


def cost_gradient(instance: GameInstance, agent: int, u) -> np.ndarray:
    """Gradient of J_i with respect to agent i's own block x_i (analytic)."""
    u = _x(instance, u)
    em, c = instance.emap, instance.cost
    i = agent
    a, b = em.x_slices[i]
    g = np.zeros(instance.n_u)
    p_eg = u[em.p_eg]
    gas = u[em.d_gu] + c.fixed_gas
    g[em.p_eg[i]] = c.q_e * (p_eg.sum(axis=0) + p_eg[i]) + c.l_e
    g[em.d_gu[i]] = c.q_g * (gas.sum(axis=0) + gas[i]) + c.l_g
    p = u[em.p_dg[i]]
    g[em.p_dg[i]] = 2 * c.q_ngu[i] * p + c.l_ngu[i]
    if i in c.Q_st:
        S = c.Q_st[i] + c.Q_st[i].T
        g[em.p_ch[i]] = S @ u[em.p_ch[i]]
        g[em.p_dh[i]] = S @ u[em.p_dh[i]]
    return g[a:b]


def pseudogradient(instance: GameInstance, u) -> np.ndarray:
    return np.concatenate([cost_gradient(instance, i, u) for i in range(instance.n_agents)])


def potential_P(instance: GameInstance, u) -> float:
    """Exact potential; depends on the electrical block only."""
    u = _x(instance, u)
    return float(0.5 * u @ (instance.pot_P @ u) + instance.pot_q @ u + instance.pot_c)


def potential_gradient(instance: GameInstance, u) -> np.ndarray:
    u = _x(instance, u)
    g = instance.pot_P @ u + instance.pot_q
    return g[: instance.emap.n_x]


def flow_penalty(instance: GameInstance, u, rho: float | None = None) -> float:
    rho = instance.rho if rho is None else rho
    u = np.asarray(u, float)
    return float(rho * np.abs(u[instance.phi]).max(axis=1).sum())


def objective(instance: GameInstance, u) -> float:
    """Penalised potential P + rho * sum over directed pipes of max_h |phi|."""
    return potential_P(instance, u) + flow_penalty(instance, u)


def penalized_objective(instance: GameInstance, rho: float) -> GameInstance:
    """Attach rho * sum_(i,j) ||phi_(i,j)||_inf through one epigraph scalar per directed pipe."""
    if rho < 0:
        raise ValueError("penalty weight must be nonnegative")
    base = instance if not len(instance.t_index) else strip_penalty(instance)
    pr = base.problem
    K, H = base.phi.shape
    n0 = pr.n
    n = n0 + K
    t = n0 + np.arange(K)

    def widen(A):
        A = A.tocoo()
        return sp.csr_matrix((A.data, (A.row, A.col)), shape=(A.shape[0], n))

    rows = np.arange(2 * K * H)
    phi = base.phi.ravel()
    tt = np.repeat(t, H)
    cols = np.concatenate([np.c_[phi, tt], np.c_[phi, tt]])
    vals = np.concatenate([np.tile([1.0, -1.0], (K * H, 1)), np.tile([-1.0, -1.0], (K * H, 1))])
    A_pen = sp.csr_matrix((vals.ravel(), (np.repeat(rows, 2), cols.ravel())), shape=(2 * K * H, n))
    A_ub = sp.vstack([widen(pr.A_ub), A_pen], format="csr")
    b_ub = np.concatenate([pr.b_ub, np.zeros(2 * K * H)])
    P = sp.block_diag([pr.P, sp.csc_matrix((K, K))], format="csc")
    q = np.concatenate([pr.q, np.full(K, rho)])
    lb = np.concatenate([pr.lb, np.zeros(K)])
    ub = np.concatenate([pr.ub, np.full(K, np.inf)])
    cones = pr.cones
    if cones.count:
        cones = SquaredNormCones(widen(cones.epi), cones.epi_off, widen(cones.vec), cones.vec_off, cones.dims)
    else:
        cones = SquaredNormCones.empty(n)
    problem = ConicProblem(P=P, q=q, c=pr.c, A_eq=widen(pr.A_eq), b_eq=pr.b_eq, A_ub=A_ub, b_ub=b_ub, lb=lb, ub=ub, cones=cones)
    m0 = len(pr.b_ub)
    fam = np.concatenate([base.bound_family, np.full(K, PENALTY_FAMILY, dtype=object)])
    return replace(
        base,
        problem=problem,
        ub_labels=list(base.ub_labels) + [(PENALTY_FAMILY, m0, m0 + 2 * K * H)],
        bound_family=fam,
        rho=float(rho),
        t_index=t,
    )


def strip_penalty(instance: GameInstance) -> GameInstance:
    if not len(instance.t_index):
        return instance
    pr = instance.problem
    n = instance.n_u
    keep_ub = [lab for lab in instance.ub_labels if lab[0] != PENALTY_FAMILY]
    m = max((b for _, _, b in keep_ub), default=0)

    def cut(A, rows=None):
        A = A.tocsr()
        if rows is not None:
            A = A[:rows]
        return A[:, :n]

    cones = pr.cones
    if cones.count:
        cones = SquaredNormCones(cut(cones.epi), cones.epi_off, cut(cones.vec), cones.vec_off, cones.dims)
    else:
        cones = SquaredNormCones.empty(n)
    problem = ConicProblem(
        P=pr.P[:n, :n].tocsc(),
        q=pr.q[:n],
        c=pr.c,
        A_eq=cut(pr.A_eq),
        b_eq=pr.b_eq,
        A_ub=cut(pr.A_ub, m),
        b_ub=pr.b_ub[:m],
        lb=pr.lb[:n],
        ub=pr.ub[:n],
        cones=cones,
    )
    return replace(instance, problem=problem, ub_labels=keep_ub, bound_family=instance.bound_family[:n], rho=0.0, t_index=np.zeros(0, np.int64))


# --------------------------------------------------------------------------- residuals


@dataclass
class ResidualReport:
    families: dict
    integrality_gap: float
    tol: float = FEAS_TOL

    @property
    def max_violation(self) -> float:
        return max(self.families.values(), default=0.0)

    @property
    def relaxed_feasible(self) -> bool:
        return self.max_violation <= self.tol

    @property
    def feasible(self) -> bool:
        return self.relaxed_feasible and self.integrality_gap <= self.tol

    def violated(self) -> dict:
        return {k: v for k, v in self.families.items() if v > self.tol}


def feasibility_residuals(instance: GameInstance, u, tol: float = FEAS_TOL) -> ResidualReport:
    """Largest violation per constraint family, plus the integrality gap of z."""
    pr = instance.problem
    u = np.asarray(u, float)
    if len(u) == instance.n_u and pr.n != instance.n_u:
        u = instance.lift(u)
    fam: dict[str, float] = {}

    def put(name, val):
        fam[name] = max(fam.get(name, 0.0), float(val))

    r_eq = np.abs(pr.A_eq @ u - pr.b_eq) if len(pr.b_eq) else np.zeros(0)
    for name, a, b in instance.eq_labels:
        put(name, r_eq[a:b].max() if b > a else 0.0)
    r_ub = np.maximum(pr.A_ub @ u - pr.b_ub, 0.0) if len(pr.b_ub) else np.zeros(0)
    for name, a, b in instance.ub_labels:
        put(name, r_ub[a:b].max() if b > a else 0.0)
    viol = np.maximum(np.maximum(pr.lb - u, u - pr.ub), 0.0)
    for name in set(instance.bound_family):
        if name:
            put(name, viol[instance.bound_family == name].max())
    if pr.cones.count:
        put(instance.cone_family, max(0.0, -pr.cones.slack(u).min()))
    z = u[instance.z_range]
    gap = float(np.minimum(z, 1 - z).max()) if len(z) else 0.0
    return ResidualReport(families=fam, integrality_gap=max(gap, 0.0), tol=tol)


def family_names(instance: GameInstance) -> set[str]:
    names = {n for n, _, _ in instance.eq_labels} | {n for n, _, _ in instance.ub_labels}
    names |= {f for f in set(instance.bound_family) if f}
    if instance.cone_family:
        names.add(instance.cone_family)
    return names


# --------------------------------------------------------------------------- strategy


@dataclass(frozen=True, eq=False)
class Strategy:
    """A full point u = (x, y, z) with per-agent views."""

    instance: GameInstance
    u: np.ndarray

    def __post_init__(self):
        if len(self.u) < self.instance.n_u:
            raise ValueError("strategy vector too short")

    @property
    def x(self) -> np.ndarray:
        return self.u[: self.instance.emap.n_x]

    @property
    def y(self) -> np.ndarray:
        return self.u[self.instance.y_off : self.instance.z_off]

    @property
    def z(self) -> np.ndarray:
        return self.u[self.instance.z_off : self.instance.n_u]

    def x_i(self, i: int) -> np.ndarray:
        return self.instance.x_of(self.u, i)

    def y_i(self, i: int) -> np.ndarray:
        g = self.instance.net.agent_gas_node[i]
        if g is None:
            return np.zeros(0)
        a, b = self.instance.gas_map.y_slices[g]
        return self.y[a:b]

    def z_i(self, i: int) -> np.ndarray:
        g = self.instance.net.agent_gas_node[i]
        if g is None:
            return np.zeros(0)
        a, b = self.instance.gas_map.z_slices[g]
        return self.z[a:b]

    def residuals(self, tol: float = FEAS_TOL) -> ResidualReport:
        return feasibility_residuals(self.instance, self.u, tol)

    def sigma_e(self) -> np.ndarray:
        return self.u[self.instance.emap.p_eg].sum(axis=0)

    def sigma_g(self) -> np.ndarray:
        return (self.u[self.instance.emap.d_gu] + self.instance.cost.fixed_gas).sum(axis=0)
