"""Network builders: the bundled 33-bus / 20-node case and small random desk networks."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .netmodel import FORMAT, Network, network_from_dict, network_to_dict

# Baran-Wu 33-bus feeder: from, to, R (ohm), X (ohm)
CASE33_LINES = (
    (1, 2, 0.0922, 0.0470), (2, 3, 0.4930, 0.2511), (3, 4, 0.3660, 0.1864), (4, 5, 0.3811, 0.1941),
    (5, 6, 0.8190, 0.7070), (6, 7, 0.1872, 0.6188), (7, 8, 0.7114, 0.2351), (8, 9, 1.0300, 0.7400),
    (9, 10, 1.0440, 0.7400), (10, 11, 0.1966, 0.0650), (11, 12, 0.3744, 0.1238), (12, 13, 1.4680, 1.1550),
    (13, 14, 0.5416, 0.7129), (14, 15, 0.5910, 0.5260), (15, 16, 0.7463, 0.5450), (16, 17, 1.2890, 1.7210),
    (17, 18, 0.7320, 0.5740), (2, 19, 0.1640, 0.1565), (19, 20, 1.5042, 1.3554), (20, 21, 0.4095, 0.4784),
    (21, 22, 0.7089, 0.9373), (3, 23, 0.4512, 0.3083), (23, 24, 0.8980, 0.7091), (24, 25, 0.8960, 0.7011),
    (6, 26, 0.2030, 0.1034), (26, 27, 0.2842, 0.1447), (27, 28, 1.0590, 0.9337), (28, 29, 0.8042, 0.7006),
    (29, 30, 0.5075, 0.2585), (30, 31, 0.9744, 0.9630), (31, 32, 0.3105, 0.3619), (32, 33, 0.3410, 0.5302),
)
# kW at buses 2..33
CASE33_LOADS = (
    100, 90, 120, 60, 60, 200, 200, 60, 60, 45, 60, 60, 120, 60, 60, 60,
    90, 90, 90, 90, 90, 90, 420, 420, 60, 60, 60, 120, 200, 150, 210, 60,
)
GAS20_PIPES = (
    (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 8), (2, 9), (9, 10), (10, 11),
    (3, 12), (12, 13), (13, 14), (5, 15), (15, 16), (16, 17), (6, 18), (18, 19), (19, 20),
)
GAS20_BUSES = (1, 2, 3, 4, 5, 6, 7, 8, 19, 20, 21, 23, 24, 25, 26, 27, 28, 29, 30, 31)
# relative fixed gas demand per node (node 1 is the source)
GAS20_LOADS = (0.3, 0.6, 0.5, 0.8, 0.7, 0.9, 0.6, 0.5, 0.7, 0.4, 0.6, 0.5, 0.8, 0.6, 0.7, 0.5, 0.9, 0.4, 0.6, 0.8)

# hourly shapes, 24 steps
LOAD_SHAPE = (
    0.62, 0.58, 0.55, 0.54, 0.56, 0.63, 0.74, 0.86, 0.93, 0.96, 0.98, 0.99,
    0.97, 0.95, 0.94, 0.95, 0.98, 1.00, 0.99, 0.95, 0.89, 0.81, 0.72, 0.66,
)
GAS_SHAPE = (
    0.70, 0.66, 0.64, 0.64, 0.68, 0.78, 0.92, 1.00, 0.96, 0.88, 0.82, 0.78,
    0.76, 0.74, 0.74, 0.78, 0.86, 0.95, 1.00, 0.97, 0.90, 0.84, 0.78, 0.73,
)
PRICE_SHAPE = (
    1.5, 1.5, 1.5, 1.5, 1.5, 1.8, 2.2, 2.6, 3.0, 3.0, 2.8, 2.6,
    2.4, 2.4, 2.6, 2.8, 3.0, 3.0, 3.0, 2.8, 2.4, 2.0, 1.8, 1.6,
)

KW_BASE = 100.0
# impedance base for 12.66 kV and the 100 kW power unit
Z_BASE = 12.66e3**2 / 100e3
PSI_BOUNDS = (1.0, 4.0)
# fraction of the squared-pressure budget used by fixed demand on the worst path
PRESSURE_FILL = 1.0
# envelope of the case generator: largest gas-load scale and gas-fueled unit draw
MAX_LOAD_SCALE = 1.3
MAX_GU_DRAW = 3.0 * 2.4
MAX_GU_COUNT = 6


def _downstream(n: int, pipes: list[tuple[int, int]], root: int = 0) -> tuple[dict, list]:
    adj = {i: [] for i in range(n)}
    for a, b in pipes:
        adj[a].append(b)
        adj[b].append(a)
    parent = {root: None}
    order = [root]
    for i in order:
        for j in adj[i]:
            if j not in parent:
                parent[j] = i
                order.append(j)
    below = {i: [i] for i in range(n)}
    for i in reversed(order[1:]):
        below[parent[i]].extend(below[i])
    return parent, below


def _gas_design(n: int, pipes: list[tuple[int, int]], loads: np.ndarray, fill: float, psi=PSI_BOUNDS):
    """Capacities and a common Weymouth constant for a single-source gas tree.

    ``loads`` are per-node peak fixed demands. The constant is chosen so that the
    deepest root-to-leaf path uses ``fill`` of the squared-pressure range.
    """
    parent, below = _downstream(n, pipes)
    flow = {}
    cap = {}
    for a, b in pipes:
        child = b if parent.get(b) == a else a
        flow[(a, b)] = loads[below[child]].sum()
        cap[(a, b)] = MAX_LOAD_SCALE * flow[(a, b)] + MAX_GU_DRAW * min(MAX_GU_COUNT, len(below[child])) + 1.0
    worst = 0.0
    for leaf in range(n):
        s, i = 0.0, leaf
        while parent[i] is not None:
            p = parent[i]
            key = (p, i) if (p, i) in flow else (i, p)
            s += flow[key] ** 2
            i = p
        worst = max(worst, s)
    c_f = np.sqrt(worst / (fill * (psi[1] - psi[0])))
    return c_f, cap


def build_case33_20(H: int = 24, fill: float = PRESSURE_FILL) -> Network:
    """IEEE 33-bus feeder coupled with a 20-node radial gas tree (single source at node 1)."""
    if 24 % H:
        raise ValueError("H must divide 24")
    sel = np.arange(0, 24, 24 // H)
    load_shape = np.array(LOAD_SHAPE)[sel]
    gas_shape = np.array(GAS_SHAPE)[sel]
    prices = np.array(PRICE_SHAPE)[sel]

    loads = np.r_[0.0, np.array(CASE33_LOADS) / KW_BASE]
    buses = []
    for k in range(33):
        buses.append(
            {
                "id": k + 1,
                "theta_min": 0.0 if k == 0 else -0.5,
                "theta_max": 0.0 if k == 0 else 0.5,
                "v_min": 0.95,
                "v_max": 1.05,
                "d_e": (loads[k] * load_shape).tolist(),
                "has_transmission_tie": k == 0,
                "p_et_max": None,
            }
        )
    lines = []
    for a, b, r, x in CASE33_LINES:
        r, x = r / Z_BASE, x / Z_BASE
        z2 = r * r + x * x
        lines.append({"from": a, "to": b, "B": round(x / z2, 3), "G": round(r / z2, 3)})

    n = len(GAS20_BUSES)
    pipes0 = [(a - 1, b - 1) for a, b in GAS20_PIPES]
    base = np.array(GAS20_LOADS)
    c_f, cap = _gas_design(n, pipes0, base * gas_shape.max(), fill)
    gas_nodes = [
        {
            "id": g + 1,
            "psi_min": PSI_BOUNDS[0],
            "psi_max": PSI_BOUNDS[1],
            "d_g": (base[g] * gas_shape).tolist(),
            "is_source": g == 0,
        }
        for g in range(n)
    ]
    pipes = [{"from": a + 1, "to": b + 1, "c_f": float(c_f), "phi_max": float(cap[(a, b)])} for a, b in pipes0]

    gas_of_bus = {b: g + 1 for g, b in enumerate(GAS20_BUSES)}
    prosumers = [
        {
            "bus_id": k + 1,
            "gas_node_id": gas_of_bus.get(k + 1),
            "dg_kind": "none",
            "p_dg_min": 0.0,
            "p_dg_max": 0.0,
            "q_ngu": 0.0,
            "l_ngu": 0.0,
            "eta_gu": 1.0,
            "storage": None,
        }
        for k in range(33)
    ]
    peak = float(loads.sum() * load_shape.max())
    market = {
        "q_e": (0.015 * np.ones(H)).tolist(),
        "l_e": prices.tolist(),
        "q_g": (0.01 * np.ones(H)).tolist(),
        "l_g": (0.5 * np.ones(H)).tolist(),
        "sigma_e_min": 0.0,
        "sigma_e_max": round(1.1 * peak, 6),
        "sigma_g_min": 0.0,
        "sigma_g_max": 200.0,
    }
    data = {
        "format": FORMAT,
        "name": "case33_20",
        "horizon": {"H": H, "T_s": 24.0 / H},
        "buses": buses,
        "lines": lines,
        "gas_nodes": gas_nodes,
        "pipes": pipes,
        "prosumers": prosumers,
        "market": market,
    }
    return network_from_dict(data)


def write_bundled(path: str | Path) -> None:
    import json

    Path(path).write_text(json.dumps(network_to_dict(build_case33_20()), indent=1) + "\n")


# --------------------------------------------------------------------------- desk-scale networks


def _random_tree(rng: np.random.Generator, n: int) -> list[tuple[int, int]]:
    return [(int(rng.integers(0, k)), k) for k in range(1, n)]


def desk_network(
    seed: int,
    n_bus: int | None = None,
    n_gas: int | None = None,
    H: int | None = None,
    gas_fill: float | None = None,
) -> Network:
    """A small random network (N <= 6, H <= 4) with every asset type present.

    Gas nodes sit on the first buses; node 0 is the only source. ``gas_fill``
    sets how much of the pressure range fixed demand uses on the worst path.
    """
    rng = np.random.default_rng(seed)
    N = int(n_bus or rng.integers(2, 7))
    G = int(n_gas or rng.integers(2, min(N, 4) + 1))
    if G > N:
        raise ValueError("more gas nodes than buses")
    H = int(H or rng.integers(1, 5))
    fill = float(gas_fill if gas_fill is not None else rng.uniform(0.3, 0.9))

    buses = []
    for k in range(N):
        buses.append(
            {
                "id": k + 1,
                "theta_min": 0.0 if k == 0 else -0.5,
                "theta_max": 0.0 if k == 0 else 0.5,
                "v_min": 0.95,
                "v_max": 1.05,
                "d_e": ([0.0] * H if k == 0 else rng.uniform(0.5, 2.0, H).round(4).tolist()),
                "has_transmission_tie": k == 0,
                "p_et_max": None,
            }
        )
    lines = [
        {"from": a + 1, "to": b + 1, "B": round(float(rng.uniform(30, 80)), 3), "G": round(float(rng.uniform(2, 10)), 3)}
        for a, b in _random_tree(rng, N)
    ]
    gpipes = _random_tree(rng, G)
    dg = rng.uniform(0.2, 1.0, (G, H)).round(4)
    dg[0] = 0.0
    cap_gu = 2.0 * 2.0
    parent, below = _downstream(G, gpipes)
    flows = {p: dg[below[p[1]]].sum(axis=0).max() for p in gpipes}
    worst = max(
        sum(flows[(parent[i], i)] ** 2 for i in _path(parent, leaf)) for leaf in range(G)
    ) if gpipes else 0.0
    c_f = np.sqrt(max(worst, 1e-3) / (fill * 3.0))
    pipes = [
        {
            "from": a + 1,
            "to": b + 1,
            "c_f": float(c_f),
            "phi_max": float(flows[(a, b)] + cap_gu * len(below[b]) + 1.0),
        }
        for a, b in gpipes
    ]
    gas_nodes = [
        {"id": g + 1, "psi_min": 1.0, "psi_max": 4.0, "d_g": dg[g].tolist(), "is_source": g == 0} for g in range(G)
    ]
    prosumers = []
    kinds = rng.permutation(["gas_fueled", "non_gas_fueled", "none", "gas_fueled", "none", "non_gas_fueled"][:N])
    for k in range(N):
        kind = str(kinds[k])
        if kind == "gas_fueled" and k >= G:
            kind = "non_gas_fueled"
        p = {
            "bus_id": k + 1,
            "gas_node_id": k + 1 if k < G else None,
            "dg_kind": kind,
            "p_dg_min": 0.0,
            "p_dg_max": 2.0 if kind != "none" else 0.0,
            "q_ngu": float(rng.uniform(0.05, 0.15)) if kind == "non_gas_fueled" else 0.0,
            "l_ngu": float(rng.uniform(1.0, 2.0)) if kind == "non_gas_fueled" else 0.0,
            "eta_gu": 2.0 if kind == "gas_fueled" else 1.0,
            "storage": None,
        }
        if rng.random() < 0.5:
            A = rng.normal(size=(H, H)) * 0.05
            p["storage"] = {
                "e_cap": 4.0,
                "eta_st": 0.99,
                "eta_ch": 0.95,
                "eta_dh": 0.95,
                "x_min": 0.1,
                "x_max": 0.9,
                "x_init": 0.5,
                "p_ch_max": 1.0,
                "p_dh_max": 1.0,
                "Q_st": (A @ A.T + 0.01 * np.eye(H)).tolist(),
            }
        prosumers.append(p)
    market = {
        "q_e": rng.uniform(0.01, 0.05, H).round(4).tolist(),
        "l_e": rng.uniform(1.5, 3.0, H).round(4).tolist(),
        "q_g": rng.uniform(0.01, 0.03, H).round(4).tolist(),
        "l_g": rng.uniform(0.3, 0.6, H).round(4).tolist(),
        "sigma_e_min": 0.0,
        "sigma_e_max": 100.0,
        "sigma_g_min": 0.0,
        "sigma_g_max": 100.0,
    }
    data = {
        "format": FORMAT,
        "name": f"desk-{seed}",
        "horizon": {"H": H, "T_s": 1.0},
        "buses": buses,
        "lines": lines,
        "gas_nodes": gas_nodes,
        "pipes": pipes,
        "prosumers": prosumers,
        "market": market,
    }
    return network_from_dict(data)


def _path(parent: dict, leaf: int) -> list[int]:
    out = []
    while parent[leaf] is not None:
        out.append(leaf)
        leaf = parent[leaf]
    return out
