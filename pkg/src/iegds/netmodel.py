"""Network and prosumer data model, JSON input format and random case generation."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, fields, replace
from functools import cached_property, lru_cache
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

FORMAT = "iegds-v1"
DG_KINDS = ("none", "gas_fueled", "non_gas_fueled")


class NetworkError(ValueError):
    """Base class for all network input problems."""


class NetworkParseError(NetworkError):
    pass


class NetworkSchemaError(NetworkError):
    pass


class NetworkValidationError(NetworkError):
    """An invariant of the data model is violated.

    ``element`` names the offending item, e.g. ``"bus 3"``.
    """

    def __init__(self, element: str, message: str):
        super().__init__(f"{element}: {message}")
        self.element = element


def _vec(values, name="vector") -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Horizon:
    H: int
    T_s: float


@dataclass(frozen=True, eq=False)
class ElectricalBus:
    id: int
    theta_min: float
    theta_max: float
    v_min: float
    v_max: float
    d_e: np.ndarray
    has_transmission_tie: bool
    p_et_max: float | None = None


@dataclass(frozen=True, eq=False)
class PowerLine:
    from_id: int
    to_id: int
    B: float
    G: float


@dataclass(frozen=True, eq=False)
class GasNode:
    id: int
    psi_min: float
    psi_max: float
    d_g: np.ndarray
    is_source: bool


@dataclass(frozen=True, eq=False)
class GasPipe:
    from_id: int
    to_id: int
    c_f: float
    phi_max: float


@dataclass(frozen=True, eq=False)
class Storage:
    e_cap: float
    eta_st: float
    eta_ch: float
    eta_dh: float
    x_min: float
    x_max: float
    x_init: float
    p_ch_max: float
    p_dh_max: float
    Q_st: np.ndarray


@dataclass(frozen=True, eq=False)
class Prosumer:
    bus_id: int
    gas_node_id: int | None
    dg_kind: str = "none"
    p_dg_min: float = 0.0
    p_dg_max: float = 0.0
    q_ngu: float = 0.0
    l_ngu: float = 0.0
    eta_gu: float = 1.0
    storage: Storage | None = None


@dataclass(frozen=True, eq=False)
class MarketParams:
    q_e: np.ndarray
    l_e: np.ndarray
    q_g: np.ndarray
    l_g: np.ndarray
    sigma_e_min: float
    sigma_e_max: float
    sigma_g_min: float
    sigma_g_max: float


@dataclass(frozen=True, eq=False)
class Network:
    """Immutable description of an integrated electrical and gas distribution system.

    Agents are indexed ``0..N-1`` in bus-id order; agent ``i`` owns bus
    ``buses[i]`` and, optionally, one gas node.
    """

    horizon: Horizon
    buses: tuple[ElectricalBus, ...]
    lines: tuple[PowerLine, ...]
    gas_nodes: tuple[GasNode, ...]
    pipes: tuple[GasPipe, ...]
    prosumers: tuple[Prosumer, ...]
    market: MarketParams
    name: str = ""

    @property
    def H(self) -> int:
        return self.horizon.H

    @property
    def n_agents(self) -> int:
        return len(self.buses)

    @property
    def n_gas(self) -> int:
        return len(self.gas_nodes)

    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    @cached_property
    def gas_index(self) -> dict[int, int]:
        return {g.id: k for k, g in enumerate(self.gas_nodes)}

    @cached_property
    def line_pairs(self) -> list[tuple[int, int]]:
        return [(self.bus_index[l.from_id], self.bus_index[l.to_id]) for l in self.lines]

    @cached_property
    def pipe_pairs(self) -> list[tuple[int, int]]:
        return [(self.gas_index[p.from_id], self.gas_index[p.to_id]) for p in self.pipes]

    @cached_property
    def elec_neighbors(self) -> list[list[int]]:
        nbr = [[] for _ in self.buses]
        for a, b in self.line_pairs:
            nbr[a].append(b)
            nbr[b].append(a)
        return [sorted(n) for n in nbr]

    @cached_property
    def gas_neighbors(self) -> list[list[int]]:
        nbr = [[] for _ in self.gas_nodes]
        for a, b in self.pipe_pairs:
            nbr[a].append(b)
            nbr[b].append(a)
        return [sorted(n) for n in nbr]

    @cached_property
    def directed_pipes(self) -> list[tuple[int, int]]:
        """Both orientations of every pipe, ordered by (owner node, neighbour)."""
        return [(i, j) for i, nbr in enumerate(self.gas_neighbors) for j in nbr]

    @cached_property
    def pipe_of(self) -> dict[tuple[int, int], GasPipe]:
        out = {}
        for (a, b), p in zip(self.pipe_pairs, self.pipes):
            out[(a, b)] = p
            out[(b, a)] = p
        return out

    @cached_property
    def gas_owner(self) -> dict[int, int]:
        """gas node index -> agent index"""
        return {
            self.gas_index[p.gas_node_id]: k
            for k, p in enumerate(self.prosumers)
            if p.gas_node_id is not None
        }

    @cached_property
    def agent_gas_node(self) -> list[int | None]:
        return [
            None if p.gas_node_id is None else self.gas_index[p.gas_node_id]
            for p in self.prosumers
        ]

    def psi_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([g.psi_min for g in self.gas_nodes])
        hi = np.array([g.psi_max for g in self.gas_nodes])
        return lo, hi

    def to_dict(self) -> dict[str, Any]:
        return network_to_dict(self)


# --------------------------------------------------------------------------- JSON


def _schema() -> dict:
    text = resources.files("iegds").joinpath("schemas/network.schema.json").read_text()
    return json.loads(text)


@lru_cache(maxsize=None)
def _validator():
    # checking the schema itself costs ~0.3 s, so do it once
    schema = _schema()
    cls = jsonschema.validators.validator_for(schema)
    cls.check_schema(schema)
    return cls(schema)


def network_to_dict(net: Network) -> dict[str, Any]:
    def arr(a):
        return [float(v) for v in np.asarray(a).ravel()]

    buses = []
    for b in net.buses:
        d = {
            "id": b.id,
            "theta_min": b.theta_min,
            "theta_max": b.theta_max,
            "v_min": b.v_min,
            "v_max": b.v_max,
            "d_e": arr(b.d_e),
            "has_transmission_tie": b.has_transmission_tie,
        }
        if b.p_et_max is not None:
            d["p_et_max"] = b.p_et_max
        buses.append(d)
    prosumers = []
    for p in net.prosumers:
        st = None
        if p.storage is not None:
            s = p.storage
            st = {f.name: getattr(s, f.name) for f in fields(s)}
            st["Q_st"] = [arr(row) for row in s.Q_st]
        prosumers.append(
            {
                "bus_id": p.bus_id,
                "gas_node_id": p.gas_node_id,
                "dg_kind": p.dg_kind,
                "p_dg_min": p.p_dg_min,
                "p_dg_max": p.p_dg_max,
                "q_ngu": p.q_ngu,
                "l_ngu": p.l_ngu,
                "eta_gu": p.eta_gu,
                "storage": st,
            }
        )
    m = net.market
    out = {
        "format": FORMAT,
        "name": net.name,
        "horizon": {"H": net.horizon.H, "T_s": net.horizon.T_s},
        "buses": buses,
        "lines": [{"from": l.from_id, "to": l.to_id, "B": l.B, "G": l.G} for l in net.lines],
        "gas_nodes": [
            {"id": g.id, "psi_min": g.psi_min, "psi_max": g.psi_max, "d_g": arr(g.d_g), "is_source": g.is_source}
            for g in net.gas_nodes
        ],
        "pipes": [{"from": p.from_id, "to": p.to_id, "c_f": p.c_f, "phi_max": p.phi_max} for p in net.pipes],
        "prosumers": prosumers,
        "market": {
            "q_e": arr(m.q_e),
            "l_e": arr(m.l_e),
            "q_g": arr(m.q_g),
            "l_g": arr(m.l_g),
            "sigma_e_min": m.sigma_e_min,
            "sigma_e_max": m.sigma_e_max,
            "sigma_g_min": m.sigma_g_min,
            "sigma_g_max": m.sigma_g_max,
        },
    }
    return out


def network_from_dict(data: dict[str, Any]) -> Network:
    """Build and validate a Network from its JSON object form."""
    exc = jsonschema.exceptions.best_match(_validator().iter_errors(data))
    if exc is not None:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise NetworkSchemaError(f"{where}: {exc.message}") from None

    hz = Horizon(H=int(data["horizon"]["H"]), T_s=float(data["horizon"]["T_s"]))
    buses = tuple(
        ElectricalBus(
            id=b["id"],
            theta_min=float(b["theta_min"]),
            theta_max=float(b["theta_max"]),
            v_min=float(b["v_min"]),
            v_max=float(b["v_max"]),
            d_e=_vec(b["d_e"]),
            has_transmission_tie=bool(b["has_transmission_tie"]),
            p_et_max=b.get("p_et_max"),
        )
        for b in sorted(data["buses"], key=lambda b: b["id"])
    )
    lines = tuple(PowerLine(l["from"], l["to"], float(l["B"]), float(l["G"])) for l in data["lines"])
    gas_nodes = tuple(
        GasNode(
            id=g["id"],
            psi_min=float(g["psi_min"]),
            psi_max=float(g["psi_max"]),
            d_g=_vec(g["d_g"]),
            is_source=bool(g["is_source"]),
        )
        for g in sorted(data["gas_nodes"], key=lambda g: g["id"])
    )
    pipes = tuple(GasPipe(p["from"], p["to"], float(p["c_f"]), float(p["phi_max"])) for p in data["pipes"])
    prosumers = []
    for p in sorted(data["prosumers"], key=lambda p: p["bus_id"]):
        st = p["storage"]
        storage = None
        if st is not None:
            q = np.array(st["Q_st"], dtype=float)
            q.setflags(write=False)
            storage = Storage(**{k: float(v) for k, v in st.items() if k != "Q_st"}, Q_st=q)
        prosumers.append(
            Prosumer(
                bus_id=p["bus_id"],
                gas_node_id=p["gas_node_id"],
                dg_kind=p["dg_kind"],
                p_dg_min=float(p["p_dg_min"]),
                p_dg_max=float(p["p_dg_max"]),
                q_ngu=float(p["q_ngu"]),
                l_ngu=float(p["l_ngu"]),
                eta_gu=float(p["eta_gu"]),
                storage=storage,
            )
        )
    m = data["market"]
    market = MarketParams(
        q_e=_vec(m["q_e"]),
        l_e=_vec(m["l_e"]),
        q_g=_vec(m["q_g"]),
        l_g=_vec(m["l_g"]),
        sigma_e_min=float(m["sigma_e_min"]),
        sigma_e_max=float(m["sigma_e_max"]),
        sigma_g_min=float(m["sigma_g_min"]),
        sigma_g_max=float(m["sigma_g_max"]),
    )
    net = Network(
        horizon=hz,
        buses=buses,
        lines=lines,
        gas_nodes=gas_nodes,
        pipes=pipes,
        prosumers=tuple(prosumers),
        market=market,
        name=data.get("name", ""),
    )
    validate(net)
    return net


def load_network(path: str | Path) -> Network:
    """Read, schema-check and validate a network file.

    Raises ``OSError`` if the file cannot be read, and a ``NetworkError``
    subclass for malformed JSON, schema mismatches or violated invariants.
    """
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkParseError(f"{path}: {exc}") from None
    return network_from_dict(data)


def dump_network(net: Network, path: str | Path | None = None) -> str:
    text = json.dumps(network_to_dict(net), indent=1, sort_keys=True)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text


def bundled_case_path(name: str = "case33_20") -> Path:
    return Path(str(resources.files("iegds").joinpath(f"data/{name}.json")))


def load_bundled(name: str = "case33_20") -> Network:
    return load_network(bundled_case_path(name))


# ----------------------------------------------------------------------- validation


def _connected(n: int, edges: list[tuple[int, int]]) -> bool:
    if n == 0:
        return False
    nbr = [[] for _ in range(n)]
    for a, b in edges:
        nbr[a].append(b)
        nbr[b].append(a)
    seen = {0}
    stack = [0]
    while stack:
        k = stack.pop()
        for m in nbr[k]:
            if m not in seen:
                seen.add(m)
                stack.append(m)
    return len(seen) == n


def validate(net: Network) -> None:
    """Check every invariant of the data model; raise NetworkValidationError on the first failure."""
    H = net.horizon.H
    if H < 1:
        raise NetworkValidationError("horizon", "H must be >= 1")
    if not net.horizon.T_s > 0:
        raise NetworkValidationError("horizon", "T_s must be positive")

    ids = [b.id for b in net.buses]
    if len(set(ids)) != len(ids):
        raise NetworkValidationError("buses", "duplicate bus id")
    for k, b in enumerate(net.buses):
        tag = f"bus {b.id}"
        if b.theta_min > b.theta_max:
            raise NetworkValidationError(tag, "theta_min > theta_max")
        if b.v_min > b.v_max:
            raise NetworkValidationError(tag, "v_min > v_max")
        if b.d_e.shape != (H,):
            raise NetworkValidationError(tag, f"d_e must have length H={H}")
        if np.any(b.d_e < 0):
            raise NetworkValidationError(tag, "d_e must be nonnegative")
        if k == 0 and not (b.theta_min == 0.0 and b.theta_max == 0.0):
            raise NetworkValidationError(tag, "reference bus must have theta_min = theta_max = 0")
        if b.p_et_max is not None and b.p_et_max < 0:
            raise NetworkValidationError(tag, "p_et_max must be nonnegative")

    seen = set()
    for l in net.lines:
        tag = f"line ({l.from_id},{l.to_id})"
        if l.from_id not in net.bus_index or l.to_id not in net.bus_index:
            raise NetworkValidationError(tag, "unknown bus")
        if l.from_id == l.to_id:
            raise NetworkValidationError(tag, "self loop")
        key = frozenset((l.from_id, l.to_id))
        if key in seen:
            raise NetworkValidationError(tag, "duplicate line")
        seen.add(key)
        if l.B < 0 or l.G < 0:
            raise NetworkValidationError(tag, "B and G must be nonnegative")
    if not _connected(net.n_agents, net.line_pairs):
        raise NetworkValidationError("lines", "electrical graph is not connected")

    gids = [g.id for g in net.gas_nodes]
    if len(set(gids)) != len(gids):
        raise NetworkValidationError("gas_nodes", "duplicate gas node id")
    for g in net.gas_nodes:
        tag = f"gas node {g.id}"
        if not (0 <= g.psi_min <= g.psi_max):
            raise NetworkValidationError(tag, "need 0 <= psi_min <= psi_max")
        if not np.isfinite(g.psi_max):
            raise NetworkValidationError(tag, "psi_max must be finite")
        if g.d_g.shape != (H,):
            raise NetworkValidationError(tag, f"d_g must have length H={H}")
        if np.any(g.d_g < 0):
            raise NetworkValidationError(tag, "d_g must be nonnegative")
    if not any(g.is_source for g in net.gas_nodes):
        raise NetworkValidationError("gas_nodes", "at least one gas source is required")

    seen = set()
    for p in net.pipes:
        tag = f"pipe ({p.from_id},{p.to_id})"
        if p.from_id not in net.gas_index or p.to_id not in net.gas_index:
            raise NetworkValidationError(tag, "unknown gas node")
        if p.from_id == p.to_id:
            raise NetworkValidationError(tag, "self loop")
        key = frozenset((p.from_id, p.to_id))
        if key in seen:
            raise NetworkValidationError(tag, "duplicate pipe")
        seen.add(key)
        if not p.c_f > 0:
            raise NetworkValidationError(tag, "c_f must be positive")
        if not p.phi_max > 0:
            raise NetworkValidationError(tag, "phi_max must be positive")
    if not _connected(net.n_gas, net.pipe_pairs):
        raise NetworkValidationError("pipes", "gas graph is not connected")

    if len(net.prosumers) != len(net.buses):
        raise NetworkValidationError("prosumers", "exactly one prosumer per bus is required")
    owners: dict[int, int] = {}
    for p, b in zip(net.prosumers, net.buses):
        tag = f"prosumer at bus {p.bus_id}"
        if p.bus_id != b.id:
            raise NetworkValidationError(tag, "prosumers must map one-to-one onto buses")
        if p.gas_node_id is not None:
            if p.gas_node_id not in net.gas_index:
                raise NetworkValidationError(tag, f"unknown gas node {p.gas_node_id}")
            if p.gas_node_id in owners:
                raise NetworkValidationError(tag, f"gas node {p.gas_node_id} already owned by bus {owners[p.gas_node_id]}")
            owners[p.gas_node_id] = p.bus_id
        if p.dg_kind not in DG_KINDS:
            raise NetworkValidationError(tag, f"unknown dg_kind {p.dg_kind!r}")
        if p.dg_kind != "none":
            if not p.p_dg_min < p.p_dg_max:
                raise NetworkValidationError(tag, "need p_dg_min < p_dg_max")
            if p.p_dg_min < 0:
                raise NetworkValidationError(tag, "p_dg_min must be nonnegative")
        if p.dg_kind == "non_gas_fueled" and not p.q_ngu > 0:
            raise NetworkValidationError(tag, "q_ngu must be positive for a non-gas-fueled unit")
        if p.dg_kind == "gas_fueled":
            if p.gas_node_id is None:
                raise NetworkValidationError(tag, "a gas-fueled unit needs a gas node")
            if not p.eta_gu > 0:
                raise NetworkValidationError(tag, "eta_gu must be positive")
        s = p.storage
        if s is not None:
            for name in ("eta_st", "eta_ch", "eta_dh"):
                v = getattr(s, name)
                if not 0 < v <= 1:
                    raise NetworkValidationError(tag, f"storage {name} must lie in (0, 1]")
            if not s.e_cap > 0:
                raise NetworkValidationError(tag, "storage e_cap must be positive")
            if not (0 <= s.x_min <= s.x_init <= s.x_max <= 1):
                raise NetworkValidationError(tag, "need 0 <= x_min <= x_init <= x_max <= 1")
            if s.p_ch_max < 0 or s.p_dh_max < 0:
                raise NetworkValidationError(tag, "storage power limits must be nonnegative")
            if s.Q_st.shape != (H, H):
                raise NetworkValidationError(tag, f"Q_st must be {H}x{H}")
            sym = 0.5 * (s.Q_st + s.Q_st.T)
            if np.linalg.eigvalsh(sym).min() < -1e-10 * max(1.0, np.abs(sym).max()):
                raise NetworkValidationError(tag, "Q_st must be positive semidefinite")
    if len(owners) != net.n_gas:
        missing = sorted(set(net.gas_index) - set(owners))
        raise NetworkValidationError(f"gas node {missing[0]}", "not owned by any prosumer")

    m = net.market
    for name in ("q_e", "l_e", "q_g", "l_g"):
        if getattr(m, name).shape != (H,):
            raise NetworkValidationError("market", f"{name} must have length H={H}")
    if np.any(m.q_e < 0) or np.any(m.l_e < 0):
        raise NetworkValidationError("market", "electricity price coefficients must be nonnegative")
    if np.any(m.q_g <= 0):
        raise NetworkValidationError("market", "q_g must be positive")
    if not m.sigma_e_max > m.sigma_e_min >= 0:
        raise NetworkValidationError("market", "need sigma_e_max > sigma_e_min >= 0")
    if not m.sigma_g_max >= m.sigma_g_min >= 0:
        raise NetworkValidationError("market", "need sigma_g_max >= sigma_g_min >= 0")


# ----------------------------------------------------------------------- topology


def is_spanning_tree(n_nodes: int, edges: list[tuple[int, int]]) -> bool:
    """True iff a connected undirected graph is a tree.

    Edges are undirected pairs; an edge listed in both orientations counts once.
    """
    undirected = {frozenset(e) for e in edges}
    if not _connected(n_nodes, [tuple(e) for e in undirected]):
        raise ValueError("gas graph is not connected")
    return len(undirected) == n_nodes - 1


def gas_graph_is_tree(net: Network) -> bool:
    return is_spanning_tree(net.n_gas, net.pipe_pairs)


# ----------------------------------------------------------------------- horizon


def resample_horizon(net: Network, H: int) -> Network:
    """Keep every k-th step of all profiles so that the horizon has H steps.

    The sampling time grows by the same stride, so energy bookkeeping of the
    storage dynamics stays consistent.
    """
    H0 = net.horizon.H
    if H == H0:
        return net
    if H < 1 or H0 % H != 0:
        raise ValueError(f"cannot resample horizon {H0} to {H}: need a divisor")
    stride = H0 // H
    sel = np.arange(0, H0, stride)
    data = network_to_dict(net)

    def pick(v):
        return [v[k] for k in sel]

    data["horizon"] = {"H": H, "T_s": net.horizon.T_s * stride}
    for b in data["buses"]:
        b["d_e"] = pick(b["d_e"])
    for g in data["gas_nodes"]:
        g["d_g"] = pick(g["d_g"])
    for key in ("q_e", "l_e", "q_g", "l_g"):
        data["market"][key] = pick(data["market"][key])
    for p in data["prosumers"]:
        if p["storage"] is not None:
            q = np.array(p["storage"]["Q_st"])[np.ix_(sel, sel)]
            p["storage"]["Q_st"] = q.tolist()
    return network_from_dict(data)


# ----------------------------------------------------------------------- generator


@dataclass(frozen=True)
class CaseKnobs:
    """Ranges for the randomized fields of :func:`generate_case`.

    Integer ranges are inclusive. Unit parameters are drawn uniformly
    from the listed intervals.
    """

    gas_load_scale: tuple[float, float] = (0.7, 1.3)
    n_gas_dg: tuple[int, int] = (3, 6)
    n_other_dg: tuple[int, int] = (2, 4)
    n_storage: tuple[int, int] = (2, 5)
    gas_dg_p_max: tuple[float, float] = (1.5, 3.0)
    eta_gu: tuple[float, float] = (1.8, 2.4)
    other_dg_p_max: tuple[float, float] = (1.0, 2.5)
    q_ngu: tuple[float, float] = (0.05, 0.15)
    l_ngu: tuple[float, float] = (1.0, 2.0)
    storage_e_cap: tuple[float, float] = (4.0, 8.0)
    storage_p_max: tuple[float, float] = (1.0, 2.0)
    storage_q: float = 0.01
    storage_eta: tuple[float, float, float] = (0.99, 0.95, 0.95)

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "CaseKnobs":
        if not data:
            return cls()
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown knob(s): {', '.join(sorted(unknown))}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        return cls(**kw)

    def to_dict(self) -> dict[str, Any]:
        return {f.name: list(v) if isinstance(v, tuple) else v for f in fields(self) for v in [getattr(self, f.name)]}


def _rng(seed: int) -> np.random.Generator:
    # Philox is counter-based; identical streams on every platform.
    return np.random.Generator(np.random.Philox(key=int(seed)))


def generate_case(template: Network, seed: int, knobs: CaseKnobs | None = None) -> Network:
    """Draw a random test case from a template network.

    Only gas loads, the placement and parameters of generation and storage
    units, and the interconnection points (gas-fueled units) change.
    """
    knobs = knobs or CaseKnobs()
    N = template.n_agents
    gas_agents = [k for k, p in enumerate(template.prosumers) if p.gas_node_id is not None]
    lo, hi = knobs.n_gas_dg
    if not 0 <= lo <= hi:
        raise ValueError("n_gas_dg range is empty")
    if hi > len(gas_agents):
        raise ValueError(f"n_gas_dg up to {hi} exceeds the {len(gas_agents)} buses with a gas node")
    if knobs.n_gas_dg[1] + knobs.n_other_dg[1] > N:
        raise ValueError(
            f"up to {knobs.n_gas_dg[1] + knobs.n_other_dg[1]} generators requested on {N} buses"
        )
    if knobs.n_storage[1] > N:
        raise ValueError(f"up to {knobs.n_storage[1]} storage units requested on {N} buses")
    for name in ("n_other_dg", "n_storage"):
        a, b = getattr(knobs, name)
        if not 0 <= a <= b:
            raise ValueError(f"{name} range is empty")

    rng = _rng(seed)
    H = template.H
    data = network_to_dict(template)

    s_lo, s_hi = knobs.gas_load_scale
    for g in data["gas_nodes"]:
        scale = rng.uniform(s_lo, s_hi)
        g["d_g"] = [float(v * scale) for v in g["d_g"]]

    n_gas_dg = int(rng.integers(knobs.n_gas_dg[0], knobs.n_gas_dg[1] + 1))
    n_other = int(rng.integers(knobs.n_other_dg[0], knobs.n_other_dg[1] + 1))
    n_store = int(rng.integers(knobs.n_storage[0], knobs.n_storage[1] + 1))
    gas_sites = set(rng.choice(gas_agents, size=n_gas_dg, replace=False).tolist()) if n_gas_dg else set()
    free = [k for k in range(N) if k not in gas_sites]
    other_sites = set(rng.choice(free, size=n_other, replace=False).tolist()) if n_other else set()
    store_sites = set(rng.choice(N, size=n_store, replace=False).tolist()) if n_store else set()

    for k, p in enumerate(data["prosumers"]):
        p.update(dg_kind="none", p_dg_min=0.0, p_dg_max=0.0, q_ngu=0.0, l_ngu=0.0, eta_gu=1.0, storage=None)
        if k in gas_sites:
            p["dg_kind"] = "gas_fueled"
            p["p_dg_max"] = float(rng.uniform(*knobs.gas_dg_p_max))
            p["eta_gu"] = float(rng.uniform(*knobs.eta_gu))
        elif k in other_sites:
            p["dg_kind"] = "non_gas_fueled"
            p["p_dg_max"] = float(rng.uniform(*knobs.other_dg_p_max))
            p["q_ngu"] = float(rng.uniform(*knobs.q_ngu))
            p["l_ngu"] = float(rng.uniform(*knobs.l_ngu))
        if k in store_sites:
            eta_st, eta_ch, eta_dh = knobs.storage_eta
            pmax = float(rng.uniform(*knobs.storage_p_max))
            p["storage"] = {
                "e_cap": float(rng.uniform(*knobs.storage_e_cap)),
                "eta_st": eta_st,
                "eta_ch": eta_ch,
                "eta_dh": eta_dh,
                "x_min": 0.1,
                "x_max": 0.9,
                "x_init": 0.5,
                "p_ch_max": pmax,
                "p_dh_max": pmax,
                "Q_st": (knobs.storage_q * np.eye(H)).tolist(),
            }
    data["name"] = f"{template.name or 'case'}-seed{seed}"
    return network_from_dict(data)


def with_updates(net: Network, **changes) -> Network:
    """Shallow ``dataclasses.replace`` followed by re-validation."""
    out = replace(net, **changes)
    validate(out)
    return out


def copy_dict(net: Network) -> dict[str, Any]:
    return copy.deepcopy(network_to_dict(net))
