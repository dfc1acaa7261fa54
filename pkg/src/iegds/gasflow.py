"""Mixed-integer gas-flow models: second-order-cone relaxation (MISOC) and piecewise-affine (PWA).

Both builders work in a local column space ``[y | z]`` where ``y`` holds the
continuous gas variables of all nodes and ``z`` the binary-relaxed ones.
Column ``ny + k`` is entry ``k`` of ``z``; the game module shifts the whole
block by a single offset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .conic import RowBuilder, SquaredNormCones
from .netmodel import Network

MISOC = "misoc"
PWA = "pwa"

# Family label -> (constraint kind) as used in the per-node block view.
FAMILY_KIND = {
    "flow_reciprocity": "h_cpl",
    "pwa_flow": "h_cpl",
    "pwa_region_select": "h_loc",
    "mccormick_1": "g_cpl",
    "mccormick_2": "g_cpl",
    "mccormick_3": "g_cpl",
    "mccormick_4": "g_cpl",
    "pressure_direction": "g_cpl",
    "flow_direction": "g_loc",
    "region_logic": "g_loc",
    "region_product": "g_loc",
    "pressure_product": "g_loc",
    "weymouth_cone": "g_loc",
}
MISOC_FAMILIES = ("flow_direction", "flow_reciprocity", "mccormick_1", "mccormick_2", "mccormick_3", "mccormick_4", "weymouth_cone")
PWA_FAMILIES = (
    "flow_direction",
    "flow_reciprocity",
    "pwa_flow",
    "pwa_region_select",
    "pressure_direction",
    "region_logic",
    "region_product",
    "pressure_product",
)


def weymouth_flow(psi_i, psi_j, c_f):
    """sgn(psi_i - psi_j) * c_f * sqrt(|psi_i - psi_j|), elementwise."""
    d = np.asarray(psi_i, float) - np.asarray(psi_j, float)
    out = np.sign(d) * np.asarray(c_f, float) * np.sqrt(np.abs(d))
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------- PWA segments


@dataclass(frozen=True, eq=False)
class PwaSegments:
    """Secant pieces of phi -> phi^2 / c_f^2, one row per directed pipe."""

    r: int
    breakpoints: np.ndarray  # (K, r+1)
    a: np.ndarray  # (K, r)
    b: np.ndarray  # (K, r)
    c_f: np.ndarray  # (K,)
    phi_max: np.ndarray  # (K,)

    def region(self, k: int, phi) -> np.ndarray:
        """Index of the active region; a flow on a shared breakpoint picks the lower one."""
        phi = np.asarray(phi, float)
        bp = self.breakpoints[k]
        tol = 1e-12 * max(1.0, self.phi_max[k])
        if np.any(np.abs(phi) > self.phi_max[k] + tol):
            raise ValueError(f"flow outside capacity {self.phi_max[k]} on pipe {k}")
        # a flow within tol of a breakpoint counts as on it, so rounding in bp cannot flip the tie
        m = np.searchsorted(bp, phi - tol, side="left") - 1
        return np.clip(m, 0, self.r - 1)

    def value(self, k: int, phi) -> np.ndarray:
        m = self.region(k, phi)
        return self.a[k][m] * np.asarray(phi, float) + self.b[k][m]


def secant_coefficients(lo, hi, c_f):
    """Slope and intercept of the chord of phi^2/c_f^2 between lo and hi."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    c2 = np.asarray(c_f, float) ** 2
    a = (hi**2 - lo**2) / (c2 * (hi - lo))
    b = lo**2 / c2 - a * lo
    return a, b


def pwa_segments(net: Network, r: int, breakpoints=None) -> PwaSegments:
    """Uniform (or user-placed) partition of [-phi_max, phi_max] into r regions.

    ``breakpoints``, if given, are r+1 increasing fractions from -1 to 1
    that are scaled by each pipe's capacity.
    """
    if r < 2:
        raise ValueError("PWA model needs r >= 2 regions")
    if breakpoints is None:
        t = np.linspace(-1.0, 1.0, r + 1)
    else:
        t = np.asarray(breakpoints, float)
        if t.shape != (r + 1,) or t[0] != -1.0 or t[-1] != 1.0 or np.any(np.diff(t) <= 0):
            raise ValueError("breakpoints must be r+1 increasing fractions from -1 to 1")
    pipes = net.directed_pipes
    c = np.array([net.pipe_of[p].c_f for p in pipes])
    pm = np.array([net.pipe_of[p].phi_max for p in pipes])
    if np.any(pm <= 0):
        raise ValueError("pipe with zero capacity")
    bp = pm[:, None] * t[None, :]
    a, b = secant_coefficients(bp[:, :-1], bp[:, 1:], c[:, None])
    return PwaSegments(r=r, breakpoints=bp, a=a, b=b, c_f=c, phi_max=pm)


def pwa_eval(segments: PwaSegments, pipe: int, phi):
    """Secant approximation of phi^2/c_f^2 on directed pipe ``pipe``."""
    out = segments.value(pipe, phi)
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------- variable map


@dataclass(frozen=True, eq=False)
class GasVariableMap:
    """Local indices of every gas variable.

    ``psi``/``gs`` are (nodes, H); pipe arrays are (K, H) or (K, r, H) with K
    directed pipes ordered as ``pipes``. ``y`` indices are in [0, ny), ``z``
    indices in [0, nz).
    """

    model: str
    r: int
    H: int
    pipes: tuple
    rev: np.ndarray
    psi: np.ndarray
    gs: np.ndarray
    phi: np.ndarray
    nu: np.ndarray | None
    nu_psi: np.ndarray | None
    nu_m: np.ndarray | None
    delta: np.ndarray
    alpha: np.ndarray | None
    beta: np.ndarray | None
    gamma: np.ndarray | None
    ny: int
    nz: int
    y_slices: tuple
    z_slices: tuple

    @property
    def n_local(self) -> int:
        return self.ny + self.nz

    def node_sizes(self, i: int) -> tuple[int, int]:
        a, b = self.y_slices[i]
        c, d = self.z_slices[i]
        return b - a, d - c


def _layout(net: Network, model: str, r: int) -> GasVariableMap:
    H = net.H
    n = net.n_gas
    pipes = net.directed_pipes
    K = len(pipes)
    kid = {p: k for k, p in enumerate(pipes)}
    rev = np.array([kid[(j, i)] for (i, j) in pipes], dtype=np.int64)

    psi = np.zeros((n, H), np.int64)
    gs = np.zeros((n, H), np.int64)
    phi = np.zeros((K, H), np.int64)
    nu = np.zeros((K, H), np.int64) if model == MISOC else None
    nu_psi = np.zeros((K, H), np.int64) if model == PWA else None
    nu_m = np.zeros((K, r, H), np.int64) if model == PWA else None
    delta = np.zeros((K, H), np.int64)
    alpha = np.zeros((K, r, H), np.int64) if model == PWA else None
    beta = np.zeros((K, r, H), np.int64) if model == PWA else None
    gamma = np.zeros((K, r, H), np.int64) if model == PWA else None

    y = 0
    z = 0
    ys, zs = [], []

    def take(count):
        nonlocal y
        out = y + np.arange(count)
        y += count
        return out

    def takez(count):
        nonlocal z
        out = z + np.arange(count)
        z += count
        return out

    for i in range(n):
        y0, z0 = y, z
        psi[i] = take(H)
        gs[i] = take(H)
        for j in net.gas_neighbors[i]:
            k = kid[(i, j)]
            phi[k] = take(H)
            if model == MISOC:
                nu[k] = take(H)
                delta[k] = takez(H)
            else:
                nu_psi[k] = take(H)
                nu_m[k] = take(r * H).reshape(r, H)
                delta[k] = takez(H)
                for m in range(r):
                    alpha[k, m] = takez(H)
                    beta[k, m] = takez(H)
                    gamma[k, m] = takez(H)
        ys.append((y0, y))
        zs.append((z0, z))
    return GasVariableMap(
        model=model,
        r=r,
        H=H,
        pipes=tuple(pipes),
        rev=rev,
        psi=psi,
        gs=gs,
        phi=phi,
        nu=nu,
        nu_psi=nu_psi,
        nu_m=nu_m,
        delta=delta,
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        ny=y,
        nz=z,
        y_slices=tuple(ys),
        z_slices=tuple(zs),
    )


# --------------------------------------------------------------------------- constraint blocks


@dataclass(frozen=True, eq=False)
class GasConstraintBlocks:
    """Labelled rows over the local ``[y | z]`` columns.

    ``eq_owner``/``ub_owner`` give the gas node whose block a row belongs to.
    """

    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    eq_labels: list
    eq_owner: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    ub_labels: list
    ub_owner: np.ndarray
    cones: SquaredNormCones
    cone_owner: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    bound_family: np.ndarray

    def rows_of(self, family: str) -> tuple[str, slice]:
        for which, labels in (("eq", self.eq_labels), ("ub", self.ub_labels)):
            for name, a, b in labels:
                if name == family:
                    return which, slice(a, b)
        raise KeyError(family)

    def node_block(self, i: int, kind: str) -> sp.csr_matrix:
        """Rows of one kind (h_cpl, h_loc, g_cpl, g_loc) owned by node i."""
        which = "eq" if kind.startswith("h") else "ub"
        A = self.A_eq if which == "eq" else self.A_ub
        owner = self.eq_owner if which == "eq" else self.ub_owner
        labels = self.eq_labels if which == "eq" else self.ub_labels
        keep = np.zeros(A.shape[0], bool)
        for name, a, b in labels:
            if FAMILY_KIND[name] == kind:
                keep[a:b] = True
        return A[np.flatnonzero(keep & (owner == i))]


class _Emitter:
    def __init__(self):
        self.rb = RowBuilder()
        self.owner: list[np.ndarray] = []

    def emit(self, label, terms, rhs, owner):
        """Rows sum_t coef_t * u[col_t] (op) rhs, broadcast over a common shape."""
        shape = np.broadcast_shapes(np.shape(rhs), *[np.shape(c) for c, _ in terms], *[np.shape(v) for _, v in terms])
        rhs = np.broadcast_to(np.asarray(rhs, float), shape).ravel()
        n = rhs.size
        rows, cols, vals = [], [], []
        for col, val in terms:
            c = np.broadcast_to(col, shape).ravel()
            v = np.broadcast_to(np.asarray(val, float), shape).ravel()
            nz = v != 0
            rows.append(np.arange(n)[nz])
            cols.append(c[nz])
            vals.append(v[nz])
        self.rb.add(label, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), rhs)
        self.owner.append(np.broadcast_to(owner, shape).ravel().astype(np.int64))

    def owners(self):
        return np.concatenate(self.owner) if self.owner else np.zeros(0, np.int64)


def _bounds(net: Network, vm: GasVariableMap, n_local: int):
    lb = np.full(n_local, -np.inf)
    ub = np.full(n_local, np.inf)
    fam = np.full(n_local, "", dtype=object)
    psi_lo, psi_hi = net.psi_bounds()
    lb[vm.psi] = psi_lo[:, None]
    ub[vm.psi] = psi_hi[:, None]
    fam[vm.psi.ravel()] = "pressure_bounds"
    src = np.array([g.is_source for g in net.gas_nodes])
    lb[vm.gs] = 0.0
    ub[vm.gs[~src]] = 0.0
    fam[vm.gs.ravel()] = "gas_source"
    pm = np.array([net.pipe_of[p].phi_max for p in vm.pipes])
    lb[vm.phi] = -pm[:, None]
    ub[vm.phi] = pm[:, None]
    fam[vm.phi.ravel()] = "flow_bounds"
    zcols = vm.ny + np.arange(vm.nz)
    lb[zcols] = 0.0
    ub[zcols] = 1.0
    fam[zcols] = "binary_relaxation"
    return lb, ub, fam


def _common_rows(eq: _Emitter, ub: _Emitter, net: Network, vm: GasVariableMap):
    K = len(vm.pipes)
    pi = np.array([p[0] for p in vm.pipes])
    pm = np.array([net.pipe_of[p].phi_max for p in vm.pipes])[:, None]
    z = vm.ny
    phi, dl = vm.phi, z + vm.delta
    owner = pi[:, None] + np.zeros((1, vm.H), np.int64)
    # -phi_max (1 - delta) <= phi <= phi_max delta
    ub.emit("flow_direction", [(phi, 1.0), (dl, -pm)], 0.0, owner)
    ub.emit("flow_direction", [(phi, -1.0), (dl, pm)], pm, owner)
    once = np.arange(K) < vm.rev
    eq.emit("flow_reciprocity", [(phi[once], 1.0), (phi[vm.rev[once]], 1.0)], 0.0, owner[once])


def build_misoc(net: Network) -> tuple[GasVariableMap, GasConstraintBlocks]:
    """MISOC relaxation with one direction binary per directed pipe and step."""
    psi_lo, psi_hi = net.psi_bounds()
    if not (np.all(np.isfinite(psi_lo)) and np.all(np.isfinite(psi_hi))):
        raise ValueError("pressure bounds must be finite for the McCormick envelopes")
    vm = _layout(net, MISOC, 0)
    eq, ub = _Emitter(), _Emitter()
    _common_rows(eq, ub, net, vm)

    pi = np.array([p[0] for p in vm.pipes])
    pj = np.array([p[1] for p in vm.pipes])
    owner = pi[:, None] + np.zeros((1, vm.H), np.int64)
    psi_i, psi_j = vm.psi[pi], vm.psi[pj]
    nu, dl = vm.nu, vm.ny + vm.delta
    d_lo = (psi_lo[pi] - psi_hi[pj])[:, None]
    d_hi = (psi_hi[pi] - psi_lo[pj])[:, None]
    # nu >= psi_j - psi_i + 2 delta d_lo
    ub.emit("mccormick_1", [(psi_j, 1.0), (psi_i, -1.0), (dl, 2 * d_lo), (nu, -1.0)], 0.0, owner)
    # nu >= psi_i - psi_j + (2 delta - 2) d_hi
    ub.emit("mccormick_2", [(psi_i, 1.0), (psi_j, -1.0), (dl, 2 * d_hi), (nu, -1.0)], 2 * d_hi, owner)
    # nu <= psi_j - psi_i + 2 delta d_hi
    ub.emit("mccormick_3", [(nu, 1.0), (psi_i, 1.0), (psi_j, -1.0), (dl, -2 * d_hi)], 0.0, owner)
    # nu <= psi_i - psi_j + (2 delta - 2) d_lo
    ub.emit("mccormick_4", [(nu, 1.0), (psi_i, -1.0), (psi_j, 1.0), (dl, -2 * d_lo)], -2 * d_lo, owner)

    n_local = vm.n_local
    K, H = vm.phi.shape
    c = np.array([net.pipe_of[p].c_f for p in vm.pipes])
    nc = K * H
    epi = sp.csr_matrix((np.ones(nc), (np.arange(nc), vm.nu.ravel())), shape=(nc, n_local))
    vec = sp.csr_matrix((np.repeat(1.0 / c, H), (np.arange(nc), vm.phi.ravel())), shape=(nc, n_local))
    cones = SquaredNormCones(epi, np.zeros(nc), vec, np.zeros(nc), np.ones(nc, dtype=int))
    return vm, _finish(net, vm, eq, ub, cones, owner.ravel())


def build_pwa(net: Network, r: int, breakpoints=None) -> tuple[PwaSegments, GasVariableMap, GasConstraintBlocks]:
    """Piecewise-affine model with r secant regions per directed pipe."""
    seg = pwa_segments(net, r, breakpoints)
    vm = _layout(net, PWA, r)
    eq, ub = _Emitter(), _Emitter()
    _common_rows(eq, ub, net, vm)

    psi_lo, psi_hi = net.psi_bounds()
    pi = np.array([p[0] for p in vm.pipes])
    pj = np.array([p[1] for p in vm.pipes])
    H = vm.H
    owner = pi[:, None] + np.zeros((1, H), np.int64)
    owner3 = owner[:, None, :] + np.zeros((1, r, 1), np.int64)
    z = vm.ny
    psi_i, psi_j = vm.psi[pi], vm.psi[pj]
    phi, dl = vm.phi, z + vm.delta
    nps, nps_rev = vm.nu_psi, vm.nu_psi[vm.rev]
    num = vm.nu_m
    al, be, ga = z + vm.alpha, z + vm.beta, z + vm.gamma

    # sum_m (a nu^m + b gamma^m) - 2 nu^psi_ij - 2 nu^psi_ji + psi_i + psi_j = 0
    K = len(vm.pipes)
    rows = np.arange(K * H).reshape(K, H)
    cols = [num.transpose(0, 2, 1).reshape(K * H, r), ga.transpose(0, 2, 1).reshape(K * H, r)]
    vals = [np.repeat(seg.a, H, axis=0), np.repeat(seg.b, H, axis=0)]
    terms_c = np.concatenate(cols + [nps.reshape(-1, 1), nps_rev.reshape(-1, 1), psi_i.reshape(-1, 1), psi_j.reshape(-1, 1)], axis=1)
    terms_v = np.concatenate(vals + [np.full((K * H, 1), -2.0)] * 2 + [np.ones((K * H, 1))] * 2, axis=1)
    nzm = terms_v != 0
    eq.rb.add(
        "pwa_flow",
        np.broadcast_to(rows.reshape(-1, 1), terms_c.shape)[nzm],
        terms_c[nzm],
        terms_v[nzm],
        np.zeros(K * H),
    )
    eq.owner.append(owner.ravel())

    # exactly one region
    rows = np.arange(K * H).reshape(K, H)
    eq.rb.add(
        "pwa_region_select",
        np.broadcast_to(rows[:, None, :], ga.shape).ravel(),
        ga.ravel(),
        np.ones(ga.size),
        np.ones(K * H),
    )
    eq.owner.append(owner.ravel())

    d_lo = (psi_lo[pi] - psi_hi[pj])[:, None]
    d_hi = (psi_hi[pi] - psi_lo[pj])[:, None]
    # delta = 1 <=> psi_i >= psi_j
    ub.emit("pressure_direction", [(psi_i, -1.0), (psi_j, 1.0), (dl, -d_lo)], -d_lo, owner)
    ub.emit("pressure_direction", [(psi_i, 1.0), (psi_j, -1.0), (dl, -d_hi)], 0.0, owner)

    pm = seg.phi_max[:, None, None]
    hi = seg.breakpoints[:, 1:, None]
    lo = seg.breakpoints[:, :-1, None]
    ph3 = phi[:, None, :] + np.zeros((1, r, 1), np.int64)
    # alpha = 1 <=> phi <= hi;  beta = 1 <=> phi >= lo;  gamma = alpha * beta
    ub.emit("region_logic", [(ph3, 1.0), (al, pm - hi)], pm, owner3)
    ub.emit("region_logic", [(ph3, -1.0), (al, -(pm + hi))], -hi, owner3)
    ub.emit("region_logic", [(ph3, -1.0), (be, pm + lo)], pm, owner3)
    ub.emit("region_logic", [(ph3, 1.0), (be, lo - pm)], lo, owner3)
    ub.emit("region_logic", [(ga, 1.0), (al, -1.0)], 0.0, owner3)
    ub.emit("region_logic", [(ga, 1.0), (be, -1.0)], 0.0, owner3)
    ub.emit("region_logic", [(al, 1.0), (be, 1.0), (ga, -1.0)], 1.0, owner3)

    # nu^m = gamma^m phi
    ub.emit("region_product", [(num, -1.0), (ga, -pm)], 0.0, owner3)
    ub.emit("region_product", [(num, 1.0), (ph3, -1.0), (ga, pm)], pm, owner3)
    ub.emit("region_product", [(num, 1.0), (ga, -pm)], 0.0, owner3)
    ub.emit("region_product", [(num, -1.0), (ph3, 1.0), (ga, pm)], pm, owner3)

    # nu^psi = delta psi_i
    plo = psi_lo[pi][:, None]
    phi_ = psi_hi[pi][:, None]
    ub.emit("pressure_product", [(nps, -1.0), (dl, plo)], 0.0, owner)
    ub.emit("pressure_product", [(nps, 1.0), (psi_i, -1.0), (dl, -plo)], -plo, owner)
    ub.emit("pressure_product", [(nps, 1.0), (dl, -phi_)], 0.0, owner)
    ub.emit("pressure_product", [(nps, -1.0), (psi_i, 1.0), (dl, phi_)], phi_, owner)

    cones = SquaredNormCones.empty(vm.n_local)
    return seg, vm, _finish(net, vm, eq, ub, cones, np.zeros(0, np.int64))


def _finish(net, vm, eq: _Emitter, ub: _Emitter, cones, cone_owner) -> GasConstraintBlocks:
    n_local = vm.n_local
    A_eq, b_eq = eq.rb.matrix(n_local)
    A_ub, b_ub = ub.rb.matrix(n_local)
    lb, ubx, fam = _bounds(net, vm, n_local)
    return GasConstraintBlocks(
        A_eq=A_eq,
        b_eq=b_eq,
        eq_labels=list(eq.rb.labels),
        eq_owner=eq.owners(),
        A_ub=A_ub,
        b_ub=b_ub,
        ub_labels=list(ub.rb.labels),
        ub_owner=ub.owners(),
        cones=cones,
        cone_owner=np.asarray(cone_owner, np.int64),
        lb=lb,
        ub=ubx,
        bound_family=fam,
    )


def build(net: Network, model: str, r: int | None = None, breakpoints=None):
    """Dispatch to the requested builder; returns (segments or None, map, blocks)."""
    if model == MISOC:
        vm, blocks = build_misoc(net)
        return None, vm, blocks
    if model == PWA:
        if r is None:
            raise ValueError("PWA model needs r")
        return build_pwa(net, r, breakpoints)
    raise ValueError(f"unknown gas model {model!r}")
