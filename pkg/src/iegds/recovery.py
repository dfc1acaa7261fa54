"""Stage 2: recover binaries from relaxed flows, then pressures and auxiliaries.

Directions come from the sign of the relaxed flow, never from rounding the
relaxed binaries. Pressures come from a small LP per time step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import gasflow
from .conic import ConicProblem, SolverSettings, SquaredNormCones, solve
from .netmodel import is_spanning_tree

VIOLATION_TOL = 1e-6


class RecoveryError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class RecoveredBinaries:
    delta: np.ndarray  # (K, H)
    alpha: np.ndarray | None = None  # (K, r, H)
    beta: np.ndarray | None = None
    gamma: np.ndarray | None = None
    region: np.ndarray | None = None  # (K, H) active region index


@dataclass(frozen=True, eq=False)
class PressureRecoveryResult:
    psi: np.ndarray  # (n, H)
    tau: np.ndarray | None  # (K, H), MISOC only
    J: np.ndarray  # (H,) max |E psi - theta| per step
    E: list  # per step, (K, n) dense
    theta: np.ndarray  # (K, H)
    status: list

    @property
    def J_max(self) -> float:
        return float(self.J.max()) if self.J.size else 0.0

    @property
    def tau_max(self) -> float:
        return float(self.tau.max()) if self.tau is not None and self.tau.size else 0.0


def antisymmetrize(phi: np.ndarray, rev: np.ndarray) -> np.ndarray:
    """Enforce phi_ij = -phi_ji exactly (removes solver round-off)."""
    return 0.5 * (phi - phi[rev])


def recover_binaries(model: str, phi_hat: np.ndarray, segments: gasflow.PwaSegments | None = None) -> RecoveredBinaries:
    """delta = 1 iff phi >= 0; PWA regions from the breakpoints (ties to the lower region)."""
    phi_hat = np.atleast_2d(np.asarray(phi_hat, float))
    delta = (phi_hat >= 0).astype(float)
    if model == gasflow.MISOC:
        return RecoveredBinaries(delta=delta)
    if segments is None:
        raise ValueError("PWA recovery needs the segments")
    K, H = phi_hat.shape
    r = segments.r
    region = np.stack([segments.region(k, phi_hat[k]) for k in range(K)])
    m = np.arange(r)[None, :, None]
    mstar = region[:, None, :]
    alpha = (m >= mstar).astype(float)
    beta = (m <= mstar).astype(float)
    gamma = (m == mstar).astype(float)
    # linking rows: gamma <= alpha, gamma <= beta, alpha + beta - gamma <= 1
    assert np.all(gamma <= alpha) and np.all(gamma <= beta) and np.all(alpha + beta - gamma <= 1)
    assert np.all(gamma.sum(axis=1) == 1)
    return RecoveredBinaries(delta=delta, alpha=alpha, beta=beta, gamma=gamma, region=region)


def build_E(delta_h: np.ndarray, pipes, n_nodes: int) -> np.ndarray:
    """Row (i, j): +(2 delta - 1) at i and -(2 delta - 1) at j."""
    K = len(pipes)
    E = np.zeros((K, n_nodes))
    s = 2 * np.asarray(delta_h, float) - 1
    for k, (i, j) in enumerate(pipes):
        E[k, i] += s[k]
        E[k, j] -= s[k]
    return E


def build_E_theta(delta_h, phi_h, pipes, n_nodes: int, c_f):
    """MISOC variant: theta = phi^2 / c_f^2."""
    phi_h = np.asarray(phi_h, float)
    return build_E(delta_h, pipes, n_nodes), phi_h**2 / np.asarray(c_f, float) ** 2


def theta_tilde(segments: gasflow.PwaSegments, phi_hat: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Active secant value sum_m gamma^m (a^m phi + b^m), shape (K, H)."""
    a = segments.a[:, :, None]
    b = segments.b[:, :, None]
    return np.sum(gamma * (a * phi_hat[:, None, :] + b), axis=1)


def _lp(c, A_ub, b_ub, lb, ub, settings):
    n = len(c)
    problem = ConicProblem(
        P=sp.csc_matrix((n, n)),
        q=np.asarray(c, float),
        c=0.0,
        A_eq=sp.csr_matrix((0, n)),
        b_eq=np.zeros(0),
        A_ub=sp.csr_matrix(A_ub),
        b_ub=np.asarray(b_ub, float),
        lb=np.asarray(lb, float),
        ub=np.asarray(ub, float),
        cones=SquaredNormCones.empty(n),
    )
    res = solve(problem, settings)
    if not res.ok:
        raise RecoveryError(f"pressure recovery LP ended with status {res.status}")
    return res


def recover_pressures_misoc_step(E, theta, psi_lo, psi_hi, weights=(1.0, 1.0), settings=None):
    """min w_tau ||tau||_inf + w_J ||E psi - theta||_inf  s.t.  E psi + tau >= theta, tau >= 0."""
    K, n = E.shape
    w_tau, w_J = weights
    # variables: psi (n), tau (K), s_tau, s_J
    I = np.eye(K)
    z = np.zeros((K, 1))
    o = np.ones((K, 1))
    A = np.block(
        [
            [np.zeros((K, n)), I, -o, z],
            [E, np.zeros((K, K)), z, -o],
            [-E, np.zeros((K, K)), z, -o],
            [-E, -I, z, z],
        ]
    )
    b = np.concatenate([np.zeros(K), theta, -theta, -theta])
    c = np.r_[np.zeros(n + K), w_tau, w_J]
    lb = np.r_[psi_lo, np.zeros(K + 2)]
    ub = np.r_[psi_hi, np.full(K + 2, np.inf)]
    res = _lp(c, A, b, lb, ub, settings)
    psi = np.clip(res.x[:n], psi_lo, psi_hi)
    tau = np.maximum(theta - E @ psi, 0.0)
    return psi, tau, float(np.abs(E @ psi - theta).max(initial=0.0)), res.status


def recover_pressures_pwa_step(E, theta, psi_lo, psi_hi, settings=None):
    """min ||E psi - theta||_inf over the pressure box."""
    K, n = E.shape
    o = np.ones((K, 1))
    A = np.block([[E, -o], [-E, -o]])
    b = np.concatenate([theta, -theta])
    c = np.r_[np.zeros(n), 1.0]
    lb = np.r_[psi_lo, 0.0]
    ub = np.r_[psi_hi, np.inf]
    res = _lp(c, A, b, lb, ub, settings)
    psi = np.clip(res.x[:n], psi_lo, psi_hi)
    return psi, float(np.abs(E @ psi - theta).max(initial=0.0)), res.status


def _stage2_settings(settings: SolverSettings | None) -> SolverSettings:
    return settings or SolverSettings(eps_abs=1e-10, eps_gap=1e-10)


def recover_pressures_misoc(delta, phi_hat, pipes, n_nodes, c_f, psi_lo, psi_hi, weights=(1.0, 1.0), settings=None):
    settings = _stage2_settings(settings)
    K, H = phi_hat.shape
    psi = np.zeros((n_nodes, H))
    tau = np.zeros((K, H))
    J = np.zeros(H)
    theta = np.zeros((K, H))
    Es, status = [], []
    for h in range(H):
        E, th = build_E_theta(delta[:, h], phi_hat[:, h], pipes, n_nodes, c_f)
        psi[:, h], tau[:, h], J[h], st = recover_pressures_misoc_step(E, th, psi_lo, psi_hi, weights, settings)
        theta[:, h] = th
        Es.append(E)
        status.append(st)
    return PressureRecoveryResult(psi=psi, tau=tau, J=J, E=Es, theta=theta, status=status)


def recover_pressures_pwa(delta, theta, pipes, n_nodes, psi_lo, psi_hi, settings=None):
    settings = _stage2_settings(settings)
    K, H = theta.shape
    psi = np.zeros((n_nodes, H))
    J = np.zeros(H)
    Es, status = [], []
    for h in range(H):
        E = build_E(delta[:, h], pipes, n_nodes)
        psi[:, h], J[h], st = recover_pressures_pwa_step(E, theta[:, h], psi_lo, psi_hi, settings)
        Es.append(E)
        status.append(st)
    return PressureRecoveryResult(psi=psi, tau=None, J=J, E=Es, theta=theta, status=status)


def rebuild_aux_misoc(delta, psi, pipes) -> np.ndarray:
    """nu = (2 delta - 1)(psi_i - psi_j)."""
    pi = np.array([p[0] for p in pipes], dtype=int)
    pj = np.array([p[1] for p in pipes], dtype=int)
    return (2 * delta - 1) * (psi[pi] - psi[pj])


def rebuild_aux_pwa(delta, gamma, psi, phi_hat, pipes) -> tuple[np.ndarray, np.ndarray]:
    """nu^psi = delta psi_i and nu^m = gamma^m phi."""
    pi = np.array([p[0] for p in pipes], dtype=int)
    return delta * psi[pi], gamma * phi_hat[:, None, :]


def particular_solution_psi0(E: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Minimum-norm solution E^+ theta (singular values below 1e-10 ||E|| dropped)."""
    return np.linalg.pinv(np.asarray(E, float), rcond=1e-10) @ np.asarray(theta, float)


def _tree_edges(pipes) -> list[tuple[int, int]]:
    return sorted({(min(i, j), max(i, j)) for i, j in pipes})


def psi0_per_step(delta, theta, pipes, n_nodes) -> np.ndarray:
    edges = _tree_edges(pipes)
    if not is_spanning_tree(n_nodes, edges):
        raise RecoveryError("gas graph is not a spanning tree; E psi = theta is generally unsolvable, use the LP residual")
    H = theta.shape[1]
    out = np.zeros((n_nodes, H))
    for h in range(H):
        out[:, h] = particular_solution_psi0(build_E(delta[:, h], pipes, n_nodes), theta[:, h])
    return out


def extreme_shift_condition(psi0: np.ndarray, psi_lo, psi_hi) -> bool:
    """Shift test on one step as literally stated: psi0_j - psi0_k <= hi_j - lo_k.

    j: among the maximisers of psi0, the one with the smallest upper bound.
    k: among the minimisers of psi0, the one with the largest upper bound.
    Ties resolve to the lowest node index. Exact only when all nodes share
    the same bounds; see :func:`shift_feasible` for the general test.
    """
    psi0 = np.asarray(psi0, float)
    lo = np.broadcast_to(np.asarray(psi_lo, float), psi0.shape)
    hi = np.broadcast_to(np.asarray(psi_hi, float), psi0.shape)
    top = np.flatnonzero(psi0 == psi0.max())
    bot = np.flatnonzero(psi0 == psi0.min())
    j = top[np.argmin(hi[top])]
    k = bot[np.argmax(hi[bot])]
    return bool(psi0[j] - psi0[k] <= hi[j] - lo[k])


def shift_feasible(psi0: np.ndarray, psi_lo, psi_hi, tol: float = 0.0) -> bool:
    """True iff some constant shift psi0 + c lies in the box."""
    psi0 = np.asarray(psi0, float)
    return bool(np.max(np.asarray(psi_lo) - psi0) <= np.min(np.asarray(psi_hi) - psi0) + tol)


# --------------------------------------------------------------------------- full stage 2


@dataclass(frozen=True, eq=False)
class Stage2Result:
    u: np.ndarray
    binaries: RecoveredBinaries
    pressures: PressureRecoveryResult
    phi: np.ndarray
    violation: float
    violated: bool


def recover(instance, u_hat: np.ndarray, weights=(1.0, 1.0), settings: SolverSettings | None = None) -> Stage2Result:
    """Build the mixed-integer point from a relaxed stage-1 solution."""
    net = instance.net
    vm = instance.gas_map
    u_hat = np.asarray(u_hat, float)
    pipes = list(vm.pipes)
    n = net.n_gas
    psi_lo, psi_hi = net.psi_bounds()
    phi = antisymmetrize(u_hat[instance.phi], vm.rev)
    c_f = np.array([net.pipe_of[p].c_f for p in pipes])

    u = u_hat[: instance.n_u].copy()
    u[instance.phi] = phi
    if instance.model == gasflow.MISOC:
        bins = recover_binaries(instance.model, phi)
        pres = recover_pressures_misoc(bins.delta, phi, pipes, n, c_f, psi_lo, psi_hi, weights, settings)
        u[instance.nu] = rebuild_aux_misoc(bins.delta, pres.psi, pipes)
        violation = pres.tau_max
    else:
        # keep flows inside capacity before region lookup
        cap = instance.segments.phi_max[:, None]
        phi = np.clip(phi, -cap, cap)
        u[instance.phi] = phi
        bins = recover_binaries(instance.model, phi, instance.segments)
        th = theta_tilde(instance.segments, phi, bins.gamma)
        pres = recover_pressures_pwa(bins.delta, th, pipes, n, psi_lo, psi_hi, settings)
        nps, num = rebuild_aux_pwa(bins.delta, bins.gamma, pres.psi, phi, pipes)
        u[instance.nu_psi] = nps
        u[instance.nu_m] = num
        u[instance.zidx("alpha")] = bins.alpha
        u[instance.zidx("beta")] = bins.beta
        u[instance.zidx("gamma")] = bins.gamma
        violation = pres.J_max
    u[instance.psi] = pres.psi
    u[instance.delta] = bins.delta
    return Stage2Result(
        u=u, binaries=bins, pressures=pres, phi=phi, violation=violation, violated=violation > VIOLATION_TOL
    )
