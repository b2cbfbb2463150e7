"""
Direct transcriptions used as independent oracles.

Two discretise-then-optimise objectives are built from the same averaged
forces as the scheme family:

* ``dir2``: the controlled second-order difference equation appended with
  multipliers ``Lambda_k`` (k = 1..N-1);
* ``dir1``: a first-order (position, velocity) scheme appended with
  multipliers ``lam_q``, ``lam_v`` (indices 1..N).

Their KKT residuals are evaluated at variables mapped from a solution of the
state-costate system. Stationarity is taken by finite differences of
per-interval scalar pieces, which keeps these checks independent of the
analytic derivative code used by the residual assembly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import OCProblem
from .residual import DiscreteTrajectory, ResidualVector, recover_multipliers
from .scheme import SchemeParams, lagrangian_dep, minimising_interval_controls

__all__ = [
    "Dir1Variables",
    "Dir2Variables",
    "map_new_to_dir1",
    "map_new_to_dir2",
    "kkt_residual_dir1",
    "kkt_residual_dir2",
    "objective_dir1",
    "objective_dir2",
    "augmented_objective",
]

FD_STEP = 1e-4


@dataclass
class Dir1Variables:
    """First-order transcription variables; ``lam_q[i]``, ``lam_v[i]`` carry index i + 1."""

    q: np.ndarray
    v: np.ndarray
    lam_q: np.ndarray
    lam_v: np.ndarray
    U1: np.ndarray
    U2: np.ndarray
    mu: np.ndarray
    nu: np.ndarray

    @property
    def N(self) -> int:
        return self.q.shape[0] - 1


@dataclass
class Dir2Variables:
    """Second-order transcription variables; ``Lambda[i]`` carries index i + 1."""

    q: np.ndarray
    Lambda: np.ndarray
    U1: np.ndarray
    U2: np.ndarray
    mu: np.ndarray
    nu: np.ndarray

    @property
    def N(self) -> int:
        return self.q.shape[0] - 1


# --- shared pieces -----------------------------------------------------------

def _forces(sys, qa, qb, U1, U2, p: SchemeParams):
    """f + rho U at both averaged points of intervals (qa, qb); velocity slot is the difference."""
    g = p.gamma
    dq = (qb - qa) / p.h
    out = []
    for c, U in ((g, U1), (1.0 - g, U2)):
        qc = c * qa + (1.0 - c) * qb
        out.append(sys.eval_f(qc, dq) + np.einsum("...ij,...j->...i", sys.eval_rho(qc), U))
    return out


def _running(sys, qa, qb, U1, U2, p: SchemeParams):
    g, a = p.gamma, p.alpha
    terms = []
    for c, w, U in ((g, a, U1), (1.0 - g, 1.0 - a, U2)):
        qc = c * qa + (1.0 - c) * qb
        terms.append(w * np.einsum("...i,...ij,...j->...", U, sys.eval_g(qc), U))
    return 0.5 * p.h * (terms[0] + terms[1])


def _v_minus(sys, qa, qb, U1, U2, p):
    fa, fb = _forces(sys, qa, qb, U1, U2, p)
    a, g, h = p.alpha, p.gamma, p.h
    return (qb - qa) / h - h * a * g * fa - h * (1 - a) * (1 - g) * fb


def _v_plus(sys, qa, qb, U1, U2, p):
    fa, fb = _forces(sys, qa, qb, U1, U2, p)
    a, g, h = p.alpha, p.gamma, p.h
    return (qb - qa) / h + h * a * (1 - g) * fa + h * (1 - a) * g * fb


def _split(z, sizes):
    out = []
    off = 0
    for s in sizes:
        out.append(z[..., off:off + s])
        off += s
    return out


def _fd_grad(fun, z):
    """Fourth-order central-difference gradient of a row-wise scalar function.

    ``z`` has shape ``(K, d)``; ``fun`` maps it to ``(K,)``.
    """
    z = np.asarray(z, dtype=float)
    grad = np.empty_like(z)
    for j in range(z.shape[1]):
        d = FD_STEP * (1.0 + np.abs(z[:, j]))
        vals = []
        for s in (2.0, 1.0, -1.0, -2.0):
            zs = z.copy()
            zs[:, j] += s * d
            vals.append(fun(zs))
        grad[:, j] = (-vals[0] + 8.0 * vals[1] - 8.0 * vals[2] + vals[3]) / (12.0 * d)
    return grad


class _Layout:
    """Named blocks of a flat variable vector."""

    def __init__(self, shapes):
        self.slices = {}
        off = 0
        for name, shape in shapes:
            size = int(np.prod(shape))
            self.slices[name] = (off, shape)
            off += size
        self.size = off

    def index(self, name):
        off, shape = self.slices[name]
        return off + np.arange(int(np.prod(shape))).reshape(shape)


def _accumulate(grad, idx_blocks, g_local):
    idx = np.concatenate(idx_blocks, axis=1)
    np.add.at(grad, idx, g_local)


def _ctrl_idx(lay, k):
    return [lay.index("U1")[k], lay.index("U2")[k]]


# --- mappings ----------------------------------------------------------------

def _controls(traj: DiscreteTrajectory, prob: OCProblem, p: SchemeParams):
    if traj.has_controls:
        return traj.U1, traj.U2
    return minimising_interval_controls(prob.system, traj.q, traj.lam, p)


def _multipliers(traj, prob, p):
    if traj.mu is not None and traj.nu is not None:
        return np.asarray(traj.mu, dtype=float), np.asarray(traj.nu, dtype=float)
    return recover_multipliers(prob, p, traj)


def map_new_to_dir2(traj: DiscreteTrajectory, prob: OCProblem, p: SchemeParams) -> Dir2Variables:
    """``Lambda_k = lam_k`` for k = 1..N-1; positions, controls and multipliers copied."""
    U1, U2 = _controls(traj, prob, p)
    mu, nu = _multipliers(traj, prob, p)
    return Dir2Variables(traj.q.copy(), traj.lam[1:-1].copy(), np.array(U1), np.array(U2), mu, nu)


def map_new_to_dir1(traj: DiscreteTrajectory, prob: OCProblem, p: SchemeParams) -> Dir1Variables:
    """``lam_v_k = lam_k``, ``lam_q_{k+1} = (lam_k - lam_{k+1}) / h``, ``v_k = v_k^-``, ``v_N = v_N^+``."""
    sys = prob.system
    q, lam = traj.q, traj.lam
    U1, U2 = _controls(traj, prob, p)
    mu, nu = _multipliers(traj, prob, p)
    v = np.empty_like(q)
    v[:-1] = _v_minus(sys, q[:-1], q[1:], U1, U2, p)
    v[-1] = _v_plus(sys, q[-2], q[-1], U1[-1], U2[-1], p)
    lam_q = (lam[:-1] - lam[1:]) / p.h
    return Dir1Variables(q.copy(), v, lam_q, lam[1:].copy(), np.array(U1), np.array(U2), mu, nu)


# --- second-order transcription ---------------------------------------------

def _dir2_dyn(sys, p, qm, q0, qp, U1m, U2m, U1k, U2k):
    fa_m, fb_m = _forces(sys, qm, q0, U1m, U2m, p)
    fa_k, fb_k = _forces(sys, q0, qp, U1k, U2k, p)
    a, g = p.alpha, p.gamma
    rhs = (a * (g * fa_k + (1 - g) * fa_m)
           + (1 - a) * ((1 - g) * fb_k + g * fb_m))
    return (qp - 2.0 * q0 + qm) / p.h**2 - rhs


def _dir2_pieces(prob, p, V: Dir2Variables):
    """Scalar pieces of the dir2 objective as (function, local z, global index blocks)."""
    sys, n, m, N = prob.system, prob.system.n, prob.system.m, V.N
    lay = _Layout([("q", (N + 1, n)), ("U1", (N, m)), ("U2", (N, m))])
    Q, U1, U2 = lay.index("q"), lay.index("U1"), lay.index("U2")
    cost = prob.terminal
    pieces = []

    def terminal(z):
        qa, qb, u1, u2 = _split(z, (n, n, m, m))
        vN = _v_plus(sys, qa, qb, u1, u2, p)
        return np.array([cost.phi(qb[i], vN[i]) for i in range(z.shape[0])])

    pieces.append((terminal, [Q[N - 1:N], Q[N:N + 1], U1[N - 1:N], U2[N - 1:N]]))

    def initial(z):
        qa, qb, u1, u2 = _split(z, (n, n, m, m))
        v0 = _v_minus(sys, qa, qb, u1, u2, p)
        return (np.einsum("i,ki->k", V.mu, qa - prob.q0)
                + np.einsum("i,ki->k", V.nu, v0 - prob.v0))

    pieces.append((initial, [Q[0:1], Q[1:2], U1[0:1], U2[0:1]]))

    def running(z):
        qa, qb, u1, u2 = _split(z, (n, n, m, m))
        return _running(sys, qa, qb, u1, u2, p)

    pieces.append((running, [Q[:-1], Q[1:], U1, U2]))

    Lam = V.Lambda

    def dyn(z):
        qm, q0, qp, u1m, u2m, u1k, u2k = _split(z, (n, n, n, m, m, m, m))
        return p.h * np.einsum("ki,ki->k", Lam[:z.shape[0]], _dir2_dyn(sys, p, qm, q0, qp, u1m, u2m, u1k, u2k))

    pieces.append((dyn, [Q[:-2], Q[1:-1], Q[2:], U1[:-1], U2[:-1], U1[1:], U2[1:]]))
    x = np.concatenate([V.q.ravel(), V.U1.ravel(), V.U2.ravel()])
    return lay, x, pieces


def _eval_pieces(lay, x, pieces, grad: bool):
    total = 0.0
    g = np.zeros(lay.size) if grad else None
    for fun, idx_blocks in pieces:
        idx = np.concatenate(idx_blocks, axis=1)
        z = x[idx]
        total += float(np.sum(fun(z)))
        if grad:
            _accumulate(g, idx_blocks, _fd_grad(fun, z))
    return total, g


def objective_dir2(V: Dir2Variables, prob: OCProblem, p: SchemeParams) -> float:
    lay, x, pieces = _dir2_pieces(prob, p, V)
    return _eval_pieces(lay, x, pieces, grad=False)[0]


def kkt_residual_dir2(V: Dir2Variables, prob: OCProblem, p: SchemeParams) -> ResidualVector:
    """Stationarity in (q, U1, U2) plus feasibility of every appended constraint."""
    if V.Lambda.shape[0] != V.N - 1:
        raise ValueError("Lambda must have N-1 entries")
    sys = prob.system
    lay, x, pieces = _dir2_pieces(prob, p, V)
    _, g = _eval_pieces(lay, x, pieces, grad=True)
    q, U1, U2 = V.q, V.U1, V.U2
    dyn = _dir2_dyn(sys, p, q[:-2], q[1:-1], q[2:], U1[:-1], U2[:-1], U1[1:], U2[1:])
    v0 = _v_minus(sys, q[0], q[1], U1[0], U2[0], p)
    return ResidualVector.from_blocks([
        ("stat_q", g[lay.index("q")]),
        ("stat_U1", g[lay.index("U1")]),
        ("stat_U2", g[lay.index("U2")]),
        ("dynamics", dyn),
        ("init_q", q[0] - prob.q0),
        ("init_v", v0 - prob.v0),
    ])


# --- first-order transcription ----------------------------------------------

def _dir1_constraints(sys, p, qa, qb, va, vb, u1, u2):
    fa, fb = _forces(sys, qa, qb, u1, u2, p)
    a, g, h = p.alpha, p.gamma, p.h
    con_q = (qb - qa) / h - va - h * a * g * fa - h * (1 - a) * (1 - g) * fb
    con_v = (vb - va) / h - a * fa - (1 - a) * fb
    return con_q, con_v


def _dir1_pieces(prob, p, V: Dir1Variables):
    sys, n, m, N = prob.system, prob.system.n, prob.system.m, V.N
    lay = _Layout([("q", (N + 1, n)), ("v", (N + 1, n)), ("U1", (N, m)), ("U2", (N, m))])
    Q, Vv, U1, U2 = lay.index("q"), lay.index("v"), lay.index("U1"), lay.index("U2")
    cost = prob.terminal
    pieces = []

    def terminal(z):
        qN, vN = _split(z, (n, n))
        return np.array([cost.phi(qN[i], vN[i]) for i in range(z.shape[0])])

    pieces.append((terminal, [Q[N:N + 1], Vv[N:N + 1]]))

    def initial(z):
        q0, v0 = _split(z, (n, n))
        return (np.einsum("i,ki->k", V.mu, q0 - prob.q0)
                + np.einsum("i,ki->k", V.nu, v0 - prob.v0))

    pieces.append((initial, [Q[0:1], Vv[0:1]]))

    def running(z):
        qa, qb, u1, u2 = _split(z, (n, n, m, m))
        return _running(sys, qa, qb, u1, u2, p)

    pieces.append((running, [Q[:-1], Q[1:], U1, U2]))

    def dyn(z):
        qa, qb, va, vb, u1, u2 = _split(z, (n, n, n, n, m, m))
        cq, cv = _dir1_constraints(sys, p, qa, qb, va, vb, u1, u2)
        return p.h * (np.einsum("ki,ki->k", V.lam_q, cq) + np.einsum("ki,ki->k", V.lam_v, cv))

    pieces.append((dyn, [Q[:-1], Q[1:], Vv[:-1], Vv[1:], U1, U2]))
    x = np.concatenate([V.q.ravel(), V.v.ravel(), V.U1.ravel(), V.U2.ravel()])
    return lay, x, pieces


def objective_dir1(V: Dir1Variables, prob: OCProblem, p: SchemeParams) -> float:
    lay, x, pieces = _dir1_pieces(prob, p, V)
    return _eval_pieces(lay, x, pieces, grad=False)[0]


def kkt_residual_dir1(V: Dir1Variables, prob: OCProblem, p: SchemeParams) -> ResidualVector:
    """Stationarity in (q, v, U1, U2) plus feasibility of the first-order scheme and initial data."""
    sys = prob.system
    lay, x, pieces = _dir1_pieces(prob, p, V)
    _, g = _eval_pieces(lay, x, pieces, grad=True)
    cq, cv = _dir1_constraints(sys, p, V.q[:-1], V.q[1:], V.v[:-1], V.v[1:], V.U1, V.U2)
    return ResidualVector.from_blocks([
        ("stat_q", g[lay.index("q")]),
        ("stat_v", g[lay.index("v")]),
        ("stat_U1", g[lay.index("U1")]),
        ("stat_U2", g[lay.index("U2")]),
        ("con_q", cq),
        ("con_v", cv),
        ("init_q", V.q[0] - prob.q0),
        ("init_v", V.v[0] - prob.v0),
    ])


# --- state-costate objective --------------------------------------------------

def augmented_objective(traj: DiscreteTrajectory, prob: OCProblem, p: SchemeParams) -> float:
    """Augmented objective of the control-dependent state-costate formulation.

    ``phi + mu.(q_0 - q0) + nu.(v_0^- - v0) + lam_N.v_N^+ - lam_0.v_0^- - sum_k L_d``.
    """
    sys = prob.system
    q, lam = traj.q, traj.lam
    U1, U2 = _controls(traj, prob, p)
    mu, nu = _multipliers(traj, prob, p)
    v0 = _v_minus(sys, q[0], q[1], U1[0], U2[0], p)
    vN = _v_plus(sys, q[-2], q[-1], U1[-1], U2[-1], p)
    Ld = lagrangian_dep(sys, ((q[:-1], lam[:-1]), (q[1:], lam[1:])), (U1, U2), p)
    return float(prob.terminal.phi(q[-1], vN) + mu @ (q[0] - prob.q0) + nu @ (v0 - prob.v0)
                 + lam[-1] @ vN - lam[0] @ v0 - np.sum(Ld))
