"""
Square systems of discrete necessary optimality conditions.

Unknown layout: ``x = [q_0..q_N, lam_0..lam_N]`` for the control-independent
formulation, followed by ``[U1_0..U1_{N-1}, U2_0..U2_{N-1}]`` for the
control-dependent one. The boundary multipliers are eliminated
(``nu = lam_0``; ``mu`` from the initial-node stationarity) and recovered by
:func:`recover_multipliers`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .core import OCProblem
from .scheme import (SchemeParams, interval_terms, interval_forces, minimising_interval_controls,
                     _velocities_from_forces)

__all__ = [
    "INDEPENDENT",
    "DEPENDENT",
    "DiscreteTrajectory",
    "ResidualVector",
    "unknown_count",
    "pack",
    "unpack",
    "assemble_indep",
    "assemble_dep",
    "assemble",
    "recover_multipliers",
    "residual_function",
    "sparsity_pattern",
]

INDEPENDENT = "independent"
DEPENDENT = "dependent"


@dataclass
class DiscreteTrajectory:
    """Nodal states and costates, optional interval controls and multipliers."""

    q: np.ndarray
    lam: np.ndarray
    U1: Optional[np.ndarray] = None
    U2: Optional[np.ndarray] = None
    mu: Optional[np.ndarray] = None
    nu: Optional[np.ndarray] = None

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.lam = np.asarray(self.lam, dtype=float)
        if self.q.ndim != 2 or self.q.shape != self.lam.shape:
            raise ValueError(f"q and lam must share shape (N+1, n), got {self.q.shape}, {self.lam.shape}")
        if (self.U1 is None) != (self.U2 is None):
            raise ValueError("give both U1 and U2 or neither")
        if self.U1 is not None:
            self.U1 = np.atleast_2d(np.asarray(self.U1, dtype=float))
            self.U2 = np.atleast_2d(np.asarray(self.U2, dtype=float))
            if self.U1.shape != self.U2.shape or self.U1.shape[0] != self.N:
                raise ValueError("U1 and U2 must both have shape (N, m)")

    @property
    def N(self) -> int:
        return self.q.shape[0] - 1

    @property
    def n(self) -> int:
        return self.q.shape[1]

    @property
    def has_controls(self) -> bool:
        return self.U1 is not None

    def check_finite(self):
        arrays = [self.q, self.lam] + ([self.U1, self.U2] if self.has_controls else [])
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValueError("trajectory contains non-finite values")

    def with_controls(self, U1, U2) -> "DiscreteTrajectory":
        return DiscreteTrajectory(self.q.copy(), self.lam.copy(), U1, U2, self.mu, self.nu)


@dataclass
class ResidualVector:
    """Concatenated equation blocks with a name -> (offset, length) map."""

    values: np.ndarray
    blocks: dict = field(default_factory=dict)

    @classmethod
    def from_blocks(cls, named):
        blocks = {}
        parts = []
        off = 0
        for name, arr in named:
            flat = np.ravel(arr)
            blocks[name] = (off, flat.size)
            parts.append(flat)
            off += flat.size
        return cls(np.concatenate(parts), blocks)

    def block(self, name: str) -> np.ndarray:
        off, ln = self.blocks[name]
        return self.values[off:off + ln]

    def max_norm(self) -> float:
        return float(np.max(np.abs(self.values), initial=0.0))

    def block_norms(self) -> dict:
        return {k: float(np.max(np.abs(self.block(k)), initial=0.0)) for k in self.blocks}

    def __len__(self):
        return self.values.size


def unknown_count(n: int, m: int, N: int, formulation: str) -> int:
    base = 2 * n * (N + 1)
    if formulation == INDEPENDENT:
        return base
    if formulation == DEPENDENT:
        return base + 2 * m * N
    raise ValueError(f"unknown formulation {formulation!r}")


def pack(traj: DiscreteTrajectory, formulation: str) -> np.ndarray:
    parts = [traj.q.ravel(), traj.lam.ravel()]
    if formulation == DEPENDENT:
        if not traj.has_controls:
            raise ValueError("dependent formulation needs U1, U2")
        parts += [traj.U1.ravel(), traj.U2.ravel()]
    return np.concatenate(parts)


def unpack(x, n: int, m: int, N: int, formulation: str) -> DiscreteTrajectory:
    x = np.asarray(x, dtype=float)
    if x.size != unknown_count(n, m, N, formulation):
        raise ValueError(f"vector of length {x.size} does not match the {formulation} layout")
    s = n * (N + 1)
    q = x[:s].reshape(N + 1, n)
    lam = x[s:2 * s].reshape(N + 1, n)
    if formulation == INDEPENDENT:
        return DiscreteTrajectory(q, lam)
    c = m * N
    U1 = x[2 * s:2 * s + c].reshape(N, m)
    U2 = x[2 * s + c:].reshape(N, m)
    return DiscreteTrajectory(q, lam, U1, U2)


def _check(prob: OCProblem, p: SchemeParams, traj: DiscreteTrajectory, need_controls: bool):
    p.check_horizon(prob.T)
    if traj.N != p.N or traj.n != prob.system.n:
        raise ValueError(f"trajectory shape {traj.q.shape} does not match N={p.N}, n={prob.system.n}")
    if need_controls:
        if not traj.has_controls:
            raise ValueError("dependent formulation needs U1, U2")
        if traj.U1.shape[1] != prob.system.m:
            raise ValueError("control dimension mismatch")
    traj.check_finite()


def _common_blocks(prob, p, traj, terms, v0, vN):
    h = p.h
    q, lam = traj.q, traj.lam
    d2q = (q[2:] - 2.0 * q[1:-1] + q[:-2]) / h**2
    d2l = (lam[2:] - 2.0 * lam[1:-1] + lam[:-2]) / h**2
    del_lam = d2q - (terms.dV_dl0[1:] + terms.dV_dl1[:-1]) / h
    del_q = d2l - (terms.dV_dq0[1:] + terms.dV_dq1[:-1]) / h
    pq_N = terms.dlam[-1] + terms.dV_dq1[-1]
    cost = prob.terminal
    qN = q[-1]
    end_q = np.asarray(cost.d1_phi(qN, vN), dtype=float) - pq_N
    end_lam = lam[-1] + np.asarray(cost.d2_phi(qN, vN), dtype=float)
    return del_lam, del_q, q[0] - prob.q0, v0 - prob.v0, end_q, end_lam


def assemble_indep(prob: OCProblem, p: SchemeParams, traj: DiscreteTrajectory) -> ResidualVector:
    """Residual of the control-independent optimality system, length 2n(N+1)."""
    _check(prob, p, traj, need_controls=False)
    q, lam = traj.q, traj.lam
    t = interval_terms(prob.system, q[:-1], lam[:-1], q[1:], lam[1:], p)
    v0 = t.dq[0] - t.dV_dl0[0]
    vN = t.dq[-1] + t.dV_dl1[-1]
    a, b, c, d, e, f = _common_blocks(prob, p, traj, t, v0, vN)
    return ResidualVector.from_blocks([
        ("del_lam", a), ("del_q", b), ("init_q", c), ("init_v", d), ("end_q", e), ("end_lam", f),
    ])


def assemble_dep(prob: OCProblem, p: SchemeParams, traj: DiscreteTrajectory) -> ResidualVector:
    """Residual of the control-dependent optimality system, length 2n(N+1) + 2mN."""
    _check(prob, p, traj, need_controls=True)
    sys = prob.system
    q, lam, U1, U2 = traj.q, traj.lam, traj.U1, traj.U2
    t = interval_terms(sys, q[:-1], lam[:-1], q[1:], lam[1:], p, U1, U2)
    # boundary velocities built from positions and controls only
    v0, _ = _velocities_from_forces(q[0], q[1], t.force_a[0], t.force_b[0], p)
    _, vN = _velocities_from_forces(q[-2], q[-1], t.force_a[-1], t.force_b[-1], p)
    a, b, c, d, e, f = _common_blocks(prob, p, traj, t, v0, vN)
    ga, gb = p.gamma, 1.0 - p.gamma
    qa = ga * q[:-1] + gb * q[1:]
    la = ga * lam[:-1] + gb * lam[1:]
    qb = gb * q[:-1] + ga * q[1:]
    lb = gb * lam[:-1] + ga * lam[1:]
    min1 = (np.einsum("kij,ki->kj", sys.eval_rho(qa), la)
            - np.einsum("kij,kj->ki", sys.eval_g(qa), U1))
    min2 = (np.einsum("kij,ki->kj", sys.eval_rho(qb), lb)
            - np.einsum("kij,kj->ki", sys.eval_g(qb), U2))
    return ResidualVector.from_blocks([
        ("del_lam", a), ("del_q", b), ("min_U1", min1), ("min_U2", min2),
        ("init_q", c), ("init_v", d), ("end_q", e), ("end_lam", f),
    ])


def assemble(prob: OCProblem, p: SchemeParams, traj: DiscreteTrajectory,
             formulation: str) -> ResidualVector:
    if formulation == INDEPENDENT:
        return assemble_indep(prob, p, traj)
    if formulation == DEPENDENT:
        return assemble_dep(prob, p, traj)
    raise ValueError(f"unknown formulation {formulation!r}")


def recover_multipliers(prob: OCProblem, p: SchemeParams, traj: DiscreteTrajectory):
    """Return ``(mu, nu)``: ``nu = lam_0`` and ``mu`` from stationarity in ``q_0``."""
    q, lam = traj.q, traj.lam
    if traj.has_controls:
        t = interval_terms(prob.system, q[0], lam[0], q[1], lam[1], p, traj.U1[0], traj.U2[0])
    else:
        t = interval_terms(prob.system, q[0], lam[0], q[1], lam[1], p)
    mu = -t.dlam + t.dV_dq0
    return mu, lam[0].copy()


def residual_function(prob: OCProblem, p: SchemeParams, formulation: str):
    """Closure ``F(x) -> residual values`` on the packed unknown vector."""
    n, m, N = prob.system.n, prob.system.m, p.N

    def F(x):
        return assemble(prob, p, unpack(x, n, m, N, formulation), formulation).values

    return F


def sparsity_pattern(n: int, m: int, N: int, formulation: str) -> sp.csr_matrix:
    """Structural nonzero pattern of the residual Jacobian (a superset)."""
    dep = formulation == DEPENDENT
    s = n * (N + 1)

    def node_cols(k):
        cols = list(range(k * n, (k + 1) * n)) + list(range(s + k * n, s + (k + 1) * n))
        return cols

    def ctrl_cols(k):
        if not dep:
            return []
        c = m * N
        return (list(range(2 * s + k * m, 2 * s + (k + 1) * m))
                + list(range(2 * s + c + k * m, 2 * s + c + (k + 1) * m)))

    def interval_cols(k):
        return node_cols(k) + node_cols(k + 1) + ctrl_cols(k)

    rows = []
    # del_lam then del_q, k = 1..N-1
    for _ in range(2):
        for k in range(1, N):
            cols = sorted(set(interval_cols(k - 1) + interval_cols(k)))
            rows.extend([cols] * n)
    if dep:
        for _ in range(2):
            for k in range(N):
                rows.extend([interval_cols(k)] * m)
    rows.extend([node_cols(0)] * n)
    rows.extend([interval_cols(0)] * n)
    rows.extend([interval_cols(N - 1)] * (2 * n))
    indptr = np.cumsum([0] + [len(r) for r in rows])
    indices = np.concatenate([np.asarray(r, dtype=np.int64) for r in rows])
    size = unknown_count(n, m, N, formulation)
    data = np.ones(indices.size, dtype=bool)
    return sp.csr_matrix((data, indices, indptr), shape=(len(rows), size))
