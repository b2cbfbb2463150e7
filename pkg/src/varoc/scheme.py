"""
Low-order (alpha, beta, gamma) discrete Lagrangians on state-costate space.

One interval contributes

    L_d = h * dlam . dq + h * [alpha * V(gamma) + (1 - alpha) * V(1 - gamma)]

where ``dq, dlam`` are divided differences, and ``V(c)`` is the potential
part evaluated at the averaged point ``c * y_k + (1 - c) * y_{k+1}``:

    V(c) = lam_c . f(q_c, dq) + 1/2 lam_c^T b(q_c) lam_c          (independent)
    V(c) = lam_c . (f(q_c, dq) + rho(q_c) U) - 1/2 U^T g(q_c) U   (dependent)

Every routine here accepts arrays with a leading interval axis so a full
grid is processed in one call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .core import ControlSystem, eval_b, eval_grad_b, minimising_control

__all__ = [
    "SchemeParams",
    "averaged",
    "IntervalTerms",
    "interval_terms",
    "interval_forces",
    "lagrangian_indep",
    "lagrangian_dep",
    "boundary_velocities_indep",
    "boundary_velocities_dep",
    "discrete_momenta",
    "minimising_interval_controls",
    "nodal_controls",
    "SCHEMES",
]


@dataclass(frozen=True)
class SchemeParams:
    """Member of the scheme family on a uniform grid of ``N`` steps of size ``h``."""

    alpha: float
    beta: float
    gamma: float
    N: int
    h: float

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {val}")
        if int(self.N) != self.N or self.N < 2:
            raise ValueError(f"N must be an integer >= 2, got {self.N}")
        if not self.h > 0:
            raise ValueError(f"h must be positive, got {self.h}")

    @classmethod
    def on_horizon(cls, T: float, N: int, alpha: float, beta: float = None,
                   gamma: float = None) -> "SchemeParams":
        gamma = alpha if gamma is None else gamma
        beta = gamma if beta is None else beta
        return cls(alpha=alpha, beta=beta, gamma=gamma, N=int(N), h=T / N)

    @property
    def T(self) -> float:
        return self.N * self.h

    def check_horizon(self, T: float):
        if abs(self.N * self.h - T) > 1e-12 * T:
            raise ValueError(f"N*h = {self.N * self.h!r} does not match T = {T!r}")

    def times(self) -> np.ndarray:
        return self.h * np.arange(self.N + 1)

    def control_times(self):
        """Time stamps of U1 (at beta) and U2 (at 1 - beta) per interval."""
        t = self.times()
        t1 = self.beta * t[:-1] + (1 - self.beta) * t[1:]
        t2 = (1 - self.beta) * t[:-1] + self.beta * t[1:]
        return t1, t2

    def label(self) -> str:
        return f"a{self.alpha:g}-b{self.beta:g}-g{self.gamma:g}"


# Named members of the family.
SCHEMES = {
    "symplectic-euler-a": (1.0, 1.0, 1.0),
    "symplectic-euler-b": (1.0, 0.0, 0.0),
    "midpoint": (0.5, 0.5, 0.5),
    "trapezoidal": (0.5, 1.0, 1.0),
}


def averaged(y0, y1, h: float, c: float):
    """Averaged point ``c*y0 + (1-c)*y1`` and divided difference ``(y1-y0)/h``."""
    y0 = np.asarray(y0, dtype=float)
    y1 = np.asarray(y1, dtype=float)
    return c * y0 + (1.0 - c) * y1, (y1 - y0) / h


class IntervalTerms(NamedTuple):
    """Per-interval pieces of a discrete Lagrangian (leading axis = interval).

    ``dV_*`` are the partial derivatives of ``h*[alpha V(gamma) + (1-alpha) V(1-gamma)]``
    with respect to the left (0) and right (1) node variables.
    """

    dq: np.ndarray
    dlam: np.ndarray
    value: np.ndarray
    dV_dq0: np.ndarray
    dV_dq1: np.ndarray
    dV_dl0: np.ndarray
    dV_dl1: np.ndarray
    force_a: np.ndarray
    force_b: np.ndarray


def _sub_forces(sys, q0, q1, h, c, U):
    qc, dq = averaged(q0, q1, h, c)
    force = sys.eval_f(qc, dq) + np.einsum("...ij,...j->...i", sys.eval_rho(qc), U)
    return force


def interval_forces(sys: ControlSystem, q0, q1, p: SchemeParams, U1, U2):
    """Controlled accelerations f + rho U at both averaged points.

    Reads no costate: used for the control-dependent boundary velocities.
    """
    fa = _sub_forces(sys, q0, q1, p.h, p.gamma, np.asarray(U1, dtype=float))
    fb = _sub_forces(sys, q0, q1, p.h, 1.0 - p.gamma, np.asarray(U2, dtype=float))
    return fa, fb


def _sub_terms(sys, q0, l0, q1, l1, h, c, U):
    """Value and partials of V(c) at one averaged point."""
    qc, dq = averaged(q0, q1, h, c)
    lc = c * l0 + (1.0 - c) * l1
    fv = sys.eval_f(qc, dq)
    jq = sys.eval_d_q_f(qc, dq)
    jv = sys.eval_d_v_f(qc, dq)
    if U is None:
        b = eval_b(sys, qc)
        blc = np.einsum("...ij,...j->...i", b, lc)
        force = fv + blc
        ctrl = 0.5 * np.einsum("...i,...i->...", lc, blc)
        grad_ctrl = 0.5 * eval_grad_b(sys, qc, lc)
    else:
        rho = sys.eval_rho(qc)
        rho_u = np.einsum("...ij,...j->...i", rho, U)
        force = fv + rho_u
        gU = np.einsum("...ij,...j->...i", sys.eval_g(qc), U)
        ctrl = np.einsum("...i,...i->...", lc, rho_u) - 0.5 * np.einsum("...i,...i->...", U, gU)
        grad_ctrl = np.empty_like(qc)
        for i in range(sys.n):
            w = np.zeros(sys.n)
            w[i] = 1.0
            w = np.broadcast_to(w, qc.shape)
            grad_ctrl[..., i] = (np.einsum("...i,...i->...", lc, sys.eval_d_q_rho(qc, U, w))
                                 - 0.5 * sys.eval_d_q_g(qc, U, U, w))
    value = np.einsum("...i,...i->...", lc, fv) + ctrl
    d_qc = np.einsum("...ji,...j->...i", jq, lc) + grad_ctrl
    d_dq = np.einsum("...ji,...j->...i", jv, lc)
    return value, force, d_qc, d_dq


def interval_terms(sys: ControlSystem, q0, l0, q1, l1, p: SchemeParams,
                   U1=None, U2=None) -> IntervalTerms:
    """Evaluate one or many intervals; ``U1 = U2 = None`` selects the
    control-independent Lagrangian."""
    if (U1 is None) != (U2 is None):
        raise ValueError("give both U1 and U2 or neither")
    h, a, g = p.h, p.alpha, p.gamma
    q0, l0, q1, l1 = (np.asarray(x, dtype=float) for x in (q0, l0, q1, l1))
    if U1 is not None:
        U1 = np.asarray(U1, dtype=float)
        U2 = np.asarray(U2, dtype=float)
    va, fa, dqa, dva = _sub_terms(sys, q0, l0, q1, l1, h, g, U1)
    vb, fb, dqb, dvb = _sub_terms(sys, q0, l0, q1, l1, h, 1.0 - g, U2)
    dq = (q1 - q0) / h
    dlam = (l1 - l0) / h
    wa, wb = h * a, h * (1.0 - a)
    return IntervalTerms(
        dq=dq,
        dlam=dlam,
        value=wa * va + wb * vb,
        dV_dq0=wa * (g * dqa - dva / h) + wb * ((1.0 - g) * dqb - dvb / h),
        dV_dq1=wa * ((1.0 - g) * dqa + dva / h) + wb * (g * dqb + dvb / h),
        dV_dl0=wa * g * fa + wb * (1.0 - g) * fb,
        dV_dl1=wa * (1.0 - g) * fa + wb * g * fb,
        force_a=fa,
        force_b=fb,
    )


def _lagrangian(terms: IntervalTerms, h: float):
    kinetic = h * np.einsum("...i,...i->...", terms.dlam, terms.dq)
    return kinetic + terms.value


def lagrangian_indep(sys: ControlSystem, pair, p: SchemeParams):
    """Control-independent discrete Lagrangian of ``pair = ((q_k, lam_k), (q_k1, lam_k1))``."""
    (q0, l0), (q1, l1) = pair
    return _lagrangian(interval_terms(sys, q0, l0, q1, l1, p), p.h)


def lagrangian_dep(sys: ControlSystem, pair, u, p: SchemeParams):
    """Control-dependent discrete Lagrangian; ``u = (U1, U2)``."""
    (q0, l0), (q1, l1) = pair
    U1, U2 = u
    return _lagrangian(interval_terms(sys, q0, l0, q1, l1, p, U1, U2), p.h)


def boundary_velocities_indep(sys: ControlSystem, first, last, p: SchemeParams):
    """Discrete v_0^- and v_N^+ from the first and last node pairs.

    ``first = (q_0, q_1, lam_0, lam_1)`` and ``last = (q_{N-1}, q_N, lam_{N-1}, lam_N)``.
    """
    q0, q1, l0, l1 = first
    t0 = interval_terms(sys, q0, l0, q1, l1, p)
    qa, qb, la, lb = last
    t1 = interval_terms(sys, qa, la, qb, lb, p)
    return t0.dq - t0.dV_dl0, t1.dq + t1.dV_dl1


def _velocities_from_forces(q0, q1, fa, fb, p: SchemeParams):
    h, a, g = p.h, p.alpha, p.gamma
    dq = (np.asarray(q1, dtype=float) - np.asarray(q0, dtype=float)) / h
    v_minus = dq - h * a * g * fa - h * (1 - a) * (1 - g) * fb
    v_plus = dq + h * a * (1 - g) * fa + h * (1 - a) * g * fb
    return v_minus, v_plus


def boundary_velocities_dep(sys: ControlSystem, first, last, controls_first, controls_last,
                            p: SchemeParams):
    """Control-dependent v_0^- and v_N^+; takes positions and controls only.

    ``first = (q_0, q_1)``, ``last = (q_{N-1}, q_N)``, ``controls_* = (U1, U2)``.
    """
    fa, fb = interval_forces(sys, first[0], first[1], p, *controls_first)
    v0, _ = _velocities_from_forces(first[0], first[1], fa, fb, p)
    fa, fb = interval_forces(sys, last[0], last[1], p, *controls_last)
    _, vN = _velocities_from_forces(last[0], last[1], fa, fb, p)
    return v0, vN


def discrete_momenta(sys: ControlSystem, pair, p: SchemeParams, u=None):
    """Momenta (p^-_k, p^+_{k+1}) conjugate to (q, lam), each of length 2n.

    Layout is ``[p_q, p_lam]``; the costate slot equals the discrete velocity.
    ``u = (U1, U2)`` selects the control-dependent Lagrangian.
    """
    (q0, l0), (q1, l1) = pair
    U1, U2 = (None, None) if u is None else u
    t = interval_terms(sys, q0, l0, q1, l1, p, U1, U2)
    p_minus = np.concatenate([t.dlam - t.dV_dq0, t.dq - t.dV_dl0], axis=-1)
    p_plus = np.concatenate([t.dlam + t.dV_dq1, t.dq + t.dV_dl1], axis=-1)
    return p_minus, p_plus


def minimising_interval_controls(sys: ControlSystem, q, lam, p: SchemeParams):
    """Controls (U1, U2) satisfying the minimisation condition at the averaged points."""
    q = np.asarray(q, dtype=float)
    lam = np.asarray(lam, dtype=float)
    g = p.gamma
    qa, _ = averaged(q[:-1], q[1:], p.h, g)
    la, _ = averaged(lam[:-1], lam[1:], p.h, g)
    qb, _ = averaged(q[:-1], q[1:], p.h, 1.0 - g)
    lb, _ = averaged(lam[:-1], lam[1:], p.h, 1.0 - g)
    return minimising_control(sys, qa, la), minimising_control(sys, qb, lb)


def nodal_controls(sys: ControlSystem, q, lam) -> np.ndarray:
    """Reporting control at the nodes, g(q_k) u_k = rho(q_k)^T lam_k."""
    return minimising_control(sys, q, lam)
