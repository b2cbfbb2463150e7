"""Planar low-thrust orbital transfer: Kepler drift with azimuthal thrust."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ControlSystem, OCProblem, TerminalCost

__all__ = [
    "KeplerParams",
    "kepler_system",
    "transfer_horizon",
    "initial_circular_state",
    "quadratic_terminal_cost",
    "kepler_problem",
    "rotation_generator",
    "spiral_path",
    "SingularityError",
]


class SingularityError(ValueError):
    """Model evaluated at the attracting centre r = 0."""


def _radius(q):
    r = np.linalg.norm(q, axis=-1)
    if np.any(r == 0.0):
        raise SingularityError("Kepler model evaluated at r = 0")
    return r


def kepler_system(G: float = 1.0, M: float = 10.0) -> ControlSystem:
    """q'' = -GM q / r^3 + (-y, x)^T u / r, with g = 1."""
    if not (G > 0 and M > 0):
        raise ValueError("G and M must be positive")
    gm = G * M

    def f(q, v):
        q = np.asarray(q, dtype=float)
        r = _radius(q)
        return -gm * q / (r**3)[..., None]

    def d_q_f(q, v):
        q = np.asarray(q, dtype=float)
        r = _radius(q)[..., None, None]
        outer = q[..., :, None] * q[..., None, :]
        return -gm * (np.eye(2) / r**3 - 3.0 * outer / r**5)

    def d_v_f(q, v):
        q = np.asarray(q, dtype=float)
        return np.zeros(q.shape[:-1] + (2, 2))

    def rho(q):
        q = np.asarray(q, dtype=float)
        r = _radius(q)
        col = np.stack([-q[..., 1], q[..., 0]], axis=-1) / r[..., None]
        return col[..., None]

    def d_q_rho(q, u, w):
        q = np.asarray(q, dtype=float)
        w = np.asarray(w, dtype=float)
        u = np.asarray(u, dtype=float)[..., 0]
        r = _radius(q)
        perp_w = np.stack([-w[..., 1], w[..., 0]], axis=-1)
        perp_q = np.stack([-q[..., 1], q[..., 0]], axis=-1)
        qw = np.einsum("...i,...i->...", q, w)
        d = perp_w / r[..., None] - perp_q * (qw / r**3)[..., None]
        return d * u[..., None]

    return ControlSystem(n=2, m=1, f=f, rho=rho, g_const=1.0, d_q_f=d_q_f, d_v_f=d_v_f,
                         d_q_rho=d_q_rho, name="kepler")


def transfer_horizon(d_revs: float, G: float, M: float, r0: float, rT: float) -> float:
    """Horizon of ``d_revs`` revolutions of the Hohmann-type transfer ellipse."""
    return d_revs * np.sqrt(4.0 * np.pi**2 * (r0 + rT) ** 3 / (8.0 * G * M))


def initial_circular_state(G: float, M: float, x0: float):
    if not x0 > 0:
        raise ValueError("x0 must be positive")
    return np.array([x0, 0.0]), np.array([0.0, np.sqrt(G * M / x0)])


def quadratic_terminal_cost(qT, vT, Kq, Kv) -> TerminalCost:
    """phi = (q - qT)^T Kq (q - qT) + (v - vT)^T Kv (v - vT)."""
    qT = np.asarray(qT, dtype=float)
    vT = np.asarray(vT, dtype=float)
    Kq = np.asarray(Kq, dtype=float)
    Kv = np.asarray(Kv, dtype=float)
    for K in (Kq, Kv):
        if not np.allclose(K, K.T) or np.any(np.linalg.eigvalsh(K) <= 0):
            raise ValueError("weight matrices must be symmetric positive definite")

    def phi(q, v):
        dq = np.asarray(q) - qT
        dv = np.asarray(v) - vT
        return float(dq @ Kq @ dq + dv @ Kv @ dv)

    return TerminalCost(
        phi=phi,
        d1_phi=lambda q, v: 2.0 * Kq @ (np.asarray(q) - qT),
        d2_phi=lambda q, v: 2.0 * Kv @ (np.asarray(v) - vT),
        target_q=qT,
    )


@dataclass(frozen=True)
class KeplerParams:
    """Parameters of the transfer; defaults reproduce the reference experiment.

    ``T`` overrides the horizon computed from ``d_revs`` when given; the
    reference runs use ``T = 28``.
    """

    G: float = 1.0
    M: float = 10.0
    d_revs: float = 1.5
    r0: float = 4.0
    rT: float = 5.0
    x0: float = 4.0
    qT: tuple = (-5.0, 0.0)
    vT: tuple | None = None
    Kq: tuple = ((1.0, 0.0), (0.0, 1.0))
    Kv: tuple = ((1.0, 0.0), (0.0, 1.0))
    T: float | None = 28.0

    def __post_init__(self):
        for name in ("G", "M", "r0", "rT"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def target_velocity(self) -> np.ndarray:
        if self.vT is not None:
            return np.asarray(self.vT, dtype=float)
        # circular speed at the outer radius, continuing the prograde sense
        return np.array([0.0, -np.sqrt(self.G * self.M / self.rT)])

    @property
    def horizon(self) -> float:
        if self.T is not None:
            return float(self.T)
        return transfer_horizon(self.d_revs, self.G, self.M, self.r0, self.rT)


def spiral_path(q0, qT, d_revs: float):
    """Guess path interpolating radius and polar angle between ``q0`` and ``qT``.

    The end angle is the target's angle shifted by whole turns to lie closest
    to ``2 pi d_revs`` past the start, so the path winds about the centre
    instead of cutting through it.
    """
    q0 = np.asarray(q0, dtype=float)
    qT = np.asarray(qT, dtype=float)
    r0, r1 = np.linalg.norm(q0), np.linalg.norm(qT)
    if r0 == 0 or r1 == 0:
        raise SingularityError("spiral path needs endpoints away from the centre")
    th0 = np.arctan2(q0[1], q0[0])
    th1 = np.arctan2(qT[1], qT[0])
    turns = np.round((th0 + 2.0 * np.pi * d_revs - th1) / (2.0 * np.pi))
    th1 = th1 + 2.0 * np.pi * turns

    def path(s):
        s = np.asarray(s, dtype=float)
        r = (1.0 - s) * r0 + s * r1
        th = (1.0 - s) * th0 + s * th1
        return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)

    return path


def kepler_problem(params: KeplerParams | None = None) -> OCProblem:
    params = KeplerParams() if params is None else params
    q0, v0 = initial_circular_state(params.G, params.M, params.x0)
    cost = quadratic_terminal_cost(params.qT, params.target_velocity, params.Kq, params.Kv)
    hint = spiral_path(q0, params.qT, params.d_revs)
    return OCProblem(kepler_system(params.G, params.M), cost, q0, v0, params.horizon, path_hint=hint)


def rotation_generator():
    """Infinitesimal generator (B, d) of planar rotations."""
    return np.array([[0.0, -1.0], [1.0, 0.0]]), np.zeros(2)
