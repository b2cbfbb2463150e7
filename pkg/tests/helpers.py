"""Synthetic systems and cached solves shared by the test modules."""

from functools import lru_cache

import numpy as np

from varoc.core import ControlSystem, OCProblem, TerminalCost
from varoc.kepler import kepler_problem
from varoc.scheme import SchemeParams
from varoc.solver import solve

TRANSFER_SCHEMES = [(1.0, 1.0, 1.0), (0.5, 0.5, 0.5)]
EQUIV_SCHEMES = [(1.0, 1.0, 1.0), (1.0, 0.0, 0.0), (0.5, 0.5, 0.5), (0.5, 1.0, 1.0)]


def free_particle(n=2, rho_identity=True):
    """f = 0, rho = I (or zero-width identity column block), g = I."""
    m = n
    return ControlSystem(
        n=n, m=m,
        f=lambda q, v: np.zeros(np.broadcast_shapes(np.shape(q), np.shape(v))),
        rho=lambda q: np.broadcast_to(np.eye(n), np.shape(q)[:-1] + (n, n)).copy(),
        g_const=1.0,
        d_q_f=lambda q, v: np.zeros(np.shape(q)[:-1] + (n, n)),
        d_v_f=lambda q, v: np.zeros(np.shape(q)[:-1] + (n, n)),
        d_q_rho=lambda q, u, w: np.zeros(np.broadcast_shapes(np.shape(q), np.shape(w))),
        name="free",
    )


def null_system(n=2):
    """f = 0 and rho = 0: only the kinetic coupling survives."""
    return ControlSystem(
        n=n, m=1,
        f=lambda q, v: np.zeros(np.broadcast_shapes(np.shape(q), np.shape(v))),
        rho=lambda q: np.zeros(np.shape(q)[:-1] + (n, 1)),
        g_const=1.0,
        name="null",
    )


def linear_system(A, B):
    """f = A q + B v with exact derivatives, rho = I, g = I."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n = A.shape[0]
    return ControlSystem(
        n=n, m=n,
        f=lambda q, v: np.einsum("ij,...j->...i", A, q) + np.einsum("ij,...j->...i", B, v),
        rho=lambda q: np.broadcast_to(np.eye(n), np.shape(q)[:-1] + (n, n)).copy(),
        g_const=1.0,
        d_q_f=lambda q, v: np.broadcast_to(A, np.shape(q)[:-1] + (n, n)).copy(),
        d_v_f=lambda q, v: np.broadcast_to(B, np.shape(q)[:-1] + (n, n)).copy(),
        name="linear",
    )


def _pend_f(q, v):
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    return np.stack([-np.sin(q[..., 0]) - 0.1 * v[..., 0] * q[..., 1],
                     -q[..., 1] + 0.2 * v[..., 1] ** 2 - 0.05 * v[..., 0]], axis=-1)


def _pend_rho(q):
    q = np.asarray(q, dtype=float)
    col = np.stack([1.0 + 0.3 * np.cos(q[..., 1]), 0.5 * q[..., 0]], axis=-1)
    return col[..., None]


def _pend_g(q):
    q = np.asarray(q, dtype=float)
    return (1.0 + 0.2 * q[..., 0] ** 2 + 0.1 * np.sin(q[..., 1]))[..., None, None]


def coupled_system(analytic=True):
    """Underactuated n = 2, m = 1 system with velocity-dependent drift and
    configuration-dependent metric. ``analytic=False`` leaves every
    derivative to the finite-difference fallback."""

    def d_q_f(q, v):
        q = np.asarray(q, dtype=float)
        v = np.asarray(v, dtype=float)
        out = np.zeros(q.shape[:-1] + (2, 2))
        out[..., 0, 0] = -np.cos(q[..., 0])
        out[..., 0, 1] = -0.1 * v[..., 0]
        out[..., 1, 1] = -1.0
        return out

    def d_v_f(q, v):
        q = np.asarray(q, dtype=float)
        v = np.asarray(v, dtype=float)
        out = np.zeros(q.shape[:-1] + (2, 2))
        out[..., 0, 0] = -0.1 * q[..., 1]
        out[..., 1, 0] = -0.05
        out[..., 1, 1] = 0.4 * v[..., 1]
        return out

    def d_q_rho(q, u, w):
        q = np.asarray(q, dtype=float)
        w = np.asarray(w, dtype=float)
        u = np.asarray(u, dtype=float)[..., 0]
        return np.stack([-0.3 * np.sin(q[..., 1]) * w[..., 1], 0.5 * w[..., 0]], axis=-1) * u[..., None]

    def d_q_g(q, u1, u2, w):
        q = np.asarray(q, dtype=float)
        w = np.asarray(w, dtype=float)
        uu = np.asarray(u1, dtype=float)[..., 0] * np.asarray(u2, dtype=float)[..., 0]
        return uu * (0.4 * q[..., 0] * w[..., 0] + 0.1 * np.cos(q[..., 1]) * w[..., 1])

    if analytic:
        return ControlSystem(n=2, m=1, f=_pend_f, rho=_pend_rho, g=_pend_g, d_q_f=d_q_f, d_v_f=d_v_f,
                             d_q_rho=d_q_rho, d_q_g=d_q_g, name="coupled")
    return ControlSystem(n=2, m=1, f=_pend_f, rho=_pend_rho, g=_pend_g, name="coupled-fd")


def quadratic_cost(qT, vT, wq=1.0, wv=1.0):
    qT = np.asarray(qT, dtype=float)
    vT = np.asarray(vT, dtype=float)
    return TerminalCost(
        phi=lambda q, v: float(wq * (q - qT) @ (q - qT) + wv * (v - vT) @ (v - vT)),
        d1_phi=lambda q, v: 2.0 * wq * (np.asarray(q) - qT),
        d2_phi=lambda q, v: 2.0 * wv * (np.asarray(v) - vT),
        target_q=qT,
    )


def coupled_problem(T=2.0):
    return OCProblem(coupled_system(), quadratic_cost([0.8, -0.3], [0.0, 0.2]),
                     np.array([0.2, 0.4]), np.array([0.1, -0.2]), T)


@lru_cache(maxsize=None)
def kepler():
    return kepler_problem()


@lru_cache(maxsize=None)
def kepler_solve(scheme, formulation="independent", N=280):
    """Cached Kepler solve at ``T = 28`` with N steps."""
    a, b, g = scheme
    prob = kepler()
    p = SchemeParams(a, b, g, N, prob.T / N)
    return prob, p, solve(prob, p, formulation)


@lru_cache(maxsize=None)
def coupled_solve(scheme, formulation="independent", N=40):
    a, b, g = scheme
    prob = coupled_problem()
    p = SchemeParams(a, b, g, N, prob.T / N)
    return prob, p, solve(prob, p, formulation)


# one line per acceptance criterion, echoed by the terminal summary hook
ACCEPTANCE_LINES = []


def report(number, title, ok, detail):
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
