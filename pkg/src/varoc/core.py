"""
Continuous problem data: the controlled second-order system, terminal cost
and boundary data, plus the quantities derived from them (reduced control
operator ``b(q)`` and the minimising control).

All model callables broadcast over leading axes: ``q`` and ``v`` may have
shape ``(..., n)`` and the outputs carry the same leading shape. The
residual assembly evaluates every interval of a grid in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "MetricSingularError",
    "ControlSystem",
    "TerminalCost",
    "OCProblem",
    "DerivativeReport",
    "eval_b",
    "eval_grad_b",
    "minimising_control",
    "check_derivatives",
    "check_terminal_cost",
]

FD_REL_STEP = 1e-6


class MetricSingularError(np.linalg.LinAlgError):
    """Raised when the control metric g(q) cannot be factorised."""


def _fd_step(x):
    return FD_REL_STEP * (1.0 + np.abs(x))


def _fd_jacobian(fun, x, *args):
    """Central-difference Jacobian of ``fun(x, *args)`` w.r.t. ``x``.

    Broadcasts over leading axes of ``x``; returns shape ``out_shape + (n,)``.
    """
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.shape[-1]):
        step = _fd_step(x[..., i])
        xp = x.copy()
        xm = x.copy()
        xp[..., i] += step
        xm[..., i] -= step
        diff = np.asarray(fun(xp, *args)) - np.asarray(fun(xm, *args))
        # divide by the representable step, not the nominal one
        denom = xp[..., i] - xm[..., i]
        cols.append(diff / denom.reshape(denom.shape + (1,) * (diff.ndim - denom.ndim)))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class ControlSystem:
    """Affine-controlled SODE  q'' = f(q, q') + rho(q) u  with metric g(q).

    Parameters
    ----------
    n, m : int
        State and control dimensions, ``m <= n``.
    f : callable
        ``f(q, v) -> (..., n)`` drift.
    rho : callable
        ``rho(q) -> (..., n, m)`` control anchor.
    g : callable, optional
        ``g(q) -> (..., m, m)`` control metric. Ignored when ``g_const`` is set.
    g_const : float, optional
        Declares ``g(q) = g_const * I`` for every ``q``.
    d_q_f, d_v_f : callable, optional
        ``(q, v) -> (..., n, n)`` partial derivatives of ``f``.
    d_q_rho : callable, optional
        Contracted action ``(q, u, w) -> (..., n)`` giving ``(D_q rho(q)[w]) u``.
    d_q_g : callable, optional
        Contracted action ``(q, u1, u2, w) -> (...)`` giving
        ``D_q[u1^T g(q) u2] . w``.

    Any derivative left as ``None`` falls back to central finite differences
    with step ``1e-6 * (1 + |x|)``.
    """

    n: int
    m: int
    f: Callable
    rho: Callable
    g: Optional[Callable] = None
    g_const: Optional[float] = None
    d_q_f: Optional[Callable] = None
    d_v_f: Optional[Callable] = None
    d_q_rho: Optional[Callable] = None
    d_q_g: Optional[Callable] = None
    name: str = "system"

    def __post_init__(self):
        if self.n < 1 or self.m < 1 or self.m > self.n:
            raise ValueError(f"need 1 <= m <= n, got n={self.n}, m={self.m}")
        if self.g is None and self.g_const is None:
            raise ValueError("either g or g_const must be given")
        if self.g_const is not None and not self.g_const > 0:
            raise ValueError("g_const must be positive")

    # --- evaluation with fallbacks -------------------------------------
    def eval_f(self, q, v):
        return np.asarray(self.f(q, v), dtype=float)

    def eval_rho(self, q):
        return np.asarray(self.rho(q), dtype=float)

    def eval_g(self, q):
        q = np.asarray(q, dtype=float)
        if self.g_const is not None:
            eye = np.eye(self.m) * self.g_const
            return np.broadcast_to(eye, q.shape[:-1] + (self.m, self.m)).copy()
        return np.asarray(self.g(q), dtype=float)

    def eval_d_q_f(self, q, v):
        if self.d_q_f is not None:
            return np.asarray(self.d_q_f(q, v), dtype=float)
        return _fd_jacobian(lambda x: self.eval_f(x, v), q)

    def eval_d_v_f(self, q, v):
        if self.d_v_f is not None:
            return np.asarray(self.d_v_f(q, v), dtype=float)
        return _fd_jacobian(lambda x: self.eval_f(q, x), v)

    def eval_d_q_rho(self, q, u, w):
        if self.d_q_rho is not None:
            return np.asarray(self.d_q_rho(q, u, w), dtype=float)
        u = np.asarray(u, dtype=float)
        w = np.asarray(w, dtype=float)
        jac = _fd_jacobian(lambda x: np.einsum("...ij,...j->...i", self.eval_rho(x), u), q)
        return np.einsum("...ij,...j->...i", jac, w)

    def eval_d_q_g(self, q, u1, u2, w):
        q = np.asarray(q, dtype=float)
        if self.g_const is not None:
            return np.zeros(np.broadcast_shapes(q.shape[:-1], np.shape(w)[:-1]))
        if self.d_q_g is not None:
            return np.asarray(self.d_q_g(q, u1, u2, w), dtype=float)
        u1 = np.asarray(u1, dtype=float)
        u2 = np.asarray(u2, dtype=float)

        def form(x):
            return np.einsum("...i,...ij,...j->...", u1, self.eval_g(x), u2)[..., None]

        jac = _fd_jacobian(form, q)[..., 0, :]
        return np.einsum("...i,...i->...", jac, w)


@dataclass(frozen=True)
class TerminalCost:
    """Terminal cost phi(q_N, v_N) with its two partial gradients.

    ``target_q`` is an optional hint used only by initial-guess generation.
    """

    phi: Callable
    d1_phi: Callable
    d2_phi: Callable
    target_q: Optional[np.ndarray] = None

    @classmethod
    def zero(cls, n: int) -> "TerminalCost":
        return cls(
            phi=lambda q, v: 0.0,
            d1_phi=lambda q, v: np.zeros(n),
            d2_phi=lambda q, v: np.zeros(n),
        )


@dataclass(frozen=True)
class OCProblem:
    """Optimal control problem: system, terminal cost, initial state, horizon.

    ``path_hint`` optionally maps normalised times ``s`` in [0, 1] (shape
    ``(K,)``) to guessed positions ``(K, n)``; initial guesses use it in place
    of straight-line interpolation.
    """

    system: ControlSystem
    terminal: TerminalCost
    q0: np.ndarray
    v0: np.ndarray
    T: float
    path_hint: Optional[Callable] = None

    def __post_init__(self):
        object.__setattr__(self, "q0", np.asarray(self.q0, dtype=float))
        object.__setattr__(self, "v0", np.asarray(self.v0, dtype=float))
        if not self.T > 0:
            raise ValueError(f"horizon T must be positive, got {self.T}")
        n = self.system.n
        if self.q0.shape != (n,) or self.v0.shape != (n,):
            raise ValueError(f"q0 and v0 must have shape ({n},)")


def _cholesky(gm):
    try:
        return np.linalg.cholesky(gm)
    except np.linalg.LinAlgError as exc:
        raise MetricSingularError("control metric g(q) is not positive definite") from exc


def _solve_metric(sys: ControlSystem, q, rhs):
    """Return g(q)^{-1} rhs, broadcasting over leading axes."""
    if sys.g_const is not None:
        return np.asarray(rhs, dtype=float) / sys.g_const
    chol = _cholesky(sys.eval_g(q))
    y = np.linalg.solve(chol, np.asarray(rhs, dtype=float)[..., None])
    return np.linalg.solve(np.swapaxes(chol, -1, -2), y)[..., 0]


def eval_b(sys: ControlSystem, q) -> np.ndarray:
    """Reduced control operator b(q) = rho(q) g(q)^{-1} rho(q)^T."""
    rho = sys.eval_rho(q)
    rho_t = np.swapaxes(rho, -1, -2)
    if sys.g_const is not None:
        return rho @ rho_t / sys.g_const
    chol = _cholesky(sys.eval_g(q))
    half = np.linalg.solve(chol, rho_t)
    return np.swapaxes(half, -1, -2) @ half


def minimising_control(sys: ControlSystem, q, lam) -> np.ndarray:
    """Control u solving g(q) u = rho(q)^T lam."""
    rho = sys.eval_rho(q)
    return _solve_metric(sys, q, np.einsum("...ij,...i->...j", rho, np.asarray(lam, dtype=float)))


def eval_grad_b(sys: ControlSystem, q, lam) -> np.ndarray:
    """Gradient w.r.t. q of the quadratic form lam^T b(q) lam.

    With u = g^{-1} rho^T lam the directional derivative along w is
    ``2 lam . (D rho[w]) u - D[u^T g u] . w``.
    """
    q = np.asarray(q, dtype=float)
    lam = np.asarray(lam, dtype=float)
    u = minimising_control(sys, q, lam)
    out = np.empty(np.broadcast_shapes(q.shape, lam.shape))
    for i in range(sys.n):
        w = np.zeros(sys.n)
        w[i] = 1.0
        w = np.broadcast_to(w, q.shape)
        drho = sys.eval_d_q_rho(q, u, w)
        out[..., i] = 2.0 * np.einsum("...i,...i->...", lam, drho) - sys.eval_d_q_g(q, u, u, w)
    return out


# --- derivative checks ---------------------------------------------------

@dataclass
class DerivativeReport:
    """Per-probe maximum relative errors of analytic vs. FD derivatives."""

    tol: float
    errors: list = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max((max(e.values()) for e in self.errors if e), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol

    def failures(self):
        return [
            (i, name, err)
            for i, e in enumerate(self.errors)
            for name, err in e.items()
            if err > self.tol
        ]


def _rel_err(analytic, fd) -> float:
    analytic = np.asarray(analytic, dtype=float)
    fd = np.asarray(fd, dtype=float)
    scale = max(1.0, float(np.max(np.abs(fd), initial=0.0)))
    return float(np.max(np.abs(analytic - fd), initial=0.0)) / scale


def check_derivatives(sys: ControlSystem, probes: Sequence, tol: float = 1e-6,
                      rng: np.random.Generator | None = None) -> DerivativeReport:
    """Compare every supplied analytic derivative with central differences.

    ``probes`` is a sequence of ``(q, v)`` pairs. Control and direction
    vectors for the contracted actions are drawn from ``rng``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    report = DerivativeReport(tol=tol)
    for q, v in probes:
        q = np.asarray(q, dtype=float)
        v = np.asarray(v, dtype=float)
        errs = {}
        if sys.d_q_f is not None:
            errs["d_q_f"] = _rel_err(sys.d_q_f(q, v), _fd_jacobian(lambda x: sys.eval_f(x, v), q))
        if sys.d_v_f is not None:
            errs["d_v_f"] = _rel_err(sys.d_v_f(q, v), _fd_jacobian(lambda x: sys.eval_f(q, x), v))
        u = rng.standard_normal(sys.m)
        u2 = rng.standard_normal(sys.m)
        w = rng.standard_normal(sys.n)
        if sys.d_q_rho is not None:
            jac = _fd_jacobian(lambda x: sys.eval_rho(x) @ u, q)
            errs["d_q_rho"] = _rel_err(sys.d_q_rho(q, u, w), jac @ w)
        if sys.d_q_g is not None and sys.g_const is None:
            jac = _fd_jacobian(lambda x: np.atleast_1d(u @ sys.eval_g(x) @ u2), q)[0]
            errs["d_q_g"] = _rel_err(sys.d_q_g(q, u, u2, w), jac @ w)
        report.errors.append(errs)
    return report


def check_terminal_cost(cost: TerminalCost, probes: Sequence, tol: float = 1e-6) -> DerivativeReport:
    report = DerivativeReport(tol=tol)
    for q, v in probes:
        q = np.asarray(q, dtype=float)
        v = np.asarray(v, dtype=float)
        fd1 = _fd_jacobian(lambda x: np.atleast_1d(cost.phi(x, v)), q)[0]
        fd2 = _fd_jacobian(lambda x: np.atleast_1d(cost.phi(q, x)), v)[0]
        report.errors.append({
            "d1_phi": _rel_err(cost.d1_phi(q, v), fd1),
            "d2_phi": _rel_err(cost.d2_phi(q, v), fd2),
        })
    return report
