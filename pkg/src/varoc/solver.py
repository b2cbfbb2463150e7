"""Damped Newton iteration with finite-difference Jacobians, and initial guesses."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import OCProblem
from .residual import (DEPENDENT, INDEPENDENT, DiscreteTrajectory, assemble, pack,
                       recover_multipliers, residual_function, sparsity_pattern, unpack)
from .scheme import SchemeParams, minimising_interval_controls

__all__ = [
    "SolverConfig",
    "SolveStats",
    "SolverError",
    "fd_jacobian",
    "color_columns",
    "newton_solve",
    "initial_guess",
    "solve",
    "SolveResult",
    "resample",
    "STRATEGIES",
]

log = logging.getLogger(__name__)

STRATEGIES = ("zero-costate", "linear-interp")


class SolverError(RuntimeError):
    """Unrecoverable failure inside the Newton iteration."""


@dataclass(frozen=True)
class SolverConfig:
    """Newton settings.

    ``linear_solver`` selects dense LU (``"dense"``), sparse LU
    (``"sparse"``, requires a sparsity pattern) or ``"auto"``, which uses
    sparse LU only above ``dense_max`` unknowns.
    """

    tol: float = 1e-10
    max_iter: int = 200
    fd_step: float = 1e-7
    damping: float = 0.5
    min_step: float = 1e-8
    armijo: float = 1e-4
    linear_solver: str = "auto"
    dense_max: int = 4000
    verbose: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.damping < 1:
            raise ValueError("damping factor must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0 < self.min_step <= 1:
            raise ValueError("min_step must lie in (0, 1]")
        if not self.fd_step > 0:
            raise ValueError("fd_step must be positive")
        if self.linear_solver not in ("auto", "dense", "sparse"):
            raise ValueError(f"unknown linear_solver {self.linear_solver!r}")


@dataclass
class SolveStats:
    iterations: int = 0
    residual_norm: float = float("inf")
    converged: bool = False
    step_sizes: list = field(default_factory=list)
    residual_history: list = field(default_factory=list)
    message: str = ""
    condition_estimate: Optional[float] = None
    seconds: float = 0.0


def color_columns(pattern) -> np.ndarray:
    """Greedy colouring so that columns of one colour share no row."""
    pattern = sp.csc_matrix(pattern, dtype=bool)
    adj = (pattern.T @ pattern).tocsr()
    ncol = pattern.shape[1]
    colors = np.full(ncol, -1, dtype=np.int64)
    for j in range(ncol):
        nb = adj.indices[adj.indptr[j]:adj.indptr[j + 1]]
        used = set(colors[nb][colors[nb] >= 0].tolist())
        c = 0
        while c in used:
            c += 1
        colors[j] = c
    return colors


def fd_jacobian(F: Callable, x, fd_step: float = 1e-7, f0=None, pattern=None, colors=None):
    """Forward-difference Jacobian; column j uses step ``fd_step * (1 + |x_j|)``.

    With a sparsity ``pattern`` the columns are grouped by colour and a
    sparse CSC matrix is returned, otherwise a dense array.
    """
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(F(x) if f0 is None else f0, dtype=float)
    if not np.all(np.isfinite(f0)):
        raise SolverError("residual is not finite at the base point")
    steps = fd_step * (1.0 + np.abs(x))
    if pattern is None:
        J = np.empty((f0.size, x.size))
        for j in range(x.size):
            xp = x.copy()
            xp[j] += steps[j]
            fj = np.asarray(F(xp), dtype=float)
            if not np.all(np.isfinite(fj)):
                raise SolverError(f"residual is not finite after perturbing unknown {j}")
            J[:, j] = (fj - f0) / (xp[j] - x[j])
        return J
    pattern = sp.csc_matrix(pattern, dtype=bool)
    if colors is None:
        colors = color_columns(pattern)
    rows_out, cols_out, vals_out = [], [], []
    for c in range(int(colors.max()) + 1):
        cols = np.flatnonzero(colors == c)
        xp = x.copy()
        xp[cols] += steps[cols]
        fj = np.asarray(F(xp), dtype=float)
        if not np.all(np.isfinite(fj)):
            raise SolverError(f"residual is not finite in colour group {c}")
        diff = fj - f0
        for j in cols:
            rows = pattern.indices[pattern.indptr[j]:pattern.indptr[j + 1]]
            rows_out.append(rows)
            cols_out.append(np.full(rows.size, j))
            vals_out.append(diff[rows] / (xp[j] - x[j]))
    return sp.csc_matrix((np.concatenate(vals_out), (np.concatenate(rows_out), np.concatenate(cols_out))),
                         shape=(f0.size, x.size))


def _linear_step(J, r, cfg: SolverConfig):
    """Solve J dx = -r; returns (dx, condition estimate or None)."""
    use_sparse = sp.issparse(J) and (cfg.linear_solver == "sparse"
                                     or (cfg.linear_solver == "auto" and J.shape[1] > cfg.dense_max))
    if use_sparse:
        try:
            lu = spla.splu(sp.csc_matrix(J))
        except RuntimeError as exc:
            raise SolverError(f"singular Jacobian: {exc}") from exc
        dx = -lu.solve(r)
        return dx, None
    Jd = J.toarray() if sp.issparse(J) else J
    lu, piv = sla.lu_factor(Jd, check_finite=True)
    diag = np.abs(np.diag(lu))
    cond = float(diag.max() / diag.min()) if diag.min() > 0 else float("inf")
    if not np.isfinite(cond) or cond > 1e16:
        raise SolverError(f"singular Jacobian (pivot-ratio condition estimate {cond:.3e})")
    return -sla.lu_solve((lu, piv), r), cond


def newton_solve(F: Callable, x0, cfg: SolverConfig | None = None, pattern=None, jac=None):
    """Damped Newton iteration for the square system ``F(x) = 0``.

    Parameters
    ----------
    F : callable
        Residual map, output length equal to input length.
    x0 : array_like
        Starting point.
    cfg : SolverConfig, optional
    pattern : sparse matrix, optional
        Structural Jacobian pattern enabling coloured finite differences.
    jac : callable, optional
        ``jac(x, Fx)`` returning the Jacobian; overrides finite differences.

    Returns
    -------
    x : ndarray
        Converged point, or the best iterate on failure.
    stats : SolveStats
        ``stats.converged`` is ``True`` iff ``max|F(x)| <= cfg.tol``.
    """
    cfg = SolverConfig() if cfg is None else cfg
    start = time.perf_counter()
    x = np.array(x0, dtype=float)
    r = np.asarray(F(x), dtype=float)
    if r.shape != x.shape:
        raise ValueError(f"F must be square: input {x.shape}, output {r.shape}")
    stats = SolveStats()
    colors = color_columns(pattern) if pattern is not None and jac is None else None
    best_x, best_norm = x.copy(), float(np.max(np.abs(r)))
    stats.residual_history.append(best_norm)
    if not np.isfinite(best_norm):
        stats.message = "residual not finite at the initial guess"
        stats.residual_norm = best_norm
        return best_x, stats
    for it in range(cfg.max_iter + 1):
        norm_inf = float(np.max(np.abs(r)))
        if norm_inf <= cfg.tol:
            stats.converged = True
            stats.message = "converged"
            break
        if it == cfg.max_iter:
            stats.message = "maximum number of iterations reached"
            break
        try:
            J = jac(x, r) if jac is not None else fd_jacobian(F, x, cfg.fd_step, r, pattern, colors)
            dx, cond = _linear_step(J, r, cfg)
        except (SolverError, np.linalg.LinAlgError, ValueError) as exc:
            stats.message = str(exc)
            break
        stats.condition_estimate = cond
        norm2 = float(np.linalg.norm(r))
        t = 1.0
        while True:
            xt = x + t * dx
            with np.errstate(all="ignore"):
                try:
                    rt = np.asarray(F(xt), dtype=float)
                except (ValueError, FloatingPointError, ArithmeticError):
                    rt = None
            if rt is not None and np.all(np.isfinite(rt)) \
                    and np.linalg.norm(rt) <= (1.0 - cfg.armijo * t) * norm2:
                break
            t *= cfg.damping
            if t < cfg.min_step:
                break
        if t < cfg.min_step:
            stats.message = "line search stalled"
            break
        x, r = xt, rt
        stats.iterations = it + 1
        stats.step_sizes.append(t)
        cur = float(np.max(np.abs(r)))
        stats.residual_history.append(cur)
        if cur < best_norm:
            best_x, best_norm = x.copy(), cur
        if cfg.verbose:
            log.info("newton it=%d |F|=%.3e step=%.3g", it + 1, cur, t)
    if not stats.converged:
        x = best_x
    stats.residual_norm = float(np.max(np.abs(F(x))))
    stats.seconds = time.perf_counter() - start
    return x, stats


# --- initial guesses -------------------------------------------------------

def _guess_positions(prob: OCProblem, p: SchemeParams) -> np.ndarray:
    if prob.path_hint is not None:
        return np.asarray(prob.path_hint(np.linspace(0.0, 1.0, p.N + 1)), dtype=float)
    s = np.linspace(0.0, 1.0, p.N + 1)[:, None]
    target = prob.terminal.target_q
    if target is None:
        return prob.q0 + (s * prob.T) * prob.v0
    return (1.0 - s) * prob.q0 + s * np.asarray(target, dtype=float)


def initial_guess(prob: OCProblem, p: SchemeParams, strategy: str = "zero-costate",
                  formulation: str = INDEPENDENT, positions=None) -> DiscreteTrajectory:
    """Starting trajectory for the Newton iteration.

    ``zero-costate`` takes positions from the problem's path hint, or else
    interpolates from ``q0`` to the cost's target (or drifts with ``v0`` if
    none is known), and sets every costate and control
    to zero. ``linear-interp`` also ramps the costate from zero to
    ``-D2 phi`` evaluated at the guessed endpoint. ``positions`` replaces the
    interpolated positions, e.g. with a resampled earlier solution.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown initial-guess strategy {strategy!r}; choose from {STRATEGIES}")
    n, m, N = prob.system.n, prob.system.m, p.N
    q = _guess_positions(prob, p) if positions is None else np.array(positions, dtype=float)
    if q.shape != (N + 1, n):
        raise ValueError(f"positions must have shape {(N + 1, n)}")
    q[0] = prob.q0
    lam = np.zeros((N + 1, n))
    if strategy == "linear-interp":
        vN = (q[-1] - q[-2]) / p.h
        lam_end = -np.asarray(prob.terminal.d2_phi(q[-1], vN), dtype=float)
        lam = np.linspace(0.0, 1.0, N + 1)[:, None] * lam_end
    if formulation == DEPENDENT:
        if strategy == "zero-costate":
            U = np.zeros((N, m))
            return DiscreteTrajectory(q, lam, U, U.copy())
        U1, U2 = minimising_interval_controls(prob.system, q, lam, p)
        return DiscreteTrajectory(q, lam, U1, U2)
    return DiscreteTrajectory(q, lam)


def resample(traj: DiscreteTrajectory, N_new: int) -> DiscreteTrajectory:
    """Piecewise-linear resampling of states and costates onto ``N_new`` steps."""
    s_old = np.linspace(0.0, 1.0, traj.N + 1)
    s_new = np.linspace(0.0, 1.0, N_new + 1)

    def interp(a):
        return np.stack([np.interp(s_new, s_old, a[:, i]) for i in range(a.shape[1])], axis=1)

    return DiscreteTrajectory(interp(traj.q), interp(traj.lam))


@dataclass
class SolveResult:
    traj: DiscreteTrajectory
    stats: SolveStats
    formulation: str
    params: SchemeParams
    residual: object = None

    @property
    def converged(self) -> bool:
        return self.stats.converged


def solve(prob: OCProblem, p: SchemeParams, formulation: str = INDEPENDENT,
          guess: DiscreteTrajectory | str = "zero-costate", cfg: SolverConfig | None = None) -> SolveResult:
    """Assemble and solve one discrete optimality system.

    ``guess`` is a strategy name or a trajectory; for the dependent
    formulation a trajectory without controls is completed with the
    minimising controls at the averaged points.
    """
    cfg = SolverConfig() if cfg is None else cfg
    p.check_horizon(prob.T)
    n, m, N = prob.system.n, prob.system.m, p.N
    if isinstance(guess, str):
        guess = initial_guess(prob, p, guess, formulation)
    if guess.N != N:
        guess = resample(guess, N)
    if formulation == DEPENDENT and not guess.has_controls:
        guess = guess.with_controls(*minimising_interval_controls(prob.system, guess.q, guess.lam, p))
    F = residual_function(prob, p, formulation)
    pattern = sparsity_pattern(n, m, N, formulation)
    x, stats = newton_solve(F, pack(guess, formulation), cfg, pattern=pattern)
    traj = unpack(x, n, m, N, formulation)
    traj.mu, traj.nu = recover_multipliers(prob, p, traj)
    res = assemble(prob, p, traj, formulation)
    return SolveResult(traj, stats, formulation, p, res)
