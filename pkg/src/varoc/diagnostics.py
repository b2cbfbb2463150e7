"""
Diagnostics along discrete solutions: Noether integrals of affine symmetries,
control Hamiltonians, momentum matching, and empirical convergence orders.

Nodal momenta follow one convention throughout: ``p^-`` at node 0 and ``p^+``
(from the interval on the left) at every other node. The interior mismatch
``|p^+_k - p^-_k|`` is reported separately as the momentum defect.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import OCProblem, minimising_control
from .residual import DiscreteTrajectory
from .scheme import SchemeParams, discrete_momenta

__all__ = [
    "AffineSymmetry",
    "NodalMomenta",
    "DiagnosticsSeries",
    "nodal_momenta",
    "noether_affine",
    "noether_rotation_2d",
    "hamiltonians",
    "compute_diagnostics",
    "StudyRow",
    "StudyResult",
    "StudyError",
    "convergence_study",
    "fit_slope",
    "write_study_csv",
]

log = logging.getLogger(__name__)

POINT_INDEPENDENT = "point-independent"
BETA_EQUALS_GAMMA = "beta-equals-gamma"


@dataclass(frozen=True)
class AffineSymmetry:
    """Generator ``q -> B q + d`` of a one-parameter affine group.

    ``psi_dependence`` records which hypothesis makes the discrete integral
    exact: a point-independent control-metric factor, or ``beta == gamma``.
    """

    B: np.ndarray
    d: np.ndarray
    psi_dependence: str = POINT_INDEPENDENT

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        d = np.asarray(self.d, dtype=float)
        if B.shape != (d.size, d.size):
            raise ValueError(f"B must be square matching d, got {B.shape} and {d.shape}")
        if not (np.all(np.isfinite(B)) and np.all(np.isfinite(d))):
            raise ValueError("symmetry generator must be finite")
        if self.psi_dependence not in (POINT_INDEPENDENT, BETA_EQUALS_GAMMA):
            raise ValueError(f"unknown psi_dependence {self.psi_dependence!r}")
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "d", d)

    @classmethod
    def rotation_2d(cls) -> "AffineSymmetry":
        return cls(np.array([[0.0, -1.0], [1.0, 0.0]]), np.zeros(2))


@dataclass
class NodalMomenta:
    """Per-node momenta ``p_q``, ``p_lam`` (shape ``(N+1, n)``) and interior defect."""

    p_q: np.ndarray
    p_lam: np.ndarray
    defect: np.ndarray

    @property
    def max_defect(self) -> float:
        return float(np.max(self.defect, initial=0.0))


def nodal_momenta(prob: OCProblem, p: SchemeParams, traj: DiscreteTrajectory) -> NodalMomenta:
    q, lam = traj.q, traj.lam
    n = q.shape[1]
    u = (traj.U1, traj.U2) if traj.has_controls else None
    pm, pp = discrete_momenta(prob.system, ((q[:-1], lam[:-1]), (q[1:], lam[1:])), p, u)
    P = np.concatenate([pm[:1], pp], axis=0)
    defect = np.linalg.norm(pp[:-1] - pm[1:], axis=1)
    return NodalMomenta(P[:, :n].copy(), P[:, n:].copy(), defect)


def noether_affine(traj: DiscreteTrajectory, momenta: NodalMomenta, sym: AffineSymmetry) -> np.ndarray:
    """``I_k = p_q . (B q_k + d) - p_lam . B^T lam_k`` at every node."""
    gen = traj.q @ sym.B.T + sym.d
    return (np.einsum("ki,ki->k", momenta.p_q, gen)
            - np.einsum("ki,ki->k", momenta.p_lam, traj.lam @ sym.B))


def noether_rotation_2d(traj: DiscreteTrajectory, momenta: NodalMomenta) -> np.ndarray:
    """Planar rotation integral ``lx p_ly - ly p_lx + x p_y - y p_x``."""
    if traj.q.shape[1] != 2:
        raise ValueError("planar rotation integral needs n = 2")
    x, y = traj.q[:, 0], traj.q[:, 1]
    lx, ly = traj.lam[:, 0], traj.lam[:, 1]
    px, py = momenta.p_q[:, 0], momenta.p_q[:, 1]
    plx, ply = momenta.p_lam[:, 0], momenta.p_lam[:, 1]
    return lx * ply - ly * plx + x * py - y * px


def hamiltonians(prob: OCProblem, traj: DiscreteTrajectory, momenta: NodalMomenta):
    """State-costate Hamiltonian and Pontryagin Hamiltonian at each node.

    The nodal control solves ``g(q_k) u = rho(q_k)^T lam_k``. The Pontryagin
    value uses ``lam_q = -p_q``, ``lam_v = lam``, ``v = p_lam``.
    """
    sys = prob.system
    q, lam = traj.q, traj.lam
    pq, pl = momenta.p_q, momenta.p_lam
    u = minimising_control(sys, q, lam)
    force = sys.eval_f(q, pl) + np.einsum("kij,kj->ki", sys.eval_rho(q), u)
    ugu = np.einsum("ki,kij,kj->k", u, sys.eval_g(q), u)
    Ht = np.einsum("ki,ki->k", pq, pl) - np.einsum("ki,ki->k", lam, force) + 0.5 * ugu
    lam_q, lam_v, v = -pq, lam, pl
    force_p = sys.eval_f(q, v) + np.einsum("kij,kj->ki", sys.eval_rho(q), u)
    H = np.einsum("ki,ki->k", lam_q, v) + np.einsum("ki,ki->k", lam_v, force_p) - 0.5 * ugu
    return Ht, H


def _drift(series) -> float:
    series = np.asarray(series, dtype=float)
    return float(np.max(np.abs(series - series[0])))


@dataclass
class DiagnosticsSeries:
    I: Optional[np.ndarray]
    Htilde: np.ndarray
    H: np.ndarray
    p_q: np.ndarray
    p_lam: np.ndarray
    defect: np.ndarray

    @property
    def noether_drift(self) -> float:
        return float("nan") if self.I is None else _drift(self.I)

    @property
    def hamiltonian_drift(self) -> float:
        return _drift(self.Htilde)

    @property
    def max_defect(self) -> float:
        return float(np.max(self.defect, initial=0.0))


def compute_diagnostics(prob: OCProblem, p: SchemeParams, traj: DiscreteTrajectory,
                        sym: AffineSymmetry | None = None) -> DiagnosticsSeries:
    mom = nodal_momenta(prob, p, traj)
    I = None if sym is None else noether_affine(traj, mom, sym)
    Ht, H = hamiltonians(prob, traj, mom)
    return DiagnosticsSeries(I, Ht, H, mom.p_q, mom.p_lam, mom.defect)


# --- convergence study --------------------------------------------------------

class StudyError(RuntimeError):
    """A constituent solve failed; ``partial`` holds the rows finished so far."""

    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial


@dataclass
class StudyRow:
    scheme_id: str
    N: int
    h: float
    error: float
    iterations: int


@dataclass
class StudyResult:
    rows: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)
    reference_N: int = 0
    seconds: float = 0.0


def fit_slope(hs: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of ``log(error)`` against ``log(h)``."""
    return float(np.polyfit(np.log(np.asarray(hs)), np.log(np.asarray(errors)), 1)[0])


def _scheme_id(s) -> str:
    return f"a{s[0]:g}-b{s[1]:g}-g{s[2]:g}"


def convergence_study(prob: OCProblem, scheme_list, N_list, N_ref: int, formulation: str = "independent",
                      cfg=None, reference_scheme=(0.5, 0.5, 0.5), continuation: bool = True) -> StudyResult:
    """Empirical convergence orders against a fine reference solution.

    Parameters
    ----------
    scheme_list : sequence of (alpha, beta, gamma)
    N_list : sequence of int
        Step counts; each must divide ``N_ref``.
    N_ref : int
        Reference step count, at least ``10 * max(N_list)``.
    continuation : bool
        If a solve from the default guess fails, retry from the reference
        solution resampled to its grid.

    The error at step count ``N`` is ``max_k |q_k - q_ref| + |lam_k - lam_ref|``
    over the shared nodes.
    """
    from .solver import resample, solve

    scheme_list = [tuple(float(c) for c in s) for s in scheme_list]
    N_list = sorted(int(N) for N in N_list)
    if not scheme_list or not N_list:
        raise ValueError("scheme and N lists must be non-empty")
    if len(N_list) < 2:
        raise ValueError("need at least two step counts to fit a slope")
    if N_ref < 10 * max(N_list):
        raise ValueError(f"reference N_ref={N_ref} must be at least 10 * max(N_list)")
    bad = [N for N in N_list if N_ref % N]
    if bad:
        raise ValueError(f"N values {bad} do not divide N_ref={N_ref}")
    start = time.perf_counter()
    result = StudyResult(reference_N=N_ref)
    a, b, g = reference_scheme
    p_ref = SchemeParams(a, b, g, N_ref, prob.T / N_ref)
    ref = solve(prob, p_ref, formulation, cfg=cfg)
    if not ref.converged:
        raise StudyError(f"reference solve failed: {ref.stats.message}", result)
    log.info("reference N=%d solved in %d iterations", N_ref, ref.stats.iterations)
    for s in scheme_list:
        sid = _scheme_id(s)
        hs, errs = [], []
        for N in N_list:
            p = SchemeParams(s[0], s[1], s[2], N, prob.T / N)
            res = solve(prob, p, formulation, cfg=cfg)
            if not res.converged and continuation:
                res = solve(prob, p, formulation, guess=resample(ref.traj, N), cfg=cfg)
            if not res.converged:
                raise StudyError(f"solve {sid} N={N} failed: {res.stats.message}", result)
            stride = N_ref // N
            qr, lr = ref.traj.q[::stride], ref.traj.lam[::stride]
            err = float(np.max(np.linalg.norm(res.traj.q - qr, axis=1)
                               + np.linalg.norm(res.traj.lam - lr, axis=1)))
            result.rows.append(StudyRow(sid, N, p.h, err, res.stats.iterations))
            hs.append(p.h)
            errs.append(err)
        result.slopes[sid] = fit_slope(hs, errs)
    result.seconds = time.perf_counter() - start
    return result


def write_study_csv(result: StudyResult, path) -> None:
    """Columns: scheme-id, N, h, error, fitted-slope."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scheme-id", "N", "h", "error", "fitted-slope"])
        for r in result.rows:
            w.writerow([r.scheme_id, r.N, f"{r.h:.17e}", f"{r.error:.17e}", f"{result.slopes[r.scheme_id]:.17e}"])
