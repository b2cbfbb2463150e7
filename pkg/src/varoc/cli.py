"""
Command-line front end.

    varoc solve <config.json>   solve one problem, write trajectory/diagnostics CSV and a summary
    varoc study <config.json>   convergence-order study, write the slope table CSV
    varoc check <config.json>   derivative checks of the model against finite differences

Exit codes: 0 success, 1 derivative check failed, 2 invalid config,
3 solver did not converge (outputs are still written and flagged), 4 I/O error.
The config schema is documented in ``docs/config.md``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import check_derivatives, check_terminal_cost
from .diagnostics import AffineSymmetry, StudyError, compute_diagnostics, convergence_study, write_study_csv
from .direct import augmented_objective
from .kepler import KeplerParams, kepler_problem
from .residual import DEPENDENT, INDEPENDENT, DiscreteTrajectory
from .scheme import SchemeParams, boundary_velocities_dep, minimising_interval_controls, nodal_controls
from .solver import STRATEGIES, SolverConfig, solve

log = logging.getLogger("varoc")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_IO = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


# --- models -------------------------------------------------------------------

def _kepler_params(raw: dict) -> KeplerParams:
    known = set(KeplerParams.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown kepler parameters: {sorted(unknown)}")
    kw = dict(raw)
    for key in ("qT", "vT"):
        if kw.get(key) is not None:
            kw[key] = tuple(float(x) for x in kw[key])
    for key in ("Kq", "Kv"):
        if key in kw:
            kw[key] = tuple(tuple(float(x) for x in row) for row in kw[key])
    return KeplerParams(**kw)


def _kepler_probes(count: int, rng: np.random.Generator):
    r = rng.uniform(1.0, 10.0, count)
    th = rng.uniform(0.0, 2.0 * np.pi, count)
    q = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
    v = rng.normal(size=(count, 2))
    return list(zip(q, v))


MODELS = {
    "kepler": {
        "params": _kepler_params,
        "problem": kepler_problem,
        "symmetry": AffineSymmetry.rotation_2d,
        "probes": _kepler_probes,
    },
}


# --- configuration --------------------------------------------------------------

@dataclass
class RunConfig:
    model: str
    model_params: dict
    formulation: str = INDEPENDENT
    scheme: tuple = (1.0, 1.0, 1.0)
    N: Optional[int] = None
    h: Optional[float] = None
    T: Optional[float] = None
    solver: dict = field(default_factory=dict)
    initial_guess: str = "zero-costate"
    symmetry: Optional[dict] = None
    output_dir: str = "."
    prefix: str = "run"
    study: dict = field(default_factory=dict)
    check: dict = field(default_factory=dict)

    # derived objects
    def problem(self):
        spec = MODELS[self.model]
        params = dict(self.model_params)
        if self.T is not None:
            params["T"] = self.T
        try:
            return spec["problem"](spec["params"](params))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"model parameters: {exc}") from exc

    def scheme_params(self, T: float) -> SchemeParams:
        if (self.N is None) == (self.h is None):
            raise ConfigError("grid needs exactly one of N or h")
        N = self.N if self.N is not None else int(round(T / self.h))
        if self.h is not None and abs(N * self.h - T) > 1e-9 * T:
            raise ConfigError(f"h = {self.h} does not divide T = {T}")
        a, b, g = self.scheme
        try:
            return SchemeParams(a, b, g, N, T / N)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def solver_config(self) -> SolverConfig:
        try:
            return SolverConfig(**self.solver)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"solver settings: {exc}") from exc

    def affine_symmetry(self) -> Optional[AffineSymmetry]:
        if self.symmetry is None:
            default = MODELS[self.model].get("symmetry")
            return default() if default else None
        if self.symmetry == "none":
            return None
        try:
            return AffineSymmetry(np.array(self.symmetry["B"], dtype=float),
                                  np.array(self.symmetry["d"], dtype=float),
                                  self.symmetry.get("psi_dependence", "point-independent"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"symmetry: {exc}") from exc


def _scheme_triple(raw) -> tuple:
    if isinstance(raw, dict):
        try:
            a = float(raw["alpha"])
        except KeyError as exc:
            raise ConfigError("scheme needs alpha") from exc
        g = float(raw.get("gamma", a))
        b = float(raw.get("beta", g))
        trip = (a, b, g)
    elif isinstance(raw, (list, tuple)) and len(raw) == 3:
        trip = tuple(float(x) for x in raw)
    else:
        raise ConfigError(f"scheme must be an object or [alpha, beta, gamma], got {raw!r}")
    for name, val in zip(("alpha", "beta", "gamma"), trip):
        if not 0.0 <= val <= 1.0:
            raise ConfigError(f"{name} = {val} outside [0, 1]")
    return trip


def parse_config(data: dict) -> RunConfig:
    """Validate a decoded JSON config and build a :class:`RunConfig`."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    model = data.get("model", {})
    if isinstance(model, str):
        model = {"id": model}
    mid = model.get("id")
    if mid not in MODELS:
        raise ConfigError(f"unknown model id {mid!r}; available: {sorted(MODELS)}")
    formulation = data.get("formulation", INDEPENDENT)
    if formulation not in (INDEPENDENT, DEPENDENT):
        raise ConfigError(f"formulation must be {INDEPENDENT!r} or {DEPENDENT!r}")
    grid = data.get("grid", {})
    N, h, T = grid.get("N"), grid.get("h"), grid.get("T")
    if N is not None and h is not None:
        raise ConfigError("grid needs exactly one of N or h")
    if N is not None and (int(N) != N or N < 2):
        raise ConfigError(f"N must be an integer >= 2, got {N}")
    if h is not None and not float(h) > 0:
        raise ConfigError(f"h must be positive, got {h}")
    if T is not None and not float(T) > 0:
        raise ConfigError(f"T must be positive, got {T}")
    guess = data.get("initial_guess", "zero-costate")
    if guess not in STRATEGIES:
        raise ConfigError(f"initial_guess must be one of {STRATEGIES}")
    out = data.get("output", {})
    cfg = RunConfig(
        model=mid,
        model_params=dict(model.get("params", {})),
        formulation=formulation,
        scheme=_scheme_triple(data.get("scheme", {"alpha": 1.0})),
        N=None if N is None else int(N),
        h=None if h is None else float(h),
        T=None if T is None else float(T),
        solver=dict(data.get("solver", {})),
        initial_guess=guess,
        symmetry=data.get("symmetry"),
        output_dir=out.get("dir", "."),
        prefix=out.get("prefix", "run"),
        study=dict(data.get("study", {})),
        check=dict(data.get("check", {})),
    )
    cfg.solver_config()
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(data)


# --- output ---------------------------------------------------------------------

def _fmt(x) -> str:
    return f"{float(x):.17e}"


def _check_output_dir(path):
    if not os.path.isdir(path):
        raise OSError(f"output directory {path!r} does not exist")
    if not os.access(path, os.W_OK):
        raise OSError(f"output directory {path!r} is not writable")


def write_trajectory_csv(path, p: SchemeParams, traj: DiscreteTrajectory, u_nodal, v0, vN, diag, U1, U2):
    """Per-node rows; boundary velocities only on rows 0 and N; interval controls on rows 0..N-1."""
    N, n = traj.q.shape[0] - 1, traj.q.shape[1]
    m = u_nodal.shape[1]
    header = (["k", "t"] + [f"q{i}" for i in range(n)] + [f"lam{i}" for i in range(n)]
              + [f"u{i}" for i in range(m)] + [f"vb{i}" for i in range(n)]
              + [f"U1_{i}" for i in range(m)] + [f"U2_{i}" for i in range(m)] + ["I", "Htilde"])
    t = p.times()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(N + 1):
            if k == 0:
                vel = [_fmt(x) for x in v0]
            elif k == N:
                vel = [_fmt(x) for x in vN]
            else:
                vel = [""] * n
            ctrl = ([_fmt(x) for x in U1[k]] + [_fmt(x) for x in U2[k]]) if k < N else [""] * (2 * m)
            inv = _fmt(diag.I[k]) if diag.I is not None else ""
            w.writerow([k, _fmt(t[k])] + [_fmt(x) for x in traj.q[k]] + [_fmt(x) for x in traj.lam[k]]
                       + [_fmt(x) for x in u_nodal[k]] + vel + ctrl + [inv, _fmt(diag.Htilde[k])])


def read_trajectory_csv(path, n: int, m: int, with_controls: bool) -> DiscreteTrajectory:
    """Inverse of :func:`write_trajectory_csv` for the state, costate and interval controls."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    q = np.array([[float(r[f"q{i}"]) for i in range(n)] for r in rows])
    lam = np.array([[float(r[f"lam{i}"]) for i in range(n)] for r in rows])
    if not with_controls:
        return DiscreteTrajectory(q, lam)
    U1 = np.array([[float(r[f"U1_{i}"]) for i in range(m)] for r in rows[:-1]])
    U2 = np.array([[float(r[f"U2_{i}"]) for i in range(m)] for r in rows[:-1]])
    return DiscreteTrajectory(q, lam, U1, U2)


def write_diagnostics_csv(path, p: SchemeParams, diag):
    N, n = diag.p_q.shape[0] - 1, diag.p_q.shape[1]
    header = (["k", "t", "I", "Htilde", "H"] + [f"p_q{i}" for i in range(n)]
              + [f"p_lam{i}" for i in range(n)] + ["momentum_defect"])
    t = p.times()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(N + 1):
            inv = _fmt(diag.I[k]) if diag.I is not None else ""
            dfc = _fmt(diag.defect[k - 1]) if 0 < k < N else ""
            w.writerow([k, _fmt(t[k]), inv, _fmt(diag.Htilde[k]), _fmt(diag.H[k])]
                       + [_fmt(x) for x in diag.p_q[k]] + [_fmt(x) for x in diag.p_lam[k]] + [dfc])


def _discrete_cost(prob, p, traj, U1, U2, vN) -> float:
    sys = prob.system
    g = p.gamma
    qa = g * traj.q[:-1] + (1 - g) * traj.q[1:]
    qb = (1 - g) * traj.q[:-1] + g * traj.q[1:]
    run = (p.alpha * np.einsum("ki,kij,kj->", U1, sys.eval_g(qa), U1)
           + (1 - p.alpha) * np.einsum("ki,kij,kj->", U2, sys.eval_g(qb), U2))
    return float(prob.terminal.phi(traj.q[-1], vN) + 0.5 * p.h * run)


# --- commands -------------------------------------------------------------------

def run_solve(cfg: RunConfig) -> int:
    _check_output_dir(cfg.output_dir)
    prob = cfg.problem()
    p = cfg.scheme_params(prob.T)
    scfg = cfg.solver_config()
    sym = cfg.affine_symmetry()
    if sym is not None and sym.B.shape[0] != prob.system.n:
        raise ConfigError("symmetry dimension does not match the model")
    res = solve(prob, p, cfg.formulation, guess=cfg.initial_guess, cfg=scfg)
    traj = res.traj
    sys_ = prob.system
    if traj.has_controls:
        U1, U2 = traj.U1, traj.U2
    else:
        U1, U2 = minimising_interval_controls(sys_, traj.q, traj.lam, p)
    v0, vN = boundary_velocities_dep(sys_, (traj.q[0], traj.q[1]), (traj.q[-2], traj.q[-1]),
                                     (U1[0], U2[0]), (U1[-1], U2[-1]), p)
    diag = compute_diagnostics(prob, p, traj, sym)
    u_nodal = nodal_controls(sys_, traj.q, traj.lam)
    base = os.path.join(cfg.output_dir, cfg.prefix)
    write_trajectory_csv(base + "_trajectory.csv", p, traj, u_nodal, v0, vN, diag, U1, U2)
    write_diagnostics_csv(base + "_diagnostics.csv", p, diag)
    summary = {
        "model": cfg.model,
        "formulation": cfg.formulation,
        "scheme": {"alpha": p.alpha, "beta": p.beta, "gamma": p.gamma},
        "N": p.N,
        "h": p.h,
        "T": prob.T,
        "converged": res.converged,
        "message": res.stats.message,
        "iterations": res.stats.iterations,
        "residual_norm": res.stats.residual_norm,
        "mu": traj.mu.tolist(),
        "nu": traj.nu.tolist(),
        "objective": _discrete_cost(prob, p, traj, U1, U2, vN),
        "augmented_objective": augmented_objective(traj, prob, p),
        "max_noether_drift": None if diag.I is None else diag.noether_drift,
        "max_hamiltonian_drift": diag.hamiltonian_drift,
        "max_momentum_defect": diag.max_defect,
        "seconds": res.stats.seconds,
    }
    with open(base + "_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("residual %.3e after %d iterations", res.stats.residual_norm, res.stats.iterations)
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def run_study(cfg: RunConfig) -> int:
    st = cfg.study
    schemes = [_scheme_triple(s) for s in st.get("schemes", [])]
    N_list = st.get("N_list", [])
    if not schemes:
        raise ConfigError("study needs a non-empty scheme list")
    if not N_list or len(N_list) < 2:
        raise ConfigError("study needs at least two N values")
    if any(int(N) != N or N < 2 for N in N_list):
        raise ConfigError("N values must be integers >= 2")
    N_ref = int(st.get("N_ref", 10 * max(N_list)))
    ref_scheme = _scheme_triple(st.get("reference_scheme", [0.5, 0.5, 0.5]))
    out_csv = os.path.join(cfg.output_dir, st.get("csv", f"{cfg.prefix}_study.csv"))
    _check_output_dir(cfg.output_dir)
    prob = cfg.problem()
    try:
        result = convergence_study(prob, schemes, N_list, N_ref, cfg.formulation,
                                   cfg.solver_config(), ref_scheme)
    except StudyError as exc:
        log.error("%s", exc)
        if exc.partial.rows:
            exc.partial.slopes = {r.scheme_id: float("nan") for r in exc.partial.rows}
            write_study_csv(exc.partial, out_csv)
        return EXIT_NOT_CONVERGED
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    write_study_csv(result, out_csv)
    for sid, slope in result.slopes.items():
        print(f"{sid}: slope {slope:.3f}")
    return EXIT_OK


def run_check(cfg: RunConfig) -> int:
    spec = MODELS[cfg.model]
    prob = cfg.problem()
    count = int(cfg.check.get("probes", 100))
    tol = float(cfg.check.get("tol", 1e-6))
    rng = np.random.default_rng(int(cfg.check.get("seed", 0)))
    probes = spec["probes"](count, rng)
    rep = check_derivatives(prob.system, probes, tol, rng)
    rep_cost = check_terminal_cost(prob.terminal, probes, tol)
    print(f"model derivatives: max rel. error {rep.max_error:.3e} over {count} probes "
          f"({'pass' if rep.passed else 'FAIL'})")
    print(f"terminal cost gradients: max rel. error {rep_cost.max_error:.3e} "
          f"({'pass' if rep_cost.passed else 'FAIL'})")
    return EXIT_OK if rep.passed and rep_cost.passed else EXIT_CHECK_FAILED


COMMANDS = {"solve": run_solve, "study": run_study, "check": run_check}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="varoc", description="Solve discrete optimality systems "
                                     "built from state-costate variational integrators.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("solve", "solve one problem"), ("study", "convergence-order study"),
                           ("check", "derivative checks")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config", help="JSON config file")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        cfg = load_config(args.config)
        code = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    log.info("%s finished in %.2f s", args.command, time.perf_counter() - start)
    return code


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
