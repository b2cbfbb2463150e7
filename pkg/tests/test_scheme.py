import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from varoc.core import _fd_jacobian, minimising_control
from varoc.kepler import kepler_system
from varoc.scheme import (SchemeParams, averaged, boundary_velocities_dep, boundary_velocities_indep,
                          discrete_momenta, lagrangian_dep, lagrangian_indep, minimising_interval_controls)

from helpers import coupled_system, kepler_solve, null_system

unit = st.floats(0.0, 1.0, allow_nan=False)
small = st.floats(-1.0, 1.0, allow_nan=False)
vec2 = arrays(np.float64, 2, elements=small)


def P(a=1.0, b=None, g=None, N=10, h=0.1):
    g = a if g is None else g
    b = g if b is None else b
    return SchemeParams(a, b, g, N, h)


def _pair(q0, l0, q1, l1):
    return (np.asarray(q0, float), np.asarray(l0, float)), (np.asarray(q1, float), np.asarray(l1, float))


# --- parameters -----------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(alpha=1.5, beta=0, gamma=0, N=4, h=0.1),
                                dict(alpha=0.5, beta=-0.1, gamma=0, N=4, h=0.1),
                                dict(alpha=0.5, beta=0, gamma=0, N=1, h=0.1),
                                dict(alpha=0.5, beta=0, gamma=0, N=4, h=0.0)])
def test_scheme_params_validation(kw):
    with pytest.raises(ValueError):
        SchemeParams(**kw)


def test_scheme_params_horizon():
    p = SchemeParams.on_horizon(28.0, 280, 0.5)
    assert p.h == pytest.approx(0.1)
    p.check_horizon(28.0)
    with pytest.raises(ValueError):
        p.check_horizon(28.45)
    t1, t2 = P(1.0, 1.0, 1.0, N=4, h=0.5).control_times()
    npt.assert_allclose(t1, [0.0, 0.5, 1.0, 1.5])
    npt.assert_allclose(t2, [0.5, 1.0, 1.5, 2.0])


def test_averaged_helper():
    ybar, dy = averaged([1.0, 2.0], [3.0, 6.0], 0.5, 0.25)
    npt.assert_allclose(ybar, [2.5, 5.0])
    npt.assert_allclose(dy, [4.0, 8.0])


# --- Lagrangian values ------------------------------------------------------------

def test_lagrangian_zero_costate_is_zero():
    pair = _pair([4.0, 0.0], [0, 0], [4.0, 0.158], [0, 0])
    assert lagrangian_indep(kepler_system(), pair, P()) == 0.0
    assert lagrangian_dep(kepler_system(), pair, (np.zeros(1), np.zeros(1)), P()) == 0.0


def test_lagrangian_kinetic_only():
    q0, l0, q1, l1 = np.array([0.1, 0.2]), np.array([1.0, -1.0]), np.array([0.4, -0.3]), np.array([2.0, 0.5])
    h = 0.1
    expected = h * ((l1 - l0) / h) @ ((q1 - q0) / h)
    assert lagrangian_indep(null_system(), _pair(q0, l0, q1, l1), P(0.3, g=0.7, h=h)) == pytest.approx(expected, rel=1e-14)


def test_lagrangian_kepler_hand_value():
    # q_bar = (4, 0), lam_bar = (1, 0): lam.f = -0.625, lam.b.lam = 0, no kinetic term
    pair = _pair([4.0, 0.0], [1.0, 0.0], [4.0, 0.158], [1.0, 0.0])
    assert lagrangian_indep(kepler_system(), pair, P(1.0, h=0.1)) == pytest.approx(-0.0625, rel=1e-14)


def _scalar_oracle(sys, q0, l0, q1, l1, a, g, h):
    """Term-by-term re-implementation of the control-independent Lagrangian."""
    from varoc.core import eval_b
    dq, dl = (q1 - q0) / h, (l1 - l0) / h
    total = h * float(dl @ dq)
    for w, c in ((a, g), (1 - a, 1 - g)):
        qc, lc = c * q0 + (1 - c) * q1, c * l0 + (1 - c) * l1
        total += h * w * (float(lc @ sys.eval_f(qc, dq)) + 0.5 * float(lc @ eval_b(sys, qc) @ lc))
    return total


@settings(max_examples=40, deadline=None)
@given(vec2, vec2, vec2, vec2, unit, unit)
def test_lagrangian_matches_scalar_oracle(q0, l0, q1, l1, a, g):
    sys = coupled_system()
    h = 0.2
    val = lagrangian_indep(sys, _pair(q0, l0, q1, l1), P(a, g=g, h=h))
    assert val == pytest.approx(_scalar_oracle(sys, q0, l0, q1, l1, a, g, h), rel=1e-12, abs=1e-14)


def test_lagrangian_dep_zero_controls_equals_uncontrolled():
    sys = coupled_system()
    rng = np.random.default_rng(2)
    q0, l0, q1, l1 = rng.normal(size=(4, 2))
    val = lagrangian_dep(sys, _pair(q0, l0, q1, l1), (np.zeros(1), np.zeros(1)), P(0.3, g=0.6))
    # b = 0 version of the oracle: drop the quadratic control term
    h = 0.1
    dq, dl = (q1 - q0) / h, (l1 - l0) / h
    expected = h * dl @ dq
    for w, c in ((0.3, 0.6), (0.7, 0.4)):
        qc, lc = c * q0 + (1 - c) * q1, c * l0 + (1 - c) * l1
        expected += h * w * lc @ sys.eval_f(qc, dq)
    assert val == pytest.approx(expected, rel=1e-13)


@settings(max_examples=40, deadline=None)
@given(vec2, vec2, vec2, vec2, unit, unit)
def test_control_substitution_identity(q0, l0, q1, l1, a, g):
    sys = coupled_system()
    p = P(a, g=g)
    U1, U2 = minimising_interval_controls(sys, np.stack([q0, q1]), np.stack([l0, l1]), p)
    dep = lagrangian_dep(sys, _pair(q0, l0, q1, l1), (U1[0], U2[0]), p)
    indep = lagrangian_indep(sys, _pair(q0, l0, q1, l1), p)
    assert dep == pytest.approx(indep, rel=1e-12, abs=1e-14)


@settings(max_examples=40, deadline=None)
@given(vec2, vec2, vec2, vec2, unit, unit, small, small)
def test_parameter_symmetry(q0, l0, q1, l1, a, g, u1, u2):
    sys = coupled_system()
    pair = _pair(q0, l0, q1, l1)
    v1 = lagrangian_indep(sys, pair, P(a, g=g))
    v2 = lagrangian_indep(sys, pair, P(1 - a, g=1 - g))
    assert v1 == pytest.approx(v2, rel=1e-12, abs=1e-14)
    U1, U2 = np.array([u1]), np.array([u2])
    d1 = lagrangian_dep(sys, pair, (U1, U2), SchemeParams(a, g, g, 10, 0.1))
    d2 = lagrangian_dep(sys, pair, (U2, U1), SchemeParams(1 - a, 1 - g, 1 - g, 10, 0.1))
    assert d1 == pytest.approx(d2, rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("a,g", [(1.0, 1.0), (0.5, 0.5), (1.0, 0.0), (0.3, 0.8)])
def test_consistency_with_continuous_lagrangian(a, g):
    """Ld/h tends to lam'.q' + lam.f + 1/2 lam.b.lam at the left node, first order in h."""
    from varoc.core import eval_b
    sys = coupled_system()
    t0 = 0.3

    def curve(t):
        return np.array([np.sin(t), 0.5 * np.cos(2 * t)]), np.array([np.cos(t), t**2])

    def dcurve(t):
        return np.array([np.cos(t), -np.sin(2 * t)]), np.array([-np.sin(t), 2 * t])

    q, lam = curve(t0)
    dq, dl = dcurve(t0)
    L = dl @ dq + lam @ sys.eval_f(q, dq) + 0.5 * lam @ eval_b(sys, q) @ lam
    errs = []
    for h in (0.02, 0.01, 0.005):
        q1, l1 = curve(t0 + h)
        errs.append(abs(lagrangian_indep(sys, _pair(q, lam, q1, l1), P(a, g=g, h=h)) / h - L))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 1.6) & (ratios < 2.4))


# --- boundary velocities -----------------------------------------------------------

def test_boundary_velocities_force_free():
    q = np.array([[0.0, 0.0], [0.1, 0.2], [0.3, 0.1]])
    lam = np.ones((3, 2))
    p = P(0.4, g=0.3, h=0.1)
    v0, vN = boundary_velocities_indep(null_system(), (q[0], q[1], lam[0], lam[1]),
                                       (q[1], q[2], lam[1], lam[2]), p)
    npt.assert_allclose(v0, (q[1] - q[0]) / 0.1)
    npt.assert_allclose(vN, (q[2] - q[1]) / 0.1)


def test_boundary_velocity_vanishing_prefactors():
    sys = coupled_system()
    q0, q1, l0, l1 = np.random.default_rng(5).normal(size=(4, 2))
    v0, _ = boundary_velocities_indep(sys, (q0, q1, l0, l1), (q0, q1, l0, l1), P(1.0, g=0.0))
    npt.assert_allclose(v0, (q1 - q0) / 0.1, rtol=0, atol=1e-14)


def test_boundary_velocity_kepler_hand_values():
    q0, q1 = np.array([4.0, 0.0]), np.array([4.0, 0.15811])
    z = np.zeros(2)
    v0, _ = boundary_velocities_indep(kepler_system(), (q0, q1, z, z), (q0, q1, z, z), P(1.0, h=0.1))
    npt.assert_allclose(v0, [0.0625, 1.5811], atol=1e-12)
    U = (np.array([2.0]), np.array([0.0]))
    v0, _ = boundary_velocities_dep(kepler_system(), (q0, q1), (q0, q1), U, U, P(1.0, h=0.1))
    npt.assert_allclose(v0, [0.0625, 1.3811], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(vec2, vec2, vec2, vec2, unit, unit)
def test_boundary_velocities_dep_match_indep_with_minimising_controls(q0, l0, q1, l1, a, g):
    sys = coupled_system()
    p = P(a, g=g)
    U1, U2 = minimising_interval_controls(sys, np.stack([q0, q1]), np.stack([l0, l1]), p)
    ind = boundary_velocities_indep(sys, (q0, q1, l0, l1), (q0, q1, l0, l1), p)
    dep = boundary_velocities_dep(sys, (q0, q1), (q0, q1), (U1[0], U2[0]), (U1[0], U2[0]), p)
    npt.assert_allclose(dep[0], ind[0], rtol=1e-12, atol=1e-12)
    npt.assert_allclose(dep[1], ind[1], rtol=1e-12, atol=1e-12)


def test_boundary_velocities_dep_never_read_costate():
    import inspect
    params = inspect.signature(boundary_velocities_dep).parameters
    assert "lam" not in " ".join(params)
    # perturbing every costate of a solved run leaves the boundary velocities bit-identical
    prob, p, res = kepler_solve((0.5, 0.5, 0.5), "dependent")
    t = res.traj
    args = ((t.q[0], t.q[1]), (t.q[-2], t.q[-1]), (t.U1[0], t.U2[0]), (t.U1[-1], t.U2[-1]), p)
    before = boundary_velocities_dep(prob.system, *args)
    t.lam += 1.0
    try:
        after = boundary_velocities_dep(prob.system, *args)
    finally:
        t.lam -= 1.0
    npt.assert_array_equal(before[0], after[0])
    npt.assert_array_equal(before[1], after[1])


# --- momenta ----------------------------------------------------------------------

def _fd_momenta(sys, q0, l0, q1, l1, p, u=None):
    def L(y0, y1):
        pair = _pair(y0[:2], y0[2:], y1[:2], y1[2:])
        return np.atleast_1d(lagrangian_indep(sys, pair, p) if u is None else lagrangian_dep(sys, pair, u, p))

    y0, y1 = np.concatenate([q0, l0]), np.concatenate([q1, l1])
    d1 = _fd_jacobian(lambda y: L(y, y1), y0)[0]
    d2 = _fd_jacobian(lambda y: L(y0, y), y1)[0]
    return -d1, d2


@settings(max_examples=30, deadline=None)
@given(vec2, vec2, vec2, vec2, unit, unit, st.booleans())
def test_momenta_match_finite_differences(q0, l0, q1, l1, a, g, dep):
    sys = coupled_system()
    p = P(a, g=g)
    u = (np.array([0.3]), np.array([-0.7])) if dep else None
    pm, pp = discrete_momenta(sys, _pair(q0, l0, q1, l1), p, u)
    fm, fp = _fd_momenta(sys, q0, l0, q1, l1, p, u)
    for an, fd in ((pm, fm), (pp, fp)):
        assert np.max(np.abs(an - fd)) / max(1.0, np.max(np.abs(fd))) <= 1e-6


def test_momentum_costate_slot_is_boundary_velocity():
    sys = coupled_system()
    q0, l0, q1, l1 = np.random.default_rng(7).normal(size=(4, 2))
    p = P(0.3, g=0.8)
    pm, pp = discrete_momenta(sys, _pair(q0, l0, q1, l1), p)
    v0, vN = boundary_velocities_indep(sys, (q0, q1, l0, l1), (q0, q1, l0, l1), p)
    npt.assert_array_equal(pm[2:], v0)
    npt.assert_array_equal(pp[2:], vN)


def test_free_momentum_is_costate_difference():
    q0, l0, q1, l1 = np.random.default_rng(8).normal(size=(4, 2))
    pm, _ = discrete_momenta(null_system(), _pair(q0, l0, q1, l1), P(h=0.1))
    npt.assert_allclose(pm[:2], (l1 - l0) / 0.1)


def test_momenta_match_at_interior_nodes_of_solution():
    prob, p, res = kepler_solve((1.0, 1.0, 1.0))
    q, lam = res.traj.q, res.traj.lam
    pm, pp = discrete_momenta(prob.system, ((q[:-1], lam[:-1]), (q[1:], lam[1:])), p)
    assert np.max(np.abs(pp[:-1] - pm[1:])) <= 100 * 1e-10


def test_nodal_controls_match_minimising_control():
    from varoc.scheme import nodal_controls
    sys = kepler_system()
    q = np.array([[4.0, 0.0], [0.0, 3.0]])
    lam = np.array([[3.0, 5.0], [1.0, 2.0]])
    npt.assert_allclose(nodal_controls(sys, q, lam), minimising_control(sys, q, lam))
    npt.assert_allclose(nodal_controls(sys, q, lam)[0], [5.0])
