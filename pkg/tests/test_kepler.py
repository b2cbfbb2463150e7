import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from varoc.core import check_derivatives, check_terminal_cost
from varoc.kepler import (KeplerParams, SingularityError, initial_circular_state, kepler_problem, kepler_system,
                          quadratic_terminal_cost, rotation_generator, spiral_path, transfer_horizon)


def _rot(a):
    return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])


def test_drift_and_anchor_on_x_axis():
    sys = kepler_system(1.0, 10.0)
    q = np.array([4.0, 0.0])
    npt.assert_allclose(sys.eval_f(q, np.zeros(2)), [-0.625, 0.0], atol=1e-15)
    npt.assert_allclose(sys.eval_rho(q), [[0.0], [1.0]], atol=1e-15)
    npt.assert_array_equal(sys.eval_g(np.array([-2.0, 7.0])), [[1.0]])
    assert sys.n == 2 and sys.m == 1


def test_drift_has_no_velocity_dependence():
    sys = kepler_system()
    q = np.array([1.0, 2.0])
    npt.assert_array_equal(sys.eval_f(q, np.zeros(2)), sys.eval_f(q, np.array([3.0, -1.0])))
    npt.assert_array_equal(sys.eval_d_v_f(q, np.ones(2)), 0.0)


def test_singularity():
    sys = kepler_system()
    with pytest.raises(SingularityError):
        sys.eval_f(np.zeros(2), np.zeros(2))
    with pytest.raises(SingularityError):
        sys.eval_rho(np.zeros(2))
    with pytest.raises(ValueError):
        kepler_system(G=0.0)


def test_transfer_horizon():
    T = transfer_horizon(1.5, 1.0, 10.0, 4.0, 5.0)
    assert float(f"{T:.4g}") == 28.45
    assert transfer_horizon(0.0, 1.0, 10.0, 4.0, 5.0) == 0.0


def test_initial_circular_state():
    q0, v0 = initial_circular_state(1.0, 10.0, 4.0)
    npt.assert_array_equal(q0, [4.0, 0.0])
    npt.assert_allclose(v0, [0.0, 1.58114], atol=5e-6)
    assert v0 @ v0 * 4.0 == pytest.approx(10.0, rel=1e-15)
    with pytest.raises(ValueError):
        initial_circular_state(1.0, 10.0, 0.0)


def test_terminal_cost_examples():
    cost = quadratic_terminal_cost([-5.0, 0.0], [0.0, -1.0], np.eye(2), np.eye(2))
    qT, vT = np.array([-5.0, 0.0]), np.array([0.0, -1.0])
    assert cost.phi(qT, vT) == 0.0
    npt.assert_array_equal(cost.d1_phi(qT, vT), 0.0)
    npt.assert_array_equal(cost.d2_phi(qT, vT), 0.0)
    assert cost.phi(qT + [1.0, 0.0], vT) == 1.0
    with pytest.raises(ValueError):
        quadratic_terminal_cost(qT, vT, np.array([[1.0, 2.0], [2.0, 1.0]]), np.eye(2))


def test_terminal_cost_gradient_fd():
    rng = np.random.default_rng(7)
    A = rng.normal(size=(2, 2))
    cost = quadratic_terminal_cost([-5.0, 0.0], [0.0, -1.0], A @ A.T + np.eye(2), np.diag([2.0, 0.5]))
    probes = [(rng.normal(size=2) * 3, rng.normal(size=2)) for _ in range(5)]
    rep = check_terminal_cost(cost, probes, tol=1e-8)
    assert rep.passed, rep.failures()


def test_analytic_derivatives_pass_fd_check():
    rng = np.random.default_rng(11)
    probes = []
    for _ in range(20):
        r, th = rng.uniform(1.0, 10.0), rng.uniform(0, 2 * np.pi)
        probes.append((r * np.array([np.cos(th), np.sin(th)]), rng.normal(size=2)))
    assert check_derivatives(kepler_system(), probes).passed


@settings(max_examples=50, deadline=None)
@given(st.floats(0.5, 10.0), st.floats(0.0, 2 * np.pi), st.floats(-np.pi, np.pi), st.floats(-3.0, 3.0))
def test_rotational_equivariance(r, th, a, u):
    sys = kepler_system()
    q = r * np.array([np.cos(th), np.sin(th)])
    R = _rot(a)
    npt.assert_allclose(sys.eval_f(R @ q, np.zeros(2)), R @ sys.eval_f(q, np.zeros(2)), atol=1e-13)
    npt.assert_allclose(sys.eval_rho(R @ q) @ [u], R @ sys.eval_rho(q) @ [u], atol=1e-13)


def test_rotation_generator():
    B, d = rotation_generator()
    npt.assert_array_equal(B, [[0.0, -1.0], [1.0, 0.0]])
    npt.assert_array_equal(d, 0.0)


def test_params_defaults_and_validation():
    p = KeplerParams()
    assert p.horizon == 28.0
    npt.assert_allclose(p.target_velocity, [0.0, -np.sqrt(2.0)])
    assert KeplerParams(T=None).horizon == pytest.approx(transfer_horizon(1.5, 1.0, 10.0, 4.0, 5.0))
    npt.assert_array_equal(KeplerParams(vT=(1.0, 2.0)).target_velocity, [1.0, 2.0])
    for bad in (dict(G=0.0), dict(M=-1.0), dict(r0=0.0), dict(rT=-2.0)):
        with pytest.raises(ValueError):
            KeplerParams(**bad)


def test_problem_assembly():
    prob = kepler_problem()
    npt.assert_array_equal(prob.q0, [4.0, 0.0])
    assert prob.T == 28.0
    assert prob.terminal.phi(np.array([-5.0, 0.0]), np.array([0.0, -np.sqrt(2.0)])) == pytest.approx(0.0, abs=1e-30)


def test_spiral_path_winds_around_centre():
    path = spiral_path([4.0, 0.0], [-5.0, 0.0], 1.5)
    s = np.linspace(0.0, 1.0, 201)
    pts = path(s)
    npt.assert_allclose(pts[0], [4.0, 0.0], atol=1e-14)
    npt.assert_allclose(pts[-1], [-5.0, 0.0], atol=1e-13)
    npt.assert_allclose(np.linalg.norm(pts, axis=1), 4.0 + s, rtol=1e-14)
    angle = np.unwrap(np.arctan2(pts[:, 1], pts[:, 0]))
    assert angle[-1] == pytest.approx(3 * np.pi)
    with pytest.raises(SingularityError):
        spiral_path([0.0, 0.0], [1.0, 0.0], 1.0)
