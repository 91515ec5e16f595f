import math

import numpy as np
import pytest
import scipy.linalg
from scipy.optimize import linprog

from entrobound.ode import (BlowUpError, convex_hull_samples, convex_weights, integrate,
                            integrate_batch, sample_ensemble, sample_initial_states,
                            integrate_on_grid, time_grid, variational,
                            write_trajectory_csv)
from entrobound.system import BoxSet, build_system


def test_exponential_growth_closed_form():
    s = build_system(["sqrt(3)*x1"], K=BoxSet([2], [3]))
    tr = integrate(s, [2.0], 1.0)
    assert abs(tr.states[-1, 0] / (2 * math.exp(math.sqrt(3))) - 1) <= 1e-6
    assert tr.states[0, 0] == 2.0


def test_constant_field():
    s = build_system(["0"], K=BoxSet([0], [10]))
    tr = integrate(s, [5.0], 2.0, dt=0.1)
    assert np.all(tr.states == 5.0)


def test_blowup_reports_initial_state():
    s = build_system(["x1^2"], K=BoxSet([1], [3]))
    with pytest.raises(BlowUpError) as exc:
        integrate(s, [2.0], 1.0)
    assert exc.value.x0.tolist() == [2.0]
    assert 0.45 < exc.value.t < 0.55


def test_time_grid_hits_breakpoints():
    g = time_grid(-2.0, 3.0, 0.3, (0.0, 1.234))
    assert 0.0 in g and 1.234 in g
    assert g[0] == -2.0 and g[-1] == 3.0
    assert np.all(np.diff(g) <= 0.3 + 1e-12)


def test_switch_is_respected():
    # x' = pw(t < 1, 1, -1): the tent peaks exactly at t = 1
    s = build_system(["pw(t < 1, 1, -1)"], t_breakpoints=[1.0], K=BoxSet([0], [1]))
    tr = integrate(s, [0.0], 2.0, dt=0.3)
    k = int(np.flatnonzero(tr.times == 1.0)[0])
    assert abs(tr.states[k, 0] - 1.0) < 1e-14
    assert abs(tr.states[-1, 0]) < 1e-14


def test_rk4_order():
    s = build_system(["-x2 + 0.1*sin(x1)", "x1 - 0.2*x2^3"], K=BoxSet([-1, -1], [1, 1]))
    x0 = [0.7, -0.3]
    ends = [integrate(s, x0, 2.0, dt=d).states[-1] for d in (0.1, 0.05, 0.025)]
    e1 = np.abs(ends[0] - ends[1]).max()
    e2 = np.abs(ends[1] - ends[2]).max()
    # fourth order: the change on halving shrinks by about 2^4
    assert e2 <= 2 * e1 / 16
    assert abs(math.log2(e1 / e2) - 4) < 0.3


def test_variational_linear():
    A = np.array([[0.2, 1.0], [-0.5, -0.3]])
    s = build_system(["0.2*x1 + x2", "-0.5*x1 - 0.3*x2"], K=BoxSet([-1, -1], [1, 1]))
    v = variational(s, [0.3, 0.4], 1.5)
    assert np.allclose(v.phi[-1], scipy.linalg.expm(1.5 * A), atol=1e-6)
    assert np.array_equal(v.phi[0], np.eye(2)) and v.logdet[0] == 0.0
    assert abs(v.logdet[-1] - 1.5 * np.trace(A)) < 1e-12


def test_variational_decay():
    s = build_system(["-x1"], K=BoxSet([0], [1]))
    v = variational(s, [0.5], 1.0)
    assert abs(v.phi[-1, 0, 0] - math.exp(-1)) < 1e-6


def test_liouville_nonlinear():
    s = build_system(["x2", "-sin(x1) - 0.3*x2 + 0.2*x1*x2"], K=BoxSet([-1, -1], [1, 1]))
    v = variational(s, [0.8, 0.1], 3.0)
    det = np.linalg.det(v.phi)
    assert np.all(np.abs(det - np.exp(v.logdet)) <= 1e-6 * np.exp(v.logdet))


def test_initial_states_corners_center_then_interior():
    K = BoxSet([2], [3])
    init = sample_initial_states(K, 5, seed=0)
    assert init[:3, 0].tolist() == [2.0, 3.0, 2.5]
    assert init.shape == (5, 1) and np.all((init > 2) & (init < 3) | (init == 2) | (init == 3))
    assert np.array_equal(sample_initial_states(K, 9, 0)[:5], init)


def test_ensemble_deterministic_and_linear():
    s = build_system(["x2", "-x1 - 0.1*x2"], K=BoxSet([-1, -1], [1, 1]))
    a = sample_ensemble(s, s.K, 8, 2.0, dt=0.01, seed=4)
    b = sample_ensemble(s, s.K, 8, 2.0, dt=0.01, seed=4)
    assert np.array_equal(a.states, b.states)
    A = np.array([[0, 1], [-1, -0.1]])
    E = scipy.linalg.expm(2.0 * A)
    assert np.allclose(a.states[-1], E @ a.initial.T, atol=1e-8)


def test_hull_samples():
    s = build_system(["x1", "-x2"], K=BoxSet([0, 0], [1, 1]))
    ens = sample_ensemble(s, s.K, 6, 1.0, dt=0.01)
    only = convex_hull_samples(ens, 10, 0)
    assert np.array_equal(only, ens.states[10].T)
    pts = convex_hull_samples(ens, 10, 50, seed=3)
    V = ens.states[10].T
    # barycentric feasibility: some nonnegative weights summing to one reproduce each point
    for p in pts[V.shape[0]:]:
        res = linprog(np.zeros(V.shape[0]), A_eq=np.vstack([V.T, np.ones(V.shape[0])]),
                      b_eq=np.append(p, 1.0), bounds=[(0, None)] * V.shape[0])
        assert res.status == 0


def test_convex_weights_are_prefix_stable():
    W = convex_weights(6, 10, seed=2)
    assert np.allclose(W.sum(axis=1), 1.0) and np.all(W >= 0)
    assert np.array_equal(convex_weights(6, 4, seed=2), W[:4])
    assert np.all((W > 0).sum(axis=1) >= 2) and np.all((W > 0).sum(axis=1) <= 4)


def test_two_member_midpoint():
    a, b = np.array([1.0, 2.0]), np.array([3.0, -2.0])
    W = np.array([[0.5, 0.5]])
    assert np.array_equal(W @ np.vstack([a, b]), [[2.0, 0.0]])


def test_backward_grid_runs():
    s = build_system(["x1"], K=BoxSet([0], [1]))
    times, states = integrate_batch(s, np.array([[1.0]]), 1.0, 0.01)
    from entrobound.ode import integrate_on_grid
    back = integrate_on_grid(s, times[::-1].copy(), states[-1], record=[times.size - 1])
    assert abs(back[0, 0, 0] - 1.0) < 1e-9


def test_trajectory_csv(tmp_path):
    p = tmp_path / "a.csv"
    write_trajectory_csv(p, np.array([0.0, 0.1]), np.array([[1 / 3, 2.0], [0.5, -1e-20]]))
    raw = p.read_bytes()
    assert raw.startswith(b"t,x1,x2\r\n0,0.33333333333333331,2\r\n")
    assert b"-9.9999999999999995e-21" in raw


def test_escape_nan_marks_only_escaping_lanes():
    s = build_system(["x1^2"], K=BoxSet([0], [1]))
    times = time_grid(0.0, 2.0, 1e-3)
    out = integrate_on_grid(s, times, np.array([[0.1, 2.0]]), record=[times.size - 1], escape="nan")
    assert np.isnan(out[0, 0, 1])
    assert out[0, 0, 0] == pytest.approx(0.1 / (1 - 0.2), rel=1e-9)
