import io
import math

import numpy as np
import pytest

from entrobound.bounds import (CSV_COLUMNS, NON_CONVERGED, SAMPLED, BoundEngine, HorizonConfig,
                               NotLinearError, lower_bound_trace, ltv_bounds,
                               upper_bound_measure, upper_bound_metzler_scalar,
                               upper_bound_network_measure, upper_bound_network_metzler,
                               upper_bound_superset, write_bounds_csv)
from entrobound.measures import spectral_abscissa_metzler
from entrobound.system import BoxSet, Partition, build_system

SQ3 = math.sqrt(3)
FAST = dict(dt=1e-2, ensemble=8, combos=8)


@pytest.fixture(scope="module")
def example_3_6():
    from entrobound.system import load_spec
    from conftest import fixture_path
    s, settings = load_spec(fixture_path("example_3_6.spec"))
    return s, HorizonConfig.from_settings(settings, s.t0)


def test_measure_and_metzler_on_time_varying_example(example_3_6):
    s, cfg = example_3_6
    eng = BoundEngine(s, s.K, cfg)
    m = eng.measure("inf")
    z = eng.metzler()
    assert abs(m.bound - 2 * math.sqrt(2)) <= 1e-3
    assert abs(z.bound - 4.0) <= 1e-9
    assert np.allclose(z.matrix, np.ones((2, 2)), atol=1e-9)
    assert m.bound < z.bound
    assert SAMPLED in m.qualifiers


def test_network_view_of_time_varying_example(example_3_6):
    s, cfg = example_3_6
    eng = BoundEngine(s, s.K, cfg)
    assert abs(eng.network_measure().bound - 2 * math.sqrt(2)) <= 1e-3
    assert abs(eng.network_metzler().bound - 4.0) <= 1e-9


def test_ltv_report(example_3_6):
    s, cfg = example_3_6
    r = ltv_bounds(s, cfg)
    assert abs(r.intermediates["upper_measure"] - 2 * math.sqrt(2)) <= 1e-3
    assert abs(r.intermediates["upper_metzler"] - 4.0) <= 1e-9
    assert r.intermediates["upper_measure"] < r.intermediates["upper_metzler"]


def test_ltv_constant_cases():
    s = build_system(["x1", "-x2"], K=BoxSet([0, 0], [1, 1]))
    r = ltv_bounds(s, HorizonConfig(t_max=4, **FAST))
    assert r.intermediates["upper_measure"] == 2.0 and r.intermediates["lower_trace"] == 0.0
    s = build_system(["-x1", "-x2"], K=BoxSet([0, 0], [1, 1]))
    r = ltv_bounds(s, HorizonConfig(t_max=4, **FAST))
    assert r.intermediates["upper_measure"] == 0 and r.intermediates["upper_metzler"] == 0


def test_ltv_rejects_nonlinear():
    s = build_system(["x1^2"], K=BoxSet([0], [1]))
    with pytest.raises(NotLinearError):
        ltv_bounds(s, HorizonConfig(t_max=0.5, **FAST))


def test_scalar_decay():
    s = build_system(["-x1"], K=BoxSet([-1], [1]))
    r = upper_bound_measure(s, s.K, "two", HorizonConfig(t_max=3, **FAST))
    assert r.mu_hat == -1.0 and r.bound == 0.0


def test_linear_growth_tight():
    s = build_system(["sqrt(3)*x1"], K=BoxSet([2], [3]))
    cfg = HorizonConfig(t_max=2, **FAST)
    up = upper_bound_measure(s, s.K, "inf", cfg)
    lo = lower_bound_trace(s, s.K, cfg)
    assert up.bound == pytest.approx(SQ3, rel=1e-15)
    assert lo.bound == pytest.approx(SQ3, rel=1e-15)


def test_trace_examples():
    cfg = HorizonConfig(t_max=2, **FAST)
    s = build_system(["x1", "-x2"], K=BoxSet([0, 0], [1, 1]))
    assert lower_bound_trace(s, s.K, cfg).bound == 0.0
    s = build_system(["x1", "x2"], K=BoxSet([0, 0], [1, 1]))
    assert lower_bound_trace(s, s.K, cfg).bound == 2.0


def test_metzler_tighter_for_nonnormal_metzler():
    A = np.array([[-1.0, 4.0], [0.0, -1.0]])
    s = build_system(["-x1 + 4*x2", "-x2"], K=BoxSet([-1, -1], [1, 1]))
    cfg = HorizonConfig(t_max=2, **FAST)
    z = upper_bound_metzler_scalar(s, s.K, cfg)
    m = upper_bound_measure(s, s.K, "inf", cfg)
    assert np.array_equal(z.matrix, A)
    assert z.bound == 2 * max(spectral_abscissa_metzler(A), 0) == 0.0
    assert m.bound == 6.0 and z.bound < m.bound


def test_decoupled_decay_metzler():
    s = build_system(["-x1", "-x2"], K=BoxSet([-1, -1], [1, 1]))
    z = upper_bound_metzler_scalar(s, s.K, HorizonConfig(t_max=2, **FAST))
    assert np.array_equal(z.matrix, -np.eye(2)) and z.bound == 0.0


def test_metzler_diagonal_is_signed():
    # d f1/d x1 = -2 + 0.1 cos(x1) stays negative: no absolute value on the diagonal
    s = build_system(["-2*x1 + 0.1*sin(x1)", "-x2 + 0.5*x1"], K=BoxSet([-1, -1], [1, 1]))
    z = upper_bound_metzler_scalar(s, s.K, HorizonConfig(t_max=2, **FAST))
    assert z.matrix[0, 0] < 0 and z.matrix[1, 0] == 0.5


def test_single_block_collapse_bit_for_bit():
    s = build_system(["x2 - 0.1*x1^3", "-x1 + 0.3*sin(x2)"], K=BoxSet([-1, -1], [1, 1]),
                     partition=Partition.single(2, "inf"))
    cfg = HorizonConfig(t_max=3, **FAST)
    eng = BoundEngine(s, s.K, cfg)
    assert eng.network_measure().bound == eng.measure("inf").bound
    assert eng.network_measure().mu_hat == eng.measure("inf").mu_hat


def test_scalar_partition_collapse_bit_for_bit():
    s = build_system(["x2 - 0.1*x1^3", "-x1 + 0.3*sin(x2)", "0.2*x3 + x1*x2"],
                     K=BoxSet([-1] * 3, [1] * 3), partition=Partition.scalar(3))
    eng = BoundEngine(s, s.K, HorizonConfig(t_max=3, **FAST))
    a, b = eng.network_metzler(), eng.metzler()
    assert np.array_equal(a.matrix, b.matrix) and a.bound == b.bound


def test_decoupled_blocks():
    s = build_system(["0.4*x1", "0.4*x2", "0.4*x3"], K=BoxSet([-1] * 3, [1] * 3),
                     partition=Partition((1, 2), ("inf", "two")))
    cfg = HorizonConfig(t_max=2, **FAST)
    r = upper_bound_network_measure(s, s.K, cfg)
    assert r.mu_hat == pytest.approx(0.4, rel=1e-15) and r.bound == pytest.approx(1.2, rel=1e-15)
    s = build_system(["-x1", "-x2", "-x3"], K=BoxSet([-1] * 3, [1] * 3), partition=Partition((1, 2)))
    assert upper_bound_network_metzler(s, s.K, cfg).bound == 0.0


def test_cascade_triangular(load):
    s, settings = load("cascade.spec")
    r = upper_bound_network_metzler(s, s.K, HorizonConfig.from_settings(settings, s.t0))
    assert r.matrix[0, 1] == 0.0 and r.matrix[1, 0] > 0
    assert r.spabs == r.matrix.diagonal().max() == 0.25
    assert r.bound == 3 * 0.25


def test_initial_time_variants_on_switching_example(load):
    s, settings = load("example_2_2.spec")
    cfg = HorizonConfig.from_settings(settings, s.t0)
    eng = BoundEngine(s, s.K, cfg)
    t1 = eng.measure_t1("inf")
    assert t1.bound == pytest.approx(SQ3, abs=1e-9)
    assert t1.bound <= eng.measure("inf").bound
    s1 = s.with_partition(Partition.scalar(1))
    eng1 = BoundEngine(s1, s1.K, cfg)
    assert eng1.network_metzler_t1().bound == pytest.approx(SQ3, abs=1e-9)
    assert eng1.network_measure_t1().bound == pytest.approx(SQ3, abs=1e-9)
    assert eng1.network_measure_t1().bound == eng1.measure_t1("inf").bound


def test_t1_equal_t0_matches_plain_bound():
    s = build_system(["-x1 + 0.2*sin(x1)"], K=BoxSet([-1], [1]))
    cfg = HorizonConfig(t_max=4, t1_list=(0.0,), **FAST)
    eng = BoundEngine(s, s.K, cfg)
    assert eng.measure_t1("inf").bound == eng.measure("inf").bound == 0.0


def test_superset_grid():
    s = build_system(["-x1 + 0.1*sin(x1)"], K=BoxSet([-1], [1]))
    r = upper_bound_superset(s, BoxSet([-10], [10]), "inf", [0.0, 1.0])
    xs = np.linspace(-10, 10, r.intermediates["grid_points_per_axis"])
    assert r.mu_hat == pytest.approx(np.max(-1 + 0.1 * np.cos(xs)), abs=1e-15)
    assert r.mu_hat == pytest.approx(-0.9, abs=1e-12) and r.bound == 0.0
    assert "superset containment not checked" in r.qualifiers


def test_more_samples_never_lower_the_upper_bounds():
    s = build_system(["x2 - x1^3", "-x1 + sin(x2) * x1"], K=BoxSet([-1, -1], [1, 1]),
                     partition=Partition((1, 1)))
    small = BoundEngine(s, s.K, HorizonConfig(t_max=3, dt=1e-2, ensemble=6, combos=4))
    big = BoundEngine(s, s.K, HorizonConfig(t_max=3, dt=1e-2, ensemble=12, combos=16))
    assert big.measure("two").mu_hat >= small.measure("two").mu_hat
    assert np.all(big.network_metzler().matrix >= small.network_metzler().matrix)
    assert big.metzler().spabs >= small.metzler().spabs


def test_non_converged_qualifier():
    s = build_system(["-x1 / (1 + t)"], K=BoxSet([1], [2]))
    r = lower_bound_trace(s, s.K, HorizonConfig(t_max=2, **FAST))
    assert NON_CONVERGED in r.qualifiers and not r.converged


def test_report_recombines_and_serializes(example_3_6):
    s, cfg = example_3_6
    eng = BoundEngine(s, s.K, cfg)
    rs = [eng.measure("inf"), eng.trace(), eng.metzler()]
    assert rs[0].bound == s.n * max(rs[0].mu_hat, 0)
    assert rs[2].bound == s.n * max(spectral_abscissa_metzler(rs[2].matrix), 0)
    buf = io.StringIO()
    write_bounds_csv(buf, rs)
    lines = buf.getvalue().split("\r\n")
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert lines[1].startswith("measure_inf,2.82842712")
    assert "bound=" in rs[0].to_text() and "qualifiers=" in rs[0].to_text()


def test_config_validation():
    from entrobound.system import SpecError
    s = build_system(["x1"], K=BoxSet([0], [1]))
    with pytest.raises(SpecError):
        BoundEngine(s, s.K, HorizonConfig(t_max=1, tail_fraction=1.0))
    with pytest.raises(SpecError):
        BoundEngine(s, s.K, HorizonConfig(t_max=0))
