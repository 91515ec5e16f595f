import math

import numpy as np
import pytest

from entrobound.expr import ExprSyntaxError, differentiate, evaluate
from entrobound.system import (BoxSet, Partition, SpecError, build_system, jacobian,
                               jacobian_block, norm_tag, parse_spec)


def test_scalar_system():
    s = build_system(["1.7320508*x1"], K=BoxSet([2], [3]))
    assert s.n == 1 and s.partition.m == 1
    assert np.array_equal(jacobian(s, 0.3, [2.5]), [[1.7320508]])


def test_oscillator_blocks():
    s = build_system(["x2", "-x1"], partition=Partition((1, 1)), K=BoxSet([-1, -1], [1, 1]))
    assert np.array_equal(jacobian(s, 0.0, [0.2, 0.1]), [[0, 1], [-1, 0]])
    assert np.array_equal(jacobian_block(s, 1, 2, 0.0, [0.2, 0.1]), [[1]])
    with pytest.raises(IndexError):
        jacobian_block(s, 3, 1, 0.0, [0.0, 0.0])


def test_dimension_mismatch():
    with pytest.raises(ExprSyntaxError):
        build_system(["x1", "x3"], K=BoxSet([0, 0], [1, 1]))
    with pytest.raises(SpecError):
        build_system(["x1", "x2"], K=BoxSet([0], [1]))
    with pytest.raises(SpecError):
        build_system(["x1", "x2"], partition=Partition((1, 2)), K=BoxSet([0, 0], [1, 1]))


def test_time_varying_jacobian_at_zero():
    s = build_system(["sin(t)*x1 + cos(t)*x2"] * 2, K=BoxSet([-1, -1], [1, 1]))
    assert np.array_equal(jacobian(s, 0.0, [0.3, -0.2]), [[0, 1], [0, 1]])


def test_box_validation():
    with pytest.raises(SpecError):
        BoxSet([0, 1], [1, 1])
    with pytest.raises(SpecError):
        BoxSet([0], [math.inf])
    K = BoxSet([0, -1], [2, 1])
    assert K.volume == 4.0
    assert K.corners().shape == (4, 2)
    a, b = K.split(0)
    assert a.upper[0] == 1.0 and b.lower[0] == 1.0


def test_norm_aliases():
    assert norm_tag("1") == "one" and norm_tag("∞") == "inf" and norm_tag(2) == "two"
    with pytest.raises(SpecError):
        norm_tag("3")


def test_jacobian_entries_are_derivatives():
    s = build_system(["x1*x2 + sin(t)", "exp(-x1) * x2^2"], K=BoxSet([0, 0], [1, 1]))
    for i in range(2):
        for j in range(2):
            assert s.jac[i][j] == differentiate(s.f[i], j + 1)


def _random_system(rng):
    return build_system(["x1*x2 - sin(x3) + t*x1", "tanh(x1 + 2*x2) * x3", "exp(-x1^2) + x2*x3^2",
                         "cos(x4 * x1) - x2"], partition=Partition((1, 2, 1), ("inf", "two", "one")),
                        K=BoxSet([-1] * 4, [1] * 4))


def test_blocks_reassemble_jacobian_bit_exactly():
    rng = np.random.default_rng(0)
    s = _random_system(rng)
    for _ in range(100):
        x = rng.uniform(-2, 2, 4)
        t = rng.uniform(-1, 1)
        J = jacobian(s, t, x)
        rows = [np.hstack([jacobian_block(s, i, j, t, x) for j in range(1, 4)]) for i in range(1, 4)]
        assert np.array_equal(np.vstack(rows), J)


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(1)
    s = _random_system(rng)
    h = 1e-6
    for _ in range(100):
        x = rng.uniform(-2, 2, 4)
        t = rng.uniform(-1, 1)
        J = jacobian(s, t, x)
        for j in range(4):
            e = np.zeros(4)
            e[j] = h
            col = (s.rhs(t, x + e) - s.rhs(t, x - e)) / (2 * h)
            assert np.all(np.abs(col - J[:, j]) <= 1e-6 * (1 + np.abs(J[:, j])))


SPEC = """
[system]
n = 2
t0 = 1.5
breakpoints = 3, 2
f1 = x2   # comment
f2 = -x1

[initial_set]
lower = -1, -2
upper = 1, 2

[partition]
blocks = 1, 1
local_norms = inf, 2
network_norm = one

[horizon]
t_max = 10
"""


def test_parse_spec():
    s, settings = parse_spec(SPEC)
    assert s.n == 2 and s.t0 == 1.5 and s.breakpoints == (2.0, 3.0)
    assert s.partition.local_norms == ("inf", "two") and s.partition.network_norm == "one"
    assert settings["horizon"]["t_max"] == "10"
    assert evaluate(s.f[1], 0, [2.0, 0.0]) == -2.0


def test_parse_spec_errors():
    with pytest.raises(SpecError):
        parse_spec("[system]\nn = 1\n")
    with pytest.raises(SpecError):
        parse_spec(SPEC.replace("f2 = -x1", ""))
    bad = SPEC.replace("f2 = -x1", "f2 = -x1 +")
    with pytest.raises(ExprSyntaxError, match="f2"):
        parse_spec(bad)
