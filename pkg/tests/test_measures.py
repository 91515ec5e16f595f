import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from entrobound.measures import (NotMetzlerError, eigenvalues, global_norm, induced_norm,
                                 interconnection_from_jacobians, interconnection_matrix,
                                 is_metzler, matrix_exponential, matrix_measure,
                                 measure_sandwich_check, mixed_norm,
                                 spectral_abscissa_metzler, vector_norm)
from entrobound.system import BoxSet, Partition, build_system

NORMS = ("one", "two", "inf")
A1 = np.array([[1.0, 0.0], [1.0, 0.0]])
A2 = np.array([[0.0, 1.0], [0.0, 1.0]])


def test_induced_norm_examples():
    assert induced_norm(A1, "inf") == 1.0
    for p in NORMS:
        assert induced_norm(np.eye(3), p) == pytest.approx(1.0, abs=1e-15)
    assert induced_norm(np.array([[3.0, 4.0], [0.0, 0.0]]), "two") == pytest.approx(5.0, rel=1e-14)


def test_mixed_norm_examples():
    A = np.random.default_rng(0).normal(size=(3, 3))
    assert mixed_norm(A, "inf", "inf") == induced_norm(A, "inf")
    assert mixed_norm(np.array([[1.0], [1.0]]), "inf", "inf") == 1.0
    for p in NORMS:
        assert mixed_norm(A, p, p) == pytest.approx(induced_norm(A, p), rel=1e-12)


def _sphere(p, k, count, rng):
    v = rng.normal(size=(count, k))
    if p == "inf":
        # include the extreme points
        v = np.vstack([v, np.array(list(itertools.product((-1.0, 1.0), repeat=k)))])
    return v / vector_norm(v, p)[:, None]


@pytest.mark.parametrize("po,pi", list(itertools.product(NORMS, NORMS)))
def test_mixed_norm_dominates_sphere_samples(po, pi):
    rng = np.random.default_rng([NORMS.index(po), NORMS.index(pi)])
    A = rng.normal(size=(2, 3))
    v = _sphere(pi, 3, 10_000, rng)
    sampled = vector_norm(v @ A.T, po).max()
    exact = mixed_norm(A, po, pi)
    assert sampled <= exact + 1e-9
    # and the sampling oracle comes close
    assert sampled >= exact * (0.97 if pi != "inf" else 1.0) - 1e-12


def test_measure_examples():
    assert matrix_measure(A1, "inf") == 1.0
    assert matrix_measure(A2, "inf") == 1.0
    for p in NORMS:
        assert matrix_measure(np.zeros((3, 3)), p) == 0.0
        assert matrix_measure(np.eye(3), p) == pytest.approx(1.0, abs=1e-15)
    t = math.pi / 4
    assert matrix_measure(A1 * math.sin(t) + A2 * math.cos(t), "inf") == pytest.approx(math.sqrt(2), abs=1e-15)


def test_sandwich_examples():
    assert measure_sandwich_check(np.diag([1.0, -1.0]), "inf")
    R = np.array([[0.0, 1.0], [-1.0, 0.0]])
    assert matrix_measure(R, "two") == 0.0
    assert measure_sandwich_check(R, "two")


def test_sandwich_catches_a_wrong_measure(monkeypatch):
    import entrobound.measures as m
    monkeypatch.setattr(m, "matrix_measure", lambda A, p: -10.0)
    assert not m.measure_sandwich_check(np.eye(2), "inf")


def test_is_metzler():
    assert is_metzler(np.array([[-5.0, 0.0], [2.0, 1.0]]))
    assert not is_metzler(np.array([[0.0, -1e-300], [0.0, 0.0]]))
    assert is_metzler(np.eye(4))


def test_spectral_abscissa_examples():
    assert spectral_abscissa_metzler(np.ones((2, 2))) == pytest.approx(2.0, rel=1e-12)
    assert spectral_abscissa_metzler(np.diag([-3.0, 0.5])) == 0.5
    assert spectral_abscissa_metzler(np.array([[0.0, 1.0], [1.0, 0.0]])) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(NotMetzlerError):
        spectral_abscissa_metzler(np.array([[0.0, -1.0], [1.0, 0.0]]))


def _random_metzler(rng, k):
    M = rng.normal(size=(k, k))
    off = ~np.eye(k, dtype=bool)
    M[off] = np.abs(M[off]) * (rng.random((k, k))[off] < rng.uniform(0.1, 1.0))
    return M


def test_spectral_abscissa_against_eigenvalue_oracle():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        k = int(rng.integers(1, 9))
        M = _random_metzler(rng, k)
        ref = eigenvalues(M).real.max()
        assert abs(spectral_abscissa_metzler(M) - ref) <= 1e-8 * (1 + abs(ref))


def test_spectral_abscissa_periodic_and_reducible():
    # cyclic permutation: periodic, all eigenvalues on the unit circle
    P = np.roll(np.eye(5), 1, axis=1)
    assert spectral_abscissa_metzler(P) == pytest.approx(1.0, rel=1e-12)
    B = np.array([[0.0, 5.0, 0.0], [0.0, -1.0, 0.0], [0.0, 3.0, 2.0]])
    assert spectral_abscissa_metzler(B) == pytest.approx(2.0, rel=1e-12)


def test_growth_identity():
    rng = np.random.default_rng(3)
    for _ in range(50):
        M = _random_metzler(rng, int(rng.integers(1, 6)))
        rate = math.log(induced_norm(matrix_exponential(50 * M), "inf")) / 50
        assert abs(rate - spectral_abscissa_metzler(M)) < 0.05


def test_matrix_exponential_examples():
    assert np.array_equal(matrix_exponential(np.zeros((2, 2))), np.eye(2))
    assert np.allclose(matrix_exponential(np.diag([1.0, 2.0])), np.diag([math.e, math.e**2]), rtol=1e-14)
    assert np.allclose(matrix_exponential(np.array([[0.0, 1.0], [0.0, 0.0]])), [[1, 1], [0, 1]], rtol=1e-15)


def test_interconnection_examples():
    s = build_system(["sin(t)*x1 + cos(t)*x2"] * 2, partition=Partition((1, 1)),
                     K=BoxSet([-1, -1], [1, 1]))
    AN = interconnection_matrix(s, math.pi / 2, [0.3, 0.1])
    assert np.allclose(AN, [[1, 0], [1, 0]], atol=1e-15)
    d = build_system(["-2*x1 + x2", "x1 - x2", "0.5*x3"], partition=Partition((2, 1)),
                     K=BoxSet([-1] * 3, [1] * 3))
    AN = interconnection_matrix(d, 0.0, [0, 0, 0])
    assert np.array_equal(AN, [[0.0, 0.0], [0.0, 0.5]])
    one = d.with_partition(Partition.single(3))
    J = np.array([[-2.0, 1, 0], [1, -1, 0], [0, 0, 0.5]])
    assert interconnection_matrix(one, 0.0, [0, 0, 0]).shape == (1, 1)
    assert interconnection_matrix(one, 0.0, [0, 0, 0])[0, 0] == matrix_measure(J, "inf")


def test_global_norm_inf_inf_is_max_norm():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(20, 5))
    P = Partition((2, 2, 1), "inf", "inf")
    assert np.array_equal(global_norm(v, P), np.abs(v).max(axis=1))


square = st.integers(1, 5).flatmap(
    lambda k: arrays(np.float64, (k, k), elements=st.floats(-10, 10)))


@settings(max_examples=300)
@given(square, st.data(), st.floats(0, 10), st.sampled_from(NORMS))
def test_measure_subadditive_and_homogeneous(A, data, c, p):
    B = data.draw(arrays(np.float64, A.shape, elements=st.floats(-10, 10)))
    tol = 1e-9 * (1 + np.abs(A).sum() + np.abs(B).sum())
    assert matrix_measure(A + B, p) <= matrix_measure(A, p) + matrix_measure(B, p) + tol
    assert abs(matrix_measure(c * A, p) - c * matrix_measure(A, p)) <= tol * (1 + c)
    assert -induced_norm(A, p) - tol <= matrix_measure(A, p) <= induced_norm(A, p) + tol


def test_random_sandwich_sweep():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        A = rng.normal(size=(4, 4)) * rng.uniform(0.1, 5)
        for p in NORMS:
            assert measure_sandwich_check(A, p)


def test_block_domination_sweep():
    rng = np.random.default_rng(5)
    for _ in range(500):
        n = int(rng.integers(2, 9))
        cuts = np.sort(rng.choice(np.arange(1, n), size=int(rng.integers(0, n)), replace=False))
        blocks = np.diff(np.concatenate([[0], cuts, [n]]))
        P = Partition(blocks, "inf", "inf")
        A = rng.normal(size=(n, n))
        AN = interconnection_from_jacobians(A, P)
        assert is_metzler(AN)
        assert matrix_measure(A, "inf") <= matrix_measure(AN, "inf") + 1e-9
