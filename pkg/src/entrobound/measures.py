"""Induced norms, matrix measures, mixed block norms, Metzler spectral
abscissa and the interconnection matrix.

All functions accept a single matrix or a stack with shape ``(..., r, c)``.
"""
from __future__ import annotations

import itertools

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components

from .system import System, jacobian, norm_tag

__all__ = [
    "induced_norm", "vector_norm", "mixed_norm", "matrix_measure",
    "measure_sandwich_check", "is_metzler", "spectral_abscissa_metzler",
    "matrix_exponential", "interconnection_matrix",
    "interconnection_from_jacobians", "global_norm", "eigenvalues",
    "NotMetzlerError",
]


class NotMetzlerError(ValueError):
    pass


def vector_norm(v, p, axis=-1):
    p = norm_tag(p)
    v = np.asarray(v, dtype=float)
    if p == "one":
        return np.sum(np.abs(v), axis=axis)
    if p == "two":
        return np.sqrt(np.sum(v * v, axis=axis))
    return np.max(np.abs(v), axis=axis)


def induced_norm(A, p):
    """Operator norm induced by the vector 1, 2 or inf norm."""
    p = norm_tag(p)
    A = np.asarray(A, dtype=float)
    if p == "one":
        return np.max(np.sum(np.abs(A), axis=-2), axis=-1)
    if p == "inf":
        return np.max(np.sum(np.abs(A), axis=-1), axis=-1)
    if A.shape[-1] == 0 or A.shape[-2] == 0:
        return np.zeros(A.shape[:-2])
    return np.linalg.norm(A, ord=2, axis=(-2, -1))


def _sign_vectors(k):
    return np.array(list(itertools.product((-1.0, 1.0), repeat=k)))


_VERTEX_LIMIT = 16


def mixed_norm(A, p_out, p_in):
    """``max_{|v|_in = 1} |A v|_out``, exact for all 1/2/inf combinations.

    in = 1: the unit ball's extreme points are the signed unit vectors, so
    the value is the largest column out-norm.  in = inf: extreme points are
    the sign vectors (enumerated up to 16 columns).  in = 2: out = 2 is the
    largest singular value, out = inf the largest row 2-norm, and out = 1
    is ``max_s |A^T s|_2`` over sign vectors ``s``.
    """
    po, pi = norm_tag(p_out), norm_tag(p_in)
    A = np.asarray(A, dtype=float)
    r, c = A.shape[-2:]
    if r == 0 or c == 0:
        return np.zeros(A.shape[:-2])
    if pi == "one":
        return np.max(vector_norm(A, po, axis=-2), axis=-1)
    if pi == "inf":
        if po == "inf":
            return induced_norm(A, "inf")
        if c > _VERTEX_LIMIT:
            return _power_mixed(A, po, pi)
        S = _sign_vectors(c)                      # (2^c, c)
        AV = A @ S.T                              # (..., r, 2^c)
        return np.max(vector_norm(AV, po, axis=-2), axis=-1)
    if po == "two":
        return induced_norm(A, "two")
    if po == "inf":
        return np.max(np.sqrt(np.sum(A * A, axis=-1)), axis=-1)
    if r > _VERTEX_LIMIT:
        return _power_mixed(A, po, pi)
    S = _sign_vectors(r)                          # (2^r, r)
    ATs = np.swapaxes(A, -1, -2) @ S.T            # (..., c, 2^r)
    return np.max(np.sqrt(np.sum(ATs * ATs, axis=-2)), axis=-1)


def _power_mixed(A, po, pi, iters=200, starts=8, seed=0):
    """Lower estimate by alternating dual-norm iteration from random starts."""
    A = np.asarray(A, dtype=float)
    flat = A.reshape((-1,) + A.shape[-2:])
    rng = np.random.default_rng(seed)
    dual = {"one": "inf", "inf": "one", "two": "two"}
    out = np.empty(flat.shape[0])

    def dual_vec(w, p):
        # maximizer of <w, v> over the unit p-ball
        if p == "inf":
            return np.where(w >= 0, 1.0, -1.0)
        if p == "one":
            v = np.zeros_like(w)
            k = np.argmax(np.abs(w))
            v[k] = np.sign(w[k]) or 1.0
            return v
        nw = np.linalg.norm(w)
        return w / nw if nw > 0 else np.ones_like(w) / np.sqrt(w.size)

    for b, M in enumerate(flat):
        best = 0.0
        for _ in range(starts):
            v = dual_vec(rng.standard_normal(M.shape[1]), pi)
            for _ in range(iters):
                y = M @ v
                s = dual_vec(y, dual[po])
                v_new = dual_vec(M.T @ s, pi)
                if np.array_equal(v_new, v):
                    break
                v = v_new
            best = max(best, float(vector_norm(M @ v, po)))
        out[b] = best
    return out.reshape(A.shape[:-2])


def matrix_measure(A, p):
    """Matrix measure (logarithmic norm) for the induced 1, 2 or inf norm."""
    p = norm_tag(p)
    A = np.asarray(A, dtype=float)
    d = np.diagonal(A, axis1=-2, axis2=-1)
    if p in ("inf", "one"):
        off = np.abs(A)
        k = A.shape[-1]
        off[..., np.arange(k), np.arange(k)] = 0.0
        return np.max(d + np.sum(off, axis=-1 if p == "inf" else -2), axis=-1)
    S = 0.5 * (A + np.swapaxes(A, -1, -2))
    return np.linalg.eigvalsh(S)[..., -1]


def eigenvalues(A):
    """General eigenvalues (LAPACK Hessenberg-QR); used as a test oracle."""
    return np.linalg.eigvals(np.asarray(A, dtype=float))


def measure_sandwich_check(A, p, slack=1e-9) -> bool:
    """``-mu(-A) <= re(lambda) <= mu(A) <= ||A||`` for every eigenvalue."""
    A = np.asarray(A, dtype=float)
    re = eigenvalues(A).real
    lo = -matrix_measure(-A, p)
    hi = matrix_measure(A, p)
    nrm = induced_norm(A, p)
    scale = slack * (1.0 + nrm)
    return bool(np.all(lo - scale <= re) and np.all(re <= hi + scale) and hi <= nrm + scale)


def is_metzler(A) -> bool:
    A = np.asarray(A, dtype=float)
    off = ~np.eye(A.shape[-1], dtype=bool)
    return bool(np.all(A[..., off] >= 0))


def _perron_root(B, tol=1e-13, max_iter=200):
    """Perron root of an irreducible nonnegative matrix with positive diagonal.

    Power iteration on repeated squares with a Collatz-Wielandt bracket:
    for positive ``v``, ``min (Bv)_i / v_i <= rho <= max (Bv)_i / v_i``.
    """
    v = np.ones(B.shape[0])
    P = B / np.max(B)
    lo, hi = 0.0, np.inf
    for it in range(max_iter):
        ratio = (B @ v) / v
        lo, hi = max(lo, np.min(ratio)), min(hi, np.max(ratio))
        if hi - lo <= tol * hi:
            break
        # v <- B^(2^it) v, normalized
        v = P @ v
        v = np.maximum(v / np.max(v), 1e-300)
        if it < 60:
            P = P @ P
            P /= np.max(P)
    return 0.5 * (lo + hi)


def spectral_abscissa_metzler(M) -> float:
    """Largest real part of the eigenvalues of a Metzler matrix.

    The shifted matrix ``B = M + cI`` with ``c = 1 + max |M_ii|`` is
    nonnegative with positive diagonal, so ``spabs(M) = rho(B) - c``.  The
    spectral radius of a reducible ``B`` is the largest Perron root among
    its strongly connected diagonal blocks, each of which is irreducible
    and primitive.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("spectral abscissa needs a square matrix")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix entries must be finite")
    if not is_metzler(M):
        raise NotMetzlerError("matrix has a negative off-diagonal entry")
    k = M.shape[0]
    if k == 1:
        return float(M[0, 0])
    c = 1.0 + np.max(np.abs(np.diag(M)))
    B = M + c * np.eye(k)
    adj = (B > 0) & ~np.eye(k, dtype=bool)
    ncomp, labels = connected_components(adj, directed=True, connection="strong")
    best = -np.inf
    for comp in range(ncomp):
        idx = np.flatnonzero(labels == comp)
        if idx.size == 1:
            best = max(best, float(M[idx[0], idx[0]]))
            continue
        rho = _perron_root(B[np.ix_(idx, idx)])
        best = max(best, rho - c)
    return float(best)


def matrix_exponential(A):
    return scipy.linalg.expm(np.asarray(A, dtype=float))


def interconnection_from_jacobians(J, partition):
    """Interconnection matrices for a stack of Jacobians ``(..., n, n)``.

    Diagonal: local measure of each diagonal block.  Off-diagonal ``(i, j)``:
    mixed norm of block ``(i, j)`` from the ``j``-th to the ``i``-th local norm.
    """
    J = np.asarray(J, dtype=float)
    m = partition.m
    sl = partition.slices()
    norms = partition.local_norms
    out = np.empty(J.shape[:-2] + (m, m))
    for i in range(m):
        for j in range(m):
            blk = J[..., sl[i], sl[j]]
            if i == j:
                out[..., i, i] = matrix_measure(blk, norms[i])
            else:
                out[..., i, j] = mixed_norm(blk, norms[i], norms[j])
    return out


def interconnection_matrix(sys: System, t, x):
    return interconnection_from_jacobians(jacobian(sys, t, x), sys.partition)


def global_norm(v, partition):
    """``|(|v_1|_1, ..., |v_m|_m)|_N`` for a state vector ``v``."""
    v = np.asarray(v, dtype=float)
    parts = [vector_norm(v[..., s], p) for s, p in zip(partition.slices(), partition.local_norms)]
    return vector_norm(np.stack(parts, axis=-1), partition.network_norm)
