"""Entropy estimated from spanning and separated sets, and numerical checks
of the separation, volume, initial-time and finite-cover properties.

Distances between trajectories use the sup over ``[t0, t0 + T]`` of the
state difference in the max norm, sampled on recorded integration steps.
"""
from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.spatial import cKDTree

from .bounds import Hull, _q_network
from .measures import (induced_norm, interconnection_from_jacobians,
                       matrix_measure, vector_norm)
from .ode import (convex_weights, integrate_on_grid, sample_initial_states,
                  time_grid, variational_batch)
from .system import BoxSet, Partition, System, norm_tag

__all__ = [
    "ResolutionError", "DimensionError", "Grid", "build_grid",
    "EmpiricalConfig", "EntropyEstimate", "count_table",
    "greedy_spanning_count", "greedy_separated_count", "estimate_entropy",
    "CheckReport", "verify_initial_time_invariance", "verify_cover_max",
    "verify_separation_bounds", "verify_volume_bound", "verify_liouville",
    "verify_grid_spanning", "grid_spanning_theta",
    "check_measure_sandwich", "check_metzler_monotonicity",
    "check_block_domination", "ENTROPY_COLUMNS",
]

ENTROPY_COLUMNS = ["eps", "T", "span_count", "sep_count", "span_slope", "sep_slope",
                   "estimate", "band"]


class ResolutionError(ValueError):
    """The candidate grid cannot resolve the requested radius."""


class DimensionError(ValueError):
    """Empirical estimation is limited to state dimension 1 or 2."""


# ------------------------------------------------------------------ grids

@dataclass
class Grid:
    center: np.ndarray
    theta: np.ndarray
    points: np.ndarray          # (N, n)

    def __len__(self):
        return self.points.shape[0]


def build_grid(K: BoxSet, theta, center=None) -> Grid:
    """All points ``center + (k_1 theta_1, ..., k_n theta_n)`` that lie in ``K``."""
    theta = np.broadcast_to(np.asarray(theta, dtype=float), (K.n,)).copy()
    if np.any(theta <= 0):
        raise ValueError("grid spacing must be positive")
    center = K.center if center is None else np.asarray(center, dtype=float)
    if not K.contains(center):
        raise ValueError("grid center must lie in K")
    axes = []
    for lo, hi, c, th in zip(K.lower, K.upper, center, theta):
        tol = 1e-12 * max(1.0, abs(lo), abs(hi))
        k_lo = math.ceil((lo - c - tol) / th)
        k_hi = math.floor((hi - c + tol) / th)
        ks = np.arange(k_lo, k_hi + 1)
        pts = c + ks * th
        axes.append(np.clip(pts, lo, hi))
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    return Grid(center, theta, points)


# ----------------------------------------------------------- estimation

@dataclass
class EmpiricalConfig:
    dt: float = 0.01
    resolution: float = 4.0          # candidate spacing is eps / resolution
    max_candidates: int = 1_000_000
    snapshot_budget: int = 15_000_000
    snapshots: int = 64               # recorded times per candidate, at most
    method: str = "auto"              # auto | ordered | enumerate
    line_points: int = 2049           # 1-D quadrature points
    seed: int = 0
    ensemble: int = 16

    @classmethod
    def from_settings(cls, settings, **overrides):
        e = settings.get("empirical", {})
        kw = {}
        for key, conv in (("dt", float), ("resolution", float), ("max_candidates", int),
                          ("method", str), ("line_points", int)):
            if key in e:
                kw[key] = conv(e[key])
        s = settings.get("sampling", {})
        if "seed" in s:
            kw["seed"] = int(s["seed"])
        if "ensemble" in s:
            kw["ensemble"] = int(s["ensemble"])
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)


@dataclass
class EntropyEstimate:
    eps: np.ndarray
    horizons: np.ndarray
    span: np.ndarray            # (len(eps), len(horizons))
    sep: np.ndarray
    sep2: np.ndarray            # separated counts at radius 2*eps
    span_slope: np.ndarray      # per eps
    sep_slope: np.ndarray
    estimate: float
    band: float
    method: str
    info: dict = field(default_factory=dict)

    def rows(self):
        out = []
        for a, e in enumerate(self.eps):
            for b, T in enumerate(self.horizons):
                out.append([f"{e:.17g}", f"{T:.17g}", str(int(self.span[a, b])),
                            str(int(self.sep[a, b])), f"{self.span_slope[a]:.17g}",
                            f"{self.sep_slope[a]:.17g}", f"{self.estimate:.17g}",
                            f"{self.band:.17g}"])
        return out

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(ENTROPY_COLUMNS)
            w.writerows(self.rows())

    def self_consistency(self):
        """Violations of monotonicity and of the cover/packing sandwich."""
        S, N, N2 = self.span, self.sep, self.sep2
        bad = {
            "span_monotone_T": int(np.sum(np.diff(S, axis=1) < 0)),
            "sep_monotone_T": int(np.sum(np.diff(N, axis=1) < 0)),
            # eps is sorted decreasing, so counts must not drop along axis 0
            "span_monotone_eps": int(np.sum(np.diff(S, axis=0) < 0)),
            "sep_monotone_eps": int(np.sum(np.diff(N, axis=0) < 0)),
            "span_le_sep": int(np.sum(S > N)),
            "sep2_le_span": int(np.sum(N2 > S)),
        }
        return bad


def _prepare_lists(eps_list, T_list):
    eps = np.array(sorted({float(e) for e in eps_list}, reverse=True))
    Ts = np.array(sorted({float(t) for t in T_list}))
    if eps.size < 1 or Ts.size < 1 or np.any(eps <= 0) or np.any(Ts < 0):
        raise ValueError("need positive radii and nonnegative horizons")
    return eps, Ts


def _record_indices(times, t0, Ts, budget_per_lane):
    """Evenly strided grid indices plus the exact index of each horizon end."""
    nt = times.size
    stride = max(1, math.ceil(nt / max(2, budget_per_lane)))
    idx = set(range(0, nt, stride)) | {nt - 1}
    for T in Ts:
        idx.add(int(np.argmin(np.abs(times - (t0 + T)))))
    return np.array(sorted(idx))


def _ordered_counts(sys, K, t0, eps, Ts, cfg):
    """Exact order-based cover and packing sizes for a scalar system.

    Solutions of a scalar ODE never cross, so ``d_T(x, y)`` is increasing
    in ``y - x``.  With ``L(T) = max_t (xi(t, b) - xi(t, a))`` the points
    whose images at the maximizing time are ``eps`` apart form a separated
    set of ``floor(L/eps) + 1`` points.  With ``L*(T) = int_K max_t d xi/dx``
    the arc-length ``s(x) = int_a^x max_t d xi/du du`` dominates ``d_T``, so
    ``floor(L*/(2 eps)) + 1`` centers evenly spaced in ``s`` span.
    """
    Tmax = Ts[-1]
    times = time_grid(t0, t0 + Tmax, cfg.dt, sys.breakpoints)
    M = cfg.line_points
    xs = np.linspace(K.lower[0], K.upper[0], M)
    rec = _record_indices(times, t0, Ts, cfg.snapshot_budget // (3 * M))
    states, phi, _ = variational_batch(sys, times, xs[None, :], record=rec)
    rt = times[rec]
    width = np.abs(states[:, 0, -1] - states[:, 0, 0])           # (r,)
    stretch = np.abs(phi[:, :, 0, 0])                             # (r, M)
    span = np.empty((eps.size, Ts.size), dtype=np.int64)
    sep = np.empty_like(span)
    sep2 = np.empty_like(span)
    lam = np.empty(Ts.size)
    lam_star = np.empty(Ts.size)
    for b, T in enumerate(Ts):
        upto = rt <= t0 + T + 1e-9 * max(1.0, abs(t0 + T))
        lam[b] = np.max(width[upto])
        ls = np.trapezoid(np.max(stretch[upto], axis=0), xs)
        lam_star[b] = max(ls, lam[b])
        for a, e in enumerate(eps):
            sep[a, b] = math.floor(lam[b] / e) + 1
            sep2[a, b] = math.floor(lam[b] / (2 * e)) + 1
            span[a, b] = math.floor(lam_star[b] / (2 * e)) + 1
    return span, sep, sep2, {"image_length": lam.tolist(), "stretch_length": lam_star.tolist()}


def _growth(sys, K, t0, Ts, cfg):
    """Per-axis growth ``G_i(T) = max_{t <= T} max |column i of Phi|``."""
    times = time_grid(t0, t0 + Ts[-1], cfg.dt, sys.breakpoints)
    init = sample_initial_states(K, cfg.ensemble, cfg.seed)
    _, phi, _ = variational_batch(sys, times, init.T)
    col = np.max(np.abs(phi), axis=2)                           # (nt, L, n)
    col = np.max(col, axis=1)                                   # (nt, n)
    G = np.empty((Ts.size, sys.n))
    for b, T in enumerate(Ts):
        upto = times <= t0 + T + 1e-9 * max(1.0, abs(t0 + T))
        G[b] = np.max(col[upto], axis=0)
    return G


def _pair_distances(traj, pairs, chunk=40_000):
    d = np.empty(pairs.shape[0])
    for a in range(0, pairs.shape[0], chunk):
        p = pairs[a:a + chunk]
        diff = np.abs(traj[p[:, 0]] - traj[p[:, 1]])            # (c, n, r)
        d[a:a + chunk] = diff.reshape(diff.shape[0], -1).max(axis=1)
    return d


def _offset_pairs(traj, shape, pairs, r):
    """Exact filter of lattice pairs grouped by index offset.

    All pairs sharing an offset are compared with one sliced array
    operation instead of a gather.  Returns ``None`` when the offsets are
    too scattered for this to pay off.
    """
    C, n, R = traj.shape
    shape = tuple(shape)
    span = np.array(shape)
    a = np.array(np.unravel_index(pairs[:, 0], shape))
    b = np.array(np.unravel_index(pairs[:, 1], shape))
    code = np.ravel_multi_index(b - a + (span - 1)[:, None], tuple(2 * span - 1))
    uniq = np.array(np.unravel_index(np.unique(code), tuple(2 * span - 1))).T - (span - 1)
    if uniq.shape[0] * C > 4 * pairs.shape[0]:
        return None
    grid = traj.reshape(shape + (n, R))
    idx = np.arange(C).reshape(shape)
    keep = []
    for o in uniq:
        src, dst = [], []
        for k, ok in enumerate(o):
            src.append(slice(max(0, -ok), shape[k] - max(0, ok)))
            dst.append(slice(max(0, ok), shape[k] - max(0, -ok)))
        a, b = grid[tuple(src)], grid[tuple(dst)]
        d = np.abs(a - b).reshape(a.shape[:len(shape)] + (-1,)).max(axis=-1)
        hit = d < r
        keep.append(np.stack([idx[tuple(src)][hit], idx[tuple(dst)][hit]], axis=1))
    out = np.concatenate(keep)
    return np.sort(out, axis=1)


def _neighbours(traj, r, shape=None):
    """Symmetric CSR lists of pairs with trajectory distance below ``r``.

    ``traj`` has shape ``(C, n, R)``.  A kd-tree on a few snapshot times
    gives a superset (the max over fewer times is smaller), then exact
    distances filter it.  ``shape`` is the lattice shape of the candidates,
    if they form one.
    """
    C, n, R = traj.shape
    sel = np.unique(np.linspace(0, R - 1, min(R, 4)).round().astype(int))
    emb = traj[:, :, sel].reshape(C, -1)
    tree = cKDTree(emb)
    pairs = tree.query_pairs(r, p=np.inf, output_type="ndarray")
    if pairs.size:
        exact = None if shape is None else _offset_pairs(traj, shape, pairs, r)
        if exact is None:
            d = _pair_distances(traj, pairs)
            exact = pairs[d < r]
        pairs = exact
    both = np.concatenate([pairs, pairs[:, ::-1]]) if pairs.size else np.zeros((0, 2), int)
    both = both[np.argsort(both[:, 0] * C + both[:, 1])]
    indptr = np.searchsorted(both[:, 0], np.arange(C + 1))
    return indptr, both[:, 1]


def _greedy_cover(indptr, nbr):
    """Lazy greedy set cover; ties go to the lowest candidate index."""
    C = indptr.size - 1
    uncovered = np.ones(C, dtype=bool)
    left = C
    heap = [(-(indptr[i + 1] - indptr[i] + 1), i) for i in range(C)]
    heapq.heapify(heap)
    size = 0
    while left > 0:
        neg, i = heapq.heappop(heap)
        ball = nbr[indptr[i]:indptr[i + 1]]
        gain = int(uncovered[i]) + int(np.count_nonzero(uncovered[ball]))
        if gain != -neg:
            heapq.heappush(heap, (-gain, i))
            continue
        if gain == 0:
            break
        size += 1
        uncovered[i] = False
        uncovered[ball] = False
        left -= gain
    return size


def _greedy_packing(indptr, nbr):
    """Scan in index order, keeping candidates not within ``r`` of a kept one."""
    C = indptr.size - 1
    blocked = np.zeros(C, dtype=bool)
    size = 0
    for i in range(C):
        if blocked[i]:
            continue
        size += 1
        blocked[nbr[indptr[i]:indptr[i + 1]]] = True
    return size


def _enumerated_counts(sys, K, t0, eps, Ts, cfg):
    """Greedy cover and packing on sub-lattices of one shared candidate grid.

    The fine grid has ``2^k + 1`` points per axis.  Each (eps, T) cell uses
    the sub-lattice with the largest power-of-two stride whose spacing is at
    most ``eps / resolution`` divided by the sampled growth of that axis.
    Coarser cells therefore use subsets of the candidates of finer cells,
    which makes the best-witness envelope below sound.
    """
    n = sys.n
    G = _growth(sys, K, t0, Ts, cfg)                              # (nT, n)
    width = K.upper - K.lower
    desired_min = (eps[-1] / cfg.resolution) / G[-1]
    N = np.empty(n, dtype=int)
    for i in range(n):
        N[i] = 2 ** max(1, math.ceil(math.log2(width[i] / desired_min[i]))) + 1
    total = int(np.prod(N.astype(float)))
    if total > cfg.max_candidates:
        raise ResolutionError(
            f"resolution insufficient: {total} candidates needed, cap is {cfg.max_candidates}")
    fine = width / (N - 1)
    axes = [np.linspace(K.lower[i], K.upper[i], N[i]) for i in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    X0 = np.stack([m.ravel() for m in mesh])                      # (n, C)
    times = time_grid(t0, t0 + Ts[-1], cfg.dt, sys.breakpoints)
    rec = _record_indices(times, t0, Ts, min(cfg.snapshots, cfg.snapshot_budget // (n * X0.shape[1])))
    traj = integrate_on_grid(sys, times, X0, record=rec)          # (r, n, C)
    traj = np.ascontiguousarray(np.moveaxis(traj, (0, 1, 2), (2, 1, 0)))  # (C, n, r)
    rt = times[rec]

    def strides(e, b):
        want = (e / cfg.resolution) / G[b]
        s = np.ones(n, dtype=int)
        for i in range(n):
            k = math.floor(math.log2(max(want[i] / fine[i], 1.0)) + 1e-12)
            s[i] = min(2 ** k, N[i] - 1)
        return s

    def cell(s, b):
        idx = [np.arange(0, N[i], s[i]) for i in range(n)]
        flat = np.ravel_multi_index(np.meshgrid(*idx, indexing="ij"), tuple(N)).ravel()
        upto = rt <= t0 + Ts[b] + 1e-9 * max(1.0, abs(t0 + Ts[b]))
        return flat, [len(a) for a in idx], traj[flat][:, :, upto]

    def check_resolution(sub, shape, e):
        grid = sub.reshape(tuple(shape) + sub.shape[1:])
        worst = 0.0
        for i in range(n):
            if shape[i] < 2:
                continue
            a = np.take(grid, np.arange(shape[i] - 1), axis=i)
            c = np.take(grid, np.arange(1, shape[i]), axis=i)
            worst = max(worst, float(np.max(np.abs(a - c))))
        if worst > e:
            raise ResolutionError(
                f"resolution insufficient: adjacent candidates are {worst:.3g} apart at eps={e:.3g}")

    cover = np.empty((eps.size, Ts.size), dtype=np.int64)
    pack = np.empty_like(cover)
    pack2 = np.empty_like(cover)
    sizes = np.empty_like(cover)
    for a, e in enumerate(eps):
        for b in range(Ts.size):
            s = strides(e, b)
            flat, shape, sub = cell(s, b)
            check_resolution(sub, shape, e)
            indptr, nbr = _neighbours(sub, e, shape)
            cover[a, b] = _greedy_cover(indptr, nbr)
            pack[a, b] = _greedy_packing(indptr, nbr)
            sizes[a, b] = flat.size
            s2 = strides(2 * e, b)
            _, shape2, sub2 = cell(s2, b)
            indptr2, nbr2 = _neighbours(sub2, 2 * e, shape2)
            pack2[a, b] = _greedy_packing(indptr2, nbr2)

    # best witnesses: a cover for (e', T') with e' <= e, T' >= T also covers
    # for (e, T); a packing for (e', T') with e' >= e, T' <= T is separated
    # for (e, T).  eps is decreasing along axis 0.
    best_cover = np.minimum(cover, pack)
    span = _suffix_min_eps(best_cover)
    sep = np.maximum.accumulate(np.maximum.accumulate(pack, axis=0), axis=1)
    sep2 = np.maximum.accumulate(np.maximum.accumulate(pack2, axis=0), axis=1)
    info = {"candidates": sizes.tolist(), "greedy_cover": cover.tolist(),
            "packing": pack.tolist(), "fine_grid": N.tolist()}
    return span, sep, sep2, info


def _suffix_min_eps(best_cover):
    """``min`` over cells with smaller or equal eps (later rows) and larger
    or equal T (later columns)."""
    out = best_cover[::-1, ::-1]
    out = np.minimum.accumulate(np.minimum.accumulate(out, axis=0), axis=1)
    return out[::-1, ::-1]


def count_table(sys: System, K: BoxSet, t0, eps_list, T_list, cfg: EmpiricalConfig = None):
    """Spanning and separated counts for every ``(eps, T)`` pair.

    Returns ``(eps, Ts, span, sep, sep2, method, info)`` with eps sorted
    decreasing and horizons increasing.
    """
    cfg = EmpiricalConfig() if cfg is None else cfg
    if sys.n > 2:
        raise DimensionError(f"empirical estimation supports n <= 2, got n = {sys.n}")
    eps, Ts = _prepare_lists(eps_list, T_list)
    method = cfg.method
    if method == "auto":
        method = "ordered" if sys.n == 1 else "enumerate"
    if method == "ordered":
        if sys.n != 1:
            raise ValueError("the ordered method needs a scalar system")
        span, sep, sep2, info = _ordered_counts(sys, K, t0, eps, Ts, cfg)
    elif method == "enumerate":
        span, sep, sep2, info = _enumerated_counts(sys, K, t0, eps, Ts, cfg)
    else:
        raise ValueError(f"unknown method {method!r}")
    return eps, Ts, span, sep, sep2, method, info


def greedy_spanning_count(sys, K, eps, T, t0=None, cfg=None) -> int:
    t0 = sys.t0 if t0 is None else t0
    out = count_table(sys, K, t0, [eps], [T], cfg)
    return int(out[2][0, 0])


def greedy_separated_count(sys, K, eps, T, t0=None, cfg=None) -> int:
    t0 = sys.t0 if t0 is None else t0
    out = count_table(sys, K, t0, [eps], [T], cfg)
    return int(out[3][0, 0])


def _slopes(Ts, counts):
    logs = np.log(counts.astype(float))
    if Ts.size < 2:
        return np.zeros(counts.shape[0])
    # closed-form least squares; constant counts give exactly zero
    dT = Ts - Ts.mean()
    return (logs - logs.mean(axis=1, keepdims=True)) @ dT / (dT @ dT)


def estimate_entropy(sys, K, t0, eps_list, T_list, cfg: EmpiricalConfig = None) -> EntropyEstimate:
    """Growth rate of spanning and separated counts in the horizon.

    The headline is the separated-set slope at the smallest radius; the
    band is the largest deviation of any per-radius slope (spanning or
    separated) from it.
    """
    if len(set(eps_list)) < 3 or len(set(T_list)) < 3:
        raise ValueError("need at least three radii and three horizons")
    eps, Ts, span, sep, sep2, method, info = count_table(sys, K, t0, eps_list, T_list, cfg)
    ss = _slopes(Ts, span)
    ns = _slopes(Ts, sep)
    est = float(ns[-1])
    band = float(max(np.max(np.abs(ss - est)), np.max(np.abs(ns - est))))
    return EntropyEstimate(eps, Ts, span, sep, sep2, ss, ns, est, band, method, info)


# ----------------------------------------------------------- check reports

@dataclass
class CheckReport:
    name: str
    passed: bool
    checks: int = 0
    violations: int = 0
    details: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        extra = "".join(f" {k}={_short(v)}" for k, v in self.details.items())
        note = f" ({'; '.join(self.notes)})" if self.notes else ""
        return f"{status} {self.name}: checks={self.checks} violations={self.violations}{extra}{note}"


def _short(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)):
        return "[" + ",".join(_short(x) for x in v) + "]"
    return str(v)


def verify_initial_time_invariance(sys, K, t0, t1, eps_list, T_list, cfg=None,
                                   rtol=0.15) -> CheckReport:
    """Entropy from ``(t0, K)`` against entropy from ``(t1, box of xi(t1, t0, K))``."""
    cfg = EmpiricalConfig() if cfg is None else cfg
    if t1 < t0:
        raise ValueError("t1 must not precede t0")
    e0 = estimate_entropy(sys, K, t0, eps_list, T_list, cfg)
    init = sample_initial_states(K, max(cfg.ensemble, 64), cfg.seed)
    times = time_grid(t0, t1, cfg.dt, sys.breakpoints)
    at_t1 = integrate_on_grid(sys, times, init.T, record=[times.size - 1])[0]
    K1 = BoxSet(at_t1.min(axis=1), at_t1.max(axis=1))
    e1 = estimate_entropy(sys, K1, t1, eps_list, T_list, cfg)
    scale = max(abs(e0.estimate), abs(e1.estimate))
    gap = abs(e0.estimate - e1.estimate) / scale if scale > 0 else 0.0
    ok = gap <= rtol
    return CheckReport("initial_time_invariance", ok, 1, 0 if ok else 1,
                       {"estimate_t0": e0.estimate, "estimate_t1": e1.estimate,
                        "relative_gap": gap, "box_t1": [float(v) for v in (*K1.lower, *K1.upper)]})


def verify_cover_max(sys, K, t0, split_axis, eps_list, T_list, cfg=None, atol=0.05) -> CheckReport:
    """Entropy on ``K`` against the larger of its two halves."""
    whole = estimate_entropy(sys, K, t0, eps_list, T_list, cfg)
    A, B = K.split(split_axis)
    ea = estimate_entropy(sys, A, t0, eps_list, T_list, cfg)
    eb = estimate_entropy(sys, B, t0, eps_list, T_list, cfg)
    top = max(ea.estimate, eb.estimate)
    tol = whole.band + max(ea.band, eb.band) + atol
    gap = abs(whole.estimate - top)
    ok = gap <= tol
    return CheckReport("cover_max", ok, 1, 0 if ok else 1,
                       {"whole": whole.estimate, "half_a": ea.estimate, "half_b": eb.estimate,
                        "gap": gap, "tolerance": tol})


def _random_pairs(K, count, rng):
    w = K.upper - K.lower
    x = K.lower + rng.random((count, K.n)) * w
    y = K.lower + rng.random((count, K.n)) * w
    return x, y


def _cumtrapz(y, t):
    out = np.zeros_like(y)
    dt = np.diff(t).reshape((-1,) + (1,) * (y.ndim - 1))
    out[1:] = np.cumsum(0.5 * dt * (y[1:] + y[:-1]), axis=0)
    return out


def verify_separation_bounds(sys, K, t0, T, pair_count=20, cfg=None, slack=1e-6,
                             ensemble=16, combos=32, seed=0, theta_points=17,
                             norms=("one", "two", "inf"), dt=None) -> CheckReport:
    """Check the componentwise and the Coppel-type separation bounds on random pairs.

    (a) ``|xi_i(t, y) - xi_i(t, x)|_i <= [expm(Abar(t) (t - t0)) delta]_i`` where
        ``Abar(t)`` is the running entrywise max over ``[t0, t]`` of the
        interconnection matrix over hull samples and points on the segment
        between the two solutions.
    (b) ``|xi(t, y) - xi(t, x)| <= exp(eta(t)) |y - x|`` with ``eta`` the largest
        integral of ``mu(J)`` along sampled solutions from ``co(K)`` (ensemble
        members and the segment of initial states).
    (c) ``|xi(t, y) - xi(t, x)| >= exp(eta_low(t)) |y - x|`` with ``eta_low`` the
        integral of the smallest ``-mu(-J)`` over the segment between the two
        solutions and the hull samples.
    A check counts as violated when it fails by more than ``slack * (1 + rhs)``.
    """
    dt = (cfg.dt if cfg is not None else 0.01) if dt is None else dt
    P = sys.partition if sys.partition is not None else Partition.single(sys.n)
    n, m = sys.n, P.m
    rng = np.random.default_rng(seed)
    times = time_grid(t0, t0 + T, dt, sys.breakpoints)
    nt = times.size
    init = sample_initial_states(K, ensemble, seed)
    L = init.shape[0]
    x, y = _random_pairs(K, pair_count, rng)
    th = np.linspace(0.0, 1.0, theta_points)
    # lanes: ensemble | initial segments of each pair (theta 0 is x, theta 1 is y)
    seg0 = (th[None, :, None] * y[:, None, :] + (1 - th[None, :, None]) * x[:, None, :])
    lanes = np.concatenate([init, seg0.reshape(-1, n)]).T        # (n, L + P*Q)
    traj = integrate_on_grid(sys, times, lanes)                  # (nt, n, lanes)
    Q = theta_points
    members = traj[:, :, :L]
    segs = traj[:, :, L:].reshape(nt, n, pair_count, Q)
    X = segs[..., 0]                                             # (nt, n, P)
    Y = segs[..., -1]
    W = convex_weights(L, combos, seed)
    hull = Hull(sys, times, members, W)
    # segment between the two solutions at each time
    between = (th[None, None, None, :] * Y[..., None]
               + (1 - th[None, None, None, :]) * X[..., None])   # (nt, n, P, Q)
    tt = times[:, None, None]
    J_between = sys.jac_batch(tt, np.moveaxis(between, 1, 0))  # (nt, P, Q, n, n)
    J_ini = sys.jac_batch(tt, np.moveaxis(segs, 1, 0))  # (nt, P, Q, n, n)
    J_mem = sys.jac_batch(times[:, None], np.moveaxis(members, 1, 0))  # (nt, L, n, n)

    details = {}
    violations = 0
    checks = 0

    # (a) componentwise bound
    qN = _q_network(P)
    A_hull, _ = hull.series(qN, "max", 0, nt)                    # (nt, m*m)
    A_pair = np.maximum(qN(J_between).max(axis=2), qN(J_ini).max(axis=2))  # (nt, P, m*m)
    A_bar = np.maximum(A_pair, A_hull[:, None, :])
    A_bar = np.maximum.accumulate(A_bar, axis=0).reshape(nt, pair_count, m, m)
    E = scipy.linalg.expm(A_bar * (times - t0)[:, None, None, None])
    sl = P.slices()
    delta = np.stack([vector_norm((y - x)[:, s], p) for s, p in zip(sl, P.local_norms)], axis=-1)
    rhs = np.einsum("tpij,pj->tpi", E, delta)
    D = Y - X                                                    # (nt, n, P)
    lhs = np.stack([vector_norm(np.moveaxis(D[:, s, :], 1, -1), p)
                    for s, p in zip(sl, P.local_norms)], axis=-1)  # (nt, P, m)
    bad = lhs > rhs + slack * (1.0 + rhs)
    va = int(np.sum(np.any(bad, axis=(0, 2))))
    violations += va
    checks += pair_count
    details["componentwise_violations"] = va
    # at t0 both sides agree, so the ratio is taken over later times
    if nt > 1:
        details["componentwise_max_ratio"] = float(np.max(lhs[1:] / np.maximum(rhs[1:], 1e-300)))

    # (b), (c) Coppel-type bounds in each requested norm
    for p in norms:
        p = norm_tag(p)
        mu_mem = matrix_measure(J_mem, p)                        # (nt, L)
        mu_ini = matrix_measure(J_ini, p)                        # (nt, P, Q)
        eta_mem = _cumtrapz(mu_mem, times).max(axis=1)           # (nt,)
        eta_ini = _cumtrapz(mu_ini, times).max(axis=2)           # (nt, P)
        eta = np.maximum(eta_ini, eta_mem[:, None])
        low_hull, _ = hull.series(lambda J: (-matrix_measure(-J, p))[..., None], "min", 0, nt)
        low_seg = (-matrix_measure(-J_between, p)).min(axis=2)   # (nt, P)
        eta_low = _cumtrapz(np.minimum(low_seg, low_hull[:, 0][:, None]), times)
        d0 = vector_norm(y - x, p)                               # (P,)
        dist = vector_norm(np.moveaxis(D, 1, -1), p)             # (nt, P)
        up = np.exp(eta) * d0
        lo = np.exp(eta_low) * d0
        bad_up = dist > up + slack * (1.0 + up)
        bad_lo = dist < lo - slack * (1.0 + lo)
        vu = int(np.sum(np.any(bad_up, axis=0)))
        vl = int(np.sum(np.any(bad_lo, axis=0)))
        violations += vu + vl
        checks += 2 * pair_count
        details[f"coppel_upper_{p}_violations"] = vu
        details[f"coppel_lower_{p}_violations"] = vl
    return CheckReport("separation_bounds", violations == 0, checks, violations, details)


def _backward_to_start(sys, t0, t_end, Y, dt):
    times = time_grid(t0, t_end, dt, sys.breakpoints)[::-1].copy()
    # a point whose backward orbit escapes is not reachable from a bounded K
    return integrate_on_grid(sys, times, Y, record=[times.size - 1], escape="nan")[0]


def verify_volume_bound(sys, K, t0, T, mc_samples=4000, cfg=None, dt=None, seed=0,
                        ensemble=400, slack=0.0) -> CheckReport:
    """Monte Carlo volume of ``xi(t0 + T, t0, K)`` against ``exp(gamma) vol(K)``.

    ``gamma`` is the smallest log-determinant of the flow Jacobian over an
    ensemble.  A uniform point of a box around the forward image belongs to
    the reachable set when integrating backward to ``t0`` lands in ``K``.
    """
    if sys.n > 3:
        raise DimensionError("volume check supports n <= 3")
    dt = (cfg.dt if cfg is not None else 0.01) if dt is None else dt
    n = sys.n
    times = time_grid(t0, t0 + T, dt, sys.breakpoints)
    init = sample_initial_states(K, ensemble, seed)
    xs, _, ls = variational_batch(sys, times, init.T, record=[times.size - 1])
    gamma = float(np.min(ls[0]))
    image = xs[0]                                                # (n, L)
    lo, hi = image.min(axis=1), image.max(axis=1)
    pad = 0.2 * np.maximum(hi - lo, 1e-9)
    box = BoxSet(lo - pad, hi + pad)
    rng = np.random.default_rng(seed)
    Ysm = box.lower + rng.random((mc_samples, n)) * (box.upper - box.lower)
    back = _backward_to_start(sys, t0, t0 + T, Ysm.T, dt)
    inside = K.contains(back, tol=1e-9 * max(1.0, float(np.max(np.abs(K.upper)))))
    frac = float(np.mean(inside))
    vol = frac * box.volume
    sigma = math.sqrt(max(frac * (1 - frac), 1.0 / mc_samples) / mc_samples) * box.volume
    target = math.exp(gamma) * K.volume
    ok = vol + 3 * sigma + slack * (1.0 + target) >= target
    rep = CheckReport("volume_bound", ok, 1, 0 if ok else 1,
                      {"gamma": gamma, "mc_volume": vol, "mc_sigma": sigma,
                       "lower_bound": target})
    if abs(vol - target) <= 3 * sigma:
        rep.notes.append("tight")
    return rep


def verify_liouville(sys, K, t0, T, cfg=None, dt=None, ensemble=16, seed=0, rtol=1e-6) -> CheckReport:
    """``det Phi(t) = exp(int tr J)`` along ensemble members."""
    dt = (cfg.dt if cfg is not None else 1e-3) if dt is None else dt
    times = time_grid(t0, t0 + T, dt, sys.breakpoints)
    init = sample_initial_states(K, ensemble, seed)
    _, phi, ls = variational_batch(sys, times, init.T)
    det = np.linalg.det(phi)
    ref = np.exp(ls)
    rel = np.abs(det - ref) / ref
    worst = float(np.max(rel))
    bad = int(np.sum(np.any(rel > rtol, axis=0)))
    rep = CheckReport("liouville", bad == 0, init.shape[0], bad, {"max_relative_gap": worst})
    if worst <= rtol:
        rep.notes.append("tight")
    return rep


# -------------------------------------------------- grid spanning recipe

_NORM_CONST = {"inf": lambda k: 1.0, "one": lambda k: float(k), "two": lambda k: math.sqrt(k)}


def grid_spanning_theta(sys, K, t0, eps, T, dt=0.01, ensemble=16, combos=32, seed=0):
    """Per-coordinate spacing from the componentwise separation bound.

    ``theta`` on block ``j`` is ``eps / (r_N r_j max_t ||expm(Abar(t) (t - t0))||_N)``
    where ``r`` converts the max norm to the local or network norm.
    """
    P = sys.partition
    times = time_grid(t0, t0 + T, dt, sys.breakpoints)
    init = sample_initial_states(K, ensemble, seed)
    members = integrate_on_grid(sys, times, init.T)
    hull = Hull(sys, times, members, convex_weights(init.shape[0], combos, seed))
    A, _ = hull.series(_q_network(P), "max", 0, times.size)
    A = np.maximum.accumulate(A, axis=0).reshape(times.size, P.m, P.m)
    E = scipy.linalg.expm(A * (times - t0)[:, None, None])
    peak = float(np.max(induced_norm(E, P.network_norm)))
    rN = _NORM_CONST[P.network_norm](P.m)
    theta = np.empty(sys.n)
    for s, p, nb in zip(P.slices(), P.local_norms, P.blocks):
        theta[s] = eps / (rN * _NORM_CONST[p](nb) * peak)
    return theta


def verify_grid_spanning(sys, K, t0, eps, T, dt=0.01, max_centers=40, boundary=24,
                         seed=0) -> CheckReport:
    """Check ``R(x) ∩ K`` lies in the (T, eps)-ball of ``x`` for grid points ``x``.

    Boundary points of each clipped rectangle (corners and random face
    points) are integrated and compared with the center in the global norm.
    """
    P = sys.partition
    theta = grid_spanning_theta(sys, K, t0, eps, T, dt, seed=seed)
    grid = build_grid(K, theta)
    rng = np.random.default_rng(seed)
    centers = grid.points
    if centers.shape[0] > max_centers:
        centers = centers[rng.choice(centers.shape[0], max_centers, replace=False)]
    n = sys.n
    pts = []
    for c in centers:
        lo = np.maximum(c - theta, K.lower)
        hi = np.minimum(c + theta, K.upper)
        box_pts = [np.where(((np.arange(2 ** n)[:, None] >> np.arange(n)) & 1) == 1, hi, lo)]
        u = lo + rng.random((boundary, n)) * (hi - lo)
        face = rng.integers(0, n, boundary)
        side = rng.integers(0, 2, boundary)
        u[np.arange(boundary), face] = np.where(side == 1, hi[face], lo[face])
        box_pts.append(u)
        pts.append(np.vstack([c[None, :]] + box_pts))
    pts = np.stack(pts)                                           # (C, 1 + B, n)
    C, B1, _ = pts.shape
    times = time_grid(t0, t0 + T, dt, sys.breakpoints)
    traj = integrate_on_grid(sys, times, pts.reshape(-1, n).T)    # (nt, n, C*B1)
    traj = traj.reshape(times.size, n, C, B1)
    diff = traj[..., 1:] - traj[..., :1]                          # (nt, n, C, B)
    parts = [vector_norm(np.moveaxis(diff[:, s], 1, -1), p)
             for s, p in zip(P.slices(), P.local_norms)]
    g = vector_norm(np.stack(parts, axis=-1), P.network_norm)     # (nt, C, B)
    d = g.max(axis=0)
    bad = int(np.sum(np.any(d >= eps * (1 + 1e-9), axis=1)))
    return CheckReport("grid_spanning", bad == 0, C, bad,
                       {"grid_points": len(grid), "max_distance_over_eps": float(d.max() / eps),
                        "theta": theta.tolist()})


# ------------------------------------------------- random matrix suites

def check_measure_sandwich(count=1000, dim=4, seed=0, slack=1e-9) -> CheckReport:
    from .measures import measure_sandwich_check
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(count):
        A = rng.standard_normal((dim, dim)) * rng.uniform(0.1, 5.0)
        for p in ("one", "two", "inf"):
            if not measure_sandwich_check(A, p, slack):
                bad += 1
    return CheckReport("measure_sandwich", bad == 0, 3 * count, bad)


def _random_metzler(rng, k, scale=1.0):
    M = rng.standard_normal((k, k)) * scale
    off = ~np.eye(k, dtype=bool)
    M[off] = np.abs(M[off]) * (rng.random((k, k))[off] < 0.7)
    return M


def check_metzler_monotonicity(count=1000, seed=0, max_dim=5, rtol=1e-9) -> CheckReport:
    """For Metzler ``A >= B``: ``||e^A|| >= ||e^B||`` and ``mu(A) >= mu(B)``;
    for ``A >= B >= 0``: ``||A|| >= ||B||``; in the 1, 2 and inf norms."""
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(count):
        k = int(rng.integers(1, max_dim + 1))
        B = _random_metzler(rng, k)
        A = B + np.abs(rng.standard_normal((k, k))) * (rng.random((k, k)) < 0.5)
        eA, eB = scipy.linalg.expm(A), scipy.linalg.expm(B)
        B0 = np.abs(rng.standard_normal((k, k)))
        A0 = B0 + np.abs(rng.standard_normal((k, k)))
        for p in ("one", "two", "inf"):
            nA, nB = induced_norm(eA, p), induced_norm(eB, p)
            if nA < nB - rtol * (1 + nB):
                bad += 1
            mA, mB = matrix_measure(A, p), matrix_measure(B, p)
            if mA < mB - rtol * (1 + abs(mB)):
                bad += 1
            if induced_norm(A0, p) < induced_norm(B0, p) - rtol * (1 + induced_norm(B0, p)):
                bad += 1
    return CheckReport("metzler_monotonicity", bad == 0, 9 * count, bad)


def check_block_domination(count=500, seed=0, max_dim=8, atol=1e-9) -> CheckReport:
    """``mu_inf(A) <= mu_inf(A_N)`` with max-norm local and network norms."""
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(count):
        n = int(rng.integers(2, max_dim + 1))
        cuts = np.sort(rng.choice(np.arange(1, n), size=int(rng.integers(0, n)), replace=False))
        blocks = np.diff(np.concatenate([[0], cuts, [n]])).astype(int)
        P = Partition(blocks, "inf", "inf")
        A = rng.standard_normal((n, n)) * rng.uniform(0.1, 3.0)
        AN = interconnection_from_jacobians(A, P)
        if matrix_measure(A, "inf") > matrix_measure(AN, "inf") + atol:
            bad += 1
    return CheckReport("block_domination", bad == 0, count, bad)
