"""Closed-form entropy bounds evaluated on sampled reach data.

Every bound has the shape ``n * max(q, 0)`` (or ``max(q, 0)`` for the
trace lower bound) where ``q`` is a limit of Jacobian-derived quantities
along solutions.  Limits as ``t -> inf`` are read off a tail window of a
finite horizon, and maxima over convex hulls of reachable sets are
replaced by maxima over an ensemble plus random convex combinations.
Reports therefore always carry the qualifier ``sampled max - not rigorous``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .measures import (interconnection_from_jacobians, matrix_measure,
                       spectral_abscissa_metzler)
from .ode import (convex_weights, integrate_on_grid, sample_ensemble,
                  sample_initial_states, time_grid)
from .system import BoxSet, Partition, SpecError, System, norm_tag

__all__ = [
    "HorizonConfig", "BoundReport", "BoundEngine", "NotLinearError",
    "RESULT_IDS", "CSV_COLUMNS", "SAMPLED", "NON_CONVERGED",
    "upper_bound_measure", "lower_bound_trace", "upper_bound_metzler_scalar",
    "ltv_bounds", "upper_bound_network_measure", "upper_bound_network_metzler",
    "upper_bound_measure_t1", "upper_bound_network_measure_t1",
    "upper_bound_network_metzler_t1", "upper_bound_superset",
    "write_bounds_csv",
]

SAMPLED = "sampled max - not rigorous"
NON_CONVERGED = "non-converged tail window"
WINDOW_TOL = 1e-3

CSV_COLUMNS = ["result_id", "bound", "mu_hat", "chi_check", "spabs", "t_max", "dt",
               "tail_fraction", "ensemble", "combos", "seed", "qualifiers"]

RESULT_IDS = (
    "measure_1", "measure_2", "measure_inf", "trace", "metzler", "ltv",
    "network_measure", "network_metzler",
    "measure_t1_1", "measure_t1_2", "measure_t1_inf",
    "network_measure_t1", "network_metzler_t1",
    "superset_1", "superset_2", "superset_inf",
)

_P_SUFFIX = {"one": "1", "two": "2", "inf": "inf"}


class NotLinearError(ValueError):
    """The Jacobian depends on the state, so LTV shortcuts do not apply."""


@dataclass
class HorizonConfig:
    t_max: float
    dt: float = 1e-3
    tail_fraction: float = 0.25
    ensemble: int = 16
    combos: int = 32
    seed: int = 0
    t1_list: tuple = None
    refine: bool = True

    def check(self, t0):
        if not 0.0 < self.tail_fraction < 1.0:
            raise SpecError("tail_fraction must lie in (0, 1)")
        if not self.t_max > t0:
            raise SpecError("t_max must exceed t0")
        if self.dt <= 0:
            raise SpecError("dt must be positive")
        if self.ensemble < 2 or self.combos < 0:
            raise SpecError("need ensemble >= 2 and combos >= 0")

    def tail_start(self, t0, fraction=None):
        fraction = self.tail_fraction if fraction is None else fraction
        return t0 + (1.0 - fraction) * (self.t_max - t0)

    def t1_values(self, t0):
        if self.t1_list:
            return tuple(float(t) for t in self.t1_list)
        half = 0.5 * (self.t_max - t0)
        return tuple(t0 + half * s for s in (0.0, 0.125, 0.25, 0.5, 1.0))

    def echo(self):
        return {"t_max": self.t_max, "dt": self.dt, "tail_fraction": self.tail_fraction,
                "ensemble": self.ensemble, "combos": self.combos, "seed": self.seed}

    @classmethod
    def from_settings(cls, settings, t0, **overrides):
        h = settings.get("horizon", {})
        s = settings.get("sampling", {})
        t_max = float(h.get("t_max", t0 + 20.0))
        kw = dict(
            t_max=t_max,
            dt=float(h.get("dt", 1e-3)),
            tail_fraction=float(h.get("tail_fraction", 0.25)),
            ensemble=int(s.get("ensemble", 16)),
            combos=int(s.get("convex_combos", 32)),
            seed=int(s.get("seed", 0)),
        )
        if h.get("t1_list", "").strip():
            kw["t1_list"] = tuple(float(v) for v in h["t1_list"].split(","))
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)


@dataclass
class BoundReport:
    result_id: str
    bound: float
    mu_hat: float = math.nan
    chi_check: float = math.nan
    spabs: float = math.nan
    matrix: np.ndarray = None
    intermediates: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    qualifiers: list = field(default_factory=list)

    @property
    def converged(self):
        return NON_CONVERGED not in self.qualifiers

    def row(self):
        c = self.config
        return [self.result_id, _num(self.bound), _num(self.mu_hat), _num(self.chi_check),
                _num(self.spabs), _num(c.get("t_max")), _num(c.get("dt")),
                _num(c.get("tail_fraction")), _int(c.get("ensemble")), _int(c.get("combos")),
                _int(c.get("seed")), "; ".join(self.qualifiers)]

    def to_text(self):
        lines = [f"result_id={self.result_id}", f"bound={_num(self.bound)}"]
        for key in ("mu_hat", "chi_check", "spabs"):
            v = getattr(self, key)
            if not math.isnan(v):
                lines.append(f"{key}={_num(v)}")
        if self.matrix is not None:
            M = np.atleast_2d(self.matrix)
            rows = ";".join(",".join(_num(v) for v in r) for r in M)
            lines.append(f"matrix={rows}")
        for k, v in self.intermediates.items():
            lines.append(f"{k}={_fmt(v)}")
        for k, v in self.config.items():
            lines.append(f"{k}={_fmt(v)}")
        lines.append(f"qualifiers={'; '.join(self.qualifiers)}")
        return "\n".join(lines) + "\n"


def _num(v):
    if v is None:
        return ""
    v = float(v)
    return "" if math.isnan(v) else f"{v:.17g}"


def _int(v):
    return "" if v is None else str(int(v))


def _fmt(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return ",".join(_fmt(x) for x in np.ravel(np.asarray(v, dtype=float)))
    if isinstance(v, (float, np.floating)):
        return _num(v)
    return str(v)


def write_bounds_csv(path_or_buffer, reports):
    own = isinstance(path_or_buffer, (str, bytes)) or hasattr(path_or_buffer, "__fspath__")
    fh = open(path_or_buffer, "w", newline="", encoding="utf-8") if own else path_or_buffer
    try:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(CSV_COLUMNS)
        for r in reports:
            w.writerow(r.row())
    finally:
        if own:
            fh.close()


# -------------------------------------------------------- Jacobian quantities

def _q_measure(p):
    p = norm_tag(p)

    def q(J):
        return matrix_measure(J, p)[..., None]
    return q


def _q_trace(J):
    return np.trace(J, axis1=-2, axis2=-1)[..., None]


def _q_scalar_metzler(J):
    n = J.shape[-1]
    A = np.abs(J)
    i = np.arange(n)
    A[..., i, i] = J[..., i, i]
    return A.reshape(J.shape[:-2] + (n * n,))


def _q_network(partition):
    m = partition.m

    def q(J):
        return interconnection_from_jacobians(J, partition).reshape(J.shape[:-2] + (m * m,))
    return q


def _q_network_measure(partition):
    net = partition.network_norm

    def q(J):
        return matrix_measure(interconnection_from_jacobians(J, partition), net)[..., None]
    return q


# ------------------------------------------------------------------ hulls

class Hull:
    """Trajectories on a shared grid plus fixed random convex combinations.

    ``members`` has shape ``(nt, n, L)``; sample ``s < L`` is member ``s``
    and sample ``L + c`` is combination ``c`` with weights ``W[c]``.  The
    same weights are used at every time step.
    """

    def __init__(self, sys, times, members, W):
        self.sys = sys
        self.times = times
        self.members = members
        self.W = W

    @property
    def count(self):
        return self.members.shape[2] + self.W.shape[0]

    def states(self, sl):
        M = self.members[sl]
        if self.W.shape[0] == 0:
            return M
        return np.concatenate([M, M @ self.W.T], axis=-1)

    def sample_state(self, k, s):
        M = self.members[k]
        L = M.shape[1]
        return M[:, s] if s < L else M @ self.W[s - L]

    def sample_velocity(self, t, k, s):
        M = self.members[k]
        L = M.shape[1]
        if s < L:
            return self.sys.rhs(t, M[:, s:s + 1])[:, 0]
        V = self.sys.rhs(t, M)
        return V @ self.W[s - L]

    def series(self, quantity, reduce, lo, hi, chunk_elems=120_000):
        """Per-time reduction over samples of ``quantity(J)`` on ``[lo, hi)``.

        Returns ``values (hi-lo, q)`` and the sample index achieving them.
        """
        S = self.count
        step = max(1, chunk_elems // S)
        vals, args = [], []
        for a in range(lo, hi, step):
            b = min(hi, a + step)
            X = np.moveaxis(self.states(slice(a, b)), 1, 0)      # (n, c, S)
            t = self.times[a:b, None]
            J = self.sys.jac_batch(t, X)                          # (c, S, n, n)
            if not np.all(np.isfinite(J)):
                from .expr import DomainError
                raise DomainError("Jacobian is not finite on the sampled reach set")
            Q = quantity(J)                                       # (c, S, q)
            if reduce == "max":
                idx = np.argmax(Q, axis=1)
            else:
                idx = np.argmin(Q, axis=1)
            vals.append(np.take_along_axis(Q, idx[:, None, :], axis=1)[:, 0, :])
            args.append(idx)
        return np.concatenate(vals), np.concatenate(args)

    def window(self, quantity, reduce, lo, hi, refine=True, entries=None):
        """Reduce ``quantity`` over samples and grid times ``lo..hi-1``.

        With ``refine`` the extremum of each entry is polished by a bounded
        scalar search on the neighbouring grid intervals, with the sample's
        state interpolated by cubic Hermite; the grid value is kept if the
        search finds nothing better.
        """
        V, A = self.series(quantity, reduce, lo, hi)
        pick = np.argmax if reduce == "max" else np.argmin
        k = pick(V, axis=0)
        q = V.shape[1]
        best = V[k, np.arange(q)].copy()
        if refine:
            entries = range(q) if entries is None else entries
            for j in entries:
                kk = lo + int(k[j])
                s = int(A[k[j], j])
                best[j] = self._refine(quantity, reduce, j, kk, s, best[j], lo, hi - 1)
        return best

    def _refine(self, quantity, reduce, j, k, s, value, lo, hi):
        sign = 1.0 if reduce == "max" else -1.0
        times = self.times
        bps = self.sys.breakpoints
        best = value
        for a, b in ((k - 1, k), (k, k + 1)):
            if a < lo or b > hi:
                continue
            ta, tb = times[a], times[b]
            ta_eval = np.nextafter(ta, tb) if ta in bps else ta
            tb_eval = np.nextafter(tb, ta) if tb in bps else tb
            xa, xb = self.sample_state(a, s), self.sample_state(b, s)
            va = self.sample_velocity(ta_eval, a, s)
            vb = self.sample_velocity(tb_eval, b, s)
            h = tb - ta

            def obj(t):
                u = (t - ta) / h
                h00 = 2 * u ** 3 - 3 * u ** 2 + 1
                h10 = u ** 3 - 2 * u ** 2 + u
                h01 = -2 * u ** 3 + 3 * u ** 2
                h11 = u ** 3 - u ** 2
                x = h00 * xa + h10 * h * va + h01 * xb + h11 * h * vb
                tt = min(max(t, ta_eval), tb_eval)
                J = self.sys.jac_batch(tt, x[:, None])[0]
                v = float(quantity(J)[j])
                return -sign * v if np.isfinite(v) else np.inf

            res = minimize_scalar(obj, bounds=(ta, tb), method="bounded",
                                  options={"xatol": 1e-12 * max(1.0, abs(tb))})
            cand = -sign * res.fun
            if np.isfinite(cand) and sign * cand > sign * best:
                best = cand
        return best


# ----------------------------------------------------------------- engine

class BoundEngine:
    """Shared ensemble and hull for all bounds of one system and config."""

    def __init__(self, sys: System, K: BoxSet = None, cfg: HorizonConfig = None):
        self.sys = sys
        self.K = sys.K if K is None else K
        self.cfg = cfg
        cfg.check(sys.t0)
        self._hull = None
        self._reinit = {}

    # -- data
    @property
    def hull(self):
        if self._hull is None:
            c = self.cfg
            ens = sample_ensemble(self.sys, self.K, c.ensemble, c.t_max, c.dt, c.seed)
            W = convex_weights(ens.count, c.combos, c.seed)
            self._hull = Hull(self.sys, ens.times, ens.states, W)
        return self._hull

    @property
    def members_only(self):
        h = self.hull
        return Hull(self.sys, h.times, h.members, h.W[:0])

    def tail_index(self, hull=None, fraction=None):
        hull = self.hull if hull is None else hull
        start = self.cfg.tail_start(self.sys.t0, fraction)
        return int(np.searchsorted(hull.times, start - 1e-12 * max(1.0, abs(start))))

    def _report(self, rid, bound, **kw):
        r = BoundReport(rid, float(bound), config=self.cfg.echo(), **kw)
        r.qualifiers.insert(0, SAMPLED)
        return r

    def _tail(self, hull, quantity, reduce, entries=None):
        nt = hull.times.size
        full = hull.window(quantity, reduce, self.tail_index(hull), nt,
                           self.cfg.refine, entries)
        half = hull.window(quantity, reduce,
                           self.tail_index(hull, 0.5 * self.cfg.tail_fraction), nt,
                           self.cfg.refine, entries)
        return full, half

    def _qual(self, full, half):
        return [] if abs(full - half) <= WINDOW_TOL else [NON_CONVERGED]

    # -- single-system bounds
    def measure(self, p="inf"):
        p = norm_tag(p)
        full, half = self._tail(self.hull, _q_measure(p), "max")
        mu = float(full[0])
        r = self._report(f"measure_{_P_SUFFIX[p]}", self.sys.n * max(mu, 0.0), mu_hat=mu)
        r.intermediates["norm"] = p
        r.qualifiers += self._qual(full[0], half[0])
        return r

    def trace(self):
        full, half = self._tail(self.members_only, _q_trace, "min")
        chi = float(full[0])
        r = self._report("trace", max(chi, 0.0), chi_check=chi)
        r.qualifiers += self._qual(full[0], half[0])
        return r

    def metzler(self):
        n = self.sys.n
        full, half = self._tail(self.hull, _q_scalar_metzler, "max")
        A = full.reshape(n, n)
        s = spectral_abscissa_metzler(A)
        s_half = spectral_abscissa_metzler(half.reshape(n, n))
        r = self._report("metzler", n * max(s, 0.0), spabs=s, matrix=A)
        r.qualifiers += self._qual(s, s_half)
        return r

    # -- network bounds
    def _partition(self, partition):
        return self.sys.partition if partition is None else partition

    def network_measure(self, partition=None):
        P = self._partition(partition)
        full, half = self._tail(self.hull, _q_network_measure(P), "max")
        mu = float(full[0])
        r = self._report("network_measure", self.sys.n * max(mu, 0.0), mu_hat=mu)
        r.intermediates["blocks"] = list(P.blocks)
        r.qualifiers += self._qual(full[0], half[0])
        return r

    def network_metzler(self, partition=None):
        P = self._partition(partition)
        m = P.m
        full, half = self._tail(self.hull, _q_network(P), "max")
        A = full.reshape(m, m)
        s = spectral_abscissa_metzler(A)
        s_half = spectral_abscissa_metzler(half.reshape(m, m))
        r = self._report("network_metzler", self.sys.n * max(s, 0.0), spabs=s, matrix=A)
        r.intermediates["blocks"] = list(P.blocks)
        r.qualifiers += self._qual(s, s_half)
        return r

    # -- reinitialized variants
    def reinit_hull(self, t1):
        """Hull samples at ``t1`` restarted as trajectories on the remaining grid."""
        base = self.hull
        k1 = int(np.argmin(np.abs(base.times - t1)))
        if k1 not in self._reinit:
            start = base.states(slice(k1, k1 + 1))[0]             # (n, S)
            times = base.times[k1:]
            states = integrate_on_grid(self.sys, times, start)
            W = convex_weights(start.shape[1], self.cfg.combos, self.cfg.seed + 1)
            self._reinit[k1] = Hull(self.sys, times, states, W)
        return self._reinit[k1]

    def _t1_tail(self, quantity, reduce):
        """Per-t1 tail values over the same absolute tail window."""
        per, per_half = [], []
        start_full = self.cfg.tail_start(self.sys.t0)
        start_half = self.cfg.tail_start(self.sys.t0, 0.5 * self.cfg.tail_fraction)
        for t1 in self.cfg.t1_values(self.sys.t0):
            h = self.reinit_hull(t1)
            nt = h.times.size
            lo = int(np.searchsorted(h.times, start_full - 1e-12 * max(1.0, abs(start_full))))
            lo_half = int(np.searchsorted(h.times, start_half - 1e-12 * max(1.0, abs(start_half))))
            lo = min(lo, nt - 1)
            lo_half = min(max(lo_half, lo), nt - 1)
            per.append(h.window(quantity, reduce, lo, nt, self.cfg.refine)[0])
            per_half.append(h.window(quantity, reduce, lo_half, nt, self.cfg.refine)[0])
        return np.array(per), np.array(per_half)

    def measure_t1(self, p="inf"):
        p = norm_tag(p)
        per, per_half = self._t1_tail(_q_measure(p), "max")
        mu = float(per.min())
        r = self._report(f"measure_t1_{_P_SUFFIX[p]}", self.sys.n * max(mu, 0.0), mu_hat=mu)
        r.intermediates["t1_list"] = list(self.cfg.t1_values(self.sys.t0))
        r.intermediates["mu_hat_per_t1"] = list(per)
        r.qualifiers += self._qual(mu, float(per_half.min()))
        return r

    def network_measure_t1(self, partition=None):
        P = self._partition(partition)
        per, per_half = self._t1_tail(_q_network_measure(P), "max")
        mu = float(per.min())
        r = self._report("network_measure_t1", self.sys.n * max(mu, 0.0), mu_hat=mu)
        r.intermediates["t1_list"] = list(self.cfg.t1_values(self.sys.t0))
        r.intermediates["mu_hat_per_t1"] = list(per)
        r.qualifiers += self._qual(mu, float(per_half.min()))
        return r

    def network_metzler_t1(self, partition=None):
        P = self._partition(partition)
        m = P.m
        q = _q_network(P)
        mats = []
        for t1 in self.cfg.t1_values(self.sys.t0):
            h = self.reinit_hull(t1)
            # supremum over all t >= t1, not a tail window
            mats.append(h.window(q, "max", 0, h.times.size, self.cfg.refine).reshape(m, m))
        A = np.min(np.stack(mats), axis=0)
        s = spectral_abscissa_metzler(A)
        r = self._report("network_metzler_t1", self.sys.n * max(s, 0.0), spabs=s, matrix=A)
        r.intermediates["t1_list"] = list(self.cfg.t1_values(self.sys.t0))
        r.intermediates["blocks"] = list(P.blocks)
        return r

    # -- time-varying linear shortcut
    def ltv(self, p="inf", check_points=64):
        p = norm_tag(p)
        sys, c = self.sys, self.cfg
        times = time_grid(sys.t0, c.t_max, c.dt, sys.breakpoints)
        zero = np.zeros((sys.n, 1))
        # linearity: J(t, x) must not depend on x
        pts = sample_initial_states(self.K, check_points, c.seed).T
        sub = times[:: max(1, times.size // 200)]
        J0 = sys.jac_batch(sub[:, None], np.zeros((sys.n, sub.size, 1)))
        Jx = sys.jac_batch(sub[:, None], np.broadcast_to(pts[:, None, :], (sys.n, sub.size, pts.shape[1])))
        gap = float(np.max(np.abs(Jx - J0).sum(axis=-1)))
        if not gap <= 1e-9:
            raise NotLinearError(f"Jacobian depends on the state (max gap {gap:.3g})")
        hull = Hull(sys, times, np.zeros((times.size, sys.n, 1)), np.zeros((0, 1)))
        lo = int(np.searchsorted(times, c.tail_start(sys.t0) - 1e-12 * max(1.0, abs(c.t_max))))
        nt = times.size
        mu = float(hull.window(_q_measure(p), "max", lo, nt, c.refine)[0])
        chi = float(hull.window(_q_trace, "min", lo, nt, c.refine)[0])
        A = hull.window(_q_scalar_metzler, "max", lo, nt, c.refine).reshape(sys.n, sys.n)
        s = spectral_abscissa_metzler(A)
        n = sys.n
        r = BoundReport("ltv", n * max(mu, 0.0), mu_hat=mu, chi_check=chi, spabs=s, matrix=A,
                        config=c.echo())
        r.intermediates.update({
            "norm": p,
            "upper_measure": n * max(mu, 0.0),
            "upper_metzler": n * max(s, 0.0),
            "lower_trace": max(chi, 0.0),
        })
        r.qualifiers.append("time-sampled max")
        return r


# ----------------------------------------------------------- public API

def _engine(sys, K, cfg):
    return BoundEngine(sys, K, cfg)


def upper_bound_measure(sys, K, p, cfg) -> BoundReport:
    return _engine(sys, K, cfg).measure(p)


def lower_bound_trace(sys, K, cfg) -> BoundReport:
    return _engine(sys, K, cfg).trace()


def upper_bound_metzler_scalar(sys, K, cfg) -> BoundReport:
    return _engine(sys, K, cfg).metzler()


def ltv_bounds(sys, cfg, p="inf") -> BoundReport:
    return _engine(sys, None, cfg).ltv(p)


def upper_bound_network_measure(sys, K, cfg, partition=None) -> BoundReport:
    return _engine(sys, K, cfg).network_measure(partition)


def upper_bound_network_metzler(sys, K, cfg, partition=None) -> BoundReport:
    return _engine(sys, K, cfg).network_metzler(partition)


def upper_bound_measure_t1(sys, K, p, cfg) -> BoundReport:
    return _engine(sys, K, cfg).measure_t1(p)


def upper_bound_network_measure_t1(sys, K, cfg, partition=None) -> BoundReport:
    return _engine(sys, K, cfg).network_measure_t1(partition)


def upper_bound_network_metzler_t1(sys, K, cfg, partition=None) -> BoundReport:
    return _engine(sys, K, cfg).network_metzler_t1(partition)


def upper_bound_superset(sys: System, S: BoxSet, p, t_grid, points=None) -> BoundReport:
    """Grid maximum of ``mu_p(J)`` over ``S x t_grid``; no integration.

    ``points`` per axis defaults to an odd count so the box center is on
    the grid, with at most about 2e5 state points in total.
    """
    p = norm_tag(p)
    n = sys.n
    if points is None:
        points = int(round((2e5) ** (1.0 / n)))
        points = max(3, min(points, 2001))
    if points % 2 == 0:
        points += 1
    axes = [np.linspace(lo, hi, points) for lo, hi in zip(S.lower, S.upper)]
    X = np.stack(np.meshgrid(*axes, indexing="ij")).reshape(n, -1)
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    best = -np.inf
    step = max(1, 200_000 // X.shape[1])
    for a in range(0, t_grid.size, step):
        t = t_grid[a:a + step, None]
        J = sys.jac_batch(t, np.broadcast_to(X[:, None, :], (n, t.shape[0], X.shape[1])))
        best = max(best, float(np.max(matrix_measure(J, p))))
    r = BoundReport(f"superset_{_P_SUFFIX[p]}", n * max(best, 0.0), mu_hat=best)
    r.intermediates.update({"norm": p, "grid_points_per_axis": points,
                            "superset_lower": list(S.lower), "superset_upper": list(S.upper)})
    r.qualifiers += ["grid max over S", "superset containment not checked"]
    return r


def report_csv_text(reports):
    buf = io.StringIO()
    write_bounds_csv(buf, reports)
    return buf.getvalue()
