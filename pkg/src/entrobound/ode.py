"""Fixed-step RK4 trajectories, variational equation and reach ensembles."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .expr import DomainError
from .system import BoxSet, System

__all__ = [
    "BlowUpError", "Trajectory", "ReachEnsemble", "VariationalSolution",
    "time_grid", "integrate", "integrate_batch", "integrate_on_grid",
    "variational", "variational_batch", "sample_initial_states",
    "sample_ensemble", "convex_weights", "convex_hull_samples",
    "write_trajectory_csv", "BLOWUP_LIMIT",
]

BLOWUP_LIMIT = 1e12


class BlowUpError(ArithmeticError):
    """A trajectory left the ball of radius 1e12 or became non-finite."""

    def __init__(self, message, x0=None, t=None):
        self.x0 = None if x0 is None else np.asarray(x0, dtype=float)
        self.t = t
        super().__init__(message)


@dataclass
class Trajectory:
    t0: float
    times: np.ndarray
    states: np.ndarray      # (len(times), n)


@dataclass
class VariationalSolution:
    trajectory: Trajectory
    phi: np.ndarray         # (len(times), n, n)
    logdet: np.ndarray      # (len(times),)


@dataclass
class ReachEnsemble:
    times: np.ndarray
    states: np.ndarray      # (len(times), n, members)
    initial: np.ndarray     # (members, n)
    seed: int

    @property
    def count(self):
        return self.initial.shape[0]

    def member(self, k):
        return Trajectory(float(self.times[0]), self.times, self.states[:, :, k])


def time_grid(t0, t_end, dt, breakpoints=()):
    """Grid from ``t0`` to ``t_end`` that contains every interior breakpoint.

    Each segment between consecutive breakpoints is cut into the fewest
    equal steps not longer than ``dt``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t_end < t0:
        raise ValueError("t_end must not precede t0")
    if t_end == t0:
        return np.array([float(t0)])
    cuts = [float(t0)] + [b for b in breakpoints if t0 < b < t_end] + [float(t_end)]
    pieces = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        steps = max(1, math.ceil((b - a) / dt - 1e-9))
        seg = np.linspace(a, b, steps + 1)
        pieces.append(seg if not pieces else seg[1:])
    return np.concatenate(pieces)


def _stage_times(times, breakpoints):
    """Start and end stage times of every step.

    A stage time that sits on a breakpoint is moved one ulp into the step,
    so each step only sees the field on its own side of a discontinuity,
    whichever way time runs and however the piecewise condition is written.
    """
    starts = times[:-1].copy()
    ends = times[1:].copy()
    if breakpoints:
        bps = np.asarray(breakpoints, dtype=float)
        on = np.isin(starts, bps)
        starts[on] = np.nextafter(starts[on], ends[on])
        on = np.isin(ends, bps)
        ends[on] = np.nextafter(ends[on], times[:-1][on])
    return starts, ends


def _blowup(X, X0, t):
    bad = ~np.all(np.isfinite(X), axis=0) | (np.max(np.abs(X), axis=0) > BLOWUP_LIMIT)
    k = int(np.argmax(bad))
    x0 = X0[:, k]
    return BlowUpError(
        f"trajectory from x0={x0.tolist()} blew up (|x|>1e12) near t={t:.6g}", x0, t)


def integrate_on_grid(sys: System, times, X0, record=None, escape="raise"):
    """RK4 on an explicit grid for a batch of lanes.

    ``X0`` has shape ``(n, L)``.  Returns states at the recorded grid
    indices (all by default) with shape ``(len(record), n, L)``.  With
    ``escape="nan"`` a lane that blows up is set to NaN instead of raising.
    """
    times = np.asarray(times, dtype=float)
    X = np.array(X0, dtype=float, copy=True)
    if X.ndim == 1:
        X = X[:, None]
    X0 = X.copy()
    nt = times.size
    if record is None:
        record = np.arange(nt)
    record = np.asarray(record, dtype=int)
    out = np.empty((record.size,) + X.shape)
    slot = np.full(nt, -1)
    slot[record] = np.arange(record.size)
    if slot[0] >= 0:
        out[slot[0]] = X
    starts, ends = _stage_times(times, sys.breakpoints)
    f = sys.rhs_raw
    k1, k2, k3, k4 = (np.empty_like(X) for _ in range(4))
    with np.errstate(all="ignore"):
        for k in range(nt - 1):
            h = times[k + 1] - times[k]
            mid = times[k] + 0.5 * h
            f(starts[k], X, k1)
            f(mid, X + (0.5 * h) * k1, k2)
            f(mid, X + (0.5 * h) * k2, k3)
            f(ends[k], X + h * k3, k4)
            k2 += k3
            k2 *= 2.0
            k2 += k1
            k2 += k4
            X = X + (h / 6.0) * k2
            if not np.abs(X).max() <= BLOWUP_LIMIT:
                if escape != "nan":
                    raise _blowup(X, X0, times[k + 1])
                X[:, ~np.all(np.abs(X) <= BLOWUP_LIMIT, axis=0)] = np.nan
            if slot[k + 1] >= 0:
                out[slot[k + 1]] = X
    return out


def integrate_batch(sys: System, X0, t_end, dt, t_start=None, record=None):
    t_start = sys.t0 if t_start is None else t_start
    times = time_grid(t_start, t_end, dt, sys.breakpoints)
    return times, integrate_on_grid(sys, times, X0, record)


def integrate(sys: System, x0, t_end, dt=1e-3) -> Trajectory:
    """Single trajectory from ``(sys.t0, x0)`` to ``t_end``."""
    x0 = np.asarray(x0, dtype=float).reshape(sys.n)
    times, states = integrate_batch(sys, x0[:, None], t_end, dt)
    return Trajectory(sys.t0, times, states[:, :, 0])


def variational_batch(sys: System, times, X0, record=None):
    """Co-integrate states, the flow Jacobian and the log-determinant.

    Returns ``(states (r, n, L), phi (r, L, n, n), logdet (r, L))`` at the
    recorded grid indices (all by default).
    """
    times = np.asarray(times, dtype=float)
    X = np.array(X0, dtype=float, copy=True)
    if X.ndim == 1:
        X = X[:, None]
    X0 = X.copy()
    n, L = X.shape
    nt = times.size
    P = np.broadcast_to(np.eye(n), (L, n, n)).copy()
    ell = np.zeros(L)
    if record is None:
        record = np.arange(nt)
    record = np.asarray(record, dtype=int)
    slot = np.full(nt, -1)
    slot[record] = np.arange(record.size)
    xs = np.empty((record.size, n, L))
    ps = np.empty((record.size, L, n, n))
    ls = np.empty((record.size, L))
    if slot[0] >= 0:
        xs[slot[0]], ps[slot[0]], ls[slot[0]] = X, P, ell
    starts, ends = _stage_times(times, sys.breakpoints)

    def deriv(t, X, P):
        J = sys.jac_batch(t, X)                   # (L, n, n)
        return sys.rhs(t, X), J @ P, np.trace(J, axis1=-2, axis2=-1)

    for k in range(nt - 1):
        h = times[k + 1] - times[k]
        mid = times[k] + 0.5 * h
        a1, b1, c1 = deriv(starts[k], X, P)
        a2, b2, c2 = deriv(mid, X + 0.5 * h * a1, P + 0.5 * h * b1)
        a3, b3, c3 = deriv(mid, X + 0.5 * h * a2, P + 0.5 * h * b2)
        a4, b4, c4 = deriv(ends[k], X + h * a3, P + h * b3)
        X = X + (h / 6.0) * (a1 + 2 * a2 + 2 * a3 + a4)
        P = P + (h / 6.0) * (b1 + 2 * b2 + 2 * b3 + b4)
        ell = ell + (h / 6.0) * (c1 + 2 * c2 + 2 * c3 + c4)
        if not np.abs(X).max() <= BLOWUP_LIMIT:
            raise _blowup(X, X0, times[k + 1])
        if not np.all(np.isfinite(P)):
            raise DomainError("variational matrix became non-finite")
        j = slot[k + 1]
        if j >= 0:
            xs[j], ps[j], ls[j] = X, P, ell
    return xs, ps, ls


def variational(sys: System, x0, t_end, dt=1e-3) -> VariationalSolution:
    x0 = np.asarray(x0, dtype=float).reshape(sys.n)
    times = time_grid(sys.t0, t_end, dt, sys.breakpoints)
    xs, ps, ls = variational_batch(sys, times, x0[:, None])
    traj = Trajectory(sys.t0, times, xs[:, :, 0])
    return VariationalSolution(traj, ps[:, 0], ls[:, 0])


def sample_initial_states(K: BoxSet, count, seed=0):
    """Corners, then the center, then scrambled Halton points in ``K``.

    At least ``2**n + 1`` states are always returned.  For a fixed seed a
    larger count extends a smaller one (the sequence is prefix-nested).
    """
    n = K.n
    fixed = np.vstack([K.corners(), K.center[None, :]])
    extra = max(int(count) - fixed.shape[0], 0)
    if extra == 0:
        return fixed
    halton = qmc.Halton(d=n, scramble=True, seed=np.random.default_rng(seed))
    u = halton.random(extra)
    return np.vstack([fixed, K.lower + u * (K.upper - K.lower)])


def sample_ensemble(sys: System, K: BoxSet, count, t_end, dt=1e-3, seed=0,
                    t_start=None) -> ReachEnsemble:
    if count < 2:
        raise ValueError("ensemble needs at least two members")
    init = sample_initial_states(K, count, seed)
    times, states = integrate_batch(sys, init.T, t_end, dt, t_start=t_start)
    return ReachEnsemble(times, states, init, seed)


def convex_weights(members, combos, seed=0):
    """Weights of ``combos`` random convex combinations, shape ``(combos, members)``.

    Combination ``k`` draws 2 to 4 distinct members and Dirichlet(1)
    weights from its own stream, so the first ``c`` rows do not depend on
    how many combinations are requested.
    """
    W = np.zeros((combos, members))
    if members < 2:
        return W[:0]
    for k in range(combos):
        rng = np.random.default_rng([int(seed), 7919, k])
        size = int(rng.integers(2, min(4, members) + 1))
        idx = rng.choice(members, size=size, replace=False)
        W[k, idx] = rng.dirichlet(np.ones(size))
    return W


def convex_hull_samples(ens: ReachEnsemble, t_index, combos, seed=0):
    """Member states at ``t_index`` followed by ``combos`` convex combinations."""
    S = ens.states[t_index].T            # (members, n)
    W = convex_weights(S.shape[0], combos, seed)
    return np.vstack([S, W @ S])


def write_trajectory_csv(path, times, states):
    """Write ``t,x1..xn`` rows with 17 significant digits."""
    states = np.asarray(states)
    n = states.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["t"] + [f"x{i}" for i in range(1, n + 1)])
        for t, row in zip(times, states):
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])
