"""Problem description: vector field, initial box, partition and norms."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .expr import (ExprSyntaxError, compile_expr, differentiate,
                   parse_expression, to_string)

__all__ = [
    "NORMS", "norm_tag", "BoxSet", "Partition", "System", "SpecError",
    "build_system", "jacobian", "jacobian_block", "load_spec", "parse_spec",
]

NORMS = ("one", "two", "inf")

_NORM_ALIASES = {
    "one": "one", "1": "one", "l1": "one",
    "two": "two", "2": "two", "l2": "two",
    "inf": "inf", "infinity": "inf", "max": "inf", "oo": "inf", "∞": "inf",
}


class SpecError(ValueError):
    """Invalid system description (dimension mismatch, bad box, bad key)."""


def norm_tag(tag) -> str:
    key = str(tag).strip().lower()
    if key not in _NORM_ALIASES:
        raise SpecError(f"unknown norm {tag!r}; expected one of {NORMS}")
    return _NORM_ALIASES[key]


@dataclass(frozen=True)
class BoxSet:
    lower: np.ndarray
    upper: np.ndarray

    def __init__(self, lower, upper):
        lo = np.atleast_1d(np.asarray(lower, dtype=float))
        hi = np.atleast_1d(np.asarray(upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise SpecError("box corners must be vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise SpecError("box corners must be finite")
        if not np.all(lo < hi):
            raise SpecError("initial box needs lower < upper in every coordinate")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def n(self):
        return self.lower.size

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    @property
    def radius(self):
        return 0.5 * (self.upper - self.lower)

    @property
    def volume(self):
        return float(np.prod(self.upper - self.lower))

    def contains(self, x, tol=0.0):
        x = np.asarray(x, dtype=float)
        lo = self.lower.reshape((-1,) + (1,) * (x.ndim - 1))
        hi = self.upper.reshape((-1,) + (1,) * (x.ndim - 1))
        return np.all((x >= lo - tol) & (x <= hi + tol), axis=0)

    def corners(self):
        n = self.n
        bits = (np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1
        return np.where(bits == 1, self.upper, self.lower)

    def split(self, axis, at=None):
        at = self.center[axis] if at is None else at
        hi1 = self.upper.copy()
        hi1[axis] = at
        lo2 = self.lower.copy()
        lo2[axis] = at
        return BoxSet(self.lower, hi1), BoxSet(lo2, self.upper)

    def __eq__(self, other):
        return (isinstance(other, BoxSet)
                and np.array_equal(self.lower, other.lower)
                and np.array_equal(self.upper, other.upper))

    def __hash__(self):
        return hash((self.lower.tobytes(), self.upper.tobytes()))


@dataclass(frozen=True)
class Partition:
    blocks: tuple
    local_norms: tuple
    network_norm: str = "inf"

    def __init__(self, blocks, local_norms=None, network_norm="inf"):
        blocks = tuple(int(b) for b in blocks)
        if not blocks or any(b < 1 for b in blocks):
            raise SpecError("partition blocks must be positive integers")
        if local_norms is None:
            local_norms = ("inf",) * len(blocks)
        elif isinstance(local_norms, str):
            local_norms = (local_norms,) * len(blocks)
        local_norms = tuple(norm_tag(p) for p in local_norms)
        if len(local_norms) != len(blocks):
            raise SpecError("need one local norm per block")
        # 1, 2 and inf norms are all monotone, so any selector is admissible
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "local_norms", local_norms)
        object.__setattr__(self, "network_norm", norm_tag(network_norm))

    @property
    def m(self):
        return len(self.blocks)

    @property
    def n(self):
        return sum(self.blocks)

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.blocks)]).astype(int)

    def slices(self):
        o = self.offsets
        return [slice(o[i], o[i + 1]) for i in range(self.m)]

    @classmethod
    def single(cls, n, norm="inf"):
        return cls((n,), (norm,), norm)

    @classmethod
    def scalar(cls, n, network_norm="inf"):
        return cls((1,) * n, ("inf",) * n, network_norm)


@dataclass(frozen=True, eq=False)
class System:
    n: int
    f: tuple
    jac: tuple
    K: BoxSet
    t0: float
    breakpoints: tuple = ()
    partition: Optional[Partition] = None
    _f_fn: object = field(default=None, repr=False)
    _j_fn: object = field(default=None, repr=False)

    @property
    def field_texts(self):
        return [to_string(e) for e in self.f]

    def rhs(self, t, X):
        """Vector field for a batch: ``X`` has shape ``(n, ...)``."""
        return self._f_fn(t, np.asarray(X, dtype=float))

    @property
    def rhs_raw(self):
        """``fn(t, X, out)`` without allocation or error-state handling."""
        return self._f_fn.raw

    def jac_batch(self, t, X):
        """Jacobians for a batch: ``X`` shape ``(n, ...)`` gives ``(..., n, n)``."""
        X = np.asarray(X, dtype=float)
        J = self._j_fn(t, X)
        J = J.reshape((self.n, self.n) + J.shape[1:])
        return np.moveaxis(J, (0, 1), (-2, -1))

    def with_partition(self, partition):
        return build_system(self.field_texts, self.breakpoints, partition, self.K, self.t0)

    def with_initial(self, K=None, t0=None):
        return System(self.n, self.f, self.jac, self.K if K is None else K,
                      self.t0 if t0 is None else float(t0), self.breakpoints,
                      self.partition, self._f_fn, self._j_fn)


def build_system(field_texts, t_breakpoints=(), partition=None, K=None, t0=0.0) -> System:
    """Parse the field, precompute the exact Jacobian and compile both."""
    n = len(field_texts)
    if n < 1:
        raise SpecError("need at least one field component")
    f = tuple(parse_expression(s, n) if isinstance(s, str) else s for s in field_texts)
    jac = tuple(tuple(differentiate(fi, j + 1) for j in range(n)) for fi in f)
    if K is None:
        raise SpecError("an initial box K is required")
    if not isinstance(K, BoxSet):
        K = BoxSet(*K)
    if K.n != n:
        raise SpecError(f"initial box has dimension {K.n}, field has {n}")
    if partition is None:
        partition = Partition.single(n)
    elif not isinstance(partition, Partition):
        partition = Partition(partition)
    if partition.n != n:
        raise SpecError(f"partition blocks sum to {partition.n}, field has {n}")
    bps = tuple(sorted(float(b) for b in t_breakpoints))
    f_fn = compile_expr(f, n)
    j_fn = compile_expr([e for row in jac for e in row], n)
    return System(n, f, jac, K, float(t0), bps, partition, f_fn, j_fn)


def jacobian(sys: System, t, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("state must be finite")
    J = sys.jac_batch(t, x)
    if not np.all(np.isfinite(J)):
        from .expr import DomainError
        raise DomainError(f"Jacobian not finite at t={t}, x={x.tolist()}")
    return J


def jacobian_block(sys: System, i, j, t, x) -> np.ndarray:
    """Block ``(i, j)`` of the Jacobian, 1-based block indices."""
    m = sys.partition.m
    if not (1 <= i <= m and 1 <= j <= m):
        raise IndexError(f"block index ({i}, {j}) outside 1..{m}")
    s = sys.partition.slices()
    return jacobian(sys, t, x)[..., s[i - 1], s[j - 1]]


# ------------------------------------------------------------- spec files

def _floats(text):
    text = text.strip()
    if not text:
        return []
    return [float(v) for v in text.split(",")]


def parse_spec(text, source="<spec>"):
    """Parse a system spec file.

    Returns ``(system, settings)`` where settings is a dict of the
    ``[horizon]``, ``[sampling]``, ``[superset]``, ``[verify]`` and
    ``[empirical]`` sections with numeric values converted.
    Expression errors propagate as ExprSyntaxError (offset within the
    expression text); structural errors as SpecError.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise SpecError(str(exc)) from exc
    if not cp.has_section("system") or not cp.has_section("initial_set"):
        raise SpecError("spec needs [system] and [initial_set] sections")
    s = cp["system"]
    try:
        n = int(s.get("n"))
    except (TypeError, ValueError) as exc:
        raise SpecError("[system] n must be an integer") from exc
    texts = []
    for i in range(1, n + 1):
        key = f"f{i}"
        if key not in s:
            raise SpecError(f"[system] is missing {key}")
        texts.append(s[key])
    extra = [k for k in s if k.startswith("f") and k[1:].isdigit() and int(k[1:]) > n]
    if extra:
        raise SpecError(f"[system] has components {extra} beyond n={n}")
    t0 = float(s.get("t0", "0"))
    bps = _floats(s.get("breakpoints", ""))
    K = BoxSet(_floats(cp["initial_set"]["lower"]), _floats(cp["initial_set"]["upper"]))
    partition = None
    if cp.has_section("partition"):
        p = cp["partition"]
        blocks = [int(b) for b in p.get("blocks", str(n)).split(",")]
        local = [v.strip() for v in p.get("local_norms", "inf").split(",")]
        if len(local) == 1:
            local = local * len(blocks)
        partition = Partition(blocks, local, p.get("network_norm", "inf").strip())
    for i, txt in enumerate(texts):
        try:
            parse_expression(txt, n)
        except ExprSyntaxError as exc:
            raise ExprSyntaxError(f"f{i + 1}: {exc.args[0].rsplit(' at byte', 1)[0]}",
                                  exc.offset, txt) from None
    system = build_system(texts, bps, partition, K, t0)
    settings = {}
    for name in ("horizon", "sampling", "superset", "verify", "empirical"):
        if cp.has_section(name):
            settings[name] = {k: v.strip() for k, v in cp[name].items()}
    return system, settings


def load_spec(path):
    with open(path, encoding="utf-8") as fh:
        return parse_spec(fh.read(), source=str(path))
