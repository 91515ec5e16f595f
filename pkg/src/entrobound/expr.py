"""Scalar expressions in ``t, x1..xn``: parsing, evaluation, simplification
and exact symbolic differentiation.

Grammar::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := atom ('^' atom)?
    atom   := number | 't' | 'x' digits | func '(' args ')' | '(' expr ')' | '-' atom
    cond   := expr ('<'|'<='|'>'|'>=') expr          (first argument of pw only)

A ``-`` immediately followed by a number literal is read as a negative
constant, so ``-2^2`` is ``(-2)^2``.  Trees are immutable and hashable.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

__all__ = [
    "Const", "Var", "Neg", "BinOp", "Call", "Compare", "Expr",
    "ExprSyntaxError", "DomainError", "DifferentiationError",
    "parse_expression", "evaluate", "differentiate", "simplify",
    "to_string", "compile_expr", "variables", "FUNCTIONS",
]


class ExprSyntaxError(ValueError):
    """Malformed expression text.  ``offset`` is the byte offset of the fault."""

    def __init__(self, message, offset, text=""):
        self.offset = offset
        self.text = text
        super().__init__(f"{message} at byte offset {offset}")


class DomainError(ArithmeticError):
    """Evaluation produced a non-finite value (log of negative, 1/0, ...)."""


class DifferentiationError(ValueError):
    pass


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    """``index == 0`` is time ``t``; ``index >= 1`` is state ``x_index``."""
    index: int


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


@dataclass(frozen=True)
class Compare:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Const, Var, Neg, BinOp, Call, Compare]

T = Var(0)
ZERO = Const(0.0)
ONE = Const(1.0)


def _sign(u):
    # right-limit convention: sign(0) = +1
    return np.where(u >= 0, 1.0, -1.0)


# name -> (arity, numpy implementation); arity None means 2 or more
FUNCTIONS = {
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "tan": (1, np.tan),
    "exp": (1, np.exp),
    "log": (1, np.log),
    "sqrt": (1, np.sqrt),
    "tanh": (1, np.tanh),
    "abs": (1, np.abs),
    "sign": (1, _sign),
    "min": (2, np.minimum),
    "max": (2, np.maximum),
    "pw": (3, None),
}

_BINARY = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.true_divide,
    "^": np.power,
}

_COMPARE = {
    "<": np.less,
    "<=": np.less_equal,
    ">": np.greater,
    ">=": np.greater_equal,
}


# ---------------------------------------------------------------- tokenizer

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op><=|>=|[-+*/^(),<>])
""", re.VERBOSE)


def _tokenize(text):
    raw = text.encode("utf-8")
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            offset = len(text[:pos].encode("utf-8"))
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", offset, text)
        kind = m.lastgroup
        if kind != "ws":
            offset = len(text[:pos].encode("utf-8"))
            tokens.append((kind, m.group(), offset))
        pos = m.end()
    tokens.append(("end", "", len(raw)))
    return tokens


class _Parser:
    def __init__(self, text, n):
        self.text = text
        self.n = n
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, tok, offset = self.take()
        if tok != value:
            found = tok or "end of input"
            raise ExprSyntaxError(f"expected {value!r}, found {found!r}", offset, self.text)

    def error(self, message, offset=None):
        if offset is None:
            offset = self.peek()[2]
        raise ExprSyntaxError(message, offset, self.text)

    def parse(self):
        e = self.expr()
        kind, tok, offset = self.peek()
        if kind != "end":
            self.error(f"unexpected token {tok!r}")
        return e

    def expr(self):
        left = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            left = BinOp(op, left, self.term())
        return left

    def term(self):
        left = self.factor()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            left = BinOp(op, left, self.factor())
        return left

    def factor(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.atom())
        return base

    def atom(self):
        kind, tok, offset = self.take()
        if kind == "num":
            return Const(float(tok))
        if tok == "-":
            if self.peek()[0] == "num":
                return Const(-float(self.take()[1]))
            return Neg(self.atom())
        if tok == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "name":
            if tok == "t":
                return T
            m = re.fullmatch(r"x(\d+)", tok)
            if m:
                i = int(m.group(1))
                if not 1 <= i <= self.n:
                    self.error(f"variable {tok} out of range for dimension {self.n}", offset)
                return Var(i)
            if tok in FUNCTIONS:
                return self.call(tok, offset)
            self.error(f"unknown identifier {tok!r}", offset)
        self.error(f"unexpected token {tok or 'end of input'!r}", offset)

    def call(self, name, offset):
        self.expect("(")
        if name == "pw":
            args = [self.cond()]
        else:
            args = [self.expr()]
        while self.peek()[1] == ",":
            self.take()
            args.append(self.expr())
        self.expect(")")
        arity = FUNCTIONS[name][0]
        if name in ("min", "max"):
            if len(args) < 2:
                self.error(f"{name} needs at least two arguments", offset)
            node = Call(name, (args[0], args[1]))
            for a in args[2:]:
                node = Call(name, (node, a))
            return node
        if len(args) != arity:
            self.error(f"{name} takes {arity} argument(s), got {len(args)}", offset)
        return Call(name, tuple(args))

    def cond(self):
        left = self.expr()
        kind, tok, offset = self.take()
        if tok not in _COMPARE:
            self.error("pw condition needs a comparison (<, <=, >, >=)", offset)
        return Compare(tok, left, self.expr())


def parse_expression(text: str, n: int) -> Expr:
    """Parse ``text`` into an expression tree over ``t, x1..xn``."""
    return _Parser(text, n).parse()


# ----------------------------------------------------------------- printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def _prec(e):
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return 3
    if isinstance(e, Const) and e.value < 0:
        return 3
    return 5


def _fmt_const(v):
    if v == int(v) and abs(v) < 1e15:
        return f"{int(v)}" if v != 0 or math.copysign(1, v) > 0 else "0"
    return repr(float(v))


def to_string(e: Expr) -> str:
    """Render an expression; ``parse_expression(to_string(e))`` rebuilds ``e``."""
    if isinstance(e, Const):
        return _fmt_const(e.value)
    if isinstance(e, Var):
        return "t" if e.index == 0 else f"x{e.index}"
    if isinstance(e, Neg):
        inner = to_string(e.arg)
        # a bare literal after '-' would fold into a negative constant
        if isinstance(e.arg, (BinOp, Neg, Const)):
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, Call):
        return f"{e.name}({', '.join(to_string(a) for a in e.args)})"
    if isinstance(e, Compare):
        return f"{to_string(e.left)} {e.op} {to_string(e.right)}"
    p = _PREC[e.op]
    left, right = to_string(e.left), to_string(e.right)
    if e.op == "^":
        if _prec(e.left) < 5:
            left = f"({left})"
        if _prec(e.right) < 5:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(e.left) < p:
        left = f"({left})"
    if _prec(e.right) <= p:
        right = f"({right})"
    return f"{left} {e.op} {right}"


def variables(e: Expr) -> set:
    """Indices of the variables appearing in ``e`` (0 is ``t``)."""
    if isinstance(e, Var):
        return {e.index}
    if isinstance(e, Const):
        return set()
    if isinstance(e, Neg):
        return variables(e.arg)
    if isinstance(e, Call):
        return set().union(*(variables(a) for a in e.args))
    return variables(e.left) | variables(e.right)


# --------------------------------------------------------------- evaluation

def _eval(e, t, x):
    if isinstance(e, Const):
        return np.float64(e.value)
    if isinstance(e, Var):
        return np.float64(t) if e.index == 0 else np.float64(x[e.index - 1])
    if isinstance(e, Neg):
        return -_eval(e.arg, t, x)
    if isinstance(e, BinOp):
        return _BINARY[e.op](_eval(e.left, t, x), _eval(e.right, t, x))
    if isinstance(e, Compare):
        return _COMPARE[e.op](_eval(e.left, t, x), _eval(e.right, t, x))
    if e.name == "pw":
        branch = e.args[1] if _eval(e.args[0], t, x) else e.args[2]
        return _eval(branch, t, x)
    return FUNCTIONS[e.name][1](*(_eval(a, t, x) for a in e.args))


def evaluate(e: Expr, t: float, x) -> float:
    """Evaluate at one point.  Raises DomainError on a non-finite result."""
    with np.errstate(all="ignore"):
        value = _eval(e, t, x)
    if not np.isfinite(value):
        raise DomainError(f"{to_string(e)} is not finite at t={t}, x={list(x)}")
    return float(value)


def _codegen(e, names):
    if isinstance(e, Const):
        # numpy scalars so 1/0 gives inf rather than raising
        return f"_F({float(e.value)!r})"
    if isinstance(e, Var):
        return names[e.index]
    if isinstance(e, Neg):
        return f"(-{_codegen(e.arg, names)})"
    if isinstance(e, BinOp):
        if e.op == "^":
            return f"_pow({_codegen(e.left, names)}, {_codegen(e.right, names)})"
        return f"({_codegen(e.left, names)} {e.op} {_codegen(e.right, names)})"
    if isinstance(e, Compare):
        return f"_c[{e.op!r}]({_codegen(e.left, names)}, {_codegen(e.right, names)})"
    args = [_codegen(a, names) for a in e.args]
    if e.name == "pw":
        return f"_where({args[0]}, {args[1]}, {args[2]})"
    return f"_f[{e.name!r}]({', '.join(args)})"


def compile_expr(exprs, n: int) -> Callable:
    """Compile a list of expressions into one numpy-vectorized function.

    The returned ``fn(t, x, out)`` takes ``x`` with leading axis of length
    ``n`` (any trailing shape, ``t`` broadcastable against it) and writes
    expression ``k`` into ``out[k]``.  Non-finite results are written
    as-is; callers check.  Piecewise branches are both evaluated and
    merged with ``where``.
    """
    names = ["t"] + [f"x{i}" for i in range(1, n + 1)]
    lines = ["def _fn(t, x, out):"]
    if n:
        lines.append(f"    {', '.join(names[1:])}{',' if n == 1 else ''} = x")
    for k, e in enumerate(exprs):
        lines.append(f"    out[{k}] = {_codegen(e, names)}")
    lines.append("    return out")
    src = "\n".join(lines) + "\n"
    env = {
        "_F": np.float64,
        "_pow": np.power,
        "_c": _COMPARE,
        "_f": {k: v[1] for k, v in FUNCTIONS.items() if v[1] is not None},
        "_where": np.where,
    }
    exec(compile(src, "<entrobound-expr>", "exec"), env)
    inner = env["_fn"]

    def fn(t, x, out=None):
        if out is None:
            shape = np.broadcast_shapes(np.shape(x)[1:], np.shape(t))
            out = np.empty((len(exprs),) + shape)
        with np.errstate(all="ignore"):
            return inner(np.float64(t) if np.ndim(t) == 0 else t, x, out)

    fn.source = src
    # fast path for hot loops: caller supplies out and manages errstate
    fn.raw = inner
    return fn


# ----------------------------------------------------------- simplification

def _is(e, v):
    return isinstance(e, Const) and e.value == v


def _fold(e):
    """Fold a node whose children are already simplified."""
    if isinstance(e, Neg):
        a = e.arg
        if isinstance(a, Const):
            return Const(-a.value)
        if isinstance(a, Neg):
            return a.arg
        return e
    if isinstance(e, BinOp):
        a, b, op = e.left, e.right, e.op
        if isinstance(a, Const) and isinstance(b, Const):
            with np.errstate(all="ignore"):
                v = _BINARY[op](np.float64(a.value), np.float64(b.value))
            if np.isfinite(v):
                return Const(float(v))
            return e
        if op == "+":
            if _is(a, 0):
                return b
            if _is(b, 0):
                return a
        elif op == "-":
            if _is(b, 0):
                return a
            if _is(a, 0):
                return _fold(Neg(b))
        elif op == "*":
            if _is(a, 0) or _is(b, 0):
                return ZERO
            if _is(a, 1):
                return b
            if _is(b, 1):
                return a
        elif op == "/":
            if _is(a, 0):
                return ZERO
            if _is(b, 1):
                return a
        elif op == "^":
            if _is(b, 1):
                return a
            if _is(b, 0):
                return ONE
        return e
    if isinstance(e, Call):
        if e.name == "pw":
            c = e.args[0]
            if isinstance(c.left, Const) and isinstance(c.right, Const):
                return e.args[1] if _COMPARE[c.op](c.left.value, c.right.value) else e.args[2]
            if e.args[1] == e.args[2]:
                return e.args[1]
            return e
        if all(isinstance(a, Const) for a in e.args):
            with np.errstate(all="ignore"):
                v = FUNCTIONS[e.name][1](*(np.float64(a.value) for a in e.args))
            if np.isfinite(v):
                return Const(float(v))
        return e
    return e


def simplify(e: Expr) -> Expr:
    """Fold constant subtrees and apply the 0/1 identities, bottom-up."""
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, Neg):
        return _fold(Neg(simplify(e.arg)))
    if isinstance(e, BinOp):
        return _fold(BinOp(e.op, simplify(e.left), simplify(e.right)))
    if isinstance(e, Compare):
        return Compare(e.op, simplify(e.left), simplify(e.right))
    return _fold(Call(e.name, tuple(simplify(a) for a in e.args)))


# ----------------------------------------------------------- differentiation

def _d(e, v):
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.index == v else ZERO
    if isinstance(e, Neg):
        return Neg(_d(e.arg, v))
    if isinstance(e, BinOp):
        a, b = e.left, e.right
        da, db = _d(a, v), _d(b, v)
        if e.op in "+-":
            return BinOp(e.op, da, db)
        if e.op == "*":
            return BinOp("+", BinOp("*", da, b), BinOp("*", a, db))
        if e.op == "/":
            num = BinOp("-", BinOp("*", da, b), BinOp("*", a, db))
            return BinOp("/", num, BinOp("^", b, Const(2.0)))
        # power
        if v not in variables(b):
            exponent = simplify(BinOp("-", b, ONE))
            return BinOp("*", BinOp("*", b, BinOp("^", a, exponent)), da)
        return BinOp("*", e, BinOp("+", BinOp("*", db, Call("log", (a,))),
                                   BinOp("/", BinOp("*", b, da), a)))
    if isinstance(e, Compare):
        raise DifferentiationError("comparisons cannot be differentiated")
    name, args = e.name, e.args
    if name == "pw":
        return Call("pw", (args[0], _d(args[1], v), _d(args[2], v)))
    if name in ("min", "max"):
        op = "<" if name == "min" else ">"
        a, b = args
        return Call("pw", (Compare(op, a, b), _d(a, v), _d(b, v)))
    (u,) = args
    du = _d(u, v)
    if name == "sin":
        outer = Call("cos", (u,))
    elif name == "cos":
        outer = Neg(Call("sin", (u,)))
    elif name == "tan":
        outer = BinOp("/", ONE, BinOp("^", Call("cos", (u,)), Const(2.0)))
    elif name == "exp":
        outer = e
    elif name == "log":
        return BinOp("/", du, u)
    elif name == "sqrt":
        return BinOp("/", du, BinOp("*", Const(2.0), e))
    elif name == "tanh":
        outer = BinOp("-", ONE, BinOp("^", e, Const(2.0)))
    elif name == "abs":
        outer = Call("sign", (u,))
    elif name == "sign":
        return ZERO
    else:  # pragma: no cover - FUNCTIONS and this table are kept in sync
        raise DifferentiationError(f"no derivative rule for {name}")
    return BinOp("*", outer, du)


def differentiate(e: Expr, var: int) -> Expr:
    """Exact partial derivative with respect to ``x_var`` (``var=0``: ``t``).

    Kinks (abs, min, max, pw) take the active branch; ``abs`` at zero uses
    the right derivative ``sign(0) = 1``.
    """
    return simplify(_d(e, var))
