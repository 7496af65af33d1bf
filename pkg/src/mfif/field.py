"""Scalar fields on a box: parsed expressions, constants and sampled grids.

Expression grammar (highest precedence first)::

    atom    := number | name | name '(' expr ')' | '(' expr ')'
    power   := atom ['^' unary]          (right associative)
    unary   := '-' unary | '+' unary | power
    term    := unary (('*' | '/') unary)*
    expr    := term (('+' | '-') term)*

Variables are ``x1`` .. ``x9``; constants ``pi`` and ``e``; functions
``sin cos exp abs sqrt log``, each of one argument.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .net import DomainError, Net


class ParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at offset {position}")
        self.position = position


class EvalError(ArithmeticError):
    pass


FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "abs": np.abs,
    "sqrt": np.sqrt,
    "log": np.log,
}
CONSTANTS = {"pi": math.pi, "e": math.e}
_VAR = re.compile(r"x([1-9])$")

# precedence levels used by the pretty printer
_P_ADD, _P_MUL, _P_NEG, _P_POW, _P_ATOM = 1, 2, 3, 4, 5


# --- expression tree -------------------------------------------------------


class Node:
    prec = _P_ATOM

    def eval(self, env):
        raise NotImplementedError

    def max_var(self) -> int:
        return 0

    def __str__(self):
        return self.pretty()


@dataclass(frozen=True, eq=True)
class Num(Node):
    value: float

    def eval(self, env):
        return self.value

    def pretty(self):
        return repr(float(self.value))


@dataclass(frozen=True, eq=True)
class Const(Node):
    name: str

    def eval(self, env):
        return CONSTANTS[self.name]

    def pretty(self):
        return self.name


@dataclass(frozen=True, eq=True)
class Var(Node):
    index: int  # 1-based

    def eval(self, env):
        if self.index > len(env):
            raise EvalError(f"variable x{self.index} not available in {len(env)}-d evaluation")
        return env[self.index - 1]

    def max_var(self):
        return self.index

    def pretty(self):
        return f"x{self.index}"


@dataclass(frozen=True, eq=True)
class Neg(Node):
    operand: Node
    prec = _P_NEG

    def eval(self, env):
        return -_checked(self.operand, env)

    def max_var(self):
        return self.operand.max_var()

    def pretty(self):
        s = self.operand.pretty()
        if self.operand.prec < _P_NEG:
            s = f"({s})"
        return f"-{s}"


_BINOPS = {"+": (_P_ADD, np.add), "-": (_P_ADD, np.subtract),
           "*": (_P_MUL, np.multiply), "/": (_P_MUL, np.divide),
           "^": (_P_POW, np.power)}


@dataclass(frozen=True, eq=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node

    @property
    def prec(self):
        return _BINOPS[self.op][0]

    def eval(self, env):
        lhs = _checked(self.left, env)
        rhs = _checked(self.right, env)
        fn = _BINOPS[self.op][1]
        if self.op == "^":
            lhs = np.asarray(lhs, dtype=float)
        return fn(lhs, rhs)

    def max_var(self):
        return max(self.left.max_var(), self.right.max_var())

    def pretty(self):
        p = self.prec
        ls, rs = self.left.pretty(), self.right.pretty()
        if self.op == "^":
            if self.left.prec <= _P_POW:
                ls = f"({ls})"
            if self.right.prec < _P_NEG:
                rs = f"({rs})"
        else:
            if self.left.prec < p:
                ls = f"({ls})"
            if self.right.prec <= p:
                rs = f"({rs})"
        return f"{ls} {self.op} {rs}"


@dataclass(frozen=True, eq=True)
class Call(Node):
    name: str
    arg: Node

    def eval(self, env):
        return FUNCTIONS[self.name](_checked(self.arg, env))

    def max_var(self):
        return self.arg.max_var()

    def pretty(self):
        return f"{self.name}({self.arg.pretty()})"


def _checked(node: Node, env):
    with np.errstate(all="ignore"):
        val = node.eval(env)
    if not np.all(np.isfinite(val)):
        raise EvalError(f"non-finite value in subexpression '{node.pretty()}'")
    return val


# --- parser ----------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str):
    pos = 0
    toks = []
    n = len(text)
    while pos < n:
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ParseError(f"unexpected character {text[bad]!r}", bad)
        kind = m.lastgroup
        start = m.start(kind)
        toks.append((kind, m.group(kind), start))
        pos = m.end()
    toks.append(("end", "", n))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.take()
        if val != value:
            raise ParseError(f"expected {value!r}, found {val or 'end of input'!r}", pos)

    def parse(self) -> Node:
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            _, op, pos = self.take()
            rhs = self.unary()
            if op == "/" and _is_const_zero(rhs):
                raise ParseError("division by constant zero", pos)
            node = BinOp(op, node, rhs)
        return node

    def unary(self):
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return Neg(self.unary())
        if kind == "op" and val == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        kind, val, pos = self.peek()
        if kind == "op" and val == "^":
            self.take()
            exponent = self.unary()
            if _is_const_zero(base) and _const_value(exponent) is not None and _const_value(exponent) < 0:
                raise ParseError("zero raised to a negative power", pos)
            return BinOp("^", base, exponent)
        return base

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if self.peek()[1] == "(":
                if val not in FUNCTIONS:
                    raise ParseError(f"unknown function {val!r}", pos)
                self.take()
                arg = self.expr()
                nkind, nval, npos = self.peek()
                if nval == ",":
                    raise ParseError(f"function {val!r} takes exactly one argument", npos)
                self.expect(")")
                return Call(val, arg)
            if val in FUNCTIONS:
                raise ParseError(f"function {val!r} needs an argument list", pos)
            if val in CONSTANTS:
                return Const(val)
            m = _VAR.match(val)
            if m:
                return Var(int(m.group(1)))
            raise ParseError(f"unknown identifier {val!r}", pos)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ParseError(f"unexpected {val or 'end of input'!r}", pos)


def _const_value(node: Node):
    if node.max_var() != 0:
        return None
    try:
        return float(_checked(node, ()))
    except EvalError:
        return None


def _is_const_zero(node: Node) -> bool:
    v = _const_value(node)
    return v is not None and v == 0.0


# --- fields ----------------------------------------------------------------


class Field:
    """A scalar function of ``q`` variables.

    ``evaluate`` takes one broadcastable coordinate array per axis and returns
    the broadcast result; calling the field on a single point returns a float.
    """

    dim = 0  # number of variables actually referenced

    def evaluate(self, *coords) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return float(self.evaluate(*x))

    def on_grid(self, axes: Sequence[np.ndarray]) -> np.ndarray:
        """Values on the tensor grid spanned by ``axes``."""
        q = len(axes)
        coords = [np.asarray(a, dtype=float).reshape([-1 if j == k else 1 for j in range(q)])
                  for k, a in enumerate(axes)]
        vals = self.evaluate(*coords)
        return np.broadcast_to(vals, tuple(len(a) for a in axes)).astype(float, copy=True)

    def restrict(self, axis: int, fixed: Sequence[float]) -> "Field":
        """One-variable field ``t -> self(fixed with coordinate `axis` replaced by t)``."""
        return RestrictedField(self, axis, tuple(float(v) for v in fixed))


class ExprField(Field):
    def __init__(self, tree: Node, text: str | None = None):
        self.tree = tree
        self.text = text if text is not None else tree.pretty()
        self.dim = tree.max_var()

    def evaluate(self, *coords):
        if len(coords) < self.dim:
            raise EvalError(f"expression uses x{self.dim} but only {len(coords)} coordinates given")
        return np.asarray(_checked(self.tree, coords), dtype=float)

    def pretty(self) -> str:
        return self.tree.pretty()

    def __repr__(self):
        return f"ExprField({self.text!r})"


class ConstantField(Field):
    def __init__(self, value: float):
        self.value = float(value)

    def evaluate(self, *coords):
        if coords:
            return np.full(np.broadcast_shapes(*(np.shape(c) for c in coords)), self.value)
        return np.asarray(self.value)

    def __repr__(self):
        return f"ConstantField({self.value})"


class RestrictedField(Field):
    def __init__(self, base: Field, axis: int, fixed: tuple[float, ...]):
        self.base = base
        self.axis = axis
        self.fixed = fixed
        self.dim = 1

    def evaluate(self, *coords):
        (t,) = coords[:1]
        args = [np.asarray(v) for v in self.fixed]
        args[self.axis] = np.asarray(t, dtype=float)
        out = self.base.evaluate(*args)
        return np.broadcast_to(out, np.shape(t)).astype(float)


def parse(text: str) -> ExprField:
    if not text or not text.strip():
        raise ParseError("empty expression", 0)
    return ExprField(_Parser(text).parse(), text)


def as_field(obj) -> Field:
    """Coerce a number, expression string or Field into a Field."""
    if isinstance(obj, Field):
        return obj
    if isinstance(obj, (int, float)) and not isinstance(obj, bool):
        return ConstantField(obj)
    if isinstance(obj, str):
        tree = _Parser(obj).parse() if obj.strip() else None
        if tree is None:
            raise ParseError("empty expression", 0)
        if isinstance(tree, Num):
            return ConstantField(tree.value)
        return ExprField(tree, obj)
    raise TypeError(f"cannot make a field from {type(obj).__name__}")


# --- sampled surfaces ------------------------------------------------------


@dataclass(frozen=True)
class SampledSurface:
    """Values on a tensor grid of ``[0, 1]^q`` (normalised coordinates).

    ``values`` is a C-ordered array of shape ``dims``; ``axes`` holds the
    normalised sample coordinates per axis; ``domain`` is the original box.
    """

    values: np.ndarray
    axes: tuple[np.ndarray, ...]
    domain: tuple[tuple[float, float], ...]
    level: int | None = None

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=float)
        axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        if vals.shape != tuple(len(a) for a in axes):
            raise ValueError(f"values shape {vals.shape} does not match axes {[len(a) for a in axes]}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("surface values must be finite")
        if len(self.domain) != len(axes):
            raise ValueError("domain and axes disagree on dimension")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "domain", tuple((float(a), float(b)) for a, b in self.domain))

    @property
    def dims(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def q(self) -> int:
        return self.values.ndim

    @classmethod
    def uniform(cls, values, domain=None, level=None) -> "SampledSurface":
        values = np.asarray(values, dtype=float)
        axes = tuple(np.linspace(0.0, 1.0, n) for n in values.shape)
        if domain is None:
            domain = [(0.0, 1.0)] * values.ndim
        return cls(values, axes, domain, level)

    @classmethod
    def from_field(cls, f: Field, n, domain=None) -> "SampledSurface":
        """Sample ``f`` (given in original coordinates) on a uniform grid."""
        n = [n] if np.isscalar(n) else list(n)
        if domain is None:
            domain = [(0.0, 1.0)] * len(n)
        axes = [np.linspace(0.0, 1.0, k) for k in n]
        orig = [lo + a * (hi - lo) for a, (lo, hi) in zip(axes, domain)]
        return cls(f.on_grid(orig), tuple(axes), domain)

    def is_uniform(self, tol: float = 1e-12) -> bool:
        return all(np.allclose(a, np.linspace(0.0, 1.0, len(a)), rtol=0, atol=tol) for a in self.axes)


class GridField(Field):
    """Multilinear interpolation of a sampled surface, in original coordinates."""

    def __init__(self, surface: SampledSurface):
        self.surface = surface
        self.dim = surface.q

    def evaluate(self, *coords):
        s = self.surface
        if len(coords) != s.q:
            raise EvalError(f"sampled field needs {s.q} coordinates, got {len(coords)}")
        coords = np.broadcast_arrays(*[np.asarray(c, dtype=float) for c in coords])
        shape = coords[0].shape
        lower, frac = [], []
        for k, c in enumerate(coords):
            lo, hi = s.domain[k]
            t = (c.reshape(-1) - lo) / (hi - lo)
            if np.any(t < -1e-12) or np.any(t > 1 + 1e-12):
                raise DomainError(f"coordinate {k + 1} outside the sampled box")
            t = np.clip(t, 0.0, 1.0)
            ax = s.axes[k]
            j = np.clip(np.searchsorted(ax, t, side="right") - 1, 0, len(ax) - 2)
            w = (t - ax[j]) / (ax[j + 1] - ax[j])
            # snap onto nodes so stored samples come back exactly
            w = np.where(w < 1e-12, 0.0, np.where(w > 1 - 1e-12, 1.0, w))
            lower.append(j)
            frac.append(w)
        out = np.zeros(lower[0].shape)
        q = s.q
        for corner in range(1 << q):
            idx = []
            weight = np.ones_like(out)
            for k in range(q):
                bit = (corner >> k) & 1
                idx.append(lower[k] + bit)
                weight = weight * (frac[k] if bit else 1.0 - frac[k])
            out += weight * s.values[tuple(idx)]
        return out.reshape(shape)


# --- norms -----------------------------------------------------------------


def cell_sample_axes(net: Net, k: int, samples_per_cell: int) -> np.ndarray:
    """Normalised sample lattice of axis ``k``, shape ``(M_k, samples_per_cell)``."""
    knots = net.knot_coords(k)
    s = np.linspace(0.0, 1.0, samples_per_cell)
    return knots[:-1, None] + s[None, :] * np.diff(knots)[:, None]


def sup_norm(field: Field, net: Net, samples_per_cell: int = 9):
    """Sampled ``max |field|`` over the box and per cell of ``net``.

    Returns ``(global_max, cell_max)`` with ``cell_max`` of shape ``net.Ms``.
    Lattice sampling under-estimates the true supremum of non-monotone fields.
    """
    if samples_per_cell < 2:
        raise ValueError("need at least 2 samples per cell and axis")
    field = as_field(field)
    if isinstance(field, ConstantField):
        table = np.full(net.Ms, abs(field.value))
        return abs(field.value), table
    lattices = [cell_sample_axes(net, k, samples_per_cell) for k in range(net.q)]
    orig = [net.denormalize_axis(k, lat.reshape(-1)) for k, lat in enumerate(lattices)]
    vals = np.abs(field.on_grid(orig))
    shape = []
    for M in net.Ms:
        shape += [M, samples_per_cell]
    vals = vals.reshape(shape)
    table = vals.max(axis=tuple(range(1, 2 * net.q, 2)))
    return float(table.max()), table
