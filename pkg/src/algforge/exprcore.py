"""Symbolic scalar expressions over named coordinate spaces.

Every smooth function in the toolkit (anchor components, structure
functions, connection coefficients, field configurations, gauge
parameters) is an ``Expr`` tree over a ``VarSpace``.  Trees are
immutable after construction, differentiation and evaluation are pure,
and equality of expressions is decided numerically at seeded sample
points (default tolerance 1e-10) rather than by canonical forms.
"""

from __future__ import annotations

import hashlib
import math
import re
import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "VarSpace",
    "EvalEnv",
    "Expr",
    "Const",
    "Var",
    "Sum",
    "Prod",
    "Quot",
    "Neg",
    "Pow",
    "Fun",
    "ExprError",
    "ParseError",
    "DomainError",
    "add",
    "neg",
    "mul",
    "quot",
    "power",
    "sin",
    "cos",
    "exp",
    "ln",
    "to_string",
    "parse_expr",
    "diff",
    "simplify",
    "evaluate",
    "eval_batch",
    "compile_batch",
    "substitute",
    "embed",
    "sample_points",
    "exprs_equal_sampled",
    "mat_mul",
    "mat_det",
    "mat_inv",
    "DEFAULT_SEED",
    "DEFAULT_BOX",
    "DEFAULT_POINTS",
    "ZERO",
    "ONE",
]

DEFAULT_SEED = 0xC0FFEE
DEFAULT_BOX = (-1.0, 1.0)
DEFAULT_POINTS = 100

_FUNCTIONS = {"sin": math.sin, "cos": math.cos, "exp": math.exp, "ln": math.log}
_NP_FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "ln": np.log}


class ExprError(Exception):
    pass


class ParseError(ExprError):
    """Syntax or identifier error; carries the 0-based offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


class DomainError(ExprError):
    """Evaluation left the domain (ln of non-positive, division by zero)."""


@dataclass(frozen=True)
class VarSpace:
    """Ordered, distinct coordinate names; index of a name is stable."""

    names: tuple[str, ...]

    def __post_init__(self):
        if not self.names:
            raise ValueError("VarSpace needs at least one coordinate")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate coordinate names: {self.names}")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(self.names)})

    @property
    def dim(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown coordinate {name!r} in space {self.names}") from None

    def var(self, name: str) -> "Expr":
        return Var(self, self.index(name))

    def vars(self) -> tuple["Expr", ...]:
        return tuple(Var(self, i) for i in range(self.dim))

    @staticmethod
    def of(*names: str) -> "VarSpace":
        return VarSpace(tuple(names))


@dataclass(frozen=True)
class EvalEnv:
    """Total assignment of one real per coordinate of a VarSpace."""

    space: VarSpace
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != self.space.dim:
            raise ValueError(
                f"environment has {len(self.values)} values for "
                f"{self.space.dim} coordinates"
            )
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))


def _join_space(a, b):
    if a is None:
        return b
    if b is None or a is b or a == b:
        return a
    raise ValueError(f"mixing expressions over different spaces: {a.names} vs {b.names}")


class Expr:
    """Immutable expression tree node.  Use operators to combine."""

    __slots__ = ("space", "_key", "_hash", "_fp")

    def _children(self) -> tuple["Expr", ...]:
        return ()

    def key(self):
        k = getattr(self, "_key", None)
        if k is None:
            k = self._make_key()
            object.__setattr__(self, "_key", k)
        return k

    def fp(self) -> int:
        """Deterministic structural fingerprint (stable across processes,
        unlike str hashes); used to order terms canonically."""
        f = getattr(self, "_fp", None)
        if f is None:
            h = hashlib.blake2b(digest_size=8)
            if isinstance(self, Const):
                h.update(b"c" + struct.pack("<d", self.value))
            elif isinstance(self, Var):
                h.update(b"v" + struct.pack("<i", self.index))
                h.update("\x1f".join(self.space.names).encode())
            elif isinstance(self, Pow):
                h.update(b"^" + struct.pack("<i", self.exponent))
                h.update(struct.pack("<Q", self.base.fp()))
            elif isinstance(self, Fun):
                h.update(b"f" + self.fname.encode())
                h.update(struct.pack("<Q", self.arg.fp()))
            else:
                h.update(self._tag.encode() if isinstance(self, _NAry) else type(self).__name__.encode())
                for c in self._children():
                    h.update(struct.pack("<Q", c.fp()))
            f = int.from_bytes(h.digest(), "little")
            object.__setattr__(self, "_fp", f)
        return f

    def _make_key(self):  # pragma: no cover - overridden
        raise NotImplementedError

    def __hash__(self):
        return self.fp()

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Expr):
            return NotImplemented
        if self.fp() != other.fp():
            return False
        return self.key() == other.key()

    # arithmetic sugar; constants fold so table-building stays compact
    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return add(self, neg(_coerce(other)))

    def __rsub__(self, other):
        return add(_coerce(other), neg(self))

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __truediv__(self, other):
        return quot(self, _coerce(other))

    def __rtruediv__(self, other):
        return quot(_coerce(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        if not isinstance(k, int):
            raise TypeError("only integer powers are supported")
        return power(self, k)

    def __str__(self):
        return to_string(self)

    def __repr__(self):
        return f"Expr[{to_string(self)}]"

    def eval(self, env) -> float:
        return evaluate(self, env)

    def is_zero(self) -> bool:
        return isinstance(self, Const) and self.value == 0.0

    def is_one(self) -> bool:
        return isinstance(self, Const) and self.value == 1.0


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value: float):
        v = float(value)
        if v == 0.0:
            v = 0.0  # normalise -0.0 so printing stays inside the grammar
        object.__setattr__(self, "value", v)
        object.__setattr__(self, "space", None)

    def _make_key(self):
        return ("c", self.value)


class Var(Expr):
    __slots__ = ("index",)

    def __init__(self, space: VarSpace, index: int):
        if not 0 <= index < space.dim:
            raise IndexError(f"variable index {index} out of range for {space.names}")
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "space", space)

    @property
    def name(self) -> str:
        return self.space.names[self.index]

    def _make_key(self):
        # the space is part of the identity: index 0 of the base chart is
        # not index 0 of the jet space, and global caches rely on keys
        return ("v", self.index, self.space.names)


class _NAry(Expr):
    __slots__ = ("args",)
    _tag = "?"

    def __init__(self, args: Sequence[Expr]):
        args = tuple(args)
        if len(args) < 2:
            raise ValueError(f"{type(self).__name__} needs >= 2 operands")
        sp = None
        for a in args:
            sp = _join_space(sp, a.space)
        object.__setattr__(self, "args", args)
        object.__setattr__(self, "space", sp)

    def _children(self):
        return self.args

    def _make_key(self):
        return (self._tag,) + tuple(a.key() for a in self.args)


class Sum(_NAry):
    __slots__ = ()
    _tag = "+"


class Prod(_NAry):
    __slots__ = ()
    _tag = "*"


class Quot(Expr):
    __slots__ = ("num", "den")

    def __init__(self, num: Expr, den: Expr):
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)
        object.__setattr__(self, "space", _join_space(num.space, den.space))

    def _children(self):
        return (self.num, self.den)

    def _make_key(self):
        return ("/", self.num.key(), self.den.key())


class Neg(Expr):
    __slots__ = ("arg",)

    def __init__(self, arg: Expr):
        object.__setattr__(self, "arg", arg)
        object.__setattr__(self, "space", arg.space)

    def _children(self):
        return (self.arg,)

    def _make_key(self):
        return ("-", self.arg.key())


class Pow(Expr):
    """Integer power; negative exponents are rewritten to quotients."""

    __slots__ = ("base", "exponent")

    def __init__(self, base: Expr, exponent: int):
        if exponent < 0:
            raise ValueError("Pow stores non-negative exponents only")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "exponent", int(exponent))
        object.__setattr__(self, "space", base.space)

    def _children(self):
        return (self.base,)

    def _make_key(self):
        return ("^", self.base.key(), self.exponent)


class Fun(Expr):
    __slots__ = ("fname", "arg")

    def __init__(self, fname: str, arg: Expr):
        if fname not in _FUNCTIONS:
            raise ValueError(f"unknown function {fname!r}")
        object.__setattr__(self, "fname", fname)
        object.__setattr__(self, "arg", arg)
        object.__setattr__(self, "space", arg.space)

    def _children(self):
        return (self.arg,)

    def _make_key(self):
        return ("f", self.fname, self.arg.key())


ZERO = Const(0.0)
ONE = Const(1.0)


def _coerce(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, float)):
        return Const(x)
    raise TypeError(f"cannot use {type(x).__name__} in an expression")


# ---------------------------------------------------------------------------
# smart constructors: fold the obvious cases so built tables stay small
# ---------------------------------------------------------------------------


def add(a: Expr, b: Expr) -> Expr:
    if a.is_zero():
        return b
    if b.is_zero():
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    terms = []
    for t in (a, b):
        terms.extend(t.args if isinstance(t, Sum) else (t,))
    return Sum(terms)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def mul(a: Expr, b: Expr) -> Expr:
    if a.is_zero() or b.is_zero():
        return ZERO
    if a.is_one():
        return b
    if b.is_one():
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    factors = []
    for f in (a, b):
        factors.extend(f.args if isinstance(f, Prod) else (f,))
    return Prod(factors)


def quot(a: Expr, b: Expr) -> Expr:
    if b.is_one():
        return a
    if a.is_zero() and not b.is_zero():
        return ZERO
    return Quot(a, b)


def power(a: Expr, k: int) -> Expr:
    if k == 0:
        return ONE
    if k == 1:
        return a
    if k < 0:
        return Quot(ONE, power(a, -k))
    if isinstance(a, Const):
        return Const(a.value**k)
    return Pow(a, k)


def fun(name: str, arg: Expr) -> Expr:
    return Fun(name, arg)


def sin(a) -> Expr:
    return Fun("sin", _coerce(a))


def cos(a) -> Expr:
    return Fun("cos", _coerce(a))


def exp(a) -> Expr:
    return Fun("exp", _coerce(a))


def ln(a) -> Expr:
    return Fun("ln", _coerce(a))


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[a-zA-Z_][a-zA-Z0-9_]*)
  | (?P<op>[-+*/^(),])
  | (?P<ws>\s+)
""",
    re.VERBOSE,
)


class _Tokens:
    def __init__(self, text: str):
        self.text = text
        self.items: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if m is None:
                raise ParseError(f"unexpected character {text[pos]!r}", pos)
            kind = m.lastgroup
            if kind != "ws":
                self.items.append((kind, m.group(), pos))
            pos = m.end()
        self.items.append(("eof", "", len(text)))
        self.i = 0

    def peek(self):
        return self.items[self.i]

    def next(self):
        tok = self.items[self.i]
        self.i += 1
        return tok


class _Parser:
    """Recursive descent for the fixed grammar.

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := '-' factor | power
    power  := atom ('^' unsigned-integer)?
    atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
    """

    def __init__(self, text: str, space: VarSpace):
        self.toks = _Tokens(text)
        self.space = space

    def parse(self) -> Expr:
        e = self.expr()
        kind, text, pos = self.toks.peek()
        if kind != "eof":
            raise ParseError(f"unexpected {text!r}", pos)
        return e

    def expr(self) -> Expr:
        terms = [self.term()]
        while True:
            kind, text, _ = self.toks.peek()
            if kind == "op" and text in "+-":
                self.toks.next()
                t = self.term()
                terms.append(_negated(t) if text == "-" else t)
            else:
                break
        return terms[0] if len(terms) == 1 else Sum(terms)

    def term(self) -> Expr:
        acc = self.factor()
        while True:
            kind, text, _ = self.toks.peek()
            if kind == "op" and text in "*/":
                self.toks.next()
                f = self.factor()
                if text == "/":
                    acc = Quot(acc, f)
                elif isinstance(acc, Prod):
                    acc = Prod(acc.args + (f,))
                else:
                    acc = Prod((acc, f))
            else:
                break
        return acc

    def factor(self) -> Expr:
        kind, text, _ = self.toks.peek()
        if kind == "op" and text == "-":
            self.toks.next()
            return _negated(self.factor())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        kind, text, pos = self.toks.peek()
        if kind == "op" and text == "^":
            self.toks.next()
            kind, text, pos = self.toks.next()
            if kind != "num" or not text.isdigit():
                raise ParseError("exponent must be an unsigned integer", pos)
            return Pow(base, int(text))
        return base

    def atom(self) -> Expr:
        kind, text, pos = self.toks.next()
        if kind == "num":
            return Const(float(text))
        if kind == "ident":
            nkind, ntext, _ = self.toks.peek()
            if nkind == "op" and ntext == "(":
                self.toks.next()
                args = [self.expr()]
                while True:
                    k, t, p = self.toks.next()
                    if k == "op" and t == ",":
                        args.append(self.expr())
                    elif k == "op" and t == ")":
                        break
                    else:
                        raise ParseError("expected ',' or ')'", p)
                if text not in _FUNCTIONS:
                    raise ParseError(f"unknown function {text!r}", pos)
                if len(args) != 1:
                    raise ParseError(
                        f"{text} takes 1 argument, got {len(args)}", pos
                    )
                return Fun(text, args[0])
            if text == "pi":
                return Const(math.pi)
            try:
                return self.space.var(text)
            except KeyError:
                raise ParseError(f"unknown identifier {text!r}", pos) from None
        if kind == "op" and text == "(":
            e = self.expr()
            k, t, p = self.toks.next()
            if not (k == "op" and t == ")"):
                raise ParseError("expected ')'", p)
            return e
        raise ParseError(f"expected an operand, got {text!r}" if text else "unexpected end of input", pos)


def _negated(e: Expr) -> Expr:
    # negative literals stay literals so print/parse round-trips structurally
    if isinstance(e, Const):
        return Const(-e.value)
    return Neg(e)


def parse_expr(text: str, space: VarSpace) -> Expr:
    return _Parser(text, space).parse()


# ---------------------------------------------------------------------------
# printing (round-trips through parse_expr to a structurally equal tree)
# ---------------------------------------------------------------------------


def _const_str(v: float) -> str:
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def _atom_str(e: Expr) -> str:
    """Render e as a grammar atom, adding parentheses when needed."""
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Fun):
        return f"{e.fname}({to_string(e.arg)})"
    if isinstance(e, Const) and e.value >= 0:
        return _const_str(e.value)
    return f"({to_string(e)})"


def _factor_str(e: Expr) -> str:
    if isinstance(e, Pow):
        return f"{_atom_str(e.base)}^{e.exponent}"
    if isinstance(e, (Var, Fun)):
        return _atom_str(e)
    if isinstance(e, Const) and e.value >= 0:
        return _const_str(e.value)
    return f"({to_string(e)})"


def to_string(e: Expr) -> str:
    if isinstance(e, Const):
        if e.value < 0:
            return "-" + _const_str(-e.value)
        return _const_str(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return "-" + _factor_str(e.arg)
    if isinstance(e, Sum):
        out = [to_string(e.args[0]) if not isinstance(e.args[0], Sum) else f"({to_string(e.args[0])})"]
        for t in e.args[1:]:
            if isinstance(t, Neg):
                out.append(f" - {_term_str(t.arg)}")
            elif isinstance(t, Const) and t.value < 0:
                out.append(f" - {_const_str(-t.value)}")
            else:
                out.append(f" + {_term_str(t)}")
        return "".join(out)
    if isinstance(e, Prod):
        return "*".join(_factor_str(f) for f in e.args)
    if isinstance(e, Quot):
        num = _factor_str(e.num) if not isinstance(e.num, Quot) else to_string(e.num)
        return f"{num}/{_factor_str(e.den)}"
    if isinstance(e, Pow):
        return _factor_str(e)
    if isinstance(e, Fun):
        return _atom_str(e)
    raise TypeError(f"cannot print {type(e).__name__}")


def _term_str(e: Expr) -> str:
    if isinstance(e, Sum):
        return f"({to_string(e)})"
    return to_string(e)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def evaluate(e: Expr, env) -> float:
    """IEEE double value of e at env; domain problems raise DomainError."""
    if isinstance(env, EvalEnv):
        if e.space is not None and env.space != e.space:
            raise ValueError("environment space does not match expression space")
        vals = env.values
    else:
        vals = tuple(float(v) for v in env)
    return _eval(e, vals)


def _eval(e: Expr, vals) -> float:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return vals[e.index]
    if isinstance(e, Sum):
        out = 0.0
        for a in e.args:
            out += _eval(a, vals)
        return out
    if isinstance(e, Prod):
        out = 1.0
        for a in e.args:
            out *= _eval(a, vals)
        return out
    if isinstance(e, Quot):
        den = _eval(e.den, vals)
        if den == 0.0:
            raise DomainError(f"division by zero in {to_string(e)}")
        return _eval(e.num, vals) / den
    if isinstance(e, Neg):
        return -_eval(e.arg, vals)
    if isinstance(e, Pow):
        return _eval(e.base, vals) ** e.exponent
    if isinstance(e, Fun):
        v = _eval(e.arg, vals)
        if e.fname == "ln":
            if v <= 0.0:
                raise DomainError(f"ln of non-positive value {v}")
            return math.log(v)
        return _FUNCTIONS[e.fname](v)
    raise TypeError(f"cannot evaluate {type(e).__name__}")


def eval_batch(e: Expr, cols: np.ndarray) -> np.ndarray:
    """Evaluate over many points at once; cols has shape (nvars, P).

    No domain diagnostics here (invalid operations follow numpy
    semantics); use `evaluate` when errors must be reported.
    """
    if isinstance(e, Const):
        return np.full(cols.shape[1], e.value)
    if isinstance(e, Var):
        return cols[e.index].astype(float, copy=True)
    if isinstance(e, Sum):
        out = eval_batch(e.args[0], cols)
        for a in e.args[1:]:
            out = out + eval_batch(a, cols)
        return out
    if isinstance(e, Prod):
        out = eval_batch(e.args[0], cols)
        for a in e.args[1:]:
            out = out * eval_batch(a, cols)
        return out
    if isinstance(e, Quot):
        with np.errstate(divide="ignore", invalid="ignore"):
            return eval_batch(e.num, cols) / eval_batch(e.den, cols)
    if isinstance(e, Neg):
        return -eval_batch(e.arg, cols)
    if isinstance(e, Pow):
        return eval_batch(e.base, cols) ** e.exponent
    if isinstance(e, Fun):
        with np.errstate(invalid="ignore", divide="ignore"):
            return _NP_FUNCTIONS[e.fname](eval_batch(e.arg, cols))
    raise TypeError(f"cannot evaluate {type(e).__name__}")


def compile_batch(exprs: Sequence[Expr], space: VarSpace) -> Callable[[np.ndarray], np.ndarray]:
    """Compile expressions to one vectorised function cols -> (len, P).

    Used by the flow integrator where the same right-hand sides are
    evaluated thousands of times.
    """
    lines = []

    def emit(e: Expr) -> str:
        if isinstance(e, Const):
            return repr(e.value)
        if isinstance(e, Var):
            return f"c[{e.index}]"
        if isinstance(e, Sum):
            return "(" + "+".join(emit(a) for a in e.args) + ")"
        if isinstance(e, Prod):
            return "(" + "*".join(emit(a) for a in e.args) + ")"
        if isinstance(e, Quot):
            return f"({emit(e.num)}/{emit(e.den)})"
        if isinstance(e, Neg):
            return f"(-{emit(e.arg)})"
        if isinstance(e, Pow):
            return f"({emit(e.base)}**{e.exponent})"
        if isinstance(e, Fun):
            return f"np.{'log' if e.fname == 'ln' else e.fname}({emit(e.arg)})"
        raise TypeError(type(e).__name__)

    for i, e in enumerate(exprs):
        if e.space is not None and e.space != space:
            raise ValueError("expression space mismatch in compile_batch")
        lines.append(f"    out[{i}] = {emit(e)}")
    src = (
        "def _compiled(c, np=np, empty=np.empty):\n"
        f"    out = empty(({len(exprs)}, c.shape[1]))\n" + "\n".join(lines) + "\n    return out\n"
    )
    ns = {"np": np}
    exec(src, ns)  # noqa: S102 - generated from a fixed node grammar
    return ns["_compiled"]


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------


_diff_cache: dict = {}
_simp_cache: dict = {}
_CACHE_LIMIT = 400_000


def clear_caches():
    _diff_cache.clear()
    _simp_cache.clear()


def diff(e: Expr, var: int) -> Expr:
    """Exact partial derivative d e / d x_var, simplified."""
    if e.space is not None and not 0 <= var < e.space.dim:
        raise IndexError(f"variable index {var} out of range")
    ck = (e, var)
    got = _diff_cache.get(ck)
    if got is not None:
        return got
    out = simplify(_diff(e, var, {}))
    if len(_diff_cache) < _CACHE_LIMIT:
        _diff_cache[ck] = out
    return out


def _diff(e: Expr, var: int, memo: dict) -> Expr:
    # memo keys must keep their node alive: ids are reused after gc
    got = memo.get(id(e))
    if got is not None:
        return got[1]
    if isinstance(e, Const):
        out = ZERO
    elif isinstance(e, Var):
        out = ONE if e.index == var else ZERO
    elif isinstance(e, Sum):
        out = ZERO
        for a in e.args:
            out = add(out, _diff(a, var, memo))
    elif isinstance(e, Prod):
        out = ZERO
        for i, a in enumerate(e.args):
            da = _diff(a, var, memo)
            if da.is_zero():
                continue
            rest = ONE
            for j, b in enumerate(e.args):
                if j != i:
                    rest = mul(rest, b)
            out = add(out, mul(da, rest))
    elif isinstance(e, Quot):
        du = _diff(e.num, var, memo)
        dv = _diff(e.den, var, memo)
        if dv.is_zero():
            out = quot(du, e.den)
        else:
            out = quot(add(mul(du, e.den), neg(mul(e.num, dv))), power(e.den, 2))
    elif isinstance(e, Neg):
        out = neg(_diff(e.arg, var, memo))
    elif isinstance(e, Pow):
        db = _diff(e.base, var, memo)
        out = mul(mul(Const(e.exponent), power(e.base, e.exponent - 1)), db)
    elif isinstance(e, Fun):
        da = _diff(e.arg, var, memo)
        if e.fname == "sin":
            out = mul(cos(e.arg), da)
        elif e.fname == "cos":
            out = neg(mul(sin(e.arg), da))
        elif e.fname == "exp":
            out = mul(e, da)
        else:  # ln
            out = quot(da, e.arg)
    else:
        raise TypeError(f"cannot differentiate {type(e).__name__}")
    memo[id(e)] = (e, out)
    return out


# ---------------------------------------------------------------------------
# simplification: constant folding, 0/1 rules, like-term/factor merging
# ---------------------------------------------------------------------------


def simplify(e: Expr) -> Expr:
    got = _simp_cache.get(e)
    if got is not None:
        return got
    out = _simp(e, {})
    if len(_simp_cache) < _CACHE_LIMIT:
        _simp_cache[e] = out
    return out


def _sort_key(e: Expr) -> str:
    return repr(e.key())


def _split_coef(t: Expr) -> tuple[float, Expr | None]:
    """Split a term into (numeric coefficient, remaining core)."""
    coef = 1.0
    while True:
        if isinstance(t, Neg):
            coef, t = -coef, t.arg
        elif isinstance(t, Const):
            return coef * t.value, None
        elif isinstance(t, Prod):
            rest = []
            for f in t.args:
                if isinstance(f, Const):
                    coef *= f.value
                elif isinstance(f, Neg):
                    coef = -coef
                    rest.append(f.arg)
                else:
                    rest.append(f)
            if len(rest) == len(t.args):
                return coef, t
            if not rest:
                return coef, None
            t = rest[0] if len(rest) == 1 else Prod(rest)
        else:
            return coef, t


def _with_coef(coef: float, core: Expr) -> Expr:
    if coef == 1.0:
        return core
    if coef == -1.0:
        return Neg(core)
    if isinstance(core, Prod):
        return Prod((Const(coef),) + core.args)
    return Prod((Const(coef), core))


def _simp(e: Expr, memo: dict) -> Expr:
    got = _simp_cache.get(e)
    if got is not None:
        return got
    got = memo.get(id(e))
    if got is not None:
        return got[1]
    out = _simp_node(e, memo)
    memo[id(e)] = (e, out)
    if len(_simp_cache) < _CACHE_LIMIT:
        _simp_cache[e] = out
    return out


def _simp_node(e: Expr, memo: dict) -> Expr:
    if isinstance(e, (Const, Var)):
        return e

    if isinstance(e, Sum):
        const_acc = 0.0
        groups: dict = {}
        order: list = []

        def eat(t: Expr):
            nonlocal const_acc
            st = _simp(t, memo)
            if isinstance(st, Sum):
                for a in st.args:
                    eat(a)
                return
            coef, core = _split_coef(st)
            if core is None:
                const_acc += coef
                return
            k = core.key()
            if k in groups:
                groups[k][0] += coef
            else:
                groups[k] = [coef, core]
                order.append(k)

        for t in e.args:
            eat(t)
        terms = []
        for k in sorted(order, key=lambda kk: groups[kk][1].fp()):
            coef, core = groups[k]
            if coef != 0.0:
                terms.append(_with_coef(coef, core))
        if const_acc != 0.0 or not terms:
            terms.append(Const(const_acc))
        if len(terms) == 1:
            return terms[0]
        return Sum(terms)

    if isinstance(e, Prod):
        coef = 1.0
        powers: dict = {}
        order: list = []

        def eatf(f: Expr):
            nonlocal coef
            sf = _simp(f, memo)
            if isinstance(sf, Prod):
                for a in sf.args:
                    eatf(a)
                return
            if isinstance(sf, Const):
                coef *= sf.value
                return
            if isinstance(sf, Neg):
                coef = -coef
                eatf(sf.arg)
                return
            base, k = (sf.base, sf.exponent) if isinstance(sf, Pow) else (sf, 1)
            bk = base.key()
            if bk in powers:
                powers[bk][0] += k
            else:
                powers[bk] = [k, base]
                order.append(bk)

        for f in e.args:
            eatf(f)
        if coef == 0.0:
            return ZERO
        factors = []
        for bk in sorted(order, key=lambda kk: powers[kk][1].fp()):
            k, base = powers[bk]
            if k == 0:
                continue
            factors.append(base if k == 1 else Pow(base, k))
        sign = coef < 0.0
        coef = abs(coef)
        if coef != 1.0:
            factors.insert(0, Const(coef))
        if not factors:
            body = ONE
        elif len(factors) == 1:
            body = factors[0]
        else:
            body = Prod(factors)
        return Neg(body) if sign else body

    if isinstance(e, Quot):
        num = _simp(e.num, memo)
        den = _simp(e.den, memo)
        sign = False
        if isinstance(num, Neg):
            sign, num = not sign, num.arg
        if isinstance(den, Neg):
            sign, den = not sign, den.arg
        if num.is_zero():
            return ZERO
        out = None
        if isinstance(den, Const):
            if den.value == 0.0:
                out = Quot(num, den)  # keep; evaluation reports the error
            else:
                out = _simp(mul(Const(1.0 / den.value), num), memo)
        elif num.key() == den.key():
            out = ONE
        else:
            nb, nk = (num.base, num.exponent) if isinstance(num, Pow) else (num, 1)
            db, dk = (den.base, den.exponent) if isinstance(den, Pow) else (den, 1)
            if nb.key() == db.key() and nk >= dk:
                out = _simp(power(nb, nk - dk), memo)
            else:
                out = Quot(num, den)
        if not sign or out.is_zero():
            return out
        return Const(-out.value) if isinstance(out, Const) else Neg(out)

    if isinstance(e, Neg):
        a = _simp(e.arg, memo)
        if isinstance(a, Const):
            return Const(-a.value)
        if isinstance(a, Neg):
            return a.arg
        return Neg(a)

    if isinstance(e, Pow):
        b = _simp(e.base, memo)
        k = e.exponent
        if k == 0:
            return ONE
        if k == 1:
            return b
        if isinstance(b, Const):
            return Const(b.value**k)
        if isinstance(b, Pow):
            return Pow(b.base, b.exponent * k)
        if isinstance(b, Neg):
            inner = Pow(b.arg, k) if k > 1 else b.arg
            return inner if k % 2 == 0 else Neg(inner)
        return Pow(b, k)

    if isinstance(e, Fun):
        a = _simp(e.arg, memo)
        if isinstance(a, Const):
            try:
                v = _FUNCTIONS[e.fname](a.value) if not (e.fname == "ln" and a.value <= 0) else None
            except (ValueError, OverflowError):
                v = None
            if v is not None and math.isfinite(v):
                return Const(v)
        if isinstance(a, Neg):
            if e.fname == "sin":
                return Neg(Fun("sin", a.arg))
            if e.fname == "cos":
                return Fun("cos", a.arg)
        return Fun(e.fname, a)

    raise TypeError(f"cannot simplify {type(e).__name__}")


# ---------------------------------------------------------------------------
# substitution / re-homing between spaces
# ---------------------------------------------------------------------------


def substitute(e: Expr, mapping: Mapping[int, Expr], new_space: VarSpace) -> Expr:
    """Replace every variable by mapping[index]; result lives in new_space."""

    def go(t: Expr) -> Expr:
        if isinstance(t, Const):
            return t
        if isinstance(t, Var):
            try:
                return mapping[t.index]
            except KeyError:
                raise KeyError(
                    f"no substitution for variable {t.name!r}"
                ) from None
        if isinstance(t, Sum):
            out = ZERO
            for a in t.args:
                out = add(out, go(a))
            return out
        if isinstance(t, Prod):
            out = ONE
            for a in t.args:
                out = mul(out, go(a))
            return out
        if isinstance(t, Quot):
            return quot(go(t.num), go(t.den))
        if isinstance(t, Neg):
            return neg(go(t.arg))
        if isinstance(t, Pow):
            return power(go(t.base), t.exponent)
        if isinstance(t, Fun):
            return Fun(t.fname, go(t.arg))
        raise TypeError(type(t).__name__)

    out = go(e)
    if out.space is not None and out.space != new_space:
        raise ValueError("substitution produced an expression over the wrong space")
    return out


def embed(e: Expr, new_space: VarSpace, rename: Mapping[str, str] | None = None) -> Expr:
    """Re-home e into a larger space, matching coordinates by name."""
    if e.space is None:
        return e
    mapping = {}
    for i, n in enumerate(e.space.names):
        target = rename.get(n, n) if rename else n
        mapping[i] = new_space.var(target)
    return substitute(e, mapping, new_space)


# ---------------------------------------------------------------------------
# seeded sampling and numeric equality
# ---------------------------------------------------------------------------


def sample_points(
    dim: int,
    count: int = DEFAULT_POINTS,
    seed: int = DEFAULT_SEED,
    box: tuple[float, float] = DEFAULT_BOX,
) -> np.ndarray:
    """Deterministic sample points, shape (count, dim), uniform in box."""
    rng = np.random.default_rng(seed)
    lo, hi = box
    return rng.uniform(lo, hi, size=(count, dim))


def exprs_equal_sampled(
    a: Expr,
    b: Expr,
    points: np.ndarray,
    tol: float = 1e-10,
) -> bool:
    cols = points.T
    return bool(np.max(np.abs(eval_batch(a, cols) - eval_batch(b, cols))) <= tol)


# ---------------------------------------------------------------------------
# small symbolic matrix helpers (frame changes in tests and checks)
# ---------------------------------------------------------------------------


def mat_mul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    n, k = A.shape
    k2, m = B.shape
    if k != k2:
        raise ValueError("shape mismatch")
    out = np.empty((n, m), dtype=object)
    for i in range(n):
        for j in range(m):
            s = ZERO
            for t in range(k):
                s = add(s, mul(A[i, t], B[t, j]))
            out[i, j] = simplify(s)
    return out


def mat_det(A: np.ndarray) -> Expr:
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("determinant needs a square matrix")
    if n == 1:
        return A[0, 0]
    out = ZERO
    for j in range(n):
        minor = np.delete(np.delete(A, 0, axis=0), j, axis=1)
        term = mul(A[0, j], mat_det(minor))
        out = add(out, term if j % 2 == 0 else neg(term))
    return simplify(out)


def mat_inv(A: np.ndarray) -> np.ndarray:
    """Adjugate inverse; entries are exact Expr quotients."""
    n = A.shape[0]
    det = mat_det(A)
    out = np.empty((n, n), dtype=object)
    for i in range(n):
        for j in range(n):
            minor = np.delete(np.delete(A, j, axis=0), i, axis=1)
            cof = mat_det(minor) if n > 1 else ONE
            if (i + j) % 2 == 1:
                cof = neg(cof)
            out[i, j] = simplify(quot(cof, det))
    return out
