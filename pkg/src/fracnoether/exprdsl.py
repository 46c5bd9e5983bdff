"""Small expression language for Lagrangians, dynamics and generators.

Expressions are immutable trees of :class:`Const`, :class:`Var`,
:class:`Unary` and :class:`Binary` nodes.  The grammar is ordinary infix
notation::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right-associative
    atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

Variables follow the naming convention ``t``, ``q0..``, ``v0..``,
``u0..``, ``p0..``; callers pass the declared set to :func:`parse` to
reject anything else.

Evaluation works on floats or on numpy arrays of equal shape (one entry
per grid node).  Non-finite intermediate results are never propagated:
they raise :class:`~fracnoether.errors.EvalDomainError`.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Union

import numpy as np

from fracnoether.errors import (
    EvalDomainError,
    ExprSyntaxError,
    UnboundVariableError,
    UnknownNameError,
)

FUNCTIONS = ("sin", "cos", "exp", "ln", "sqrt", "abs")
UNARY_OPS = ("neg",) + FUNCTIONS
BINARY_OPS = ("add", "sub", "mul", "div", "pow")

_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}
_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}


@dataclass(frozen=True)
class Const:
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))
        if not math.isfinite(self.value):
            raise ValueError("constants must be finite")


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Const, Var, Unary, Binary]

ZERO = Const(0.0)
ONE = Const(1.0)


def variable_names(n: int = 0, m: int = 0, *, velocities: bool = False,
                   costates: bool = False) -> frozenset[str]:
    """Declared variable set for a problem with ``n`` states and ``m`` controls."""
    names = {"t"}
    names.update(f"q{i}" for i in range(n))
    if velocities:
        names.update(f"v{i}" for i in range(n))
    names.update(f"u{i}" for i in range(m))
    if costates:
        names.update(f"p{i}" for i in range(n))
    return frozenset(names)


# --------------------------------------------------------------------------
# tokenizer / parser

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    offset: int


def _tokenize(source: str) -> list[_Tok]:
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", pos, source)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(_Tok(kind, m.group(), pos))
        pos = m.end()
    tokens.append(_Tok("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str, variables: frozenset[str] | None):
        self.source = source
        self.tokens = _tokenize(source)
        self.pos = 0
        self.variables = variables

    @property
    def tok(self) -> _Tok:
        return self.tokens[self.pos]

    def peek(self, k: int = 1) -> _Tok:
        return self.tokens[min(self.pos + k, len(self.tokens) - 1)]

    def error(self, message: str, tok: _Tok | None = None):
        tok = tok or self.tok
        raise ExprSyntaxError(message, tok.offset, self.source)

    def expect(self, text: str) -> None:
        if self.tok.text != text or self.tok.kind == "end":
            what = "end of input" if self.tok.kind == "end" else repr(self.tok.text)
            self.error(f"expected {text!r}, found {what}")
        self.pos += 1

    def parse(self) -> Expr:
        if self.tok.kind == "end":
            self.error("empty expression")
        e = self.expr()
        if self.tok.kind != "end":
            self.error(f"unexpected {self.tok.text!r}")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.tok.text in ("+", "-") and self.tok.kind == "op":
            op = "add" if self.tok.text == "+" else "sub"
            self.pos += 1
            e = Binary(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.tok.text in ("*", "/") and self.tok.kind == "op":
            op = "mul" if self.tok.text == "*" else "div"
            self.pos += 1
            e = Binary(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        if self.tok.kind == "op" and self.tok.text == "-":
            # "-2" is a negative literal, "-2^2" is -(2^2)
            if self.peek().kind == "num" and self.peek(2).text != "^":
                self.pos += 2
                return Const(-float(self.tokens[self.pos - 1].text))
            self.pos += 1
            return Unary("neg", self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.pos += 1
            return Binary("pow", base, self.unary())
        return base

    def atom(self) -> Expr:
        tok = self.tok
        if tok.kind == "num":
            self.pos += 1
            return Const(float(tok.text))
        if tok.kind == "name":
            self.pos += 1
            if self.tok.kind == "op" and self.tok.text == "(":
                if tok.text not in FUNCTIONS:
                    raise UnknownNameError(f"unknown function {tok.text!r} at offset {tok.offset}")
                self.pos += 1
                arg = self.expr()
                self.expect(")")
                return Unary(tok.text, arg)
            if tok.text in FUNCTIONS:
                self.error(f"function {tok.text!r} needs an argument", self.tok)
            if self.variables is not None and tok.text not in self.variables:
                raise UnknownNameError(
                    f"unknown variable {tok.text!r} at offset {tok.offset}; "
                    f"declared: {', '.join(sorted(self.variables))}"
                )
            return Var(tok.text)
        if tok.kind == "op" and tok.text == "(":
            self.pos += 1
            e = self.expr()
            self.expect(")")
            return e
        what = "end of input" if tok.kind == "end" else repr(tok.text)
        self.error(f"unexpected {what}")


def parse(source: str, variables: Iterable[str] | None = None) -> Expr:
    """Parse infix text into an :data:`Expr`.

    If ``variables`` is given, any other identifier is an
    :class:`~fracnoether.errors.UnknownNameError`.
    """
    declared = frozenset(variables) if variables is not None else None
    return _Parser(source, declared).parse()


def as_expr(e: "Expr | str | float", variables: Iterable[str] | None = None) -> Expr:
    if isinstance(e, (Const, Var, Unary, Binary)):
        if variables is not None:
            extra = free_vars(e) - frozenset(variables)
            if extra:
                raise UnknownNameError(f"undeclared variables {sorted(extra)}")
        return e
    if isinstance(e, (int, float)):
        return Const(e)
    return parse(e, variables)


# --------------------------------------------------------------------------
# printing


def _fmt_number(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        s = str(int(v))
    else:
        s = repr(v)
    return s


def to_text(e: Expr) -> str:
    """Render with the minimal parentheses that re-parse to the same tree."""
    if isinstance(e, Const):
        return _fmt_number(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        if e.op == "neg":
            inner = to_text(e.arg)
            if _prec(e.arg) <= _PREC["neg"] or isinstance(e.arg, Const):
                inner = f"({inner})"
            return f"-{inner}"
        return f"{e.op}({to_text(e.arg)})"
    p = _PREC[e.op]
    left, right = to_text(e.left), to_text(e.right)
    if e.op == "pow":
        if _prec(e.left) <= p:
            left = f"({left})"
        if _prec(e.right) < p:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(e.left) < p:
        left = f"({left})"
    if _prec(e.right) <= p:
        right = f"({right})"
    return f"{left} {_SYMBOL[e.op]} {right}"


def _prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Unary) and e.op == "neg":
        return _PREC["neg"]
    if isinstance(e, Const) and e.value < 0:
        return _PREC["neg"]
    return 10


# --------------------------------------------------------------------------
# evaluation


def free_vars(e: Expr) -> frozenset[str]:
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, Const):
        return frozenset()
    if isinstance(e, Unary):
        return free_vars(e.arg)
    return free_vars(e.left) | free_vars(e.right)


def _bad_index(mask) -> int | None:
    mask = np.asarray(mask)
    if mask.ndim == 0:
        return None
    return int(np.flatnonzero(mask)[0])


def _check(value, what: str):
    finite = np.isfinite(value)
    if not np.all(finite):
        raise EvalDomainError(f"non-finite result in {what}", _bad_index(~finite))
    return value


def _domain(mask, message: str):
    if np.any(mask):
        raise EvalDomainError(message, _bad_index(mask))


def _eval(e: Expr, env: Mapping[str, np.ndarray]):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise UnboundVariableError(f"variable {e.name!r} is unbound") from None
    if isinstance(e, Unary):
        x = _eval(e.arg, env)
        op = e.op
        if op == "neg":
            return -x
        if op == "ln":
            _domain(np.asarray(x) <= 0, "ln of a non-positive number")
            return np.log(x)
        if op == "sqrt":
            _domain(np.asarray(x) < 0, "sqrt of a negative number")
            return np.sqrt(x)
        if op == "abs":
            return np.abs(x)
        fn = {"sin": np.sin, "cos": np.cos, "exp": np.exp}[op]
        return _check(fn(x), op)
    a = _eval(e.left, env)
    b = _eval(e.right, env)
    op = e.op
    if op == "add":
        return _check(a + b, "addition")
    if op == "sub":
        return _check(a - b, "subtraction")
    if op == "mul":
        return _check(a * b, "multiplication")
    if op == "div":
        _domain(np.asarray(b) == 0, "division by zero")
        return _check(a / b, "division")
    a_arr, b_arr = np.asarray(a), np.asarray(b)
    _domain((a_arr < 0) & (b_arr != np.round(b_arr)),
            "non-integer power of a negative number")
    _domain((a_arr == 0) & (b_arr < 0), "negative power of zero")
    return _check(np.power(a_arr, b_arr), "power")


def evaluate(e: Expr, env: Mapping[str, float]) -> float:
    """Evaluate at a single point; every variable of ``e`` must be bound."""
    with np.errstate(all="ignore"):
        value = _eval(e, {k: float(v) for k, v in env.items()})
    return float(value)


def evaluate_array(e: Expr, env: Mapping[str, np.ndarray], shape: tuple[int, ...]) -> np.ndarray:
    """Vectorised evaluation; returns an array of ``shape`` even for constants.

    Domain errors carry the flat index of the first failing entry.
    """
    arrays = {k: np.broadcast_to(np.asarray(v, dtype=float), shape) for k, v in env.items()}
    with np.errstate(all="ignore"):
        value = _eval(e, arrays)
    return np.array(np.broadcast_to(value, shape), dtype=float)


# --------------------------------------------------------------------------
# construction with constant folding


def _fold(e: Expr) -> Expr:
    try:
        return Const(evaluate(e, {}))
    except EvalDomainError:
        return e


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    return Unary("neg", a)


def func(name: str, a: Expr) -> Expr:
    e = Unary(name, a)
    return _fold(e) if isinstance(a, Const) else e


def add(a: Expr, b: Expr) -> Expr:
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    e = Binary("add", a, b)
    return _fold(e) if isinstance(a, Const) and isinstance(b, Const) else e


def sub(a: Expr, b: Expr) -> Expr:
    if b == ZERO:
        return a
    if a == ZERO:
        return neg(b)
    e = Binary("sub", a, b)
    return _fold(e) if isinstance(a, Const) and isinstance(b, Const) else e


def mul(a: Expr, b: Expr) -> Expr:
    if a == ZERO or b == ZERO:
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    e = Binary("mul", a, b)
    return _fold(e) if isinstance(a, Const) and isinstance(b, Const) else e


def div(a: Expr, b: Expr) -> Expr:
    if b == ONE:
        return a
    if a == ZERO and b != ZERO:
        return ZERO
    e = Binary("div", a, b)
    return _fold(e) if isinstance(a, Const) and isinstance(b, Const) else e


def power(a: Expr, b: Expr) -> Expr:
    if b == ONE:
        return a
    if b == ZERO:
        return ONE
    e = Binary("pow", a, b)
    return _fold(e) if isinstance(a, Const) and isinstance(b, Const) else e


_BUILD = {"add": add, "sub": sub, "mul": mul, "div": div, "pow": power}


def fold_constants(e: Expr) -> Expr:
    """Rebuild bottom-up through the folding constructors."""
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, Unary):
        a = fold_constants(e.arg)
        return neg(a) if e.op == "neg" else func(e.op, a)
    return _BUILD[e.op](fold_constants(e.left), fold_constants(e.right))


def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Const):
        return e
    if isinstance(e, Unary):
        a = substitute(e.arg, mapping)
        return neg(a) if e.op == "neg" else func(e.op, a)
    return _BUILD[e.op](substitute(e.left, mapping), substitute(e.right, mapping))


def total(terms: Iterable[Expr]) -> Expr:
    result: Expr = ZERO
    for term in terms:
        result = add(result, term)
    return result


# --------------------------------------------------------------------------
# differentiation


def diff(e: Expr, var: str) -> Expr:
    """Exact partial derivative of ``e`` with respect to the variable ``var``."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if var not in free_vars(e):
        return ZERO
    if isinstance(e, Unary):
        a = e.arg
        da = diff(a, var)
        op = e.op
        if op == "neg":
            return neg(da)
        if op == "sin":
            return mul(func("cos", a), da)
        if op == "cos":
            return neg(mul(func("sin", a), da))
        if op == "exp":
            return mul(e, da)
        if op == "ln":
            return div(da, a)
        if op == "sqrt":
            return div(da, mul(Const(2.0), e))
        if op == "abs":
            return mul(da, div(a, e))
        raise AssertionError(op)
    a, b = e.left, e.right
    da, db = diff(a, var), diff(b, var)
    op = e.op
    if op == "add":
        return add(da, db)
    if op == "sub":
        return sub(da, db)
    if op == "mul":
        return add(mul(da, b), mul(a, db))
    if op == "div":
        return div(sub(mul(da, b), mul(a, db)), power(b, Const(2.0)))
    # pow
    if db == ZERO:
        return mul(mul(b, power(a, sub(b, ONE))), da)
    if da == ZERO:
        return mul(mul(e, func("ln", a)), db)
    return mul(e, add(mul(db, func("ln", a)), div(mul(b, da), a)))


def is_identically_zero(e: Expr, names: Iterable[str], *, samples: int = 8,
                        seed: int = 0, tol: float = 1e-12) -> bool:
    """Probe ``e`` at random points; a folded ``Const(0)`` short-circuits."""
    e = fold_constants(e)
    if e == ZERO:
        return True
    if isinstance(e, Const):
        return False
    rng = np.random.default_rng(seed)
    names = sorted(set(names) | free_vars(e))
    env = {name: rng.uniform(0.1, 1.0, samples) for name in names}
    try:
        values = evaluate_array(e, env, (samples,))
    except EvalDomainError:
        return False
    return bool(np.all(np.abs(values) <= tol))
