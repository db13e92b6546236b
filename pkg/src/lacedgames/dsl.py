"""Small expression language for dynamics, feedbacks, schedules and integrals.

Expressions are built from real literals, the time variable ``t``, indexed
vector variables (``phi[i]``, ``dphi[i]``, ``u1[j]``, ``u2[j]``, ``u1o[j]``,
``u2o[j]``, ``k[a]``), binary ``+ - * / ^``, unary ``-`` and a fixed set of
functions.  ``^`` is right-associative and binds tighter than unary minus;
``* /`` bind tighter than ``+ -``; whitespace is insignificant.

Two evaluation paths exist and use the same arithmetic (``math`` functions,
``math.pow`` for ``^``): :func:`eval_expr` walks the tree and reports domain
errors with the offending subexpression, while :func:`compile_expr` emits a
plain Python function for hot loops (simulation, Newton solves).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence, Union

import numpy as np

from .errors import ConfigError, NumericError

__all__ = [
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Func",
    "Expr",
    "EvalEnv",
    "ExprSyntaxError",
    "EvalError",
    "parse_expr",
    "to_string",
    "eval_expr",
    "compile_expr",
    "grad_fd",
    "referenced_names",
    "max_indices",
]

INDEXED_VARS = ("phi", "dphi", "u1", "u2", "u1o", "u2o", "k")
FUNCTIONS = {
    "sin": 1,
    "cos": 1,
    "tanh": 1,
    "exp": 1,
    "log": 1,
    "abs": 1,
    "sqrt": 1,
    "min": 2,
    "max": 2,
}


# --- AST ------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str
    index: int | None = None  # None only for "t"


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Func:
    name: str
    args: tuple["Expr", ...]


Expr = Union[Num, Var, Neg, BinOp, Func]


@dataclass(frozen=True)
class EvalEnv:
    """Variable bindings for expression evaluation.

    Vector lengths must match the owning game's state dimension ``m``
    (``phi``, ``dphi``), per-player control dimension ``n`` (``u1`` ... ``u2o``)
    and integral count ``2n`` (``k``).
    """

    t: float = 0.0
    phi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dphi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    u1: np.ndarray = field(default_factory=lambda: np.zeros(0))
    u2: np.ndarray = field(default_factory=lambda: np.zeros(0))
    u1o: np.ndarray = field(default_factory=lambda: np.zeros(0))
    u2o: np.ndarray = field(default_factory=lambda: np.zeros(0))
    k: np.ndarray = field(default_factory=lambda: np.zeros(0))


class ExprSyntaxError(ConfigError):
    """Malformed expression text; carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int, expected: str | None = None):
        detail = f"{message} at offset {offset}"
        if expected:
            detail += f" (expected {expected})"
        super().__init__(detail)
        self.offset = offset
        self.expected = expected


class EvalError(NumericError):
    """Evaluation failed; carries the offending subexpression."""

    def __init__(self, message: str, subexpr: "Expr"):
        self.subexpr = subexpr
        super().__init__(f"{message} in '{to_string(subexpr)}'")


# --- tokenizer ------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<punct>[-+*/^()\[\],]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            offset = len(text) - len(stripped)
            raise ExprSyntaxError(f"unexpected character {stripped[0]!r}", offset)
        pos = m.end()
        for kind in ("num", "name", "punct"):
            val = m.group(kind)
            if val is not None:
                tokens.append((kind, val, m.start(kind)))
                break
    tokens.append(("end", "", len(text)))
    return tokens


# --- parser ---------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.pos]

    def advance(self) -> tuple[str, str, int]:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, value: str) -> None:
        kind, val, off = self.peek()
        if val != value:
            raise ExprSyntaxError(
                f"unexpected {'end of input' if kind == 'end' else repr(val)}",
                off,
                expected=repr(value),
            )
        self.advance()

    # expr := term (('+'|'-') term)*
    def parse_expr(self) -> Expr:
        node = self.parse_term()
        while self.peek()[1] in ("+", "-"):
            op = self.advance()[1]
            node = BinOp(op, node, self.parse_term())
        return node

    # term := factor (('*'|'/') factor)*
    def parse_term(self) -> Expr:
        node = self.parse_factor()
        while self.peek()[1] in ("*", "/"):
            op = self.advance()[1]
            node = BinOp(op, node, self.parse_factor())
        return node

    # factor := '-' factor | power     (so ^ binds tighter than unary -)
    def parse_factor(self) -> Expr:
        if self.peek()[1] == "-":
            self.advance()
            return Neg(self.parse_factor())
        return self.parse_power()

    # power := atom ('^' factor)?      (right-associative)
    def parse_power(self) -> Expr:
        node = self.parse_atom()
        if self.peek()[1] == "^":
            self.advance()
            node = BinOp("^", node, self.parse_factor())
        return node

    def parse_atom(self) -> Expr:
        kind, val, off = self.peek()
        if kind == "num":
            self.advance()
            return Num(float(val))
        if val == "(":
            self.advance()
            node = self.parse_expr()
            self.expect(")")
            return node
        if kind == "name":
            self.advance()
            if self.peek()[1] == "(":
                return self._parse_call(val, off)
            return self._parse_var(val, off)
        raise ExprSyntaxError(
            f"unexpected {'end of input' if kind == 'end' else repr(val)}",
            off,
            expected="a number, variable, function or '('",
        )

    def _parse_call(self, name: str, off: int) -> Expr:
        if name not in FUNCTIONS:
            raise ExprSyntaxError(f"unknown function {name!r}", off)
        self.expect("(")
        args = [self.parse_expr()]
        while self.peek()[1] == ",":
            self.advance()
            args.append(self.parse_expr())
        self.expect(")")
        arity = FUNCTIONS[name]
        if len(args) != arity:
            raise ExprSyntaxError(
                f"{name} takes {arity} argument{'s' if arity > 1 else ''}, got {len(args)}",
                off,
            )
        return Func(name, tuple(args))

    def _parse_var(self, name: str, off: int) -> Expr:
        if name == "t":
            if self.peek()[1] == "[":
                raise ExprSyntaxError("'t' takes no index", self.peek()[2])
            return Var("t", None)
        if name not in INDEXED_VARS:
            raise ExprSyntaxError(f"unknown identifier {name!r}", off)
        self.expect("[")
        kind, val, ioff = self.peek()
        if kind != "num" or not re.fullmatch(r"\d+", val):
            raise ExprSyntaxError(
                f"index of {name!r} must be a nonnegative integer literal", ioff
            )
        self.advance()
        self.expect("]")
        return Var(name, int(val))


def parse_expr(text: str) -> Expr:
    """Parse expression text into an AST.

    Raises :class:`ExprSyntaxError` (with byte offset and expected-token hint)
    on malformed input, unknown identifiers, or non-integer indices.
    """
    parser = _Parser(text)
    node = parser.parse_expr()
    kind, val, off = parser.peek()
    if kind != "end":
        raise ExprSyntaxError(f"unexpected {val!r}", off, expected="end of input")
    return node


# --- printer --------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return 3
    return 5


def to_string(e: Expr) -> str:
    """Render an AST back to parseable text; parse(to_string(parse(s)))
    equals parse(s) for any valid input s."""
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name if e.index is None else f"{e.name}[{e.index}]"
    if isinstance(e, Neg):
        inner = to_string(e.operand)
        if _prec(e.operand) < 3:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, Func):
        return f"{e.name}({', '.join(to_string(a) for a in e.args)})"
    if isinstance(e, BinOp):
        lp, rp = _prec(e.left), _prec(e.right)
        left, right = to_string(e.left), to_string(e.right)
        if e.op == "^":
            # right-associative: parenthesize any non-atom on the left
            if lp <= 4:
                left = f"({left})"
            if rp < 4:
                right = f"({right})"
            return f"{left}^{right}"
        level = _PREC[e.op]
        if lp < level:
            left = f"({left})"
        if rp <= level:
            right = f"({right})"
        sep = f" {e.op} " if level == 1 else e.op
        return f"{left}{sep}{right}"
    raise TypeError(f"not an expression node: {e!r}")


# --- evaluation -----------------------------------------------------------

_FUNC_IMPL: dict[str, Callable] = {
    "sin": math.sin,
    "cos": math.cos,
    "tanh": math.tanh,
    "exp": math.exp,
    "log": math.log,
    "abs": abs,
    "sqrt": math.sqrt,
    "min": min,
    "max": max,
}


def eval_expr(e: Expr, env: EvalEnv) -> float:
    """Evaluate an expression; pure and deterministic.

    Domain errors (log of a nonpositive value, division by zero, fractional
    power of a negative base) and out-of-bounds indices raise
    :class:`EvalError` naming the offending subexpression.
    """
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        if e.name == "t":
            return float(env.t)
        vec = getattr(env, e.name)
        if e.index >= len(vec):
            raise EvalError(
                f"index {e.index} out of bounds for {e.name} of length {len(vec)}", e
            )
        return float(vec[e.index])
    if isinstance(e, Neg):
        return -eval_expr(e.operand, env)
    if isinstance(e, Func):
        args = [eval_expr(a, env) for a in e.args]
        try:
            return float(_FUNC_IMPL[e.name](*args))
        except ValueError:
            raise EvalError("domain error", e) from None
    if isinstance(e, BinOp):
        left = eval_expr(e.left, env)
        right = eval_expr(e.right, env)
        if e.op == "+":
            return left + right
        if e.op == "-":
            return left - right
        if e.op == "*":
            return left * right
        if e.op == "/":
            try:
                return left / right
            except ZeroDivisionError:
                raise EvalError("division by zero", e) from None
        try:
            return math.pow(left, right)
        except (ValueError, OverflowError):
            raise EvalError("domain error", e) from None
    raise TypeError(f"not an expression node: {e!r}")


# --- compilation ----------------------------------------------------------

_COMPILE_GLOBALS = {
    "__builtins__": {},
    "pow": math.pow,
    **_FUNC_IMPL,
}


def _to_python(e: Expr) -> str:
    # fully parenthesized so evaluation order matches eval_expr bit for bit
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return "t" if e.name == "t" else f"{e.name}[{e.index}]"
    if isinstance(e, Neg):
        return f"(-{_to_python(e.operand)})"
    if isinstance(e, Func):
        return f"{e.name}({', '.join(_to_python(a) for a in e.args)})"
    if isinstance(e, BinOp):
        if e.op == "^":
            return f"pow({_to_python(e.left)}, {_to_python(e.right)})"
        return f"({_to_python(e.left)} {e.op} {_to_python(e.right)})"
    raise TypeError(f"not an expression node: {e!r}")


CompiledExpr = Callable[..., float]


def compile_expr(e: Expr) -> CompiledExpr:
    """Compile to a function ``f(t, phi, dphi, u1, u2, u1o, u2o, k) -> float``.

    Same arithmetic as :func:`eval_expr`; raises plain Python exceptions
    (ValueError / ZeroDivisionError / IndexError) instead of :class:`EvalError`.
    """
    src = f"def _f(t, phi, dphi, u1, u2, u1o, u2o, k):\n    return {_to_python(e)}\n"
    ns = dict(_COMPILE_GLOBALS)
    exec(compile(src, "<expr>", "exec"), ns)
    return ns["_f"]


def env_args(env: EvalEnv) -> tuple:
    """EvalEnv flattened into the positional argument tuple of compiled
    expressions."""
    return (env.t, env.phi, env.dphi, env.u1, env.u2, env.u1o, env.u2o, env.k)


# --- analysis helpers -----------------------------------------------------


def _walk(e: Expr):
    yield e
    if isinstance(e, Neg):
        yield from _walk(e.operand)
    elif isinstance(e, BinOp):
        yield from _walk(e.left)
        yield from _walk(e.right)
    elif isinstance(e, Func):
        for a in e.args:
            yield from _walk(a)


def referenced_names(e: Expr) -> set[str]:
    """Names of all variables the expression reads."""
    return {node.name for node in _walk(e) if isinstance(node, Var)}


def max_indices(e: Expr) -> dict[str, int]:
    """Largest index used per indexed variable name."""
    out: dict[str, int] = {}
    for node in _walk(e):
        if isinstance(node, Var) and node.index is not None:
            out[node.name] = max(out.get(node.name, -1), node.index)
    return out


def grad_fd(
    e: Expr,
    env: EvalEnv,
    variables: Sequence[Var],
    eps: float = 1e-6,
) -> np.ndarray:
    """Central finite-difference gradient of ``e`` w.r.t. the listed variables.

    Each entry is ``(e(x + eps) - e(x - eps)) / (2 eps)`` with only that
    variable perturbed.  ``eps`` must be positive.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    out = np.empty(len(variables))
    for idx, var in enumerate(variables):
        if var.name == "t":
            hi = eval_expr(e, replace(env, t=env.t + eps))
            lo = eval_expr(e, replace(env, t=env.t - eps))
        else:
            base = np.asarray(getattr(env, var.name), dtype=float)
            vec = base.copy()
            vec[var.index] = base[var.index] + eps
            hi = eval_expr(e, replace(env, **{var.name: vec}))
            vec = base.copy()
            vec[var.index] = base[var.index] - eps
            lo = eval_expr(e, replace(env, **{var.name: vec}))
        out[idx] = (hi - lo) / (2.0 * eps)
    return out
