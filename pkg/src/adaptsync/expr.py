"""Small arithmetic expression language for regressor rows and bound functions.

Expressions are data, never code: the grammar only knows numeric literals,
the state components ``x1 .. xr`` (``x1`` is the output), the time ``t``,
the binary operators ``+ - * / ^``, unary minus and a fixed set of
functions.

Precedence, from loosest to tightest binding::

    + -        left associative
    * /        left associative
    unary -
    ^          right associative

so ``-x1^2`` is ``-(x1^2)`` and ``x1^2^3`` is ``x1^(2^3)``.
"""

from __future__ import annotations

import builtins
import math
import re
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

FUNCTIONS = ("sin", "cos", "tanh", "exp", "abs", "sqrt")


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset


class ExprBindError(ExprError):
    pass


class ExprEvalError(ExprError):
    def __init__(self, message: str, node: "Expr"):
        super().__init__(f"{message} in '{to_source(node)}'")
        self.node = node


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based state component


@dataclass(frozen=True)
class Time:
    pass


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


Expr = Union[Num, Var, Time, Neg, BinOp, Call]


# --------------------------------------------------------------------------
# Lexing and parsing

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
class _Token:
    kind: str
    text: str
    offset: int  # byte offset into the UTF-8 source


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ExprSyntaxError(
                f"unexpected character {source[pos]!r}", _byte_offset(source, pos)
            )
        if m.lastgroup != "ws":
            tokens.append(_Token(m.lastgroup, m.group(), _byte_offset(source, pos)))
        pos = m.end()
    tokens.append(_Token("end", "", _byte_offset(source, len(source))))
    return tokens


def _byte_offset(source: str, char_pos: int) -> int:
    return len(source[:char_pos].encode("utf-8"))


class _Parser:
    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.advance()
        if tok.text != text:
            shown = tok.text or "end of input"
            raise ExprSyntaxError(f"expected {text!r}, found {shown!r}", tok.offset)
        return tok

    def parse(self) -> Expr:
        node = self.sum()
        tok = self.peek()
        if tok.kind != "end":
            raise ExprSyntaxError(f"unexpected {tok.text!r}", tok.offset)
        return node

    def sum(self) -> Expr:
        node = self.product()
        while self.peek().text in ("+", "-"):
            op = self.advance().text
            node = BinOp(op, node, self.product())
        return node

    def product(self) -> Expr:
        node = self.unary()
        while self.peek().text in ("*", "/"):
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.peek().text == "-":
            self.advance()
            return Neg(self.unary())
        if self.peek().text == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek().text == "^":
            self.advance()
            # exponent may carry its own sign: 2^-1
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        tok = self.advance()
        if tok.kind == "num":
            return Num(float(tok.text))
        if tok.kind == "name":
            name = tok.text
            if name in FUNCTIONS:
                self.expect("(")
                arg = self.sum()
                self.expect(")")
                return Call(name, arg)
            if name == "t":
                return Time()
            m = re.fullmatch(r"x([1-9]\d*)", name)
            if m:
                return Var(int(m.group(1)))
            raise ExprSyntaxError(f"unknown identifier {name!r}", tok.offset)
        if tok.text == "(":
            node = self.sum()
            self.expect(")")
            return node
        shown = tok.text or "end of input"
        raise ExprSyntaxError(f"unexpected {shown!r}", tok.offset)


def parse(source: str, order: int | None = None) -> Expr:
    """Parse ``source`` into an expression tree.

    If ``order`` is given the tree is also bound, i.e. every ``xk`` must
    satisfy ``k <= order``.
    """
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    node = _Parser(source).parse()
    if order is not None:
        bind(node, order)
    return node


def variables(node: Expr) -> set[int]:
    if isinstance(node, Var):
        return {node.index}
    if isinstance(node, (Num, Time)):
        return set()
    if isinstance(node, Neg):
        return variables(node.operand)
    if isinstance(node, Call):
        return variables(node.arg)
    return variables(node.left) | variables(node.right)


def depends_on_time(node: Expr) -> bool:
    if isinstance(node, Time):
        return True
    if isinstance(node, (Num, Var)):
        return False
    if isinstance(node, Neg):
        return depends_on_time(node.operand)
    if isinstance(node, Call):
        return depends_on_time(node.arg)
    return depends_on_time(node.left) or depends_on_time(node.right)


def bind(node: Expr, order: int) -> Expr:
    """Check that the expression only refers to ``x1 .. x{order}``."""
    bad = sorted(k for k in variables(node) if k > order)
    if bad:
        names = ", ".join(f"x{k}" for k in bad)
        raise ExprBindError(f"{names} exceeds the state dimension {order}")
    return node


# --------------------------------------------------------------------------
# Printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def to_source(node: Expr) -> str:
    """Render an expression with the minimal parentheses needed to re-parse."""
    return _render(node, 0)


def _render(node: Expr, ctx: int) -> str:
    if isinstance(node, Num):
        text = repr(node.value)
        if text.endswith(".0"):
            text = text[:-2]
        return text
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Time):
        return "t"
    if isinstance(node, Call):
        return f"{node.func}({_render(node.arg, 0)})"
    if isinstance(node, Neg):
        text = "-" + _render(node.operand, _PREC["neg"])
        return f"({text})" if ctx > _PREC["neg"] else text
    prec = _PREC[node.op]
    if node.op == "^":
        # base binds tighter than ^, exponent may be another ^ or a negation
        left = _render(node.left, prec + 1)
        right = _render(node.right, _PREC["neg"])
    else:
        left = _render(node.left, prec)
        right = _render(node.right, prec + 1)
    text = f"{left} {node.op} {right}" if prec < 4 else f"{left}^{right}"
    return f"({text})" if ctx > prec else text


# --------------------------------------------------------------------------
# Evaluation

def _safe_pow(base: float, exponent: float) -> float:
    if base < 0.0 and not float(exponent).is_integer():
        raise ValueError("negative base with non-integer exponent")
    if base == 0.0 and exponent < 0.0:
        raise ZeroDivisionError("zero to a negative power")
    return math.pow(base, exponent)


def _safe_div(a: float, b: float) -> float:
    if b == 0.0:
        raise ZeroDivisionError("division by zero")
    return a / b


def _safe_sqrt(a: float) -> float:
    if a < 0.0:
        raise ValueError("square root of a negative number")
    return math.sqrt(a)


_FUNC_IMPL: dict[str, Callable[[float], float]] = {
    "sin": math.sin,
    "cos": math.cos,
    "tanh": math.tanh,
    "exp": math.exp,
    "abs": abs,
    "sqrt": _safe_sqrt,
}


def evaluate(node: Expr, x: Sequence[float], t: float) -> float:
    """Evaluate ``node`` at state ``x`` and time ``t``.

    Raises
    ------
    ExprEvalError
        On division by zero, square root of a negative number, a negative
        base raised to a non-integer power, or any non-finite intermediate.
        The error carries the offending subexpression.
    """
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.index > len(x):
            raise ExprEvalError(f"state has only {len(x)} components", node)
        return float(x[node.index - 1])
    if isinstance(node, Time):
        return float(t)
    try:
        if isinstance(node, Neg):
            value = -evaluate(node.operand, x, t)
        elif isinstance(node, Call):
            value = _FUNC_IMPL[node.func](evaluate(node.arg, x, t))
        else:
            a = evaluate(node.left, x, t)
            b = evaluate(node.right, x, t)
            if node.op == "+":
                value = a + b
            elif node.op == "-":
                value = a - b
            elif node.op == "*":
                value = a * b
            elif node.op == "/":
                value = _safe_div(a, b)
            else:
                value = _safe_pow(a, b)
    except (ZeroDivisionError, ValueError, OverflowError) as exc:
        if isinstance(exc, ExprEvalError):
            raise
        raise ExprEvalError(str(exc), node) from None
    if not math.isfinite(value):
        raise ExprEvalError("non-finite result", node)
    return value


# alias matching the operation name used throughout the package
eval = evaluate  # noqa: A001


def _emit(node: Expr) -> str:
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return f"x[{node.index - 1}]"
    if isinstance(node, Time):
        return "t"
    if isinstance(node, Neg):
        return f"(-{_emit(node.operand)})"
    if isinstance(node, Call):
        return f"_{node.func}({_emit(node.arg)})"
    if node.op == "/":
        return f"_div({_emit(node.left)}, {_emit(node.right)})"
    if node.op == "^":
        return f"_pow({_emit(node.left)}, {_emit(node.right)})"
    return f"({_emit(node.left)} {node.op} {_emit(node.right)})"


_COMPILE_NAMESPACE = {
    "_div": _safe_div,
    "_pow": _safe_pow,
    **{f"_{name}": impl for name, impl in _FUNC_IMPL.items()},
}


def compile_rows(rows: Sequence[Expr]) -> Callable[[Sequence[float], float], tuple]:
    """Turn a list of bound expressions into one fast callable ``f(x, t)``.

    The generated source is built from the tree only (literals, fixed
    helper names and ``x[k]`` lookups), so no user text is ever executed.
    On any failure the slow evaluator is re-run to attribute the error to
    a subexpression.
    """
    body = ", ".join(_emit(r) for r in rows)
    code = compile(f"lambda x, t: ({body}{',' if rows else ''})", "<expr>", "eval")
    fast = builtins.eval(code, dict(_COMPILE_NAMESPACE))
    rows = tuple(rows)

    def call(x, t):
        try:
            out = fast(x, t)
        except (ZeroDivisionError, ValueError, OverflowError):
            out = None
        if out is None or not all(math.isfinite(v) for v in out):
            return tuple(evaluate(r, x, t) for r in rows)
        return out

    call.rows = rows
    return call


# Postfix programs for the numba kernel.  Opcode numbers are shared with
# ``adaptsync._kernel``.
OPCODES = {"const": 0, "var": 1, "time": 2, "neg": 3, "+": 4, "-": 5, "*": 6, "/": 7,
           "^": 8, "sin": 9, "cos": 10, "tanh": 11, "exp": 12, "abs": 13, "sqrt": 14}


def _postfix(node: Expr, ops: list, args: list) -> None:
    if isinstance(node, Num):
        ops.append(OPCODES["const"])
        args.append(node.value)
    elif isinstance(node, Var):
        ops.append(OPCODES["var"])
        args.append(float(node.index - 1))
    elif isinstance(node, Time):
        ops.append(OPCODES["time"])
        args.append(0.0)
    elif isinstance(node, Neg):
        _postfix(node.operand, ops, args)
        ops.append(OPCODES["neg"])
        args.append(0.0)
    elif isinstance(node, Call):
        _postfix(node.arg, ops, args)
        ops.append(OPCODES[node.func])
        args.append(0.0)
    else:
        _postfix(node.left, ops, args)
        _postfix(node.right, ops, args)
        ops.append(OPCODES[node.op])
        args.append(0.0)


def compile_program(rows: Sequence[Expr]) -> tuple[list, list, list]:
    """Flatten rows into one postfix program: ``(ops, args, row_starts)``.

    Row ``q`` occupies ``ops[row_starts[q]:row_starts[q + 1]]``.
    """
    ops: list = []
    args: list = []
    starts = [0]
    for r in rows:
        _postfix(r, ops, args)
        starts.append(len(ops))
    return ops, args, starts


def max_stack_depth(node: Expr) -> int:
    if isinstance(node, (Num, Var, Time)):
        return 1
    if isinstance(node, (Neg, Call)):
        return max_stack_depth(node.operand if isinstance(node, Neg) else node.arg)
    return max(max_stack_depth(node.left), 1 + max_stack_depth(node.right))


# --------------------------------------------------------------------------
# Bound-function spot check

@dataclass(frozen=True)
class BoundCheck:
    """Result of sampling ``||f(x, t)|| <= phi(x)``.

    This can falsify the bound, never prove it.
    """

    passed: bool
    worst_margin: float
    worst_x: tuple
    worst_t: float
    samples: int
    kind: str = "falsification check"


def check_assumption6(
    rows: Sequence[Expr],
    phi: Expr,
    order: int,
    box: tuple[float, float] = (-5.0, 5.0),
    t_grid: Sequence[float] | None = None,
    n_samples: int = 2000,
    tolerance: float = 1e-9,
    seed: int = 0,
) -> BoundCheck:
    """Spot-check the regressor bound on a box of states and a time grid.

    States are drawn uniformly from ``box`` in every component (plus the box
    corners and the origin); the margin at each sample is
    ``phi(x) - ||f(x, t)||``.
    """
    if t_grid is None:
        t_grid = np.linspace(0.0, 20.0, 41)
    lo, hi = box
    rng = np.random.default_rng(seed)
    points = [np.zeros(order)]
    corners = np.array(np.meshgrid(*[[lo, hi]] * order)).reshape(order, -1).T
    points.extend(corners)
    points.extend(rng.uniform(lo, hi, size=(n_samples, order)))

    if depends_on_time(phi):
        raise ExprBindError("the bound function may not depend on t")
    X = np.array(points)
    T = np.asarray(t_grid, dtype=float)
    shape = (len(X), len(T))
    with np.errstate(all="ignore"):
        bound = evaluate_array(phi, X, np.zeros(1))
        fx = [evaluate_array(r, X[:, None, :], T[None, :]) for r in rows]
        norm = np.zeros(shape)
        for v in fx:
            norm = np.hypot(norm, v)  # no overflow from squaring large entries
        margins = np.broadcast_to(bound, (len(X),))[:, None] - norm
    if not np.all(np.isfinite(margins)):
        # a guarded operation somewhere; the scalar evaluator names it
        return _check_assumption6_scalar(rows, phi, points, T, tolerance)
    k = int(np.argmin(margins))
    p, q = divmod(k, len(T))
    worst = (float(margins.flat[k]), tuple(float(v) for v in X[p]), float(T[q]))
    count = margins.size
    return BoundCheck(
        passed=worst[0] >= -tolerance,
        worst_margin=worst[0],
        worst_x=worst[1],
        worst_t=worst[2],
        samples=count,
    )


def _check_assumption6_scalar(rows, phi, points, t_grid, tolerance) -> BoundCheck:
    f = compile_rows(rows)
    phi_f = compile_rows([phi])
    worst = (math.inf, (), 0.0)
    count = 0
    for x in points:
        x = x.tolist()
        bound = phi_f(x, 0.0)[0]
        for t in t_grid:
            fx = f(x, float(t))
            margin = bound - math.hypot(*fx)
            count += 1
            if margin < worst[0]:
                worst = (margin, tuple(float(v) for v in x), float(t))
    return BoundCheck(
        passed=worst[0] >= -tolerance,
        worst_margin=worst[0],
        worst_x=worst[1],
        worst_t=worst[2],
        samples=count,
    )


_NP_FUNCS = {"sin": np.sin, "cos": np.cos, "tanh": np.tanh, "exp": np.exp,
             "abs": np.abs, "sqrt": np.sqrt}


def evaluate_array(node: Expr, X: np.ndarray, t) -> np.ndarray:
    """Vectorized evaluation; ``X[..., k]`` is ``x(k+1)`` and ``t`` broadcasts against it.

    Wherever :func:`evaluate` would raise, the result is NaN instead;
    callers that need attribution re-run :func:`evaluate` on that sample.
    """
    value = _evaluate_array(node, X, t)
    # overflow is an error in the scalar path, so no intermediate may stay inf
    return np.where(np.isfinite(value), value, np.nan)


def _evaluate_array(node: Expr, X: np.ndarray, t) -> np.ndarray:
    if isinstance(node, Num):
        return np.asarray(node.value)
    if isinstance(node, Var):
        return X[..., node.index - 1]
    if isinstance(node, Time):
        return np.asarray(t, dtype=float)
    if isinstance(node, Neg):
        return -evaluate_array(node.operand, X, t)
    if isinstance(node, Call):
        return _NP_FUNCS[node.func](evaluate_array(node.arg, X, t))
    a = evaluate_array(node.left, X, t)
    b = evaluate_array(node.right, X, t)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        return np.where(b == 0.0, np.nan, a / np.where(b == 0.0, 1.0, b))
    a, b = np.broadcast_arrays(a, b)
    bad = (a < 0.0) & (b != np.floor(b)) | (a == 0.0) & (b < 0.0) | np.isnan(a) | np.isnan(b)
    return np.where(bad, np.nan, np.power(np.where(bad, 1.0, a), b))
