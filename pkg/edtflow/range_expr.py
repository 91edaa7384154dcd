"""Runtime-evaluated integer range expressions.

Loop bounds, array subscripts and tag-space predicates are all written in one
small grammar::

    linear := number | variable | number '*' linear
            | linear '+' linear | linear '-' linear
    expr   := linear
            | MIN(expr, expr) | MAX(expr, expr)
            | CEIL(linear, number) | FLOOR(linear, number)
            | SHIFTL(linear, number) | SHIFTR(linear, number)

Expressions are immutable trees, evaluated at integer environments (a tag tuple
plus the symbolic parameters) and bounded over boxes of environments.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import reduce
from typing import Callable, Dict, FrozenSet, Iterable, Mapping, Tuple

import numpy as np
from pyparsing import (
    Forward,
    Keyword,
    MatchFirst,
    ParseBaseException,
    ParseFatalException,
    ParserElement,
    Regex,
    Suppress,
    Word,
    ZeroOrMore,
    alphanums,
    alphas,
    one_of,
)

from .errors import BoxError, RangeOverflowError, RangeSyntaxError, UnboundVariableError
from .models import VarKind

ParserElement.enable_packrat()

log = logging.getLogger(__name__)

Env = Mapping[str, int]
Box = Mapping[str, Tuple[int, int]]

INT64_MIN = -(1 << 63)
INT64_MAX = (1 << 63) - 1

# Above this many grid points bounding_box falls back to interval composition.
EXACT_GRID_LIMIT = 1 << 18


def _checked(value: int, what: str) -> int:
    if value < INT64_MIN or value > INT64_MAX:
        raise RangeOverflowError(f"64-bit overflow evaluating {what}: {value}")
    return value


def _ceildiv(a: int, b: int) -> int:
    return -((-a) // b)


class RangeExpr:
    """Base class of expression nodes."""

    __slots__ = ()

    @property
    def is_linear(self) -> bool:
        return False

    def evaluate(self, env: Env) -> int:
        raise NotImplementedError

    def interval(self, box: Box) -> Tuple[int, int]:
        raise NotImplementedError

    def grid(self, axes: Mapping[str, np.ndarray]) -> np.ndarray:
        raise NotImplementedError

    def free_vars(self) -> FrozenSet[str]:
        raise NotImplementedError

    def affine(self) -> Tuple[Dict[str, int], int]:
        raise TypeError(f"{self} is not linear")


def _require_linear(node: RangeExpr, where: str) -> None:
    if not node.is_linear:
        raise ValueError(f"{where} requires a linear expression, got {node}")


def _wrap(node: RangeExpr) -> str:
    if isinstance(node, (Add, Sub)):
        return f"({node})"
    return str(node)


@dataclass(frozen=True)
class IntLit(RangeExpr):
    value: int

    @property
    def is_linear(self) -> bool:
        return True

    def evaluate(self, env: Env) -> int:
        return self.value

    def interval(self, box: Box) -> Tuple[int, int]:
        return self.value, self.value

    def grid(self, axes: Mapping[str, np.ndarray]) -> np.ndarray:
        return np.asarray(self.value, dtype=np.int64)

    def free_vars(self) -> FrozenSet[str]:
        return frozenset()

    def affine(self) -> Tuple[Dict[str, int], int]:
        return {}, self.value

    def __str__(self) -> str:
        return str(self.value)


@dataclass(frozen=True)
class Var(RangeExpr):
    name: str
    kind: VarKind = VarKind.INDUCTION

    @property
    def is_linear(self) -> bool:
        return True

    def evaluate(self, env: Env) -> int:
        try:
            return env[self.name]
        except KeyError:
            raise UnboundVariableError(self.name) from None

    def interval(self, box: Box) -> Tuple[int, int]:
        try:
            return box[self.name]
        except KeyError:
            raise BoxError(f"variable '{self.name}' missing from box") from None

    def grid(self, axes: Mapping[str, np.ndarray]) -> np.ndarray:
        return axes[self.name]

    def free_vars(self) -> FrozenSet[str]:
        return frozenset((self.name,))

    def affine(self) -> Tuple[Dict[str, int], int]:
        return {self.name: 1}, 0

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Scale(RangeExpr):
    coeff: int
    child: RangeExpr

    def __post_init__(self) -> None:
        _require_linear(self.child, "scaling")

    @property
    def is_linear(self) -> bool:
        return True

    def evaluate(self, env: Env) -> int:
        return _checked(self.coeff * self.child.evaluate(env), str(self))

    def interval(self, box: Box) -> Tuple[int, int]:
        return _affine_interval(self, box)

    def grid(self, axes: Mapping[str, np.ndarray]) -> np.ndarray:
        return np.int64(self.coeff) * self.child.grid(axes)

    def free_vars(self) -> FrozenSet[str]:
        return self.child.free_vars()

    def affine(self) -> Tuple[Dict[str, int], int]:
        coeffs, const = self.child.affine()
        return {v: self.coeff * c for v, c in coeffs.items()}, self.coeff * const

    def __str__(self) -> str:
        return f"{self.coeff}*{_wrap(self.child)}"


@dataclass(frozen=True)
class _Binary(RangeExpr):
    left: RangeExpr
    right: RangeExpr

    def __post_init__(self) -> None:
        """No checks of its own. Defining it here makes the generated ``__init__`` call the Add and Sub overrides."""

    def free_vars(self) -> FrozenSet[str]:
        return self.left.free_vars() | self.right.free_vars()


class Add(_Binary):
    def __post_init__(self) -> None:
        _require_linear(self.left, "addition")
        _require_linear(self.right, "addition")

    @property
    def is_linear(self) -> bool:
        return True

    def evaluate(self, env: Env) -> int:
        return _checked(self.left.evaluate(env) + self.right.evaluate(env), str(self))

    def interval(self, box: Box) -> Tuple[int, int]:
        return _affine_interval(self, box)

    def grid(self, axes: Mapping[str, np.ndarray]) -> np.ndarray:
        return self.left.grid(axes) + self.right.grid(axes)

    def affine(self) -> Tuple[Dict[str, int], int]:
        return _combine(self.left.affine(), self.right.affine(), 1)

    def __str__(self) -> str:
        return f"{self.left}+{_wrap(self.right)}"


class Sub(_Binary):
    def __post_init__(self) -> None:
        _require_linear(self.left, "subtraction")
        _require_linear(self.right, "subtraction")

    @property
    def is_linear(self) -> bool:
        return True

    def evaluate(self, env: Env) -> int:
        return _checked(self.left.evaluate(env) - self.right.evaluate(env), str(self))

    def interval(self, box: Box) -> Tuple[int, int]:
        return _affine_interval(self, box)

    def grid(self, axes: Mapping[str, np.ndarray]) -> np.ndarray:
        return self.left.grid(axes) - self.right.grid(axes)

    def affine(self) -> Tuple[Dict[str, int], int]:
        return _combine(self.left.affine(), self.right.affine(), -1)

    def __str__(self) -> str:
        return f"{self.left}-{_wrap(self.right)}"


class Min(_Binary):
    def evaluate(self, env: Env) -> int:
        return min(self.left.evaluate(env), self.right.evaluate(env))

    def interval(self, box: Box) -> Tuple[int, int]:
        (alo, ahi), (blo, bhi) = self.left.interval(box), self.right.interval(box)
        return min(alo, blo), min(ahi, bhi)

    def grid(self, axes: Mapping[str, np.ndarray]) -> np.ndarray:
        return np.minimum(self.left.grid(axes), self.right.grid(axes))

    def __str__(self) -> str:
        return f"MIN({self.left}, {self.right})"


class Max(_Binary):
    def evaluate(self, env: Env) -> int:
        return max(self.left.evaluate(env), self.right.evaluate(env))

    def interval(self, box: Box) -> Tuple[int, int]:
        (alo, ahi), (blo, bhi) = self.left.interval(box), self.right.interval(box)
        return max(alo, blo), max(ahi, bhi)

    def grid(self, axes: Mapping[str, np.ndarray]) -> np.ndarray:
        return np.maximum(self.left.grid(axes), self.right.grid(axes))

    def __str__(self) -> str:
        return f"MAX({self.left}, {self.right})"


@dataclass(frozen=True)
class _Unary(RangeExpr):
    child: RangeExpr
    operand: int

    _label = ""

    def __post_init__(self) -> None:
        _require_linear(self.child, self._label)

    def free_vars(self) -> FrozenSet[str]:
        return self.child.free_vars()

    def __str__(self) -> str:
        return f"{self._label}({self.child}, {self.operand})"

    def _apply(self, value: int) -> int:
        raise NotImplementedError

    def evaluate(self, env: Env) -> int:
        return self._apply(self.child.evaluate(env))

    def interval(self, box: Box) -> Tuple[int, int]:
        # every unary form is monotone non-decreasing in its child
        lo, hi = self.child.interval(box)
        return self._apply(lo), self._apply(hi)


class CeilDiv(_Unary):
    _label = "CEIL"

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.operand <= 0:
            raise ValueError(f"divisor must be positive, got {self.operand}")

    @property
    def divisor(self) -> int:
        return self.operand

    def _apply(self, value: int) -> int:
        return _ceildiv(value, self.operand)

    def grid(self, axes: Mapping[str, np.ndarray]) -> np.ndarray:
        return -np.floor_divide(-self.child.grid(axes), self.operand)


class FloorDiv(_Unary):
    _label = "FLOOR"

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.operand <= 0:
            raise ValueError(f"divisor must be positive, got {self.operand}")

    @property
    def divisor(self) -> int:
        return self.operand

    def _apply(self, value: int) -> int:
        return value // self.operand

    def grid(self, axes: Mapping[str, np.ndarray]) -> np.ndarray:
        return np.floor_divide(self.child.grid(axes), self.operand)


class ShiftL(_Unary):
    _label = "SHIFTL"

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.operand < 0:
            raise ValueError(f"shift amount must be non-negative, got {self.operand}")

    @property
    def amount(self) -> int:
        return self.operand

    def _apply(self, value: int) -> int:
        return _checked(value * (1 << self.operand), str(self))

    def grid(self, axes: Mapping[str, np.ndarray]) -> np.ndarray:
        return self.child.grid(axes) * np.int64(1 << self.operand)


class ShiftR(_Unary):
    _label = "SHIFTR"

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.operand < 0:
            raise ValueError(f"shift amount must be non-negative, got {self.operand}")

    @property
    def amount(self) -> int:
        return self.operand

    def _apply(self, value: int) -> int:
        return value // (1 << self.operand)

    def grid(self, axes: Mapping[str, np.ndarray]) -> np.ndarray:
        return np.floor_divide(self.child.grid(axes), np.int64(1 << self.operand))


def _combine(
    a: Tuple[Dict[str, int], int], b: Tuple[Dict[str, int], int], sign: int
) -> Tuple[Dict[str, int], int]:
    coeffs = dict(a[0])
    for v, c in b[0].items():
        coeffs[v] = coeffs.get(v, 0) + sign * c
    return coeffs, a[1] + sign * b[1]


def _affine_interval(expr: RangeExpr, box: Box) -> Tuple[int, int]:
    coeffs, const = expr.affine()
    lo = hi = const
    for name, c in coeffs.items():
        if c == 0:
            continue
        try:
            vlo, vhi = box[name]
        except KeyError:
            raise BoxError(f"variable '{name}' missing from box") from None
        lo += c * (vlo if c > 0 else vhi)
        hi += c * (vhi if c > 0 else vlo)
    return _checked(lo, str(expr)), _checked(hi, str(expr))


# -- operations ---------------------------------------------------------------


def evaluate(expr: RangeExpr, env: Env) -> int:
    """Exact value of ``expr`` at ``env``; FLOOR rounds toward -inf, CEIL toward +inf."""
    return expr.evaluate(env)


def to_text(expr: RangeExpr) -> str:
    return str(expr)


def bounding_box(expr: RangeExpr, box: Box, *, exact_limit: int = EXACT_GRID_LIMIT) -> Tuple[int, int]:
    """Minimum and maximum of ``expr`` over every environment in ``box``.

    Linear expressions are bounded exactly from the sign of each coefficient.
    Non-linear expressions compose monotone interval bounds; when MIN/MAX
    operands share variables that composition can be loose, so boxes of at
    most ``exact_limit`` points are evaluated on a vectorized grid instead.
    """
    names = sorted(expr.free_vars())
    for name in names:
        if name not in box:
            raise BoxError(f"variable '{name}' missing from box")
        lo, hi = box[name]
        if lo > hi:
            raise BoxError(f"empty interval for '{name}': [{lo}, {hi}]")
    lo, hi = expr.interval(box)
    if expr.is_linear or not names:
        return lo, hi
    points = 1
    for name in names:
        points *= box[name][1] - box[name][0] + 1
    if points > exact_limit:
        log.debug("bounding %s over %d points by interval composition", expr, points)
        return lo, hi
    ranges = [np.arange(box[n][0], box[n][1] + 1, dtype=np.int64) for n in names]
    axes = dict(zip(names, np.meshgrid(*ranges, indexing="ij", sparse=True)))
    values = np.broadcast_to(expr.grid(axes), tuple(len(r) for r in ranges))
    return int(values.min()), int(values.max())


def with_parameters(expr: RangeExpr, parameters: FrozenSet[str]) -> RangeExpr:
    """Re-tag the variables named in ``parameters`` as symbolic parameters."""
    if isinstance(expr, Var):
        kind = VarKind.PARAMETER if expr.name in parameters else VarKind.INDUCTION
        return expr if kind == expr.kind else Var(expr.name, kind)
    if isinstance(expr, IntLit):
        return expr
    if isinstance(expr, Scale):
        return Scale(expr.coeff, with_parameters(expr.child, parameters))
    if isinstance(expr, _Binary):
        return type(expr)(with_parameters(expr.left, parameters), with_parameters(expr.right, parameters))
    if isinstance(expr, _Unary):
        return type(expr)(with_parameters(expr.child, parameters), expr.operand)
    raise TypeError(f"unknown expression node {expr!r}")


# -- parser -------------------------------------------------------------------

_FUNCTIONS: Dict[str, Callable[..., RangeExpr]] = {
    "MIN": Min,
    "MAX": Max,
    "CEIL": CeilDiv,
    "FLOOR": FloorDiv,
    "SHIFTL": ShiftL,
    "SHIFTR": ShiftR,
}


def _literal_required(s: str, loc: int, toks) -> None:
    raise ParseFatalException(s, loc, "divisor must be a literal number")


def _fold_linear(toks) -> RangeExpr:
    items = list(toks)
    result = items[0]
    for op, rhs in zip(items[1::2], items[2::2]):
        result = Add(result, rhs) if op == "+" else Sub(result, rhs)
    return result


def _build_grammar() -> ParserElement:
    lpar, rpar, comma, star, minus = map(Suppress, "(),*-")
    keyword = MatchFirst([Keyword(name) for name in _FUNCTIONS])

    integer = Regex(r"-?\d+").set_parse_action(lambda t: int(t[0]))
    literal = integer.copy().add_parse_action(lambda t: IntLit(t[0]))
    name = (~keyword + Word(alphas + "_", alphanums + "_")).set_name("identifier")
    variable = name.copy().set_parse_action(lambda t: Var(t[0]))

    linear = Forward().set_name("linear expression")
    negated = (minus + (variable | lpar + linear + rpar)).set_parse_action(lambda t: Scale(-1, t[0]))
    atom = literal | variable | (lpar + linear + rpar) | negated
    term = Forward()
    term <<= (integer + star + term).set_parse_action(lambda t: Scale(t[0], t[1])) | atom
    linear <<= (term + ZeroOrMore(one_of("+ -") + term)).set_parse_action(_fold_linear)

    expr = Forward().set_name("expression")
    divisor = integer | name.copy().set_parse_action(_literal_required)
    forms = []
    for label, ctor in _FUNCTIONS.items():
        if label in ("MIN", "MAX"):
            body = Keyword(label) + lpar - expr + comma + expr + rpar
        else:
            body = Keyword(label) + lpar - linear + comma + divisor + rpar
        forms.append(body.set_parse_action(_construct(ctor)))
    expr <<= MatchFirst(forms) | linear
    return expr


def _construct(ctor: Callable[..., RangeExpr]):
    def action(s: str, loc: int, toks) -> RangeExpr:
        try:
            return ctor(*toks[1:])
        except ValueError as exc:
            raise ParseFatalException(s, loc, str(exc)) from None

    return action


_GRAMMAR = _build_grammar()


def parse(text: str, parameters: Iterable[str] = ()) -> RangeExpr:
    """Parse ``text`` in the range grammar.

    Identifiers listed in ``parameters`` become parameter variables, all
    others induction variables.
    """
    try:
        expr = _GRAMMAR.parse_string(text, parse_all=True)[0]
    except ParseBaseException as exc:
        raise RangeSyntaxError(exc.msg, exc.loc, text) from None
    params = frozenset(parameters)
    return with_parameters(expr, params) if params else expr


def max_of(exprs: Iterable[RangeExpr]) -> RangeExpr:
    return reduce(Max, exprs)


def min_of(exprs: Iterable[RangeExpr]) -> RangeExpr:
    return reduce(Min, exprs)
