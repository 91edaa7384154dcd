from __future__ import annotations

import itertools

import pytest
from hypothesis import given, settings, strategies as st

from edtflow.errors import BoxError, RangeOverflowError, RangeSyntaxError, UnboundVariableError
from edtflow.models import VarKind
from edtflow.range_expr import (
    Add,
    CeilDiv,
    FloorDiv,
    IntLit,
    Max,
    Min,
    Scale,
    ShiftL,
    ShiftR,
    Sub,
    Var,
    bounding_box,
    evaluate,
    parse,
    to_text,
)

VARS = ("i", "j", "k")


def linear_exprs(max_leaves: int = 6):
    leaves = st.one_of(
        st.integers(min_value=-20, max_value=20).map(IntLit),
        st.sampled_from(VARS).map(Var),
    )
    return st.recursive(
        leaves,
        lambda inner: st.one_of(
            st.builds(Add, inner, inner),
            st.builds(Sub, inner, inner),
            st.builds(Scale, st.integers(min_value=-4, max_value=4), inner),
        ),
        max_leaves=max_leaves,
    )


def range_exprs():
    linear = linear_exprs()
    return st.recursive(
        st.one_of(
            linear,
            st.builds(FloorDiv, linear, st.integers(min_value=1, max_value=17)),
            st.builds(CeilDiv, linear, st.integers(min_value=1, max_value=17)),
            st.builds(ShiftR, linear, st.integers(min_value=0, max_value=4)),
            st.builds(ShiftL, linear, st.integers(min_value=0, max_value=4)),
        ),
        lambda inner: st.one_of(st.builds(Min, inner, inner), st.builds(Max, inner, inner)),
        max_leaves=4,
    )


envs = st.fixed_dictionaries({v: st.integers(min_value=-50, max_value=50) for v in VARS})


@st.composite
def boxes(draw):
    box = {}
    for v in VARS:
        lo = draw(st.integers(min_value=-12, max_value=12))
        box[v] = (lo, lo + draw(st.integers(min_value=0, max_value=6)))
    return box


def test_floor_rounds_toward_negative_infinity():
    assert evaluate(FloorDiv(Var("t1"), 16), {"t1": -31}) == -2


def test_ceil_rounds_toward_positive_infinity():
    assert evaluate(CeilDiv(Var("x"), 16), {"x": -31}) == -1


def test_min_of_linear_terms():
    expr = Min(Add(Scale(2, Var("i")), IntLit(3)), Var("j"))
    assert evaluate(expr, {"i": 1, "j": 4}) == 4


@pytest.mark.parametrize("ctor", [Add, Sub])
def test_sums_reject_non_linear_operands(ctor):
    with pytest.raises(ValueError, match="linear"):
        ctor(Var("i"), Min(Var("i"), Var("j")))
    with pytest.raises(ValueError, match="linear"):
        ctor(FloorDiv(Var("i"), 2), IntLit(1))


def test_unbound_variable_is_named():
    with pytest.raises(UnboundVariableError) as exc:
        evaluate(Add(Var("i"), Var("N")), {"i": 3})
    assert exc.value.name == "N"


def test_overflow_is_reported():
    with pytest.raises(RangeOverflowError):
        evaluate(Scale(4, Var("i")), {"i": 2**62})


def test_parse_published_bound():
    expr = parse("MIN(FLOOR(8*t1+N+7,16), FLOOR(T+N-2,16))", ("T", "N"))
    assert isinstance(expr, Min)
    assert isinstance(expr.left, FloorDiv) and isinstance(expr.right, FloorDiv)
    assert expr.left.divisor == 16
    assert evaluate(expr, {"t1": 0, "N": 16, "T": 16}) == 1


def test_parse_literal():
    assert parse("5") == IntLit(5)


def test_parse_marks_parameters():
    expr = parse("N-1-i", ("N",))
    kinds = {}

    def walk(node):
        if isinstance(node, Var):
            kinds[node.name] = node.kind
        for child in ("left", "right", "child"):
            if hasattr(node, child):
                walk(getattr(node, child))

    walk(expr)
    assert kinds == {"N": VarKind.PARAMETER, "i": VarKind.INDUCTION}


@pytest.mark.parametrize(
    "text",
    ["CEIL(x, 0)", "FLOOR(i, j)", "MIN(i)", "FLOOR(MIN(i, j), 2)", "2*MAX(i, j)", "i +", "SHIFTL(i, -1)"],
)
def test_parse_rejects(text):
    with pytest.raises(RangeSyntaxError) as exc:
        parse(text)
    assert exc.value.position >= 0


def test_constructors_enforce_grammar():
    with pytest.raises(ValueError):
        CeilDiv(Var("x"), 0)
    with pytest.raises(ValueError):
        ShiftR(Var("x"), -1)
    with pytest.raises(ValueError):
        FloorDiv(Min(Var("i"), Var("j")), 2)
    with pytest.raises(ValueError):
        Add(Max(Var("i"), IntLit(0)), IntLit(1))


def test_shifts_are_power_of_two_scaling():
    assert evaluate(ShiftL(Var("i"), 3), {"i": -5}) == -40
    assert evaluate(ShiftR(Var("i"), 2), {"i": -5}) == -2


@pytest.mark.parametrize(
    "expr, box, expected",
    [
        (Sub(Scale(2, Var("i")), Var("j")), {"i": (0, 3), "j": (0, 2)}, (-2, 6)),
        (FloorDiv(Var("i"), 2), {"i": (-3, 3)}, (-2, 1)),
        (Min(Var("i"), IntLit(5)), {"i": (0, 10)}, (0, 5)),
    ],
)
def test_bounding_box_examples(expr, box, expected):
    assert bounding_box(expr, box) == expected


def test_bounding_box_missing_variable():
    with pytest.raises(BoxError):
        bounding_box(Add(Var("i"), Var("j")), {"i": (0, 1)})


def test_bounding_box_empty_interval():
    with pytest.raises(BoxError):
        bounding_box(Var("i"), {"i": (3, 2)})


def test_bounding_box_falls_back_to_interval_composition():
    expr = Min(Var("i"), Sub(IntLit(10), Var("i")))
    assert bounding_box(expr, {"i": (0, 10)}) == (0, 5)
    lo, hi = bounding_box(expr, {"i": (0, 10)}, exact_limit=1)
    assert lo <= 0 and hi >= 5


@given(expr=range_exprs(), env=envs)
@settings(max_examples=200, deadline=None)
def test_printed_text_parses_to_the_same_tree(expr, env):
    reparsed = parse(to_text(expr))
    assert evaluate(reparsed, env) == evaluate(expr, env)
    assert reparsed == expr


@given(expr=linear_exprs(), divisor=st.integers(min_value=1, max_value=40), env=envs)
@settings(max_examples=200, deadline=None)
def test_floor_and_ceil_bracket_the_quotient(expr, divisor, env):
    value = evaluate(expr, env)
    lo = evaluate(FloorDiv(expr, divisor), env)
    hi = evaluate(CeilDiv(expr, divisor), env)
    assert lo * divisor <= value < (lo + 1) * divisor
    assert (hi - 1) * divisor < value <= hi * divisor
    assert hi - lo == (0 if value % divisor == 0 else 1)


@given(expr=range_exprs(), box=boxes())
@settings(max_examples=150, deadline=None)
def test_bounding_box_is_exact_on_small_boxes(expr, box):
    values = [
        evaluate(expr, dict(zip(VARS, point)))
        for point in itertools.product(*(range(lo, hi + 1) for lo, hi in (box[v] for v in VARS)))
    ]
    assert bounding_box(expr, box) == (min(values), max(values))
