from __future__ import annotations

import pytest

from edtflow.dependence import PointToPoint
from edtflow.errors import KernelFormatError
from edtflow.kernel_format import dump_kernel, load_kernel
from edtflow.kernels import get_kernel
from edtflow.loop_tree import validate
from edtflow.models import Mode
from edtflow.runtime import run

TOY = """\
kernel {name} "Toy"
params T=8 N=6
array A T+1 N
distance t 2
loop t perm:1 1 .. T-1 tile
  loop i doall 1 .. N-2
    stmt S0 = toydist.S0 flops=1 read A[t-1, i] write A[t+1, i]
"""


def test_load_toy_without_registering():
    spec = load_kernel(TOY.format(name="fmt_toy"), register=False)
    assert spec.name == "fmt_toy"
    assert spec.title == "Toy"
    assert spec.defaults == {"T": 8, "N": 6}
    assert spec.distances == {"t": frozenset({2})}
    tree = spec.tree()
    assert [lp.var for lp in tree.loops()] == ["t", "i"]
    assert tree.node("0").tile_boundary
    assert [str(a) for a in tree.statements()[0].accesses] == ["read A[t-1, i]", "write A[t+1, i]"]
    assert validate(tree, spec.defaults) == []
    assert spec.flops(spec.defaults) == 7 * 4
    with pytest.raises(KeyError):
        get_kernel("fmt_toy")


def test_loaded_toy_carries_its_distance_into_the_program():
    spec = load_kernel(TOY.format(name="fmt_dist"), register=False)
    program = spec.program()
    (edt,) = program.edts
    assert program.spec.for_edt(edt.id) == (PointToPoint(2),)
    params = spec.params()
    store = spec.init_store(params)
    run(program, params, store, Mode.DEP, 2)
    assert store.first_difference(get_kernel("toydist").reference(params)) is None


def test_registered_kernel_is_found_by_name():
    spec = load_kernel(TOY.format(name="fmt_registered"))
    assert get_kernel("fmt_registered") is spec


def test_builtin_names_cannot_be_replaced():
    with pytest.raises(ValueError):
        load_kernel(TOY.format(name="toydist"))


@pytest.mark.parametrize("name, params, tiles", [
    ("figseq", {"T": 3, "N": 5}, ()),
    ("jac2d5p", {"T": 2, "N": 10}, (4, 4)),
    ("toysplit", {"T": 8, "N": 6}, ()),
])
def test_dumped_kernel_loads_back(name, params, tiles):
    kernel = get_kernel(name)
    text = dump_kernel(kernel, tiles)
    loaded = load_kernel(text, register=False)
    assert dump_kernel(loaded) == text
    assert loaded.reference(params).first_difference(kernel.reference(params)) is None
    store = loaded.init_store(params)
    run(loaded.program(), params, store, Mode.ASYNC, 4)
    assert store.first_difference(kernel.reference(params)) is None


def test_figseq_dump_text():
    text = dump_kernel(get_kernel("figseq"))
    assert text.splitlines()[:4] == [
        "kernel figseq",
        "params T=3 N=4",
        "array A T N N N",
        "loop t seq 1 .. T-1",
    ]
    assert "        stmt S0 = figseq.S0 flops=4 read A[t-1, i, j, k]" in text


def test_function_and_grouped_dimensions_load_back():
    text = TOY.format(name="fmt_dims").replace("array A T+1 N", "array A MAX(T+1, N) N+(T-T)")
    spec = load_kernel(text, register=False)
    dumped = dump_kernel(spec)
    assert "array A MAX(T+1, N) (N+(T-T))" in dumped.splitlines()
    again = load_kernel(dumped, register=False)
    assert dump_kernel(again) == dumped
    assert again.init_store(again.params()).arrays["A"].shape == (9, 6)


@pytest.mark.parametrize("text, line, message", [
    ("kernel k\nparams N=4\n\tloop i doall 0 .. N-1\n", 3, "tabs"),
    ("kernel k\nparams N=4\nloop i doall 0 .. N-1\narray A N\n", 4, "before the first loop"),
    ("kernel k\nparams N=4\nstmt S0 = toydist.S0\n", 3, "not inside a loop"),
    ("kernel k\nthis is not a line\n", 2, "cannot parse"),
    ("loop i doall 0 .. 3\n", 1, "must come first"),
    ("kernel k\nparams N=4\nloop i doall 0 .. N-1\n  stmt S0 = nosuch.S0\n", 4, "nosuch"),
    ("kernel k\n  params N=4\n", 2, "must not be indented"),
])
def test_format_errors_carry_line_numbers(text, line, message):
    with pytest.raises(KernelFormatError) as exc:
        load_kernel(text, register=False)
    assert exc.value.line == line
    assert message in str(exc.value)


def test_missing_kernel_line_and_empty_kernel():
    with pytest.raises(KernelFormatError, match="missing 'kernel' line"):
        load_kernel("params N=4\n", register=False)
    with pytest.raises(KernelFormatError, match="has no loops"):
        load_kernel("kernel empty\nparams N=4\n", register=False)


def test_comments_and_blank_lines_are_ignored():
    text = "# a toy\n\n" + TOY.format(name="fmt_comments").replace("distance t 2", "distance t 2  # along t")
    spec = load_kernel(text, register=False)
    assert spec.distances == {"t": frozenset({2})}
