from __future__ import annotations

import numpy as np
import pytest

from edtflow.errors import OutOfBoundsError, ValidationError
from edtflow.kernels import get_kernel, heat_tiles
from edtflow.loop_tree import (
    ArrayStore,
    LoopTree,
    TreeBuilder,
    check_accesses,
    count_instances,
    ensure_valid,
    instances,
    iterate_sequentially,
    validate,
)
from edtflow.models import LoopType


def _noop(env, store):
    pass


def test_root_is_level_minus_one():
    tree = get_kernel("figseq").tree()
    assert tree.root.level == -1
    assert tree.root.is_root
    assert [n.var for n in tree.path(tree.node("0.0.0.0"))] == ["t", "i", "j", "k"]
    assert [n.level for n in tree.loops()] == [0, 1, 2, 3]


def test_figseq_tree_is_valid():
    tree = get_kernel("figseq").tree()
    assert validate(tree, {"T": 3, "N": 4}) == []
    assert [str(n.loop_type) for n in tree.loops()] == ["seq", "doall", "seq", "doall"]


def test_bound_referencing_inner_variable_is_a_scoping_error():
    b = TreeBuilder(("N",))
    tree = b.tree(
        "bad",
        b.loop("j", "0", "k", LoopType.parallel(),
            b.loop("k", "0", "N-1", LoopType.parallel(), tile=True, statements=[b.stmt("S0", _noop)])),
    )
    diags = validate(tree, {"N": 4})
    assert len(diags) == 1
    assert diags[0].path == "j"
    assert "['k']" in diags[0].message


def test_band_on_divergent_branches_is_reported():
    b = TreeBuilder(("N",))
    band = LoopType.permutable(1)
    tree = b.tree(
        "split",
        b.loop("t", "0", "N-1", LoopType.sequential(),
            b.loop("i", "0", "N-1", band, tile=True, statements=[b.stmt("S0", _noop)]),
            b.loop("j", "0", "N-1", band, tile=True, statements=[b.stmt("S1", _noop)])),
    )
    diags = validate(tree, {"N": 4})
    assert any("not contiguous" in d.message for d in diags)
    with pytest.raises(ValidationError) as exc:
        ensure_valid(tree, {"N": 4})
    assert exc.value.diagnostics


def test_band_interrupted_by_sequential_loop_is_reported():
    b = TreeBuilder(("N",))
    band = LoopType.permutable(1)
    tree = b.tree(
        "gap",
        b.loop("i", "0", "N-1", band,
            b.loop("s", "0", "N-1", LoopType.sequential(),
                b.loop("j", "0", "N-1", band, tile=True, statements=[b.stmt("S0", _noop)]))),
    )
    assert any("interrupted by seq" in d.message for d in validate(tree, {"N": 4}))


def test_each_branch_needs_one_tile_boundary():
    b = TreeBuilder(("N",))
    tree = b.tree(
        "untiled",
        b.loop("i", "0", "N-1", LoopType.parallel(),
            b.loop("j", "0", "N-1", LoopType.parallel(), statements=[b.stmt("S0", _noop)])),
    )
    assert [d.path for d in validate(tree, {"N": 4})] == ["i/j"]


def test_undeclared_array_and_rank_mismatch():
    b = TreeBuilder(("N",))
    s0 = b.stmt("S0", _noop, b.read("A", "i"), b.write("B", "i"))
    tree = b.tree(
        "arrays",
        b.loop("i", "0", "N-1", LoopType.parallel(), tile=True, statements=[s0]),
        arrays=[b.array("A", "N", "N")],
    )
    messages = " ".join(d.message for d in validate(tree, {"N": 4}))
    assert "undeclared array 'B'" in messages
    assert "rank is 2" in messages


def test_figseq_executes_sixteen_instances():
    kernel = get_kernel("figseq")
    params = {"T": 3, "N": 4}
    store = kernel.init_store(params)
    assert iterate_sequentially(kernel.tree(), params, store) == 16


def test_empty_time_range_executes_nothing():
    kernel = get_kernel("figseq")
    params = {"T": 1, "N": 4}
    store = kernel.init_store(params)
    before = store.copy()
    assert iterate_sequentially(kernel.tree(), params, store) == 0
    assert store.equals(before)


def test_matmult_matches_naive_product():
    kernel = get_kernel("matmult")
    params = {"N": 8}
    store = kernel.init_store(params, seed=3)
    a, b, c = (store.arrays[n].copy() for n in ("A", "B", "C"))
    iterate_sequentially(kernel.tree((4, 4, 4)), params, store)
    expected = c.copy()
    for i in range(8):
        for j in range(8):
            for k in range(8):
                expected[i, j] += a[i, k] * b[k, j]
    np.testing.assert_array_equal(store.arrays["C"], expected)


def test_sequential_execution_is_deterministic():
    kernel = get_kernel("sor")
    params = {"T": 2, "N": 10}
    first, second = kernel.init_store(params), kernel.init_store(params)
    tree = kernel.tree((4, 4))
    iterate_sequentially(tree, params, first)
    iterate_sequentially(tree, params, second)
    assert first.checksum() == second.checksum()
    assert first.first_difference(second) is None


def test_out_of_bounds_access_names_the_instance():
    b = TreeBuilder(("N",))

    def body(env, store):
        store["A"][env["i"] + 1] = 1.0

    tree = b.tree(
        "oob",
        b.loop("i", "0", "N-1", LoopType.parallel(), tile=True, statements=[b.stmt("S0", body)]),
        arrays=[b.array("A", "N")],
    )
    store = ArrayStore.allocate(tree.arrays, {"N": 3})
    with pytest.raises(OutOfBoundsError) as exc:
        iterate_sequentially(tree, {"N": 3}, store)
    assert exc.value.statement == "S0"
    assert exc.value.coordinates["i"] == 2


def test_count_instances_figseq_time_loop():
    tree = get_kernel("figseq").tree()
    assert count_instances(tree, tree.node("0"), {}, {"T": 3, "N": 4}) == 2


def test_count_instances_matches_heat_enumeration():
    tree = get_kernel("heat3d").tree()
    leaf = tree.node("0.0.0")
    assert leaf.var == "t3"
    expected = sum(1 for _ in heat_tiles(16, 16))
    assert expected > 0
    assert count_instances(tree, leaf, {}, {"T": 16, "N": 16}) == expected


def test_count_instances_empty_range():
    b = TreeBuilder(("N",))
    tree: LoopTree = b.tree(
        "empty",
        b.loop("i", "N", "0", LoopType.parallel(), tile=True, statements=[b.stmt("S0", _noop)]),
    )
    assert count_instances(tree, tree.node("0"), {}, {"N": 5}) == 0


def test_count_instances_under_a_prefix(grid_tree):
    tree = grid_tree()
    leaf = tree.node("0.0")
    assert count_instances(tree, leaf, {"i": 2}, {"N": 5}) == 5
    assert count_instances(tree, leaf, {}, {"N": 5}) == 25


def test_instances_follow_sequential_order():
    tree = get_kernel("figseq").tree()
    order = [(env["t"], env["i"], env["j"], env["k"]) for _, env in instances(tree, {"T": 3, "N": 4})]
    assert order == sorted(order)
    assert len(order) == 16


@pytest.mark.parametrize(
    "name, params, tiles",
    [
        ("figseq", {"T": 3, "N": 5}, ()),
        ("jac2d5p", {"T": 2, "N": 8}, (4, 4)),
        ("gs2d5p", {"T": 2, "N": 8}, (2, 4, 4)),
        ("sor", {"T": 2, "N": 8}, (4, 4)),
        ("matmult", {"N": 6}, (4, 4, 4)),
        ("lud", {"N": 7}, (4, 4)),
        ("heat3d", {"T": 8, "N": 8}, ()),
    ],
)
def test_access_summaries_match_recorded_addresses(name, params, tiles):
    kernel = get_kernel(name)
    store = kernel.init_store(params)
    assert check_accesses(kernel.tree(tiles), params, store) == []


def test_undeclared_access_is_reported():
    b = TreeBuilder(("N",))

    def body(env, store):
        store["A"][env["i"]] = store["A"][0]

    s0 = b.stmt("S0", body, b.write("A", "i"))
    tree = b.tree(
        "sneaky",
        b.loop("i", "1", "N-1", LoopType.parallel(), tile=True, statements=[s0]),
        arrays=[b.array("A", "N")],
    )
    diags = check_accesses(tree, {"N": 3}, ArrayStore.allocate(tree.arrays, {"N": 3}))
    assert len(diags) == 2
    assert diags[0].path == "S0(i=1)"
