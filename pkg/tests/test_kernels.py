from __future__ import annotations

import numpy as np
import pytest

from edtflow.dependence import tag_space
from edtflow.errors import SizeGuardError
from edtflow.harness import hierarchy_strategy
from edtflow.kernels import (
    REQUIRED,
    default_tiles,
    get_kernel,
    reference,
    registry,
    statement_body,
)
from edtflow.loop_tree import ArrayStore, instances, iterate_sequentially, validate
from edtflow.models import Mode
from edtflow.runtime import run

SMALL = [
    ("jac2d5p", {"T": 2, "N": 12}, (4, 4)),
    ("jac3d7p", {"T": 2, "N": 8}, (4, 4, 4)),
    ("gs2d5p", {"T": 3, "N": 10}, (2, 4, 4)),
    ("gs3d7p", {"T": 2, "N": 8}, (2, 4, 4, 4)),
    ("sor", {"T": 2, "N": 10}, (4, 4)),
    ("matmult", {"N": 8}, (4, 4, 4)),
    ("lud", {"N": 10}, (4, 4)),
    ("heat3d", {"T": 8, "N": 8}, ()),
    ("figseq", {"T": 3, "N": 5}, ()),
]


def test_registry_has_every_required_kernel():
    names = {k.name for k in registry()}
    assert set(REQUIRED) <= names
    assert len(REQUIRED) == 9


def test_lookup_by_title_and_unknown_name():
    assert get_kernel("JAC-2D-5P").name == "jac2d5p"
    assert get_kernel(" Sor ").name == "sor"
    with pytest.raises(KeyError):
        get_kernel("nope")


def test_figseq_loop_types():
    tree = get_kernel("figseq").tree()
    assert [str(n.loop_type) for n in tree.loops()] == ["seq", "doall", "seq", "doall"]


def test_default_tile_policy():
    assert default_tiles(3) == (16, 16, 64)
    assert default_tiles(1) == (64,)
    assert default_tiles(0) == ()
    assert get_kernel("matmult").tiles() == (16, 16, 64)
    assert get_kernel("jac2d5p").tiles([8]) == (8, 8)
    with pytest.raises(ValueError):
        get_kernel("jac2d5p").tiles([4, 4, 4])


def test_matmult_1024_has_64k_leaf_edts():
    program = get_kernel("matmult").program((16, 16, 64))
    (edt,) = program.edts
    assert edt.is_leaf
    assert sum(1 for _ in tag_space(edt, {"N": 1024})) == 64 * 1024


def test_params_overrides():
    kernel = get_kernel("jac2d5p")
    assert kernel.params(20) == {"T": 4, "N": 20}
    assert kernel.params(overrides={"T": 1}) == {"T": 1, "N": 32}
    with pytest.raises(KeyError):
        kernel.params(overrides={"Q": 1})


@pytest.mark.parametrize("name, params, tiles", SMALL)
def test_trees_validate(name, params, tiles):
    kernel = get_kernel(name)
    assert validate(kernel.tree(tiles), params) == []


@pytest.mark.parametrize("name, params, tiles", SMALL)
def test_flop_count_matches_instance_audit(name, params, tiles):
    kernel = get_kernel(name)
    audited = sum(stmt.flops for stmt, _ in instances(kernel.tree(tiles), params))
    assert kernel.flops(params) == audited
    assert audited > 0


@pytest.mark.parametrize("name, params, tiles", SMALL)
def test_reference_matches_sequential_tree(name, params, tiles):
    kernel = get_kernel(name)
    store = kernel.init_store(params, seed=5)
    iterate_sequentially(kernel.tree(tiles), params, store)
    assert store.first_difference(reference(kernel, params, seed=5)) is None


@pytest.mark.parametrize("threads", [1, 2, 4, 8])
@pytest.mark.parametrize("mode", list(Mode))
@pytest.mark.parametrize("name, params, tiles", SMALL)
def test_parallel_runs_match_reference(name, params, tiles, mode, threads):
    kernel = get_kernel(name)
    store = kernel.init_store(params)
    run(kernel.program(tiles), params, store, mode, threads)
    assert store.first_difference(kernel.reference(params)) is None


def test_gauss_seidel_two_level_hierarchy_verifies():
    kernel = get_kernel("gs3d7p")
    params = {"T": 2, "N": 8}
    tiles = (2, 4, 4, 4)
    tree = kernel.tree(tiles)
    program = kernel.program(tiles, hierarchy_strategy(tree, "user:2"))
    assert [e.node.var for e in program.edts] == ["it", "kt"]
    for mode in Mode:
        store = kernel.init_store(params)
        run(program, params, store, mode, 4)
        assert store.first_difference(kernel.reference(params)) is None


def test_jacobi_fixed_point_on_ones():
    kernel = get_kernel("jac2d5p")
    params = {"T": 1, "N": 6}
    store = ArrayStore({"A": np.ones((6, 6)), "B": np.zeros((6, 6))})
    result = kernel.reference(params, store)
    np.testing.assert_array_equal(result.arrays["A"], np.ones((6, 6)))


def test_matmult_identity():
    kernel = get_kernel("matmult")
    a = np.array([[1.5, -2.0], [0.25, 4.0]])
    store = ArrayStore({"A": np.eye(2), "B": a.copy(), "C": np.zeros((2, 2))})
    result = kernel.reference({"N": 2}, store)
    np.testing.assert_array_equal(result.arrays["C"], a)


def test_sor_single_sweep_by_hand():
    kernel = get_kernel("sor")
    grid = np.zeros((4, 4))
    grid[0, 1] = 8.0
    result = kernel.reference({"T": 1, "N": 4}, ArrayStore({"A": grid}))
    A = result.arrays["A"]
    assert A[1, 1] == 2.5
    assert A[1, 2] == 0.78125
    assert A[2, 1] == 0.78125
    assert A[2, 2] == 0.48828125


def test_reference_leaves_input_untouched():
    kernel = get_kernel("sor")
    params = {"T": 1, "N": 6}
    store = kernel.init_store(params)
    before = store.checksum()
    kernel.reference(params, store)
    assert store.checksum() == before


def test_reference_size_guard():
    with pytest.raises(SizeGuardError):
        get_kernel("matmult").reference({"N": 1024})


def test_lud_is_diagonally_dominant():
    kernel = get_kernel("lud")
    store = kernel.init_store({"N": 6})
    A = store.arrays["A"]
    assert all(A[i, i] >= 6 for i in range(6))


def test_init_store_is_seeded():
    kernel = get_kernel("gs2d5p")
    params = {"T": 1, "N": 8}
    assert kernel.init_store(params, 1).checksum() == kernel.init_store(params, 1).checksum()
    assert kernel.init_store(params, 1).checksum() != kernel.init_store(params, 2).checksum()


def test_statement_body_resolution():
    assert statement_body("sor.S0") is get_kernel("sor").tree().statements()[0].body
    with pytest.raises(KeyError):
        statement_body("sor.S9")
