"""Benchmark kernels authored as already-tiled loop trees.

Each kernel carries an independent nested-loop reference. The reference
performs the same per-element arithmetic in the original (untiled,
unskewed) order, so a correct parallel run must match it bitwise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .edt_formation import MarkStrategy
from .errors import SizeGuardError
from .loop_tree import ArrayStore, LoopNode, LoopTree, Statement, StatementBody, TreeBuilder
from .models import LoopType
from .range_expr import Env, parse
from .runtime import Program

log = logging.getLogger(__name__)

PAR = LoopType.parallel()
SEQ = LoopType.sequential()
BAND = LoopType.permutable(1)

REFERENCE_FLOP_LIMIT = 50_000_000

ONE_SEVENTH = 1.0 / 7.0
OMEGA = 1.25
C0 = 0.5
HEAT_PATCH = 2


def default_tiles(rank: int) -> Tuple[int, ...]:
    """16 for every tiled loop except the innermost, which gets 64."""
    if rank <= 0:
        return ()
    return (16,) * (rank - 1) + (64,)


def _span(lo: int, hi: int) -> int:
    return max(0, hi - lo + 1)


def _cdiv(a: int, b: int) -> int:
    return -((-a) // b)


@dataclass(frozen=True)
class KernelSpec:
    name: str
    title: str
    parameters: Tuple[str, ...]
    defaults: Mapping[str, int]
    size_params: Tuple[str, ...]
    tile_rank: int
    builder: Callable[[Tuple[int, ...]], LoopTree]
    reference_impl: Callable[[Env, ArrayStore], None]
    flops: Callable[[Env], int]
    distances: Mapping[str, FrozenSet[int]] = field(default_factory=dict)
    splits: Mapping[str, str] = field(default_factory=dict)
    prepare: Optional[Callable[[ArrayStore, Env], None]] = None
    description: str = ""

    def params(self, size: Optional[int] = None, overrides: Optional[Mapping[str, int]] = None) -> Dict[str, int]:
        values = dict(self.defaults)
        if size is not None:
            for name in self.size_params:
                values[name] = size
        for name, value in (overrides or {}).items():
            if name not in self.parameters:
                raise KeyError(f"{self.name} has no parameter {name!r} (expected one of {list(self.parameters)})")
            values[name] = value
        return values

    def tiles(self, tiles: Optional[Sequence[int]] = None) -> Tuple[int, ...]:
        if self.tile_rank == 0:
            return ()
        if tiles is None or len(tiles) == 0:
            return default_tiles(self.tile_rank)
        if len(tiles) == 1 and self.tile_rank > 1:
            return tuple(tiles) * self.tile_rank
        if len(tiles) != self.tile_rank:
            raise ValueError(f"{self.name} takes {self.tile_rank} tile sizes, got {len(tiles)}")
        if any(t < 1 for t in tiles):
            raise ValueError(f"tile sizes must be positive, got {list(tiles)}")
        return tuple(tiles)

    def tree(self, tiles: Optional[Sequence[int]] = None) -> LoopTree:
        return self.builder(self.tiles(tiles) if self.tile_rank else ())

    def program(
        self,
        tiles: Optional[Sequence[int]] = None,
        strategy: Optional[MarkStrategy] = None,
        *,
        metadata: bool = True,
    ) -> Program:
        tree = self.tree(tiles)
        distances = {k: sorted(v) for k, v in self.distances.items()} if metadata else None
        splits = {k: parse(v, self.parameters) for k, v in self.splits.items()} if metadata else None
        return Program.build(tree, strategy, distances=distances, splits=splits)

    def init_store(self, params: Env, seed: int = 0) -> ArrayStore:
        """Deterministic pseudo-random fill, one generator draw per array in declaration order."""
        tree = self.tree()
        rng = np.random.default_rng(seed)
        arrays: Dict[str, np.ndarray] = {}
        for decl in tree.arrays:
            dims = decl.dims(params)
            if decl.dtype == "int64":
                arrays[decl.name] = rng.integers(0, 100, size=dims, dtype=np.int64)
            else:
                arrays[decl.name] = rng.random(dims)
        store = ArrayStore(arrays)
        if self.prepare is not None:
            self.prepare(store, params)
        return store

    def reference(self, params: Env, store: Optional[ArrayStore] = None, *, seed: int = 0) -> ArrayStore:
        work = self.flops(params)
        if work > REFERENCE_FLOP_LIMIT:
            raise SizeGuardError(f"{self.name}: {work} flops exceeds the reference guard of {REFERENCE_FLOP_LIMIT}")
        result = (store or self.init_store(params, seed)).copy()
        self.reference_impl(params, result)
        return result


# -- tree helpers -------------------------------------------------------------

TileDim = Tuple[str, str, int, LoopType, LoopType]


def _rect_nest(b: TreeBuilder, dims: Sequence[TileDim], lo: str, hi: str, stmt: Statement) -> LoopNode:
    """Inter-tile loops over ``dims`` then intra-tile loops, all on ``[lo, hi]``.

    ``dims`` entries are ``(tile_var, var, size, inter_type, intra_type)``; the
    last inter-tile loop is the tile boundary.
    """
    node: Optional[LoopNode] = None
    for tv, v, size, _, intra in reversed(dims):
        kids = (node,) if node is not None else ()
        node = b.loop(
            v,
            f"MAX({size}*{tv}, {lo})",
            f"MIN({size}*{tv}+{size - 1}, {hi})",
            intra,
            *kids,
            statements=() if kids else (stmt,),
        )
    for n, (tv, _, size, inter, _) in enumerate(reversed(dims)):
        node = b.loop(tv, f"FLOOR({lo}, {size})", f"FLOOR({hi}, {size})", inter, node, tile=n == 0)
    return node


def _skewed_nest(b: TreeBuilder, bt: int, sizes: Sequence[Tuple[str, str, int]], stmt: Statement) -> LoopNode:
    """Time-skewed tiling: ``xp = t + x`` for every space dimension, all loops in band 1."""
    node: Optional[LoopNode] = None
    for tv, v, size in reversed(sizes):
        kids = (node,) if node is not None else ()
        node = b.loop(
            v,
            f"MAX({size}*{tv}, t+1)",
            f"MIN({size}*{tv}+{size - 1}, t+N-2)",
            BAND,
            *kids,
            statements=() if kids else (stmt,),
        )
    node = b.loop("t", f"{bt}*tt", f"MIN({bt}*tt+{bt - 1}, T-1)", BAND, node)
    for n, (tv, _, size) in enumerate(reversed(sizes)):
        node = b.loop(
            tv,
            f"FLOOR({bt}*tt+1, {size})",
            f"MIN(FLOOR({bt}*tt+{bt - 1}+N-2, {size}), FLOOR(T+N-3, {size}))",
            BAND,
            node,
            tile=n == 0,
        )
    return b.loop("tt", "0", f"FLOOR(T-1, {bt})", BAND, node)


# -- FIG-SEQ ------------------------------------------------------------------


def _figseq_body(env: Env, store: ArrayStore) -> None:
    A = store["A"]
    t, i, j, k = env["t"], env["i"], env["j"], env["k"]
    A[t, i, j, k] = 0.5 * A[t - 1, i, j, k] + 0.25 * (A[t, i, j - 1, k - 1] + A[t, i, j - 1, k + 1])


def _figseq(tiles: Tuple[int, ...]) -> LoopTree:
    b = TreeBuilder(("T", "N"))
    s0 = b.stmt(
        "S0",
        _figseq_body,
        b.read("A", "t-1", "i", "j", "k"),
        b.read("A", "t", "i", "j-1", "k-1"),
        b.read("A", "t", "i", "j-1", "k+1"),
        b.write("A", "t", "i", "j", "k"),
        flops=4,
    )
    return b.tree(
        "figseq",
        b.loop("t", "1", "T-1", SEQ,
            b.loop("i", "1", "N-2", PAR,
                b.loop("j", "1", "N-2", SEQ,
                    b.loop("k", "1", "N-2", PAR, tile=True, statements=[s0])))),
        arrays=[b.array("A", "T", "N", "N", "N")],
    )


def _figseq_ref(p: Env, store: ArrayStore) -> None:
    A = store["A"]
    T, N = p["T"], p["N"]
    for t in range(1, T):
        for i in range(1, N - 1):
            for j in range(1, N - 1):
                for k in range(1, N - 1):
                    A[t, i, j, k] = 0.5 * A[t - 1, i, j, k] + 0.25 * (A[t, i, j - 1, k - 1] + A[t, i, j - 1, k + 1])


# -- Jacobi ---------------------------------------------------------------------


def _jac2d_s0(env: Env, store: ArrayStore) -> None:
    A, B = store["A"], store["B"]
    i, j = env["i"], env["j"]
    B[i, j] = 0.2 * (A[i, j] + A[i - 1, j] + A[i + 1, j] + A[i, j - 1] + A[i, j + 1])


def _jac2d_s1(env: Env, store: ArrayStore) -> None:
    A, B = store["A"], store["B"]
    i, j = env["i"], env["j"]
    A[i, j] = B[i, j]


def _jac2d(tiles: Tuple[int, ...]) -> LoopTree:
    bi, bj = tiles
    b = TreeBuilder(("T", "N"))
    dims = [("it", "i", bi, PAR, PAR), ("jt", "j", bj, PAR, PAR)]
    s0 = b.stmt(
        "S0",
        _jac2d_s0,
        b.read("A", "i", "j"),
        b.read("A", "i-1", "j"),
        b.read("A", "i+1", "j"),
        b.read("A", "i", "j-1"),
        b.read("A", "i", "j+1"),
        b.write("B", "i", "j"),
        flops=5,
    )
    s1 = b.stmt("S1", _jac2d_s1, b.read("B", "i", "j"), b.write("A", "i", "j"))
    return b.tree(
        "jac2d5p",
        b.loop("t", "0", "T-1", SEQ, _rect_nest(b, dims, "1", "N-2", s0), _rect_nest(b, dims, "1", "N-2", s1)),
        arrays=[b.array("A", "N", "N"), b.array("B", "N", "N")],
    )


def _jac2d_ref(p: Env, store: ArrayStore) -> None:
    A, B = store["A"], store["B"]
    T, N = p["T"], p["N"]
    for _ in range(T):
        for i in range(1, N - 1):
            for j in range(1, N - 1):
                B[i, j] = 0.2 * (A[i, j] + A[i - 1, j] + A[i + 1, j] + A[i, j - 1] + A[i, j + 1])
        for i in range(1, N - 1):
            for j in range(1, N - 1):
                A[i, j] = B[i, j]


def _jac3d_s0(env: Env, store: ArrayStore) -> None:
    A, B = store["A"], store["B"]
    i, j, k = env["i"], env["j"], env["k"]
    B[i, j, k] = ONE_SEVENTH * (
        A[i, j, k] + A[i - 1, j, k] + A[i + 1, j, k] + A[i, j - 1, k] + A[i, j + 1, k] + A[i, j, k - 1] + A[i, j, k + 1]
    )


def _jac3d_s1(env: Env, store: ArrayStore) -> None:
    A, B = store["A"], store["B"]
    i, j, k = env["i"], env["j"], env["k"]
    A[i, j, k] = B[i, j, k]


def _jac3d(tiles: Tuple[int, ...]) -> LoopTree:
    bi, bj, bk = tiles
    b = TreeBuilder(("T", "N"))
    dims = [("it", "i", bi, PAR, PAR), ("jt", "j", bj, PAR, PAR), ("kt", "k", bk, PAR, PAR)]
    reads = [
        b.read("A", *idx)
        for idx in (
            ("i", "j", "k"), ("i-1", "j", "k"), ("i+1", "j", "k"),
            ("i", "j-1", "k"), ("i", "j+1", "k"), ("i", "j", "k-1"), ("i", "j", "k+1"),
        )
    ]
    s0 = b.stmt("S0", _jac3d_s0, *reads, b.write("B", "i", "j", "k"), flops=7)
    s1 = b.stmt("S1", _jac3d_s1, b.read("B", "i", "j", "k"), b.write("A", "i", "j", "k"))
    return b.tree(
        "jac3d7p",
        b.loop("t", "0", "T-1", SEQ, _rect_nest(b, dims, "1", "N-2", s0), _rect_nest(b, dims, "1", "N-2", s1)),
        arrays=[b.array("A", "N", "N", "N"), b.array("B", "N", "N", "N")],
    )


def _jac3d_ref(p: Env, store: ArrayStore) -> None:
    A, B = store["A"], store["B"]
    T, N = p["T"], p["N"]
    inner = range(1, N - 1)
    for _ in range(T):
        for i in inner:
            for j in inner:
                for k in inner:
                    B[i, j, k] = ONE_SEVENTH * (
                        A[i, j, k] + A[i - 1, j, k] + A[i + 1, j, k] + A[i, j - 1, k]
                        + A[i, j + 1, k] + A[i, j, k - 1] + A[i, j, k + 1]
                    )
        for i in inner:
            for j in inner:
                for k in inner:
                    A[i, j, k] = B[i, j, k]


# -- Gauss-Seidel (time-skewed) -------------------------------------------------


def _gs2d_body(env: Env, store: ArrayStore) -> None:
    A = store["A"]
    t = env["t"]
    i, j = env["ip"] - t, env["jp"] - t
    A[i, j] = 0.2 * (A[i - 1, j] + A[i, j - 1] + A[i, j] + A[i + 1, j] + A[i, j + 1])


def _gs2d(tiles: Tuple[int, ...]) -> LoopTree:
    bt, bi, bj = tiles
    b = TreeBuilder(("T", "N"))
    s0 = b.stmt(
        "S0",
        _gs2d_body,
        b.read("A", "ip-t-1", "jp-t"),
        b.read("A", "ip-t", "jp-t-1"),
        b.read("A", "ip-t", "jp-t"),
        b.read("A", "ip-t+1", "jp-t"),
        b.read("A", "ip-t", "jp-t+1"),
        b.write("A", "ip-t", "jp-t"),
        flops=5,
    )
    return b.tree(
        "gs2d5p",
        _skewed_nest(b, bt, [("it", "ip", bi), ("jt", "jp", bj)], s0),
        arrays=[b.array("A", "N", "N")],
    )


def _gs2d_ref(p: Env, store: ArrayStore) -> None:
    A = store["A"]
    T, N = p["T"], p["N"]
    for _ in range(T):
        for i in range(1, N - 1):
            for j in range(1, N - 1):
                A[i, j] = 0.2 * (A[i - 1, j] + A[i, j - 1] + A[i, j] + A[i + 1, j] + A[i, j + 1])


def _gs3d_body(env: Env, store: ArrayStore) -> None:
    A = store["A"]
    t = env["t"]
    i, j, k = env["ip"] - t, env["jp"] - t, env["kp"] - t
    A[i, j, k] = ONE_SEVENTH * (
        A[i - 1, j, k] + A[i, j - 1, k] + A[i, j, k - 1] + A[i, j, k] + A[i + 1, j, k] + A[i, j + 1, k] + A[i, j, k + 1]
    )


def _gs3d(tiles: Tuple[int, ...]) -> LoopTree:
    bt, bi, bj, bk = tiles
    b = TreeBuilder(("T", "N"))
    reads = [
        b.read("A", *idx)
        for idx in (
            ("ip-t-1", "jp-t", "kp-t"), ("ip-t", "jp-t-1", "kp-t"), ("ip-t", "jp-t", "kp-t-1"),
            ("ip-t", "jp-t", "kp-t"),
            ("ip-t+1", "jp-t", "kp-t"), ("ip-t", "jp-t+1", "kp-t"), ("ip-t", "jp-t", "kp-t+1"),
        )
    ]
    s0 = b.stmt("S0", _gs3d_body, *reads, b.write("A", "ip-t", "jp-t", "kp-t"), flops=7)
    return b.tree(
        "gs3d7p",
        _skewed_nest(b, bt, [("it", "ip", bi), ("jt", "jp", bj), ("kt", "kp", bk)], s0),
        arrays=[b.array("A", "N", "N", "N")],
    )


def _gs3d_ref(p: Env, store: ArrayStore) -> None:
    A = store["A"]
    T, N = p["T"], p["N"]
    inner = range(1, N - 1)
    for _ in range(T):
        for i in inner:
            for j in inner:
                for k in inner:
                    A[i, j, k] = ONE_SEVENTH * (
                        A[i - 1, j, k] + A[i, j - 1, k] + A[i, j, k - 1] + A[i, j, k]
                        + A[i + 1, j, k] + A[i, j + 1, k] + A[i, j, k + 1]
                    )


# -- SOR ----------------------------------------------------------------------


def _sor_body(env: Env, store: ArrayStore) -> None:
    A = store["A"]
    i, j = env["i"], env["j"]
    A[i, j] = OMEGA * 0.25 * (A[i - 1, j] + A[i + 1, j] + A[i, j - 1] + A[i, j + 1]) + (1.0 - OMEGA) * A[i, j]


def _sor(tiles: Tuple[int, ...]) -> LoopTree:
    bi, bj = tiles
    b = TreeBuilder(("T", "N"))
    s0 = b.stmt(
        "S0",
        _sor_body,
        b.read("A", "i-1", "j"),
        b.read("A", "i+1", "j"),
        b.read("A", "i", "j-1"),
        b.read("A", "i", "j+1"),
        b.read("A", "i", "j"),
        b.write("A", "i", "j"),
        flops=8,
    )
    dims = [("it", "i", bi, BAND, BAND), ("jt", "j", bj, BAND, BAND)]
    return b.tree(
        "sor",
        b.loop("t", "0", "T-1", SEQ, _rect_nest(b, dims, "1", "N-2", s0)),
        arrays=[b.array("A", "N", "N")],
    )


def _sor_ref(p: Env, store: ArrayStore) -> None:
    A = store["A"]
    T, N = p["T"], p["N"]
    for _ in range(T):
        for i in range(1, N - 1):
            for j in range(1, N - 1):
                A[i, j] = OMEGA * 0.25 * (A[i - 1, j] + A[i + 1, j] + A[i, j - 1] + A[i, j + 1]) + (1.0 - OMEGA) * A[i, j]


# -- MATMULT --------------------------------------------------------------------


def _matmult_body(env: Env, store: ArrayStore) -> None:
    A, B, C = store["A"], store["B"], store["C"]
    i, j, k = env["i"], env["j"], env["k"]
    C[i, j] += A[i, k] * B[k, j]


def _matmult(tiles: Tuple[int, ...]) -> LoopTree:
    bi, bj, bk = tiles
    b = TreeBuilder(("N",))
    s0 = b.stmt(
        "S0",
        _matmult_body,
        b.read("A", "i", "k"),
        b.read("B", "k", "j"),
        b.read("C", "i", "j"),
        b.write("C", "i", "j"),
        flops=2,
    )
    dims = [("it", "i", bi, PAR, PAR), ("jt", "j", bj, PAR, PAR), ("kt", "k", bk, BAND, BAND)]
    return b.tree(
        "matmult",
        _rect_nest(b, dims, "0", "N-1", s0),
        arrays=[b.array("A", "N", "N"), b.array("B", "N", "N"), b.array("C", "N", "N")],
    )


def _matmult_ref(p: Env, store: ArrayStore) -> None:
    A, B, C = store["A"], store["B"], store["C"]
    N = p["N"]
    for i in range(N):
        for j in range(N):
            for k in range(N):
                C[i, j] += A[i, k] * B[k, j]


# -- LUD ------------------------------------------------------------------------


def _lud_scale(env: Env, store: ArrayStore) -> None:
    A = store["A"]
    i, k = env["i0"], env["k"]
    A[i, k] = A[i, k] / A[k, k]


def _lud_update(env: Env, store: ArrayStore) -> None:
    A = store["A"]
    i, j, k = env["i"], env["j"], env["k"]
    A[i, j] = A[i, j] - A[i, k] * A[k, j]


def _lud(tiles: Tuple[int, ...]) -> LoopTree:
    bi, bj = tiles
    b = TreeBuilder(("N",))
    s0 = b.stmt("S0", _lud_scale, b.read("A", "i0", "k"), b.read("A", "k", "k"), b.write("A", "i0", "k"), flops=1)
    s1 = b.stmt(
        "S1",
        _lud_update,
        b.read("A", "i", "j"),
        b.read("A", "i", "k"),
        b.read("A", "k", "j"),
        b.write("A", "i", "j"),
        flops=2,
    )
    return b.tree(
        "lud",
        b.loop(
            "k", "0", "N-2", SEQ,
            _rect_nest(b, [("i0t", "i0", bi, PAR, PAR)], "k+1", "N-1", s0),
            _rect_nest(b, [("it", "i", bi, PAR, PAR), ("jt", "j", bj, PAR, PAR)], "k+1", "N-1", s1),
        ),
        arrays=[b.array("A", "N", "N")],
    )


def _lud_prepare(store: ArrayStore, params: Env) -> None:
    n = params["N"]
    store.arrays["A"][np.diag_indices(n)] += n


def _lud_ref(p: Env, store: ArrayStore) -> None:
    A = store["A"]
    N = p["N"]
    for k in range(N - 1):
        for i in range(k + 1, N):
            A[i, k] = A[i, k] / A[k, k]
        for i in range(k + 1, N):
            for j in range(k + 1, N):
                A[i, j] = A[i, j] - A[i, k] * A[k, j]


# -- HEAT-3D diamond tiles ------------------------------------------------------


def heat_tiles(T: int, N: int) -> Iterator[Tuple[int, int, int]]:
    """The diamond-tiled inter-tile iteration space, enumerated with plain integer arithmetic."""
    for t1 in range(_cdiv(-N - 15, 16), (T - 3) // 16 + 1):
        t2_hi = min((-8 * t1 + T - 2) // 8, (8 * t1 + N + 7) // 8, (T + N - 2) // 16)
        for t2 in range(max(t1, -t1 - 1), t2_hi + 1):
            t3_lo = max(0, _cdiv(t1 + t2 - 1, 2), _cdiv(16 * t2 - N - 14, 16))
            t3_hi = min((T + N - 2) // 16, (16 * t2 + N + 14) // 16, (8 * t1 + 8 * t2 + N + 15) // 16)
            for t3 in range(t3_lo, t3_hi + 1):
                yield t1, t2, t3


def _heat_body(env: Env, store: ArrayStore) -> None:
    H = store["H"]
    x, y, z = env["x"], env["y"], env["z"]
    H[x, y, z] = ONE_SEVENTH * (
        H[x - 1, y, z] + H[x, y - 1, z] + H[x, y, z - 1] + H[x, y, z] + H[x + 1, y, z] + H[x, y + 1, z] + H[x, y, z + 1]
    )


def _heat(tiles: Tuple[int, ...]) -> LoopTree:
    b = TreeBuilder(("T", "N"))
    reads = [
        b.read("H", *idx)
        for idx in (
            ("x-1", "y", "z"), ("x", "y-1", "z"), ("x", "y", "z-1"), ("x", "y", "z"),
            ("x+1", "y", "z"), ("x", "y+1", "z"), ("x", "y", "z+1"),
        )
    ]
    s0 = b.stmt("S0", _heat_body, *reads, b.write("H", "x", "y", "z"), flops=7)
    p = HEAT_PATCH
    patch = b.loop("x", f"{p}*t1+{p}*N+1", f"{p}*t1+{p}*N+{p}", BAND,
        b.loop("y", f"{p}*t2+1", f"{p}*t2+{p}", BAND,
            b.loop("z", f"{p}*t3+1", f"{p}*t3+{p}", BAND, statements=[s0])))
    extent = f"{p}*T+{p}*N+{p + 2}"
    return b.tree(
        "heat3d",
        b.loop("t1", "CEIL(-N-15, 16)", "FLOOR(T-3, 16)", BAND,
            b.loop("t2", "MAX(t1, -t1-1)",
                "MIN(MIN(FLOOR(-8*t1+T-2, 8), FLOOR(8*t1+N+7, 8)), FLOOR(T+N-2, 16))", BAND,
                b.loop("t3", "MAX(MAX(0, CEIL(t1+t2-1, 2)), CEIL(16*t2-N-14, 16))",
                    "MIN(MIN(FLOOR(T+N-2, 16), FLOOR(16*t2+N+14, 16)), FLOOR(8*t1+8*t2+N+15, 16))",
                    BAND, patch, tile=True))),
        arrays=[b.array("H", extent, extent, extent)],
    )


def _heat_ref(p: Env, store: ArrayStore) -> None:
    H = store["H"]
    N = p["N"]
    side = range(1, HEAT_PATCH + 1)
    for t1, t2, t3 in heat_tiles(p["T"], N):
        for x in (HEAT_PATCH * (t1 + N) + a for a in side):
            for y in (HEAT_PATCH * t2 + a for a in side):
                for z in (HEAT_PATCH * t3 + a for a in side):
                    H[x, y, z] = ONE_SEVENTH * (
                        H[x - 1, y, z] + H[x, y - 1, z] + H[x, y, z - 1] + H[x, y, z]
                        + H[x + 1, y, z] + H[x, y + 1, z] + H[x, y, z + 1]
                    )


# -- conservative-semantics toys -------------------------------------------------


def _toy_dist_body(env: Env, store: ArrayStore) -> None:
    A = store["A"]
    t, i = env["t"], env["i"]
    A[t + 1, i] = C0 * A[t - 1, i]


def _toy_dist(tiles: Tuple[int, ...]) -> LoopTree:
    b = TreeBuilder(("T", "N"))
    s0 = b.stmt("S0", _toy_dist_body, b.read("A", "t-1", "i"), b.write("A", "t+1", "i"), flops=1)
    return b.tree(
        "toydist",
        b.loop("t", "1", "T-1", BAND, b.loop("i", "1", "N-2", PAR, statements=[s0]), tile=True),
        arrays=[b.array("A", "T+1", "N")],
    )


def _toy_dist_ref(p: Env, store: ArrayStore) -> None:
    A = store["A"]
    for t in range(1, p["T"]):
        for i in range(1, p["N"] - 1):
            A[t + 1, i] = C0 * A[t - 1, i]


def _toy_split_body(env: Env, store: ArrayStore) -> None:
    A = store["A"]
    t, i = env["t"], env["i"]
    A[t, i] = C0 * A[env["T"] - t, i]


def _toy_split(tiles: Tuple[int, ...]) -> LoopTree:
    b = TreeBuilder(("T", "N"))
    s0 = b.stmt("S0", _toy_split_body, b.read("A", "T-t", "i"), b.write("A", "t", "i"), flops=1)
    return b.tree(
        "toysplit",
        b.loop("t", "1", "T-1", BAND, b.loop("i", "1", "N-2", PAR, statements=[s0]), tile=True),
        arrays=[b.array("A", "T", "N")],
    )


def _toy_split_ref(p: Env, store: ArrayStore) -> None:
    A = store["A"]
    T = p["T"]
    for t in range(1, T):
        for i in range(1, p["N"] - 1):
            A[t, i] = C0 * A[T - t, i]


# -- registry -------------------------------------------------------------------


def _stencil_flops(per: int, rank: int) -> Callable[[Env], int]:
    return lambda p: per * max(0, p["T"]) * _span(1, p["N"] - 2) ** rank


def _lud_flops(p: Env) -> int:
    n = p["N"]
    return sum((n - 1 - k) + 2 * (n - 1 - k) ** 2 for k in range(n - 1))


_REGISTRY: Tuple[KernelSpec, ...] = (
    KernelSpec(
        "figseq", "FIG-SEQ", ("T", "N"), {"T": 3, "N": 4}, ("T", "N"), 0,
        _figseq, _figseq_ref, lambda p: 4 * _span(1, p["T"] - 1) * _span(1, p["N"] - 2) ** 3,
        description="seq/doall/seq/doall nest, one task per innermost iteration",
    ),
    KernelSpec(
        "jac2d5p", "JAC-2D-5P", ("T", "N"), {"T": 4, "N": 32}, ("N",), 2,
        _jac2d, _jac2d_ref, _stencil_flops(5, 2),
        description="2-D 5-point Jacobi, sequential time, parallel tiles",
    ),
    KernelSpec(
        "jac3d7p", "JAC-3D-7P", ("T", "N"), {"T": 2, "N": 16}, ("N",), 3,
        _jac3d, _jac3d_ref, _stencil_flops(7, 3),
        description="3-D 7-point Jacobi, sequential time, parallel tiles",
    ),
    KernelSpec(
        "gs2d5p", "GS-2D-5P", ("T", "N"), {"T": 4, "N": 32}, ("N",), 3,
        _gs2d, _gs2d_ref, _stencil_flops(5, 2),
        description="2-D 5-point Gauss-Seidel, time-skewed permutable band",
    ),
    KernelSpec(
        "gs3d7p", "GS-3D-7P", ("T", "N"), {"T": 2, "N": 16}, ("N",), 4,
        _gs3d, _gs3d_ref, _stencil_flops(7, 3),
        description="3-D 7-point Gauss-Seidel, time-skewed permutable band",
    ),
    KernelSpec(
        "sor", "SOR", ("T", "N"), {"T": 4, "N": 32}, ("N",), 2,
        _sor, _sor_ref, _stencil_flops(8, 2),
        description="successive over-relaxation, sequential time, permutable space band",
    ),
    KernelSpec(
        "matmult", "MATMULT", ("N",), {"N": 32}, ("N",), 3,
        _matmult, _matmult_ref, lambda p: 2 * max(0, p["N"]) ** 3,
        description="C += A*B with parallel i/j tiles and a permutable k chain",
    ),
    KernelSpec(
        "lud", "LUD", ("N",), {"N": 32}, ("N",), 2,
        _lud, _lud_ref, _lud_flops, prepare=_lud_prepare,
        description="right-looking LU without pivoting on a diagonally dominant matrix",
    ),
    KernelSpec(
        "heat3d", "HEAT-3D-DIAMOND", ("T", "N"), {"T": 16, "N": 16}, ("T", "N"), 0,
        _heat, _heat_ref, lambda p: 7 * HEAT_PATCH**3 * sum(1 for _ in heat_tiles(p["T"], p["N"])),
        description="diamond-tiled heat-3D, a 7-point relaxation over a small patch per tile",
    ),
    KernelSpec(
        "toydist", "TOY-DIST", ("T", "N"), {"T": 8, "N": 6}, ("T",), 0,
        _toy_dist, _toy_dist_ref, lambda p: _span(1, p["T"] - 1) * _span(1, p["N"] - 2),
        distances={"t": frozenset({2})},
        description="self-dependence of distance 2 on t",
    ),
    KernelSpec(
        "toysplit", "TOY-SPLIT", ("T", "N"), {"T": 8, "N": 6}, ("T",), 0,
        _toy_split, _toy_split_ref, lambda p: _span(1, p["T"] - 1) * _span(1, p["N"] - 2),
        splits={"t": "CEIL(T, 2)"},
        description="mirrored reads across the middle of t, split at CEIL(T, 2)",
    ),
)

REQUIRED = ("heat3d", "jac2d5p", "jac3d7p", "gs2d5p", "gs3d7p", "sor", "matmult", "lud", "figseq")

_LOADED: Dict[str, KernelSpec] = {}


def registry() -> List[KernelSpec]:
    return list(_REGISTRY) + list(_LOADED.values())


def register_kernel(spec: KernelSpec) -> KernelSpec:
    """Make a loaded kernel visible to get_kernel; built-in names cannot be replaced."""
    if any(spec.name == k.name for k in _REGISTRY):
        raise ValueError(f"kernel {spec.name!r} is built in")
    _LOADED[spec.name] = spec
    log.debug("registered kernel %s", spec.name)
    return spec


def get_kernel(name: str) -> KernelSpec:
    key = name.strip().lower()
    for spec in registry():
        if key in (spec.name.lower(), spec.title.lower()):
            return spec
    raise KeyError(f"unknown kernel {name!r}; known: {', '.join(k.name for k in registry())}")


def reference(kernel: KernelSpec, params: Env, store: Optional[ArrayStore] = None, *, seed: int = 0) -> ArrayStore:
    return kernel.reference(params, store, seed=seed)


def statement_body(ref: str) -> StatementBody:
    """Resolve ``kernel.statement`` (e.g. ``jac2d5p.S0``) to a registered statement body."""
    kernel_name, _, sid = ref.partition(".")
    tree = get_kernel(kernel_name).tree()
    for stmt in tree.statements():
        if stmt.id == sid:
            return stmt.body
    raise KeyError(f"kernel {kernel_name} has no statement {sid!r}")
