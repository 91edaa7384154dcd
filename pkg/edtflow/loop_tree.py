"""Typed loop trees: the tiled program representation consumed by EDT formation.

A tree has an explicit root (level -1) whose children are the outermost loops.
Siblings are distributed loops in program order. Statements hang off the loop
that directly encloses them and run before that loop's child loops on every
iteration.
"""

from __future__ import annotations

import hashlib
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import (
    Callable,
    Dict,
    Iterator,
    List,
    Mapping,
    MutableMapping,
    Optional,
    Sequence,
    Set,
    Tuple,
)

import numpy as np

from .errors import OutOfBoundsError, ValidationError
from .models import AccessMode, LoopKind, LoopType
from .range_expr import Env, RangeExpr, parse

log = logging.getLogger(__name__)

StatementBody = Callable[[Env, "ArrayStore"], None]

_DTYPES = {"float64": np.float64, "int64": np.int64}


@dataclass(frozen=True)
class AccessSummary:
    array: str
    indices: Tuple[RangeExpr, ...]
    mode: AccessMode

    def cell(self, env: Env) -> Tuple[int, ...]:
        return tuple(ix.evaluate(env) for ix in self.indices)

    def __str__(self) -> str:
        return f"{self.mode.value} {self.array}[{', '.join(str(i) for i in self.indices)}]"


@dataclass(frozen=True, eq=False)
class Statement:
    id: str
    body: StatementBody
    accesses: Tuple[AccessSummary, ...] = ()
    flops: int = 0

    def __repr__(self) -> str:
        return f"Statement({self.id!r})"


@dataclass(frozen=True)
class ArrayDecl:
    name: str
    shape: Tuple[RangeExpr, ...]
    dtype: str = "float64"

    def dims(self, params: Env) -> Tuple[int, ...]:
        return tuple(d.evaluate(params) for d in self.shape)


@dataclass(eq=False)
class LoopNode:
    var: Optional[str]
    lb: Optional[RangeExpr]
    ub: Optional[RangeExpr]
    loop_type: Optional[LoopType]
    step: int = 1
    tile_boundary: bool = False
    children: List["LoopNode"] = field(default_factory=list)
    statements: List[Statement] = field(default_factory=list)
    level: int = -1
    uid: str = ""
    label: str = "<root>"

    @property
    def is_root(self) -> bool:
        return self.var is None

    def values(self, env: Env) -> range:
        return range(self.lb.evaluate(env), self.ub.evaluate(env) + 1, self.step)

    def contains(self, value: int, env: Env) -> bool:
        lo = self.lb.evaluate(env)
        if value < lo or value > self.ub.evaluate(env):
            return False
        return self.step == 1 or (value - lo) % self.step == 0

    def __repr__(self) -> str:
        return f"LoopNode({self.label})"


@dataclass(frozen=True)
class Diagnostic:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


class LoopTree:
    """An immutable-after-construction tree of typed loops."""

    def __init__(
        self,
        name: str,
        loops: Sequence[LoopNode],
        parameters: Sequence[str] = (),
        arrays: Sequence[ArrayDecl] = (),
    ) -> None:
        self.name = name
        self.parameters: Tuple[str, ...] = tuple(parameters)
        self.arrays: Tuple[ArrayDecl, ...] = tuple(arrays)
        self.root = LoopNode(var=None, lb=None, ub=None, loop_type=None, children=list(loops))
        self._parent: Dict[int, LoopNode] = {}
        self._by_uid: Dict[str, LoopNode] = {"": self.root}
        self._number(self.root)

    def _number(self, node: LoopNode) -> None:
        for idx, child in enumerate(node.children):
            child.level = node.level + 1
            child.uid = f"{node.uid}.{idx}" if node.uid else str(idx)
            child.label = child.var if node.is_root else f"{node.label}/{child.var}"
            self._parent[id(child)] = node
            self._by_uid[child.uid] = child
            self._number(child)

    def parent(self, node: LoopNode) -> Optional[LoopNode]:
        return self._parent.get(id(node))

    def node(self, uid: str) -> LoopNode:
        return self._by_uid[uid]

    def has_node(self, uid: str) -> bool:
        return uid in self._by_uid

    def nodes(self) -> Iterator[LoopNode]:
        """Breadth-first, root first."""
        queue = deque([self.root])
        while queue:
            node = queue.popleft()
            yield node
            queue.extend(node.children)

    def loops(self) -> List[LoopNode]:
        return [n for n in self.nodes() if not n.is_root]

    def path(self, node: LoopNode) -> List[LoopNode]:
        """Loops from level 0 down to ``node`` inclusive."""
        chain: List[LoopNode] = []
        cur: Optional[LoopNode] = node
        while cur is not None and not cur.is_root:
            chain.append(cur)
            cur = self.parent(cur)
        chain.reverse()
        return chain

    def nodes_at_level(self, level: int) -> List[LoopNode]:
        return [n for n in self.nodes() if n.level == level]

    def statements(self) -> List[Statement]:
        found: List[Statement] = []
        for node in _preorder(self.root):
            found.extend(node.statements)
        return found

    def array(self, name: str) -> ArrayDecl:
        for decl in self.arrays:
            if decl.name == name:
                return decl
        raise KeyError(name)


def _preorder(node: LoopNode) -> Iterator[LoopNode]:
    yield node
    for child in node.children:
        yield from _preorder(child)


class TreeBuilder:
    """Small authoring helper: bounds and subscripts are range-grammar strings."""

    def __init__(self, parameters: Sequence[str]) -> None:
        self.parameters = tuple(parameters)

    def expr(self, text: str | int | RangeExpr) -> RangeExpr:
        if isinstance(text, RangeExpr):
            return text
        return parse(str(text), self.parameters)

    def loop(
        self,
        var: str,
        lb: str | int,
        ub: str | int,
        loop_type: LoopType,
        *children: LoopNode,
        tile: bool = False,
        step: int = 1,
        statements: Sequence[Statement] = (),
    ) -> LoopNode:
        return LoopNode(
            var=var,
            lb=self.expr(lb),
            ub=self.expr(ub),
            loop_type=loop_type,
            step=step,
            tile_boundary=tile,
            children=list(children),
            statements=list(statements),
        )

    def read(self, array: str, *indices: str | int) -> AccessSummary:
        return AccessSummary(array, tuple(self.expr(i) for i in indices), AccessMode.READ)

    def write(self, array: str, *indices: str | int) -> AccessSummary:
        return AccessSummary(array, tuple(self.expr(i) for i in indices), AccessMode.WRITE)

    def stmt(self, sid: str, body: StatementBody, *accesses: AccessSummary, flops: int = 0) -> Statement:
        return Statement(sid, body, tuple(accesses), flops)

    def array(self, name: str, *shape: str | int, dtype: str = "float64") -> ArrayDecl:
        return ArrayDecl(name, tuple(self.expr(d) for d in shape), dtype)

    def tree(self, name: str, *loops: LoopNode, arrays: Sequence[ArrayDecl] = ()) -> LoopTree:
        return LoopTree(name, loops, self.parameters, arrays)


# -- array storage --------------------------------------------------------------


class _CheckedArray:
    __slots__ = ("_name", "_data")

    def __init__(self, name: str, data: np.ndarray) -> None:
        self._name = name
        self._data = data

    def _check(self, idx) -> Tuple[int, ...]:
        key = idx if isinstance(idx, tuple) else (idx,)
        shape = self._data.shape
        if len(key) != len(shape) or any(not 0 <= k < n for k, n in zip(key, shape)):
            raise IndexError(f"{self._name}{list(key)} outside shape {shape}")
        return key

    def __getitem__(self, idx):
        return self._data[self._check(idx)]

    def __setitem__(self, idx, value) -> None:
        self._data[self._check(idx)] = value

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._data.shape


class ArrayStore:
    """Named dense arrays. Statement bodies index them as ``store["A"][i, j]``."""

    def __init__(self, arrays: Mapping[str, np.ndarray], *, checked: bool = False) -> None:
        self.arrays: Dict[str, np.ndarray] = dict(arrays)
        self.checked = checked

    @classmethod
    def allocate(cls, decls: Sequence[ArrayDecl], params: Env) -> "ArrayStore":
        return cls(
            {d.name: np.zeros(d.dims(params), dtype=_DTYPES[d.dtype]) for d in decls}
        )

    def __getitem__(self, name: str):
        data = self.arrays[name]
        return _CheckedArray(name, data) if self.checked else data

    def __contains__(self, name: str) -> bool:
        return name in self.arrays

    def names(self) -> List[str]:
        return sorted(self.arrays)

    def view(self, *, checked: bool) -> "ArrayStore":
        return ArrayStore(self.arrays, checked=checked)

    def copy(self) -> "ArrayStore":
        return ArrayStore({k: v.copy() for k, v in self.arrays.items()}, checked=self.checked)

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in self.names():
            data = np.ascontiguousarray(self.arrays[name])
            digest.update(name.encode())
            digest.update(str(data.shape).encode())
            digest.update(data.tobytes())
        return digest.hexdigest()[:16]

    def first_difference(self, other: "ArrayStore") -> Optional[str]:
        """Describe the first cell where ``other`` differs bitwise, or None."""
        if self.names() != other.names():
            return f"array sets differ: {self.names()} vs {other.names()}"
        for name in self.names():
            a, b = self.arrays[name], other.arrays[name]
            if a.shape != b.shape or a.dtype != b.dtype:
                return f"{name}: shape/dtype {a.shape}/{a.dtype} vs {b.shape}/{b.dtype}"
            diff = np.argwhere(a.view(np.int64) != b.view(np.int64))
            if len(diff):
                cell = tuple(int(i) for i in diff[0])
                return f"{name}{list(cell)}: expected {a[cell]!r}, got {b[cell]!r} ({len(diff)} cells differ)"
        return None

    def equals(self, other: "ArrayStore") -> bool:
        return self.first_difference(other) is None


class _RecordingArray:
    __slots__ = ("_name", "_data", "_log")

    def __init__(self, name: str, data: np.ndarray, log_: List[Tuple[str, Tuple[int, ...], AccessMode]]) -> None:
        self._name = name
        self._data = data
        self._log = log_

    def __getitem__(self, idx):
        key = idx if isinstance(idx, tuple) else (idx,)
        self._log.append((self._name, tuple(int(k) for k in key), AccessMode.READ))
        return self._data[key]

    def __setitem__(self, idx, value) -> None:
        key = idx if isinstance(idx, tuple) else (idx,)
        self._log.append((self._name, tuple(int(k) for k in key), AccessMode.WRITE))
        self._data[key] = value


class RecordingStore(ArrayStore):
    """ArrayStore that logs every element read and write."""

    def __init__(self, arrays: Mapping[str, np.ndarray]) -> None:
        super().__init__(arrays)
        self.records: List[Tuple[str, Tuple[int, ...], AccessMode]] = []

    def __getitem__(self, name: str):
        return _RecordingArray(name, self.arrays[name], self.records)


# -- traversal ----------------------------------------------------------------


def iter_points(nodes: Sequence[LoopNode], env: MutableMapping[str, int]) -> Iterator[Dict[str, int]]:
    """Enumerate the nested iterations of ``nodes`` (outermost first) under ``env``.

    Yields a fresh dict per point; ``env`` is restored on exit.
    """
    if not nodes:
        yield dict(env)
        return
    head, rest = nodes[0], nodes[1:]
    saved = env.get(head.var)
    try:
        for value in head.values(env):
            env[head.var] = value
            yield from iter_points(rest, env)
    finally:
        if saved is None:
            env.pop(head.var, None)
        else:
            env[head.var] = saved


def execute_region(
    node: LoopNode,
    env: MutableMapping[str, int],
    store: ArrayStore,
    *,
    on_instance: Optional[Callable[[Statement, Env], None]] = None,
) -> int:
    """Run the statements at ``node`` then its child loops, in lexicographic order.

    ``env`` must already bind ``node``'s own variable (unless it is the root).
    Returns the number of statement instances executed.
    """
    executed = 0
    for stmt in node.statements:
        if on_instance is not None:
            on_instance(stmt, env)
        try:
            stmt.body(env, store)
        except IndexError as exc:
            raise OutOfBoundsError(stmt.id, env, str(exc)) from exc
        executed += 1
    for child in node.children:
        for value in child.values(env):
            env[child.var] = value
            executed += execute_region(child, env, store, on_instance=on_instance)
        env.pop(child.var, None)
    return executed


def iterate_sequentially(tree: LoopTree, params: Env, store: ArrayStore) -> int:
    """Execute every statement instance in original sequential order.

    Runs against a bounds-checked view of ``store``; returns the instance count.
    """
    env: Dict[str, int] = dict(params)
    count = execute_region(tree.root, env, store.view(checked=True))
    log.debug("%s: executed %d statement instances sequentially", tree.name, count)
    return count


def instances(tree: LoopTree, params: Env) -> Iterator[Tuple[Statement, Dict[str, int]]]:
    """Statement instances in sequential order, without executing them."""

    def walk(node: LoopNode, env: Dict[str, int]) -> Iterator[Tuple[Statement, Dict[str, int]]]:
        for stmt in node.statements:
            yield stmt, dict(env)
        for child in node.children:
            for value in child.values(env):
                env[child.var] = value
                yield from walk(child, env)
            env.pop(child.var, None)

    yield from walk(tree.root, dict(params))


def count_instances(tree: LoopTree, node: LoopNode, prefix_env: Env, params: Env) -> int:
    """Number of iterations of the loops above and at ``node`` not bound by ``prefix_env``."""
    env: Dict[str, int] = {**params, **prefix_env}
    free = [n for n in tree.path(node) if n.var not in prefix_env]
    return _count(free, env)


def _count(nodes: Sequence[LoopNode], env: Dict[str, int]) -> int:
    if not nodes:
        return 1
    head, rest = nodes[0], nodes[1:]
    values = head.values(env)
    if not rest:
        return len(values)
    total = 0
    for value in values:
        env[head.var] = value
        total += _count(rest, env)
    env.pop(head.var, None)
    return total


# -- validation ---------------------------------------------------------------


def validate(tree: LoopTree, params: Env) -> List[Diagnostic]:
    """Check scoping, band contiguity and tile-boundary placement. Empty list means ok."""
    diags: List[Diagnostic] = []
    param_names: Set[str] = set(tree.parameters) | set(params)
    arrays = {a.name: a for a in tree.arrays}

    for decl in tree.arrays:
        for dim in decl.shape:
            stray = dim.free_vars() - param_names
            if stray:
                diags.append(Diagnostic(f"array {decl.name}", f"shape references non-parameters {sorted(stray)}"))

    if tree.root.statements:
        diags.append(Diagnostic("<root>", "the root carries no loop and cannot hold statements"))

    def visit(node: LoopNode, scope: Tuple[str, ...]) -> None:
        for child in node.children:
            path = child.label
            visible = param_names | set(scope)
            for which, bound in (("lower", child.lb), ("upper", child.ub)):
                stray = bound.free_vars() - visible
                if stray:
                    diags.append(
                        Diagnostic(
                            path,
                            f"{which} bound '{bound}' references {sorted(stray)}, "
                            "which are neither parameters nor enclosing induction variables",
                        )
                    )
            if child.var in scope or child.var in param_names:
                diags.append(Diagnostic(path, f"induction variable '{child.var}' shadows an outer name"))
            if child.step < 1:
                diags.append(Diagnostic(path, f"step must be positive, got {child.step}"))
            if child.loop_type.is_permutable and (child.loop_type.band is None or child.loop_type.band <= 0):
                diags.append(Diagnostic(path, f"band id must be positive, got {child.loop_type.band}"))
            inner = scope + (child.var,)
            for stmt in child.statements:
                for acc in stmt.accesses:
                    decl = arrays.get(acc.array)
                    if decl is None:
                        diags.append(Diagnostic(path, f"{stmt.id} accesses undeclared array '{acc.array}'"))
                        continue
                    if len(acc.indices) != len(decl.shape):
                        diags.append(
                            Diagnostic(path, f"{stmt.id} indexes {acc.array} with {len(acc.indices)} subscripts, rank is {len(decl.shape)}")
                        )
                    for ix in acc.indices:
                        stray = ix.free_vars() - param_names - set(inner)
                        if stray:
                            diags.append(Diagnostic(path, f"{stmt.id} subscript '{ix}' references {sorted(stray)}"))
            visit(child, inner)

    visit(tree.root, ())
    diags.extend(_band_diagnostics(tree))
    diags.extend(_tile_diagnostics(tree))
    return diags


def _band_diagnostics(tree: LoopTree) -> List[Diagnostic]:
    bands: Dict[int, List[LoopNode]] = {}
    for node in tree.loops():
        if node.loop_type.is_permutable and node.loop_type.band is not None:
            bands.setdefault(node.loop_type.band, []).append(node)
    diags: List[Diagnostic] = []
    for band, members in sorted(bands.items()):
        deepest = max(members, key=lambda n: n.level)
        chain = tree.path(deepest)
        if any(m not in chain for m in members):
            stray = [m.label for m in members if m not in chain]
            diags.append(Diagnostic(deepest.label, f"band {band} is not contiguous: {stray} lie on a divergent branch"))
            continue
        top = min(m.level for m in members)
        for node in chain[top:]:
            lt = node.loop_type
            if lt.kind == LoopKind.SEQUENTIAL or (lt.is_permutable and lt.band != band):
                diags.append(Diagnostic(node.label, f"band {band} is not contiguous: interrupted by {lt} loop"))
                break
    return diags


def _tile_diagnostics(tree: LoopTree) -> List[Diagnostic]:
    diags: List[Diagnostic] = []
    for node in tree.loops():
        if node.children:
            continue
        marks = [n for n in tree.path(node) if n.tile_boundary]
        if len(marks) != 1:
            diags.append(Diagnostic(node.label, f"branch has {len(marks)} tile-boundary loops, expected exactly 1"))
    return diags


def ensure_valid(tree: LoopTree, params: Env) -> None:
    diags = validate(tree, params)
    if diags:
        raise ValidationError(diags)


def check_accesses(tree: LoopTree, params: Env, store: ArrayStore) -> List[Diagnostic]:
    """Run every instance under a RecordingStore; report addresses outside its summaries."""
    recorder = RecordingStore(store.arrays)
    diags: List[Diagnostic] = []
    for stmt, env in instances(tree, params):
        recorder.records.clear()
        stmt.body(env, recorder)
        actual = set(recorder.records)
        expected = {(a.array, a.cell(env), a.mode) for a in stmt.accesses}
        if actual != expected:
            coords = ", ".join(f"{k}={v}" for k, v in env.items() if k not in params)
            extra = sorted(actual - expected, key=repr)
            missing = sorted(expected - actual, key=repr)
            diags.append(Diagnostic(f"{stmt.id}({coords})", f"undeclared {extra}, unused {missing}"))
    return diags
