"""Dependence synthesis from loop types, and the brute-force oracle that checks it.

Permutable dimensions get conservative point-to-point edges (``tag - d*e_k``
guarded by an interior test). Sequential dimensions are realised as ordered
phases of one worker group. Parallel dimensions carry nothing.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from functools import reduce
from typing import Callable, Dict, Iterable, Iterator, List, Mapping, Optional, Set, Tuple, Union

import networkx as nx

from .edt_formation import CompileTimeEdt, statement_owners, top_level
from .errors import DependenceError, SizeGuardError
from .loop_tree import LoopTree, instances, iter_points
from .models import AccessMode, TaskTag
from .range_expr import Env, RangeExpr

log = logging.getLogger(__name__)

Filter = Callable[[Env], bool]
Edge = Tuple[TaskTag, TaskTag]

ORACLE_INSTANCE_LIMIT = 1_000_000


@dataclass(frozen=True)
class NoDep:
    def __str__(self) -> str:
        return "none"


@dataclass(frozen=True)
class PointToPoint:
    distance: int = 1
    filters: Tuple[Filter, ...] = ()

    def admits(self, ante_env: Env) -> bool:
        return all(f(ante_env) for f in self.filters)

    def splits(self) -> List["IndexSetSplit"]:
        return [f for f in self.filters if isinstance(f, IndexSetSplit)]

    def __str__(self) -> str:
        suffix = f"+{len(self.filters)} filter" if self.filters else ""
        return f"p2p(d={self.distance}{suffix})"


@dataclass(frozen=True)
class SequentialFan:
    def __str__(self) -> str:
        return "fan"


DimDep = Union[NoDep, PointToPoint, SequentialFan]


@dataclass(frozen=True)
class IndexSetSplit:
    """Drops point-to-point edges that cross ``cut`` on ``var``.

    Evaluated on the antecedent's env: the task sits ``distance`` further along
    ``var``. ``portion`` orders the two halves for the runtime.
    """

    var: str
    cut: RangeExpr
    distance: int = 1

    def __call__(self, env: Env) -> bool:
        value, cut = env[self.var], self.cut.evaluate(env)
        return not (value < cut <= value + self.distance)

    def portion(self, env: Env) -> int:
        return 0 if env[self.var] < self.cut.evaluate(env) else 1


@dataclass(frozen=True)
class DepSpec:
    dims: Mapping[int, Tuple[DimDep, ...]] = field(default_factory=dict)

    def for_edt(self, edt_id: int) -> Tuple[DimDep, ...]:
        return self.dims[edt_id]

    def with_dim(self, edt_id: int, k: int, dep: DimDep) -> "DepSpec":
        row = list(self.dims[edt_id])
        row[k] = dep
        dims = dict(self.dims)
        dims[edt_id] = tuple(row)
        return DepSpec(dims)

    def describe(self) -> Dict[int, List[str]]:
        return {eid: [str(d) for d in row] for eid, row in sorted(self.dims.items())}


def gcd_distance(distances: Iterable[int]) -> int:
    values = list(distances)
    if not values:
        raise DependenceError("gcd_distance needs at least one constant distance")
    if any(v < 1 for v in values):
        raise DependenceError(f"dependence distances must be positive, got {sorted(values)}")
    return reduce(math.gcd, values)


def derive_spec(
    edts: List[CompileTimeEdt],
    distances: Optional[Mapping[str, Iterable[int]]] = None,
    splits: Optional[Mapping[str, RangeExpr]] = None,
) -> DepSpec:
    """Dependence kinds per EDT dimension from loop types, plus kernel metadata.

    ``distances`` maps a loop variable to its constant dependence distances;
    ``splits`` maps a loop variable to an index-set cut.
    """
    distances = distances or {}
    splits = splits or {}
    dims: Dict[int, Tuple[DimDep, ...]] = {}
    for edt in edts:
        row: List[DimDep] = []
        for level, lp in enumerate(edt.loops):
            if level < edt.start:
                row.append(NoDep())
            elif lp.loop_type.is_permutable:
                d = gcd_distance(distances[lp.var]) if lp.var in distances else 1
                row.append(PointToPoint(d))
            elif lp.loop_type.is_sequential:
                row.append(SequentialFan())
            else:
                row.append(NoDep())
        dims[edt.id] = tuple(row)
    spec = DepSpec(dims)
    for var, cut in splits.items():
        for edt in edts:
            for level in range(edt.start, edt.stop + 1):
                if edt.loops[level].var == var:
                    spec = split_filter(spec, edt, level, cut)
    return spec


def attach_filter(spec: DepSpec, edt_id: int, k: int, predicate: Filter) -> DepSpec:
    dep = spec.for_edt(edt_id)[k]
    if not isinstance(dep, PointToPoint):
        raise DependenceError(f"EDT {edt_id} dimension {k} is {dep}, filters need a point-to-point dimension")
    return spec.with_dim(edt_id, k, replace(dep, filters=dep.filters + (predicate,)))


def split_filter(spec: DepSpec, edt: CompileTimeEdt, k: int, cut: RangeExpr) -> DepSpec:
    """Attach an index-set split on dimension ``k``; portions run in order."""
    if k != edt.start:
        raise DependenceError(
            f"index-set split on {edt.loops[k].var} must be the outermost spawned dimension of EDT {edt.id}"
        )
    dep = spec.for_edt(edt.id)[k]
    if not isinstance(dep, PointToPoint):
        raise DependenceError(f"EDT {edt.id} dimension {k} is {dep}, filters need a point-to-point dimension")
    return attach_filter(spec, edt.id, k, IndexSetSplit(edt.loops[k].var, cut, dep.distance))


def tag_env(edt: CompileTimeEdt, coords: Tuple[int, ...], params: Env) -> Dict[str, int]:
    env = dict(params)
    for lp, value in zip(edt.loops, coords):
        env[lp.var] = value
    return env


def interior(edt: CompileTimeEdt, tag: TaskTag, k: int, d: int, params: Env) -> bool:
    """True iff ``tag`` shifted by ``-d`` on dimension ``k`` stays inside every loop bound."""
    coords = list(tag.coords)
    coords[k] -= d
    env = tag_env(edt, tuple(coords), params)
    for lp in edt.loops:
        if not lp.contains(env[lp.var], env):
            return False
    return True


def antecedents(edt: CompileTimeEdt, tag: TaskTag, spec: DepSpec, params: Env) -> Set[TaskTag]:
    found: Set[TaskTag] = set()
    for k, dep in enumerate(spec.for_edt(edt.id)):
        if not isinstance(dep, PointToPoint):
            continue
        if not interior(edt, tag, k, dep.distance, params):
            continue
        ante = tag.shifted(k, dep.distance)
        if dep.filters and not dep.admits(tag_env(edt, ante.coords, params)):
            continue
        found.add(ante)
    return found


def phase_key(edt: CompileTimeEdt, tag: TaskTag, spec: DepSpec, params: Env) -> Tuple[int, ...]:
    """Ordering key inside a worker group: sequential coordinates and split portions."""
    key: List[int] = []
    env: Optional[Dict[str, int]] = None
    for k, dep in enumerate(spec.for_edt(edt.id)):
        if isinstance(dep, SequentialFan):
            key.append(tag.coords[k])
        elif isinstance(dep, PointToPoint):
            for split in dep.splits():
                env = env or tag_env(edt, tag.coords, params)
                key.append(split.portion(env))
    return tuple(key)


def tag_space(edt: CompileTimeEdt, params: Env) -> Iterator[TaskTag]:
    """Every tag of ``edt`` across all parent instances."""
    for point in iter_points(edt.loops, dict(params)):
        yield TaskTag(edt.id, tuple(point[lp.var] for lp in edt.loops))


def group_tags(edt: CompileTimeEdt, prefix: Tuple[int, ...], params: Env) -> List[TaskTag]:
    """Tags spawned by one STARTUP whose inherited coordinates are ``prefix``."""
    env = tag_env(edt, prefix, params)
    spawned = edt.loops[edt.start :]
    return [
        TaskTag(edt.id, prefix + tuple(point[lp.var] for lp in spawned))
        for point in iter_points(spawned, env)
    ]


def brute_force_tile_deps(
    tree: LoopTree,
    edts: List[CompileTimeEdt],
    params: Env,
    *,
    limit: int = ORACLE_INSTANCE_LIMIT,
) -> Set[Edge]:
    """Inter-task ordering constraints, from sequential last-access tracking.

    Not every conflicting pair is returned. Each access links to the last write
    of its cell (flow/output) and each write to the reads since that write
    (anti). Every other same-cell pair involving a write follows from these by
    transitivity, so covering the returned edges covers the full relation.
    Edges are projected to leaf EDT tags.
    """
    owners = statement_owners(edts)
    last_write: Dict[Tuple[str, Tuple[int, ...]], TaskTag] = {}
    readers: Dict[Tuple[str, Tuple[int, ...]], Set[TaskTag]] = {}
    edges: Set[Edge] = set()
    seen = 0
    for stmt, env in instances(tree, params):
        seen += 1
        if seen > limit:
            raise SizeGuardError(f"{tree.name}: more than {limit} statement instances; shrink the sizes")
        owner = owners[stmt.id]
        tag = TaskTag(owner.id, tuple(env[lp.var] for lp in owner.loops))
        for acc in sorted(stmt.accesses, key=lambda a: a.mode != AccessMode.READ):
            cell = (acc.array, acc.cell(env))
            writer = last_write.get(cell)
            if writer is not None and writer != tag:
                edges.add((writer, tag))
            if acc.mode == AccessMode.READ:
                readers.setdefault(cell, set()).add(tag)
            else:
                for reader in readers.pop(cell, ()):
                    if reader != tag:
                        edges.add((reader, tag))
                last_write[cell] = tag
    log.debug("%s: oracle found %d inter-task edges over %d instances", tree.name, len(edges), seen)
    return edges


class _DeclaredGraph:
    """Begin/end nodes per task instance plus group barriers, as the runtime orders them."""

    def __init__(self, edts: List[CompileTimeEdt], spec: DepSpec, params: Env) -> None:
        self.edts = {e.id: e for e in edts}
        self.spec = spec
        self.params = params
        self.graph = nx.DiGraph()
        self._barrier = 0
        root_begin, root_end = ("main", "begin"), ("main", "end")
        self.graph.add_edge(root_begin, root_end)
        self._groups(top_level(edts), (), root_begin, root_end)

    def _new_barrier(self) -> Tuple:
        self._barrier += 1
        return ("barrier", self._barrier)

    def _groups(self, edt_ids: Iterable[int], prefix: Tuple[int, ...], begin: Tuple, end: Tuple) -> None:
        gate = begin
        for edt_id in edt_ids:
            gate = self._group(self.edts[edt_id], prefix, gate)
        self.graph.add_edge(gate, end)

    def _group(self, edt: CompileTimeEdt, prefix: Tuple[int, ...], gate: Tuple) -> Tuple:
        tags = group_tags(edt, prefix[: edt.start], self.params)
        phases: Dict[Tuple[int, ...], List[TaskTag]] = {}
        for tag in tags:
            phases.setdefault(phase_key(edt, tag, self.spec, self.params), []).append(tag)
        for key in sorted(phases):
            after = self._new_barrier()
            for tag in phases[key]:
                b, e = ("begin", tag), ("end", tag)
                self.graph.add_edge(gate, b)
                self.graph.add_edge(b, e)
                self.graph.add_edge(e, after)
                for ante in antecedents(edt, tag, self.spec, self.params):
                    self.graph.add_edge(("end", ante), b)
                if not edt.is_leaf:
                    self._groups(edt.children_edts, tag.coords, b, e)
            gate = after
        return gate

    def reaches_all(self, pairs: Iterable[Edge]) -> bool:
        try:
            order = {node: n for n, node in enumerate(nx.topological_sort(self.graph))}
        except nx.NetworkXUnfeasible:
            log.warning("declared dependence graph has a cycle: %s", nx.find_cycle(self.graph)[:6])
            return False
        by_source: Dict[TaskTag, Set[Tuple]] = {}
        for src, dst in pairs:
            s, d = ("end", src), ("begin", dst)
            if s not in order or d not in order:
                log.debug("oracle edge %s -> %s names a task the runtime never spawns", src, dst)
                return False
            by_source.setdefault(s, set()).add(d)
        for s, targets in by_source.items():
            missing = targets - self._reachable(s, max(order[d] for d in targets), order)
            if missing:
                log.debug("uncovered oracle edges from %s to %s", s[1], sorted(d[1] for d in missing)[:6])
                return False
        return True

    def _reachable(self, start: Tuple, horizon: int, order: Dict[Tuple, int]) -> Set[Tuple]:
        """Successors of ``start`` up to topological position ``horizon``."""
        seen = {start}
        frontier = deque([start])
        while frontier:
            node = frontier.popleft()
            for nxt in self.graph.successors(node):
                if nxt not in seen and order[nxt] <= horizon:
                    seen.add(nxt)
                    frontier.append(nxt)
        return seen


def covers(edts: List[CompileTimeEdt], spec: DepSpec, params: Env, exact: Iterable[Edge]) -> bool:
    """True iff every exact edge is implied by declared edges plus hierarchy ordering."""
    pairs = list(exact)
    if not pairs:
        return True
    return _DeclaredGraph(edts, spec, params).reaches_all(pairs)


def format_edges(edges: Iterable[Edge]) -> str:
    lines = [f"{a} -> {b}" for a, b in sorted(edges)]
    return "\n".join(lines) + ("\n" if lines else "")
