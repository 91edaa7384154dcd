"""Tree marking and EDT formation.

Marked loop nodes become compile-time EDTs. An EDT spans the loops from one
level below its nearest marked ancestor down to its own node; those loop
variables are its tag coordinates, and the coordinates above ``start`` are
inherited from the parent EDT instance.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Optional, Set, Tuple, Union

from .errors import FormationError
from .loop_tree import LoopNode, LoopTree, Statement
from .models import WorkerAction

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TileGranularity:
    """Mark the loops flagged ``tile_boundary``."""


@dataclass(frozen=True)
class UserProvided:
    """Mark an explicit set of node uids (dotted child-index paths)."""

    marked: FrozenSet[str]

    @classmethod
    def of(cls, uids: Iterable[str]) -> "UserProvided":
        return cls(frozenset(uids))


MarkStrategy = Union[TileGranularity, UserProvided]


@dataclass(frozen=True, eq=False)
class CompileTimeEdt:
    id: int
    node: LoopNode
    start: int
    stop: int
    loops: Tuple[LoopNode, ...]
    statements: Tuple[Statement, ...]
    parent_edt: Optional[int]
    children_edts: Tuple[int, ...]

    @property
    def is_leaf(self) -> bool:
        return not self.children_edts

    @property
    def dims(self) -> int:
        return self.stop + 1

    @property
    def label(self) -> str:
        return self.node.label

    def loop(self, level: int) -> LoopNode:
        return self.loops[level]

    def __repr__(self) -> str:
        return f"CompileTimeEdt(id={self.id}, {self.label}, start={self.start}, stop={self.stop})"


@dataclass(frozen=True)
class StartupDescriptor:
    edt_id: int
    spawn_levels: Tuple[int, ...]
    fan_level: Optional[int]


@dataclass(frozen=True)
class WorkerDescriptor:
    edt_id: int
    action: WorkerAction
    child_edts: Tuple[int, ...]
    statement_ids: Tuple[str, ...]


@dataclass(frozen=True)
class ShutdownDescriptor:
    edt_id: int
    parent_edt: Optional[int]


def _band(node: Optional[LoopNode]) -> Optional[int]:
    if node is None or node.is_root or not node.loop_type.is_permutable:
        return None
    return node.loop_type.band


def _subtree_uids(node: LoopNode) -> Iterable[str]:
    stack = list(node.children)
    while stack:
        cur = stack.pop()
        yield cur.uid
        stack.extend(cur.children)


def mark_tree(tree: LoopTree, strategy: MarkStrategy) -> FrozenSet[str]:
    """Breadth-first marking. Returns the uids of marked nodes; the root ("") is always marked."""
    user: FrozenSet[str] = frozenset()
    if isinstance(strategy, UserProvided):
        unknown = sorted(u for u in strategy.marked if not tree.has_node(u) or u == "")
        if unknown:
            raise FormationError(f"user-provided marks name unknown nodes: {unknown}")
        user = strategy.marked

    marks: Set[str] = {""}
    queue = deque([tree.root])
    while queue:
        node = queue.popleft()
        if isinstance(strategy, TileGranularity):
            if node.tile_boundary:
                continue
        elif not user.intersection(_subtree_uids(node)):
            continue
        loop_siblings = len(node.children) >= 2
        for child in node.children:
            if isinstance(strategy, TileGranularity):
                at_granularity = child.tile_boundary
            else:
                at_granularity = child.uid in user
            band_change = (
                child.loop_type.is_permutable
                and child.loop_type.band != _band(node)
                and node.uid not in marks
            )
            if at_granularity or child.loop_type.is_sequential or loop_siblings or band_change:
                marks.add(child.uid)
            queue.append(child)
    log.debug("%s: marked %s", tree.name, sorted(tree.node(u).label for u in marks))
    return frozenset(marks)


def _program_order(uid: str) -> Tuple[int, ...]:
    return tuple(int(p) for p in uid.split(".")) if uid else ()


def form_edts(tree: LoopTree, marks: FrozenSet[str]) -> List[CompileTimeEdt]:
    """Carve one EDT per marked non-root node; ids are dense in BFS order."""
    ids: Dict[str, int] = {}
    for node in tree.nodes():
        if node.uid in marks and not node.is_root:
            ids[node.uid] = len(ids)

    def marked_ancestor(node: LoopNode) -> LoopNode:
        cur = tree.parent(node)
        while cur.uid not in marks:
            cur = tree.parent(cur)
        return cur

    def frontier(node: LoopNode) -> Tuple[List[LoopNode], List[Statement]]:
        """Nearest marked descendants and the statements above them, in program order."""
        found: List[LoopNode] = []
        stmts: List[Statement] = list(node.statements)
        stack = list(reversed(node.children))
        while stack:
            cur = stack.pop()
            if cur.uid in marks:
                found.append(cur)
                continue
            stmts.extend(cur.statements)
            stack.extend(reversed(cur.children))
        return found, stmts

    edts: List[CompileTimeEdt] = []
    for uid, edt_id in ids.items():
        node = tree.node(uid)
        anchor = marked_ancestor(node)
        start, stop = anchor.level + 1, node.level
        loops = tuple(tree.path(node))
        bands = {lp.loop_type.band for lp in loops[start : stop + 1] if lp.loop_type.is_permutable}
        if len(bands) > 1:
            raise FormationError(
                f"EDT at {node.label}: permutable loops belonging to different bands "
                f"{sorted(bands)} cannot be mixed in the current implementation"
            )
        children, stmts = frontier(node)
        if children and stmts:
            raise FormationError(
                f"EDT at {node.label} spawns child EDTs but also owns statements "
                f"{[s.id for s in stmts]}; mark the loops that enclose them"
            )
        for lp in loops[start:stop]:
            if lp.statements:
                raise FormationError(f"statements at {lp.label} sit between EDT levels")
        edts.append(
            CompileTimeEdt(
                id=edt_id,
                node=node,
                start=start,
                stop=stop,
                loops=loops,
                statements=tuple(stmts),
                parent_edt=ids.get(anchor.uid),
                children_edts=tuple(ids[c.uid] for c in children),
            )
        )

    _, orphans = frontier(tree.root)
    if orphans:
        raise FormationError(f"statements {[s.id for s in orphans]} are not enclosed by any marked loop")
    log.debug("%s: formed %d EDTs", tree.name, len(edts))
    return edts


def top_level(edts: List[CompileTimeEdt]) -> List[int]:
    """EDTs spawned by the main routine, in program order."""
    roots = [e for e in edts if e.parent_edt is None]
    roots.sort(key=lambda e: _program_order(e.node.uid))
    return [e.id for e in roots]


def statement_owners(edts: List[CompileTimeEdt]) -> Dict[str, CompileTimeEdt]:
    return {stmt.id: edt for edt in edts for stmt in edt.statements}


def runtime_triple(edt: CompileTimeEdt) -> Tuple[StartupDescriptor, WorkerDescriptor, ShutdownDescriptor]:
    fan_level = edt.stop if edt.node.loop_type.is_sequential else None
    startup = StartupDescriptor(edt.id, tuple(range(edt.start, edt.stop + 1)), fan_level)
    if edt.is_leaf:
        worker = WorkerDescriptor(edt.id, WorkerAction.EXECUTE_STATEMENTS, (), tuple(s.id for s in edt.statements))
    else:
        worker = WorkerDescriptor(edt.id, WorkerAction.SPAWN_CHILDREN, edt.children_edts, ())
    return startup, worker, ShutdownDescriptor(edt.id, edt.parent_edt)


def dump_edts(edts: List[CompileTimeEdt]) -> str:
    """One line per EDT: ``id start stop path statements``."""
    lines = []
    for edt in edts:
        path = "/".join(lp.var for lp in edt.loops)
        stmts = ",".join(s.id for s in edt.statements) or "-"
        kids = ",".join(str(c) for c in edt.children_edts) or "-"
        lines.append(f"{edt.id} {edt.start} {edt.stop} {path} {stmts} children={kids}")
    return "\n".join(lines) + ("\n" if lines else "")
