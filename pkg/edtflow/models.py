from __future__ import annotations

from dataclasses import dataclass, fields
from enum import Enum
from typing import Dict, Tuple


class VarKind(str, Enum):
    INDUCTION = "induction"
    PARAMETER = "parameter"


class LoopKind(str, Enum):
    PARALLEL = "parallel"
    PERMUTABLE = "permutable"
    SEQUENTIAL = "sequential"


class AccessMode(str, Enum):
    READ = "read"
    WRITE = "write"


class Mode(str, Enum):
    BLOCK = "block"
    ASYNC = "async"
    DEP = "dep"


class TaskKind(str, Enum):
    STARTUP = "STARTUP"
    WORKER = "WORKER"
    SHUTDOWN = "SHUTDOWN"


class WorkerAction(str, Enum):
    EXECUTE_STATEMENTS = "executes-statements"
    SPAWN_CHILDREN = "spawns-child"


@dataclass(frozen=True)
class LoopType:
    kind: LoopKind
    band: int | None = None

    @classmethod
    def parallel(cls) -> "LoopType":
        return cls(LoopKind.PARALLEL)

    @classmethod
    def permutable(cls, band: int) -> "LoopType":
        return cls(LoopKind.PERMUTABLE, band)

    @classmethod
    def sequential(cls) -> "LoopType":
        return cls(LoopKind.SEQUENTIAL)

    @property
    def is_permutable(self) -> bool:
        return self.kind == LoopKind.PERMUTABLE

    @property
    def is_sequential(self) -> bool:
        return self.kind == LoopKind.SEQUENTIAL

    def __str__(self) -> str:
        if self.kind == LoopKind.PERMUTABLE:
            return f"perm:{self.band}"
        return {LoopKind.PARALLEL: "doall", LoopKind.SEQUENTIAL: "seq"}[self.kind]


@dataclass(frozen=True, order=True)
class TaskTag:
    edt_id: int
    coords: Tuple[int, ...]

    def shifted(self, level: int, distance: int) -> "TaskTag":
        coords = list(self.coords)
        coords[level] -= distance
        return TaskTag(self.edt_id, tuple(coords))

    def __str__(self) -> str:
        return f"{self.edt_id}({','.join(str(c) for c in self.coords)})"


@dataclass
class Metrics:
    tasks: int = 0
    puts: int = 0
    gets: int = 0
    get_misses: int = 0
    requeues: int = 0
    steals: int = 0
    satisfies: int = 0
    suspensions: int = 0
    duplicate_puts: int = 0
    leaf_executions: int = 0
    statement_instances: int = 0
    max_task_misses: int = 0
    ready_peak: int = 0
    seconds: float = 0.0

    def merge(self, other: "Metrics") -> None:
        for f in fields(self):
            if f.name in ("max_task_misses", "ready_peak"):
                setattr(self, f.name, max(getattr(self, f.name), getattr(other, f.name)))
            elif f.name != "seconds":
                setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))

    def as_dict(self) -> Dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}
