from __future__ import annotations

from typing import Iterable, List, Mapping, Optional, Sequence


class EdtflowError(Exception):
    """Base class for all errors raised by edtflow."""


class RangeEvalError(EdtflowError):
    pass


class UnboundVariableError(RangeEvalError):
    def __init__(self, name: str) -> None:
        super().__init__(f"unbound variable '{name}'")
        self.name = name


class RangeOverflowError(RangeEvalError):
    pass


class RangeSyntaxError(EdtflowError):
    def __init__(self, message: str, position: int, text: str = "") -> None:
        super().__init__(f"{message} (at position {position})")
        self.message = message
        self.position = position
        self.text = text


class BoxError(EdtflowError):
    pass


class ValidationError(EdtflowError):
    def __init__(self, diagnostics: Sequence[object]) -> None:
        lines = "; ".join(str(d) for d in diagnostics)
        super().__init__(f"invalid loop tree: {lines}")
        self.diagnostics = list(diagnostics)


class OutOfBoundsError(EdtflowError):
    def __init__(self, statement: str, coordinates: Mapping[str, int], detail: str = "") -> None:
        coords = ", ".join(f"{k}={v}" for k, v in coordinates.items())
        msg = f"out-of-bounds access in {statement} at ({coords})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.statement = statement
        self.coordinates = dict(coordinates)


class FormationError(EdtflowError):
    pass


class DependenceError(EdtflowError):
    pass


class SizeGuardError(EdtflowError):
    pass


class DeadlockError(EdtflowError):
    def __init__(self, blocked: Iterable[object]) -> None:
        self.blocked: List[object] = sorted(blocked, key=repr)
        shown = ", ".join(str(t) for t in self.blocked[:8])
        more = "" if len(self.blocked) <= 8 else f" (+{len(self.blocked) - 8} more)"
        super().__init__(f"runtime deadlocked with {len(self.blocked)} blocked tag(s): {shown}{more}")


class TaskFailedError(EdtflowError):
    def __init__(self, task: str, cause: Optional[BaseException] = None) -> None:
        super().__init__(f"task {task} failed: {cause!r}")
        self.task = task
        self.cause = cause


class KernelFormatError(EdtflowError):
    def __init__(self, message: str, line: int = 0) -> None:
        super().__init__(f"line {line}: {message}" if line else message)
        self.message = message
        self.line = line
