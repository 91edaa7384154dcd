"""edtflow - hierarchical event-driven tasks from tiled loop trees

Forms EDTs from typed loop trees, synthesizes their dependences from loop
types and runs them on an embedded work-stealing runtime.
Designed to be used as both a command-line benchmark harness and a library.
"""

from .harness import RunConfig, execute, run_sweep
from .kernels import get_kernel, registry
from .runtime import Program, run

__all__ = ["Program", "RunConfig", "execute", "get_kernel", "registry", "run", "run_sweep"]
__version__ = "0.1.0"
