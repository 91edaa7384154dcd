from __future__ import annotations

import asyncio
import csv
import io
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

from .edt_formation import MarkStrategy, TileGranularity, UserProvided
from .kernels import KernelSpec, get_kernel
from .loop_tree import ArrayStore, LoopTree, ensure_valid
from .models import Metrics, Mode
from .runtime import run

log = logging.getLogger(__name__)

CSV_HEADER = (
    "kernel", "mode", "threads", "tiles", "seconds", "gflops",
    "tasks", "puts", "get_misses", "requeues", "steals", "checksum",
)

_MODE_ORDER = {Mode.BLOCK: 0, Mode.ASYNC: 1, Mode.DEP: 2}


@dataclass(frozen=True)
class RunConfig:
    kernel: str
    params: Tuple[Tuple[str, int], ...] = ()
    tiles: Tuple[int, ...] = ()
    mode: Mode = Mode.DEP
    threads: int = 1
    hier: str = "tile"
    reps: int = 3
    verify: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")
        if self.reps < 1:
            raise ValueError(f"repetitions must be >= 1, got {self.reps}")

    @property
    def sizes(self) -> Dict[str, int]:
        return dict(self.params)

    @property
    def tiles_text(self) -> str:
        return format_tiles(self.tiles)


@dataclass
class RunResult:
    config: RunConfig
    metrics: Metrics
    flops: int
    checksum: str
    verified: Optional[bool] = None
    mismatch: Optional[str] = None
    trace: List[str] = field(default_factory=list)

    @property
    def gflops(self) -> float:
        if self.metrics.seconds <= 0:
            return 0.0
        return self.flops / self.metrics.seconds / 1e9


@dataclass(frozen=True)
class CsvRow:
    config: RunConfig
    metrics: Metrics
    gflops: float
    checksum: str


def format_tiles(tiles: Sequence[int]) -> str:
    return "x".join(str(t) for t in tiles) if tiles else "-"


def parse_tiles(text: str) -> Tuple[int, ...]:
    """``"4"`` -> (4,), ``"16x16x64"`` -> (16, 16, 64), ``"-"`` -> ()."""
    text = text.strip()
    if text in ("", "-"):
        return ()
    try:
        values = tuple(int(part) for part in text.lower().split("x"))
    except ValueError:
        raise ValueError(f"bad tile spec {text!r}; expected N or AxBxC") from None
    if any(v < 1 for v in values):
        raise ValueError(f"tile sizes must be positive: {text!r}")
    return values


def hierarchy_strategy(tree: LoopTree, hier: str) -> MarkStrategy:
    """``tile`` | ``user:K`` (level K-1 plus tile loops) | ``gran:G`` (level G-1 only)."""
    if hier == "tile":
        return TileGranularity()
    kind, _, depth = hier.partition(":")
    if kind not in ("user", "gran") or not depth.isdigit() or int(depth) < 1:
        raise ValueError(f"bad hierarchy {hier!r}; expected tile, user:K or gran:G")
    level = int(depth) - 1
    marked = set()
    for node in tree.loops():
        if node.children:
            continue
        branch = tree.path(node)
        marked.add(branch[min(level, len(branch) - 1)].uid)
        if kind == "user":
            marked.update(n.uid for n in branch if n.tile_boundary)
    return UserProvided.of(marked)


def _verify(kernel: KernelSpec, params: Dict[str, int], seed: int, store: ArrayStore) -> Optional[str]:
    expected = kernel.reference(params, seed=seed)
    return expected.first_difference(store)


def execute(config: RunConfig, *, trace: bool = False) -> RunResult:
    """Run one configuration ``reps`` times and keep the fastest repetition."""
    kernel = get_kernel(config.kernel)
    params = kernel.params(overrides=config.sizes)
    tiles = kernel.tiles(config.tiles)
    tree = kernel.tree(tiles)
    ensure_valid(tree, params)
    program = kernel.program(tiles, hierarchy_strategy(tree, config.hier))
    log.info("%s: %d EDTs, params %s, tiles %s", kernel.name, len(program.edts), params, format_tiles(tiles))

    best: Optional[Metrics] = None
    store: Optional[ArrayStore] = None
    lines: List[str] = []
    for rep in range(config.reps):
        store = kernel.init_store(params, config.seed)
        rep_trace: Optional[List[str]] = [] if trace else None
        _, metrics = run(program, params, store, config.mode, config.threads, seed=config.seed + rep, trace=rep_trace)
        log.debug("rep %d: %.4fs %s", rep, metrics.seconds, metrics.as_dict())
        if best is None or metrics.seconds < best.seconds:
            best = metrics
            lines = rep_trace or []

    result = RunResult(
        config=RunConfig(
            kernel.name, tuple(sorted(params.items())), tiles, config.mode, config.threads,
            config.hier, config.reps, config.verify, config.seed,
        ),
        metrics=best,
        flops=kernel.flops(params),
        checksum=store.checksum(),
        trace=lines,
    )
    if config.verify:
        result.mismatch = _verify(kernel, params, config.seed, store)
        result.verified = result.mismatch is None
        if result.mismatch:
            log.error("%s %s x%d: %s", kernel.name, config.mode.value, config.threads, result.mismatch)
    return result


def expand(
    kernels: Iterable[str],
    *,
    sizes: Sequence[Optional[int]] = (None,),
    tiles: Sequence[Tuple[int, ...]] = ((),),
    modes: Sequence[Mode] = (Mode.DEP,),
    threads: Sequence[int] = (1,),
    overrides: Optional[Dict[str, int]] = None,
    hier: str = "tile",
    reps: int = 3,
    verify: bool = False,
    seed: int = 0,
) -> List[RunConfig]:
    """Cartesian product of the sweep axes, in a stable order."""
    configs: List[RunConfig] = []
    for name in kernels:
        kernel = get_kernel(name)
        for size in sizes:
            params = kernel.params(size, overrides)
            for tile in tiles:
                for mode in modes:
                    for th in threads:
                        configs.append(
                            RunConfig(
                                kernel.name, tuple(sorted(params.items())), kernel.tiles(tile),
                                mode, th, hier, reps, verify, seed,
                            )
                        )
    return configs


async def sweep_async(
    configs: Sequence[RunConfig],
    *,
    trace: bool = False,
    progress_cb: Optional[Callable[[int, int, RunResult], None]] = None,
) -> List[RunResult]:
    """Run configurations one at a time off the event loop.

    progress_cb: optional callback invoked with (completed, total, result)
    """
    results: List[RunResult] = []
    total = len(configs)
    started = time.perf_counter()
    for done, config in enumerate(configs, start=1):
        result = await asyncio.to_thread(execute, config, trace=trace)
        results.append(result)
        if progress_cb:
            progress_cb(done, total, result)
    log.info("sweep of %d runs finished in %.2fs", total, time.perf_counter() - started)
    return results


def run_sweep(configs: Sequence[RunConfig], *, trace: bool = False) -> List[RunResult]:
    """Synchronous wrapper around sweep_async."""
    return asyncio.run(sweep_async(configs, trace=trace))


def _row_key(result: RunResult) -> Tuple:
    cfg = result.config
    return (cfg.kernel, cfg.params, cfg.tiles, _MODE_ORDER[cfg.mode], cfg.threads)


def emit_csv(results: Iterable[RunResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in sorted(results, key=_row_key):
        m = r.metrics
        writer.writerow(
            [
                r.config.kernel,
                r.config.mode.value,
                r.config.threads,
                r.config.tiles_text,
                f"{m.seconds:.6f}",
                f"{r.gflops:.6f}",
                m.tasks,
                m.puts,
                m.get_misses,
                m.requeues,
                m.steals,
                r.checksum,
            ]
        )
    return buf.getvalue()


def parse_csv(text: str) -> List[CsvRow]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_HEADER:
        raise ValueError(f"unexpected CSV header: {reader.fieldnames}")
    rows: List[CsvRow] = []
    for rec in reader:
        metrics = Metrics(
            tasks=int(rec["tasks"]),
            puts=int(rec["puts"]),
            get_misses=int(rec["get_misses"]),
            requeues=int(rec["requeues"]),
            steals=int(rec["steals"]),
            seconds=float(rec["seconds"]),
        )
        config = RunConfig(
            kernel=rec["kernel"],
            tiles=parse_tiles(rec["tiles"]),
            mode=Mode(rec["mode"]),
            threads=int(rec["threads"]),
        )
        rows.append(CsvRow(config, metrics, float(rec["gflops"]), rec["checksum"]))
    return rows
