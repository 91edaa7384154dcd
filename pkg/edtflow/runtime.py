"""Tuple-space, work-stealing runtime for STARTUP/WORKER/SHUTDOWN EDTs.

Completion records live in a striped ``CompletionTable``. Worker groups
synchronise through ``CountingDep`` objects: the last worker to finish
releases the group's SHUTDOWN, which in turn releases whatever waited on the
group (the next sibling group, the spawning WORKER, or the main routine).
"""

from __future__ import annotations

import itertools
import logging
import random
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, Deque, Dict, List, Optional, Sequence, Tuple

from . import dependence
from .dependence import DepSpec, derive_spec, group_tags, phase_key, tag_env
from .edt_formation import CompileTimeEdt, MarkStrategy, TileGranularity, form_edts, mark_tree, top_level
from .errors import DeadlockError, EdtflowError, TaskFailedError
from .loop_tree import ArrayStore, LoopTree, execute_region
from .models import Metrics, Mode, TaskKind, TaskTag
from .range_expr import Env, RangeExpr

log = logging.getLogger(__name__)

DEFAULT_STRIPES = 64
IDLE_TIMEOUT = 0.05


@dataclass(frozen=True)
class Program:
    """A formed EDT hierarchy with its dependence spec, ready to run."""

    tree: LoopTree
    edts: Tuple[CompileTimeEdt, ...]
    spec: DepSpec

    @classmethod
    def build(
        cls,
        tree: LoopTree,
        strategy: Optional[MarkStrategy] = None,
        *,
        distances: Optional[Dict[str, Sequence[int]]] = None,
        splits: Optional[Dict[str, RangeExpr]] = None,
    ) -> "Program":
        marks = mark_tree(tree, strategy or TileGranularity())
        edts = form_edts(tree, marks)
        return cls(tree, tuple(edts), derive_spec(edts, distances, splits))

    def edt(self, edt_id: int) -> CompileTimeEdt:
        return self.edts[edt_id]


class CountingDep:
    """Decrement-to-zero counter; ``on_zero`` runs exactly once, on the satisfying thread."""

    __slots__ = ("_lock", "_count", "_on_zero", "_fired")

    def __init__(self, count: int, on_zero: Callable[[], None]) -> None:
        if count < 0:
            raise ValueError(f"counting dependence needs a non-negative count, got {count}")
        self._lock = threading.Lock()
        self._count = count
        self._on_zero = on_zero
        self._fired = False

    @property
    def count(self) -> int:
        return self._count

    def satisfy(self) -> bool:
        with self._lock:
            if self._count == 0:
                raise EdtflowError("counting dependence decremented below zero")
            self._count -= 1
            fire = self._count == 0 and not self._fired
            if fire:
                self._fired = True
        if fire:
            self._on_zero()
        return fire

    def trigger_if_empty(self) -> bool:
        with self._lock:
            fire = self._count == 0 and not self._fired
            if fire:
                self._fired = True
        if fire:
            self._on_zero()
        return fire


class _Record:
    __slots__ = ("done", "waiters")

    def __init__(self) -> None:
        self.done = False
        self.waiters: List[Any] = []


class CompletionTable:
    """Striped map from TaskTag to a done flag or a wait list.

    Stripe count must be a power of two; a key's stripe is ``hash(key) & mask``.
    """

    def __init__(self, stripes: int = DEFAULT_STRIPES) -> None:
        if stripes <= 0 or stripes & (stripes - 1):
            raise ValueError("stripes must be a positive power of 2")
        self._mask = stripes - 1
        self._locks = [threading.Lock() for _ in range(stripes)]
        self._maps: List[Dict[TaskTag, _Record]] = [{} for _ in range(stripes)]

    def _slot(self, tag: TaskTag) -> int:
        return hash(tag) & self._mask

    def put(self, tag: TaskTag) -> Tuple[bool, List[Any]]:
        """Mark ``tag`` done. Returns (newly done, waiters to wake)."""
        idx = self._slot(tag)
        with self._locks[idx]:
            rec = self._maps[idx].get(tag)
            if rec is None:
                rec = self._maps[idx][tag] = _Record()
            if rec.done:
                return False, []
            rec.done = True
            waiters, rec.waiters = rec.waiters, []
        return True, waiters

    def is_done(self, tag: TaskTag) -> bool:
        idx = self._slot(tag)
        with self._locks[idx]:
            rec = self._maps[idx].get(tag)
            return rec is not None and rec.done

    def register(self, tag: TaskTag, waiter: Any) -> bool:
        """Queue ``waiter`` on ``tag``. False if ``tag`` is already done."""
        idx = self._slot(tag)
        with self._locks[idx]:
            rec = self._maps[idx].get(tag)
            if rec is None:
                rec = self._maps[idx][tag] = _Record()
            if rec.done:
                return False
            rec.waiters.append(waiter)
            return True

    def done_count(self) -> int:
        total = 0
        for lock, table in zip(self._locks, self._maps):
            with lock:
                total += sum(1 for r in table.values() if r.done)
        return total

    def waiting(self) -> Dict[TaskTag, List[Any]]:
        found: Dict[TaskTag, List[Any]] = {}
        for lock, table in zip(self._locks, self._maps):
            with lock:
                for tag, rec in table.items():
                    if not rec.done and rec.waiters:
                        found[tag] = list(rec.waiters)
        return found


class _Group:
    """One STARTUP's worker group: the counting dependence plus ordered phases."""

    __slots__ = ("edt", "prefix", "counter", "phases", "phase_counters", "on_finish")

    def __init__(self, edt: CompileTimeEdt, prefix: Tuple[int, ...], on_finish: Callable[[], None]) -> None:
        self.edt = edt
        self.prefix = prefix
        self.on_finish = on_finish
        self.counter: Optional[CountingDep] = None
        self.phases: List[List[TaskTag]] = []
        self.phase_counters: List[CountingDep] = []


class Task:
    __slots__ = ("kind", "edt", "tag", "group", "phase", "pending", "suspended", "misses", "_lock")

    def __init__(self, kind: TaskKind, edt: CompileTimeEdt, tag: TaskTag, group: _Group, phase: int = 0) -> None:
        self.kind = kind
        self.edt = edt
        self.tag = tag
        self.group = group
        self.phase = phase
        self.pending = 0
        self.suspended = False
        self.misses = 0
        self._lock = threading.Lock()

    def release(self) -> bool:
        """Drop one pending dependence; True when none remain."""
        with self._lock:
            self.pending -= 1
            return self.pending == 0

    def __repr__(self) -> str:
        return f"Task({self.kind.value} {self.tag})"


class _Worker:
    __slots__ = ("index", "queue", "lock", "metrics", "rng")

    def __init__(self, index: int, seed: int) -> None:
        self.index = index
        self.queue: Deque[Task] = deque()
        self.lock = threading.Lock()
        self.metrics = Metrics()
        self.rng = random.Random(seed * 7919 + index)


class Runtime:
    """Executes one Program to quiescence over ``threads`` OS threads."""

    def __init__(
        self,
        program: Program,
        params: Env,
        store: ArrayStore,
        mode: Mode,
        threads: int,
        *,
        seed: int = 0,
        trace: bool = False,
    ) -> None:
        if threads < 1:
            raise ValueError(f"threads must be >= 1, got {threads}")
        self.program = program
        self.params = dict(params)
        self.store = store
        self.mode = mode
        self.threads = threads
        self.table = CompletionTable()
        self.trace: Optional[List[Tuple[int, float, int, str, str, int, str]]] = [] if trace else None
        self._seq = itertools.count()
        self._workers = [_Worker(i, seed) for i in range(threads)]
        self._main_metrics = Metrics()
        self._local = threading.local()
        self._cv = threading.Condition()
        self._ready = 0
        self._ready_workers = 0
        self._ready_peak = 0
        self._enqueues = 0
        self._idle = 0
        self._finished = False
        self._failure: Optional[BaseException] = None
        self._t0 = 0.0

    # -- bookkeeping --------------------------------------------------------

    def _metrics(self) -> Metrics:
        worker = getattr(self._local, "worker", None)
        return worker.metrics if worker is not None else self._main_metrics

    def _event(self, event: str, task: Task) -> None:
        if self.trace is None:
            return
        worker = getattr(self._local, "worker", None)
        self.trace.append(
            (
                next(self._seq),
                time.perf_counter() - self._t0,
                worker.index if worker is not None else -1,
                event,
                task.kind.value,
                task.tag.edt_id,
                ",".join(str(c) for c in task.tag.coords) or "-",
            )
        )

    def _enqueue(self, task: Task) -> None:
        worker = getattr(self._local, "worker", None) or self._workers[0]
        self._event("spawn", task)
        with self._cv:
            with worker.lock:
                worker.queue.append(task)
            self._ready += 1
            self._enqueues += 1
            if task.kind == TaskKind.WORKER:
                self._ready_workers += 1
                if self._ready_workers > self._ready_peak:
                    self._ready_peak = self._ready_workers
            self._cv.notify()

    def _take(self, worker: _Worker) -> Optional[Task]:
        task: Optional[Task] = None
        with worker.lock:
            if worker.queue:
                task = worker.queue.pop()
        if task is None:
            task = self.steal(worker)
        if task is not None:
            with self._cv:
                self._ready -= 1
                if task.kind == TaskKind.WORKER:
                    self._ready_workers -= 1
        return task

    def steal(self, thief: _Worker) -> Optional[Task]:
        """Take the oldest task of a uniformly random victim, or None."""
        victims = [w for w in self._workers if w is not thief]
        if not victims:
            return None
        start = thief.rng.randrange(len(victims))
        for offset in range(len(victims)):
            victim = victims[(start + offset) % len(victims)]
            with victim.lock:
                if victim.queue:
                    thief.metrics.steals += 1
                    return victim.queue.popleft()
        return None

    def _finish(self, failure: Optional[BaseException] = None) -> None:
        with self._cv:
            if failure is not None and self._failure is None:
                self._failure = failure
            self._finished = True
            self._cv.notify_all()

    # -- group protocol -----------------------------------------------------

    def spawn_chain(self, edt_ids: Sequence[int], prefix: Tuple[int, ...], on_done: Callable[[], None]) -> None:
        """Run sibling EDT groups one after another, then call ``on_done``."""
        ids = list(edt_ids)

        def step(i: int) -> None:
            if i == len(ids):
                on_done()
                return
            self.spawn_startup(self.program.edt(ids[i]), prefix, lambda: step(i + 1))

        step(0)

    def spawn_startup(self, edt: CompileTimeEdt, prefix: Tuple[int, ...], on_finish: Callable[[], None]) -> None:
        group = _Group(edt, prefix[: edt.start], on_finish)
        self._enqueue(Task(TaskKind.STARTUP, edt, TaskTag(edt.id, group.prefix), group))

    def _run_startup(self, task: Task) -> None:
        group, edt = task.group, task.edt
        tags = group_tags(edt, group.prefix, self.params)
        shutdown = Task(TaskKind.SHUTDOWN, edt, task.tag, group)
        group.counter = CountingDep(len(tags), lambda: self._enqueue(shutdown))
        if not tags:
            log.debug("STARTUP %s: empty group", task.tag)
            group.counter.trigger_if_empty()
            return
        phases: Dict[Tuple[int, ...], List[TaskTag]] = {}
        for tag in tags:
            phases.setdefault(phase_key(edt, tag, self.program.spec, self.params), []).append(tag)
        group.phases = [phases[k] for k in sorted(phases)]
        if len(group.phases) > 1:
            group.phase_counters = [
                CountingDep(len(p), (lambda nxt: lambda: self._spawn_phase(group, nxt))(i + 1))
                for i, p in enumerate(group.phases)
            ]
        log.debug("STARTUP %s: %d workers in %d phases", task.tag, len(tags), len(group.phases))
        self._spawn_phase(group, 0)

    def _spawn_phase(self, group: _Group, index: int) -> None:
        if index >= len(group.phases):
            return
        for tag in group.phases[index]:
            worker = Task(TaskKind.WORKER, group.edt, tag, group, index)
            if self.mode == Mode.DEP:
                self._prescribe(worker)
            else:
                self._enqueue(worker)

    def _prescribe(self, task: Task) -> None:
        ante = dependence.antecedents(task.edt, task.tag, self.program.spec, self.params)
        task.pending = len(ante) + 1
        for tag in ante:
            if not self.table.register(tag, task):
                task.release()
        if task.release():
            self._enqueue(task)

    def _wake(self, task: Task) -> None:
        if task.release():
            if task.suspended:
                task.suspended = False
                self._metrics().requeues += 1
                self._event("resume", task)
            self._enqueue(task)

    def _run_shutdown(self, task: Task) -> None:
        log.debug("SHUTDOWN %s", task.tag)
        task.group.on_finish()

    # -- workers ------------------------------------------------------------

    def worker_execute(self, task: Task) -> None:
        metrics = self._metrics()
        if self.mode != Mode.DEP and not self._acquire(task, metrics):
            return
        if task.edt.is_leaf:
            env = tag_env(task.edt, task.tag.coords, self.params)
            try:
                count = execute_region(task.edt.node, env, self.store)
            except Exception as exc:
                raise TaskFailedError(str(task.tag), exc) from exc
            metrics.leaf_executions += 1
            metrics.statement_instances += count
            self._complete(task)
        else:
            self.spawn_chain(task.edt.children_edts, task.tag.coords, lambda: self._complete(task))

    def _acquire(self, task: Task, metrics: Metrics) -> bool:
        """Resolve antecedents for BLOCK/ASYNC. False means the task suspended."""
        ante = sorted(dependence.antecedents(task.edt, task.tag, self.program.spec, self.params))
        if self.mode == Mode.BLOCK:
            for tag in ante:
                metrics.gets += 1
                if self.table.is_done(tag):
                    continue
                metrics.get_misses += 1
                task.misses += 1
                metrics.max_task_misses = max(metrics.max_task_misses, task.misses)
                task.pending = 1
                task.suspended = True
                self._event("suspend", task)
                if self.table.register(tag, task):
                    metrics.suspensions += 1
                    return False
                task.suspended = False
            return True

        metrics.gets += len(ante)
        missing = [tag for tag in ante if not self.table.is_done(tag)]
        if not missing:
            return True
        metrics.get_misses += len(missing)
        task.misses += len(missing)
        metrics.max_task_misses = max(metrics.max_task_misses, task.misses)
        task.pending = len(missing) + 1
        task.suspended = True
        self._event("suspend", task)
        for tag in missing:
            if not self.table.register(tag, task):
                task.release()
        if task.release():
            task.suspended = False
            return True
        metrics.suspensions += 1
        return False

    def _complete(self, task: Task) -> None:
        metrics = self._metrics()
        newly, waiters = self.table.put(task.tag)
        metrics.puts += 1
        if not newly:
            metrics.duplicate_puts += 1
        self._event("done", task)
        for waiter in waiters:
            self._wake(waiter)
        group = task.group
        if group.phase_counters:
            metrics.satisfies += 1
            group.phase_counters[task.phase].satisfy()
        metrics.satisfies += 1
        group.counter.satisfy()

    def _execute(self, task: Task) -> None:
        self._metrics().tasks += 1
        self._event("start", task)
        if task.kind == TaskKind.STARTUP:
            self._run_startup(task)
        elif task.kind == TaskKind.WORKER:
            self.worker_execute(task)
        else:
            self._run_shutdown(task)

    def _loop(self, worker: _Worker) -> None:
        self._local.worker = worker
        while True:
            # unlocked read; _finish sets it under the condition
            if self._finished:
                return
            task = self._take(worker)
            if task is not None:
                try:
                    self._execute(task)
                except BaseException as exc:
                    self._finish(exc if isinstance(exc, EdtflowError) else TaskFailedError(str(task.tag), exc))
                    return
                continue
            with self._cv:
                if self._finished:
                    return
                if self._ready > 0:
                    continue
                self._idle += 1
                try:
                    if self._idle == self.threads and self._stalled():
                        self._declare_deadlock()
                        return
                    self._cv.wait(IDLE_TIMEOUT)
                finally:
                    self._idle -= 1

    def _stalled(self) -> bool:
        """Everyone idle with nothing ready, seen on two consecutive checks. Caller holds the condition."""
        seen = self._enqueues
        if self._finished or self._ready:
            return False
        self._cv.wait(IDLE_TIMEOUT)
        return (
            not self._finished
            and self._ready == 0
            and self._enqueues == seen
        )

    def _declare_deadlock(self) -> None:
        blocked = sorted({w.tag for ws in self.table.waiting().values() for w in ws})
        log.debug("deadlock: %d tasks blocked", len(blocked))
        self._failure = DeadlockError(blocked)
        self._finished = True
        self._cv.notify_all()

    # -- entry point --------------------------------------------------------

    def run(self) -> Metrics:
        self._t0 = time.perf_counter()
        roots = top_level(list(self.program.edts))
        self.spawn_chain(roots, (), self._finish)
        pool = [
            threading.Thread(target=self._loop, args=(w,), name=f"edtflow-{w.index}", daemon=True)
            for w in self._workers
        ]
        for th in pool:
            th.start()
        for th in pool:
            th.join()
        elapsed = time.perf_counter() - self._t0
        if self._failure is not None:
            raise self._failure
        metrics = Metrics()
        metrics.merge(self._main_metrics)
        for w in self._workers:
            metrics.merge(w.metrics)
        metrics.ready_peak = self._ready_peak
        metrics.seconds = elapsed
        if metrics.duplicate_puts:
            log.warning("%d duplicate puts ignored", metrics.duplicate_puts)
        return metrics


def run(
    program: Program,
    params: Env,
    store: ArrayStore,
    mode: Mode,
    threads: int,
    *,
    seed: int = 0,
    trace: Optional[List[str]] = None,
) -> Tuple[ArrayStore, Metrics]:
    """Execute ``program`` over ``store`` in place. Trace lines are appended to ``trace`` if given."""
    rt = Runtime(program, params, store, mode, threads, seed=seed, trace=trace is not None)
    metrics = rt.run()
    if trace is not None:
        trace.extend(format_trace(rt.trace or []))
    return store, metrics


def format_trace(events) -> List[str]:
    """``<epoch> <seconds> <thread> <event> <kind> <edt> <coords>``, epoch-ordered.

    Coordinates are comma-separated, ``-`` for an empty tag; thread -1 is the main thread.
    """
    return [
        f"{seq} {secs:.6f} {thread} {event} {kind} {edt} {coords}"
        for seq, secs, thread, event, kind, edt, coords in sorted(events)
    ]
