from __future__ import annotations

import os
import threading
import time
from collections import defaultdict

import pytest

from edtflow import dependence, runtime
from edtflow.dependence import antecedents, tag_space
from edtflow.errors import DeadlockError, EdtflowError, TaskFailedError
from edtflow.kernels import get_kernel
from edtflow.loop_tree import ArrayStore, TreeBuilder, iterate_sequentially
from edtflow.models import LoopType, Mode, TaskKind, TaskTag
from edtflow.runtime import CompletionTable, CountingDep, Program, Runtime, format_trace, run

MODES = list(Mode)


def _run(name, params, tiles=(), mode=Mode.DEP, threads=1, *, program=None, trace=None, seed=0):
    kernel = get_kernel(name)
    program = program or kernel.program(tiles)
    store = kernel.init_store(params)
    _, metrics = run(program, params, store, mode, threads, seed=seed, trace=trace)
    return kernel, store, metrics


# -- primitives -----------------------------------------------------------------


def test_counting_dep_fires_once():
    fired = []
    dep = CountingDep(2, lambda: fired.append(True))
    assert not dep.satisfy()
    assert dep.satisfy()
    assert fired == [True]
    with pytest.raises(EdtflowError):
        dep.satisfy()


def test_counting_dep_empty_group_triggers_immediately():
    fired = []
    dep = CountingDep(0, lambda: fired.append(True))
    assert dep.trigger_if_empty()
    assert not dep.trigger_if_empty()
    assert fired == [True]
    with pytest.raises(ValueError):
        CountingDep(-1, lambda: None)


def test_counting_dep_concurrent_satisfy():
    fired = []
    dep = CountingDep(400, lambda: fired.append(threading.get_ident()))

    def hammer():
        for _ in range(100):
            dep.satisfy()

    pool = [threading.Thread(target=hammer) for _ in range(4)]
    for th in pool:
        th.start()
    for th in pool:
        th.join()
    assert dep.count == 0
    assert len(fired) == 1


def test_completion_table_put_is_idempotent():
    table = CompletionTable(stripes=4)
    tag = TaskTag(0, (1, 2))
    assert table.register(tag, "w1")
    assert table.put(tag) == (True, ["w1"])
    assert table.put(tag) == (False, [])
    assert table.is_done(tag)
    assert not table.register(tag, "w2")
    assert table.done_count() == 1


def test_completion_table_stripes_must_be_power_of_two():
    with pytest.raises(ValueError):
        CompletionTable(stripes=6)


def test_runtime_rejects_zero_threads():
    kernel = get_kernel("figseq")
    params = {"T": 3, "N": 4}
    with pytest.raises(ValueError):
        Runtime(kernel.program(), params, kernel.init_store(params), Mode.DEP, 0)


# -- correctness ----------------------------------------------------------------


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("threads", [1, 4])
def test_figseq_matches_sequential_oracle(mode, threads):
    params = {"T": 3, "N": 4}
    kernel, store, metrics = _run("figseq", params, mode=mode, threads=threads)
    expected = kernel.init_store(params)
    iterate_sequentially(kernel.tree(), params, expected)
    assert store.first_difference(expected) is None
    assert expected.first_difference(kernel.reference(params)) is None
    assert metrics.leaf_executions == 16
    assert metrics.statement_instances == 16


def test_jacobi_identical_across_modes():
    params = {"T": 2, "N": 12}
    checksums = {_run("jac2d5p", params, (4, 4), mode)[1].checksum() for mode in MODES}
    assert len(checksums) == 1


@pytest.mark.parametrize("mode", MODES)
def test_single_thread_never_steals(mode):
    _, _, metrics = _run("sor", {"T": 2, "N": 10}, (4, 4), mode)
    assert metrics.steals == 0


def test_dep_mode_never_requeues():
    for threads in (1, 4):
        _, _, metrics = _run("gs2d5p", {"T": 3, "N": 10}, (2, 4, 4), Mode.DEP, threads)
        assert metrics.requeues == 0
        assert metrics.get_misses == 0


def test_block_misses_at_least_async_suspensions():
    params = {"T": 3, "N": 10}
    _, _, block = _run("gs2d5p", params, (2, 4, 4), Mode.BLOCK)
    _, _, async_ = _run("gs2d5p", params, (2, 4, 4), Mode.ASYNC)
    assert async_.suspensions > 0
    assert block.get_misses >= async_.suspensions
    assert async_.requeues == async_.suspensions


def test_block_misses_at_least_async_suspensions_on_four_threads():
    params = {"T": 4, "N": 32}
    tiles = (2, 4, 4)
    block = [_run("gs2d5p", params, tiles, Mode.BLOCK, 4, seed=s)[2] for s in range(3)]
    async_ = [_run("gs2d5p", params, tiles, Mode.ASYNC, 4, seed=s)[2] for s in range(3)]
    assert sum(m.suspensions for m in async_) > 0
    assert sum(m.get_misses for m in block) >= sum(m.suspensions for m in async_)
    assert all(m.requeues == m.suspensions for m in async_)


def test_saturated_pool_steals():
    kernel, store, metrics = _run("jac3d7p", {"T": 2, "N": 24}, (4, 4, 4), Mode.DEP, 4)
    assert metrics.steals > 0
    assert store.first_difference(kernel.reference({"T": 2, "N": 24})) is None


def test_block_misses_at_most_once_per_antecedent(grid_tree):
    tree = grid_tree()
    program = Program.build(tree)
    params = {"N": 8}
    for threads in (1, 4):
        store = ArrayStore.allocate(tree.arrays, params)
        _, metrics = run(program, params, store, Mode.BLOCK, threads)
        assert metrics.max_task_misses <= 2
        assert metrics.leaf_executions == 64


def test_origin_of_a_band_needs_no_gets(grid_tree):
    program = Program.build(grid_tree())
    (edt,) = program.edts
    assert antecedents(edt, TaskTag(edt.id, (0, 0)), program.spec, {"N": 8}) == set()


# -- hierarchy protocol -----------------------------------------------------------


def test_top_startup_counts_the_time_loop(monkeypatch):
    counts = []

    class Recording(CountingDep):
        def __init__(self, count, on_zero):
            counts.append(count)
            super().__init__(count, on_zero)

    monkeypatch.setattr(runtime, "CountingDep", Recording)
    _run("figseq", {"T": 3, "N": 4})
    assert counts[0] == 2


def test_empty_group_shuts_down_without_workers():
    _, _, metrics = _run("figseq", {"T": 1, "N": 4})
    assert metrics.leaf_executions == 0
    assert metrics.tasks == 2


def test_heat_group_size_matches_tag_enumeration(monkeypatch):
    counts = []

    class Recording(CountingDep):
        def __init__(self, count, on_zero):
            counts.append(count)
            super().__init__(count, on_zero)

    monkeypatch.setattr(runtime, "CountingDep", Recording)
    kernel = get_kernel("heat3d")
    params = {"T": 16, "N": 16}
    program = kernel.program()
    _, store, metrics = _run("heat3d", params, program=program)
    expected = sum(1 for _ in tag_space(program.edts[0], params))
    assert counts[0] == expected
    assert metrics.leaf_executions == expected
    assert store.first_difference(kernel.reference(params)) is None


def test_fan_work_is_linear_in_tasks():
    _, _, metrics = _run("figseq", {"T": 16, "N": 16})
    assert metrics.puts + metrics.satisfies <= 4 * metrics.tasks
    assert metrics.duplicate_puts == 0


def test_distance_two_doubles_the_ready_set():
    params = {"T": 8, "N": 6}
    kernel = get_kernel("toydist")
    _, store, with_distance = _run("toydist", params, program=kernel.program())
    _, _, without = _run("toydist", params, program=kernel.program(metadata=False))
    assert with_distance.ready_peak == 2
    assert without.ready_peak == 1
    assert store.first_difference(kernel.reference(params)) is None


def test_split_portions_run_in_order():
    params = {"T": 8, "N": 6}
    kernel, store, _ = _run("toysplit", params, mode=Mode.DEP, threads=4)
    assert store.first_difference(kernel.reference(params)) is None


# -- failures ---------------------------------------------------------------------


def test_missing_put_is_reported_as_deadlock(monkeypatch):
    ghost = TaskTag(99, (0,))
    monkeypatch.setattr(dependence, "antecedents", lambda edt, tag, spec, params: {ghost})
    with pytest.raises(DeadlockError) as exc:
        _run("toydist", {"T": 4, "N": 4}, mode=Mode.DEP)
    assert exc.value.blocked
    assert all(tag.edt_id == 0 for tag in exc.value.blocked)


def test_body_failure_is_wrapped():
    b = TreeBuilder(("N",))

    def boom(env, store):
        raise ValueError("bad cell")

    tree = b.tree(
        "boom",
        b.loop("i", "0", "N-1", LoopType.parallel(), tile=True, statements=[b.stmt("S0", boom)]),
    )
    program = Program.build(tree)
    with pytest.raises(TaskFailedError) as exc:
        run(program, {"N": 3}, ArrayStore({}), Mode.DEP, 2)
    assert isinstance(exc.value.cause, ValueError)


def test_failure_stops_the_other_workers():
    lock = threading.Lock()
    failed = threading.Event()
    started = []

    def body(env, store):
        with lock:
            started.append(failed.is_set())
            calls = len(started)
        if calls == 5:
            failed.set()
            raise ValueError("boom")
        time.sleep(0.002)

    b = TreeBuilder(("N",))
    tree = b.tree(
        "failing",
        b.loop("i", "0", "N-1", LoopType.parallel(), tile=True, statements=[b.stmt("S0", body)]),
    )
    with pytest.raises(TaskFailedError):
        run(Program.build(tree), {"N": 400}, ArrayStore({}), Mode.DEP, 4)
    assert sum(started) <= 8
    assert len(started) < 100


# -- trace ------------------------------------------------------------------------


def _parse_trace(lines):
    events = []
    for line in lines:
        epoch, secs, thread, event, kind, edt, coords = line.split()
        events.append((int(epoch), float(secs), int(thread), event, kind, int(edt), coords))
    return events


@pytest.mark.parametrize("mode", MODES)
def test_trace_shutdown_follows_every_worker(mode):
    lines = []
    _run("figseq", {"T": 3, "N": 4}, mode=mode, threads=4, trace=lines)
    events = _parse_trace(lines)
    assert [e[0] for e in events] == sorted(e[0] for e in events)
    assert events[0][2] == -1 and events[0][3] == "spawn" and events[0][4] == TaskKind.STARTUP.value

    done = defaultdict(list)
    for epoch, _, _, event, kind, edt, coords in events:
        if event == "done" and kind == TaskKind.WORKER.value:
            done[edt].append((epoch, coords))

    for epoch, _, _, event, kind, edt, coords in events:
        if event != "start" or kind != TaskKind.SHUTDOWN.value:
            continue
        prefix = () if coords == "-" else tuple(coords.split(","))
        members = [e for e, c in done[edt] if tuple(c.split(","))[: len(prefix)] == prefix]
        assert members
        assert max(members) < epoch


def test_trace_lines_are_formatted():
    events = [(1, 0.5, 0, "start", "WORKER", 2, "1,2"), (0, 0.25, -1, "spawn", "STARTUP", 0, "-")]
    assert format_trace(events) == [
        "0 0.250000 -1 spawn STARTUP 0 -",
        "1 0.500000 0 start WORKER 2 1,2",
    ]


@pytest.mark.slow
@pytest.mark.skipif(os.environ.get("EDTFLOW_SCALING") != "1", reason="set EDTFLOW_SCALING=1 to run")
@pytest.mark.skipif((os.cpu_count() or 1) < 4, reason="needs at least 4 cores")
def test_jacobi_3d_scales_to_four_threads():
    params = {"T": 2, "N": 96}
    kernel = get_kernel("jac3d7p")
    program = kernel.program((16, 16, 32))
    times = {}
    for threads in (1, 4):
        store = kernel.init_store(params)
        _, metrics = run(program, params, store, Mode.DEP, threads)
        times[threads] = metrics.seconds
    speedup = times[1] / times[4]
    print(f"jac3d7p speedup at 4 threads: {speedup:.2f}")
    assert speedup >= 2.0
