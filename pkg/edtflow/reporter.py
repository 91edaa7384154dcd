from __future__ import annotations

from typing import List, Optional

from rich import box
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from .edt_formation import CompileTimeEdt, runtime_triple
from .harness import RunResult
from .kernels import KernelSpec
from .models import Mode


def print_results(results: List[RunResult], console: Optional[Console] = None) -> None:
    console = console or Console()

    # Header
    console.print(
        Panel.fit(
            "edtflow - EDT benchmark sweep",
            style="bold cyan",
            border_style="cyan",
        )
    )

    if not results:
        console.print("[yellow]No runs were executed.[/yellow]")
        return

    # Summary
    checked = [r for r in results if r.verified is not None]
    failed = [r for r in checked if not r.verified]
    best = max(results, key=lambda r: r.gflops)

    summary = Table.grid(expand=False)
    summary.add_column(justify="left")
    summary.add_column(justify="right")
    summary.add_row("Runs", str(len(results)))
    summary.add_row("Kernels", str(len({r.config.kernel for r in results})))
    summary.add_row("Verified", f"[green]{len(checked) - len(failed)}[/green]")
    summary.add_row("Mismatches", f"[red]{len(failed)}[/red]" if failed else "0")
    summary.add_row("Best", f"{best.config.kernel} {best.config.mode.value} x{best.config.threads}: {best.gflops:.4f} GFlops")

    console.print(Panel(summary, title="Summary", border_style="blue", box=box.ROUNDED))

    # Runs table
    table = Table(
        title="Runs",
        expand=True,
        box=box.SIMPLE_HEAVY,
        show_lines=False,
        header_style="bold",
    )
    table.add_column("Kernel", no_wrap=True)
    table.add_column("Mode", no_wrap=True)
    table.add_column("Threads", justify="right")
    table.add_column("Tiles", no_wrap=True)
    table.add_column("Seconds", justify="right")
    table.add_column("GFlops", justify="right")
    table.add_column("Tasks", justify="right")
    table.add_column("Puts", justify="right")
    table.add_column("Get misses", justify="right")
    table.add_column("Requeues", justify="right")
    table.add_column("Steals", justify="right")
    table.add_column("Ready peak", justify="right")
    table.add_column("Check", no_wrap=True)

    for r in results:
        m = r.metrics
        table.add_row(
            r.config.kernel,
            f"[{_mode_style(r.config.mode)}]{r.config.mode.value}[/]",
            str(r.config.threads),
            r.config.tiles_text,
            f"{m.seconds:.4f}",
            f"{r.gflops:.4f}",
            str(m.tasks),
            str(m.puts),
            str(m.get_misses),
            str(m.requeues),
            str(m.steals),
            str(m.ready_peak),
            _check_cell(r),
        )

    console.print(table)

    for r in failed:
        console.print(f"[red]{r.config.kernel} {r.config.mode.value} x{r.config.threads}: {r.mismatch}[/red]")


def print_edts(kernel: KernelSpec, edts: List[CompileTimeEdt], console: Optional[Console] = None) -> None:
    console = console or Console()
    table = Table(title=f"EDTs of {kernel.name}", box=box.SIMPLE_HEAVY, header_style="bold")
    table.add_column("Id", justify="right")
    table.add_column("Levels", no_wrap=True)
    table.add_column("Loops", no_wrap=True)
    table.add_column("Types", no_wrap=True)
    table.add_column("Worker", no_wrap=True)
    table.add_column("Statements", overflow="fold")
    table.add_column("Children", no_wrap=True)
    for edt in edts:
        own = edt.loops[edt.start : edt.stop + 1]
        startup, worker, _ = runtime_triple(edt)
        fan = f" fan@{startup.fan_level}" if startup.fan_level is not None else ""
        table.add_row(
            str(edt.id),
            f"{edt.start}..{edt.stop}",
            "/".join(lp.var for lp in edt.loops),
            " ".join(str(lp.loop_type) for lp in own),
            worker.action.value + fan,
            ",".join(s.id for s in edt.statements) or "-",
            ",".join(str(c) for c in edt.children_edts) or "-",
        )
    console.print(table)


def print_registry(kernels: List[KernelSpec], console: Optional[Console] = None) -> None:
    console = console or Console()
    table = Table(title="Kernels", box=box.SIMPLE_HEAVY, header_style="bold")
    table.add_column("Name", no_wrap=True)
    table.add_column("Title", no_wrap=True)
    table.add_column("Defaults", no_wrap=True)
    table.add_column("Tiles", justify="right")
    table.add_column("Description", overflow="fold")
    for k in kernels:
        table.add_row(
            k.name,
            k.title,
            " ".join(f"{p}={v}" for p, v in k.defaults.items()),
            str(k.tile_rank) if k.tile_rank else "-",
            k.description,
        )
    console.print(table)


def _check_cell(result: RunResult) -> str:
    if result.verified is None:
        return "[dim]-[/dim]"
    return "[green]ok[/green]" if result.verified else "[bold white on red]FAIL[/]"


def _mode_style(mode: Mode) -> str:
    return {
        Mode.BLOCK: "magenta",
        Mode.ASYNC: "yellow",
        Mode.DEP: "cyan",
    }[mode]
