from __future__ import annotations

from typing import List

from textual.app import App, ComposeResult
from textual.containers import Vertical
from textual.widgets import DataTable, Footer, Header, Label, LoadingIndicator

from .harness import RunConfig, RunResult, sweep_async


class SweepApp(App):
    CSS = """
    Screen {
        align: center middle;
    }
    #title {
        text-style: bold;
    }
    """

    BINDINGS = [("q", "quit", "Quit")]

    def __init__(self, configs: List[RunConfig], trace: bool = False) -> None:
        super().__init__()
        self.configs = configs
        self.trace = trace
        self.results: List[RunResult] = []
        self.progress_label = Label("Preparing sweep…")
        self.table = DataTable(zebra_stripes=True)
        self.spinner = LoadingIndicator()

    def compose(self) -> ComposeResult:
        yield Header(show_clock=True)
        yield Vertical(
            Label("edtflow - EDT benchmark sweep", id="title"),
            self.progress_label,
            self.spinner,
            self.table,
        )
        yield Footer()

    def on_mount(self) -> None:
        self.table.add_columns(
            "Kernel", "Mode", "Threads", "Tiles", "Seconds", "GFlops", "Tasks", "Get misses", "Steals", "Check"
        )
        self.spinner.display = True
        self.run_worker(self.run_sweep(), exclusive=True)

    async def run_sweep(self) -> None:
        # progress arrives on the app's event loop; the runs themselves go to a thread
        self.results = await sweep_async(self.configs, trace=self.trace, progress_cb=self._on_result)
        self.spinner.display = False
        failed = sum(1 for r in self.results if r.verified is False)
        tail = f", [red]{failed} mismatches[/red]" if failed else ""
        self.progress_label.update(f"Finished {len(self.results)} runs{tail}")

    def _on_result(self, done: int, total: int, result: RunResult) -> None:
        self.progress_label.update(f"Running configurations: {done}/{total}")
        m = result.metrics
        check = "-" if result.verified is None else ("ok" if result.verified else "FAIL")
        self.table.add_row(
            result.config.kernel,
            result.config.mode.value,
            str(result.config.threads),
            result.config.tiles_text,
            f"{m.seconds:.4f}",
            f"{result.gflops:.4f}",
            str(m.tasks),
            str(m.get_misses),
            str(m.steals),
            check,
        )
