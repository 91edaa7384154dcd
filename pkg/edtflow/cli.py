from __future__ import annotations

import argparse
import logging
import os
import re
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from rich.console import Console
from rich.logging import RichHandler

from .edt_formation import dump_edts
from .errors import EdtflowError
from .harness import RunResult, emit_csv, expand, hierarchy_strategy, parse_tiles, run_sweep
from .kernels import get_kernel, registry
from .models import Mode
from .reporter import print_edts, print_registry, print_results

THREADS_ENV = "EDTFLOW_THREADS"

_HIER = re.compile(r"^(tile|user:[1-9]\d*|gran:[1-9]\d*)$")


def _int_list(text: str) -> List[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma list of integers, got {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return values


def _mode_list(text: str) -> List[Mode]:
    modes = []
    for part in text.split(","):
        try:
            modes.append(Mode(part.strip().lower()))
        except ValueError:
            raise argparse.ArgumentTypeError(
                f"unknown mode {part!r}; choose from {', '.join(m.value for m in Mode)}"
            ) from None
    return modes


def _tile_list(text: str) -> List[Tuple[int, ...]]:
    try:
        return [parse_tiles(part) for part in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _hier(text: str) -> str:
    if not _HIER.match(text):
        raise argparse.ArgumentTypeError(f"bad hierarchy {text!r}; expected tile, user:K or gran:G")
    return text


def _param(text: str) -> Tuple[str, int]:
    name, sep, value = text.partition("=")
    try:
        if not sep or not name.strip():
            raise ValueError
        return name.strip(), int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NAME=VALUE, got {text!r}") from None


def _default_threads() -> List[int]:
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return [1]
    try:
        return _int_list(raw)
    except argparse.ArgumentTypeError:
        logging.getLogger(__name__).warning("ignoring %s=%r", THREADS_ENV, raw)
        return [1]


def _configure_logging(debug: bool, verbose: bool) -> None:
    level = logging.DEBUG if debug else (logging.INFO if verbose else logging.WARNING)
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=debug, markup=True, show_time=False, show_path=False)],
    )


def _write_trace(path: Path, results: List[RunResult]) -> None:
    with path.open("w", encoding="utf-8") as f:
        for r in results:
            cfg = r.config
            f.write(f"# kernel={cfg.kernel} mode={cfg.mode.value} threads={cfg.threads} tiles={cfg.tiles_text}\n")
            f.writelines(line + "\n" for line in r.trace)


def _dump(kernels: List[str], tiles: List[Tuple[int, ...]], hier: str, plain: bool) -> None:
    for name in kernels:
        kernel = get_kernel(name)
        for tile in tiles:
            tree = kernel.tree(tile)
            program = kernel.program(tile, hierarchy_strategy(tree, hier))
            if plain:
                sys.stdout.write(f"# {kernel.name} tiles={'x'.join(map(str, kernel.tiles(tile))) or '-'}\n")
                sys.stdout.write(dump_edts(program.edts))
            else:
                print_edts(kernel, program.edts)


def main(argv: List[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="edtflow",
        description="Form hierarchical EDTs from tiled loop trees and run them on a work-stealing runtime.",
    )
    parser.add_argument("--kernel", help="Comma list of kernel names (see --list)")
    parser.add_argument("--size", type=_int_list, default=None, help="Comma list of problem sizes")
    parser.add_argument("--param", type=_param, action="append", default=[], help="Override a parameter (NAME=VALUE)")
    parser.add_argument("--tile", type=_tile_list, default=None, help="Comma list of tile shapes, e.g. 4,16x16x64")
    parser.add_argument("--mode", type=_mode_list, default=[Mode.DEP], help="Comma list of block, async, dep")
    parser.add_argument("--threads", type=_int_list, default=None, help=f"Comma list of thread counts (default ${THREADS_ENV} or 1)")
    parser.add_argument("--hier", type=_hier, default="tile", help="tile, user:K or gran:G")
    parser.add_argument("--reps", type=int, default=3, help="Repetitions per configuration; the fastest is kept")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--verify", action="store_true", help="Compare every run bitwise against the sequential reference")
    parser.add_argument("--csv", action="store_true", help="Print CSV instead of tables")
    parser.add_argument("--output", help="Write CSV results to the given path")
    parser.add_argument("--trace", help="Write per-task trace events to the given path")
    parser.add_argument("--kernel-file", help="Load and register a kernel from a text definition")
    parser.add_argument("--dump-edts", action="store_true", help="Print the formed EDTs and exit")
    parser.add_argument("--list", action="store_true", help="List available kernels and exit")
    parser.add_argument("--debug", action="store_true", help="Enable debug logging")
    parser.add_argument("--verbose", action="store_true", help="Enable verbose logging")
    parser.add_argument("--tui", action="store_true", help="Launch Textual TUI instead of Rich CLI")

    args = parser.parse_args(argv)
    if args.reps < 1:
        parser.error("--reps must be at least 1")

    _configure_logging(args.debug, args.verbose)
    err = Console(stderr=True)

    loaded: Optional[str] = None
    if args.kernel_file:
        from .kernel_format import load_kernel

        path = Path(args.kernel_file)
        if not path.exists():
            err.print(f"[red]Kernel file not found:[/red] {path}")
            return 1
        try:
            loaded = load_kernel(path).name
        except (EdtflowError, ValueError) as exc:
            err.print(f"[red]Cannot load kernel file {path}:[/red] {exc}")
            return 1

    if args.list:
        print_registry(registry())
        return 0

    names = [n.strip() for n in args.kernel.split(",") if n.strip()] if args.kernel else []
    if not names and loaded:
        names = [loaded]
    if not names:
        parser.error("--kernel is required (or --kernel-file, or --list)")
    for name in names:
        try:
            get_kernel(name)
        except KeyError as exc:
            parser.error(str(exc.args[0]))

    tiles = args.tile or [()]
    if args.dump_edts:
        try:
            _dump(names, tiles, args.hier, plain=args.csv)
        except (EdtflowError, ValueError) as exc:
            err.print(f"[red]EDT formation failed:[/red] {exc}")
            return 1
        return 0

    overrides: Dict[str, int] = dict(args.param)
    try:
        configs = expand(
            names,
            sizes=args.size or [None],
            tiles=tiles,
            modes=args.mode,
            threads=args.threads or _default_threads(),
            overrides=overrides,
            hier=args.hier,
            reps=args.reps,
            verify=args.verify,
            seed=args.seed,
        )
    except KeyError as exc:
        parser.error(str(exc.args[0]))
    except ValueError as exc:
        parser.error(str(exc))

    if args.tui:
        from .tui import SweepApp

        app = SweepApp(configs, trace=bool(args.trace))
        app.run()
        results = app.results
    else:
        try:
            results = run_sweep(configs, trace=bool(args.trace))
        except EdtflowError as exc:
            err.print(f"[red]Run failed:[/red] {exc}")
            return 1
        if args.csv:
            sys.stdout.write(emit_csv(results))
        else:
            print_results(results)

    if args.output:
        out_path = Path(args.output)
        out_path.write_text(emit_csv(results), encoding="utf-8")
        err.print(f"[green]CSV results written to[/green] {out_path}")
    if args.trace:
        _write_trace(Path(args.trace), results)
        err.print(f"[green]Trace written to[/green] {args.trace}")

    failed = [r for r in results if r.verified is False]
    if failed:
        first = failed[0]
        err.print(
            f"[red]Verification failed for {len(failed)} run(s); first: "
            f"{first.config.kernel} {first.config.mode.value} x{first.config.threads}: {first.mismatch}[/red]"
        )
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
