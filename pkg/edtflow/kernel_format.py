"""Plain-text kernel definitions.

A kernel file declares parameters and arrays, then nests ``loop`` lines by
indentation. Bounds and subscripts use the range grammar; statement bodies
are borrowed from registered kernels by ``kernel.statement`` reference::

    kernel toy
    params T=8 N=6
    array A T+1 N
    distance t 2
    loop t perm:1 1 .. T-1 tile
      loop i doall 1 .. N-2
        stmt S0 = toydist.S0 flops=1 read A[t-1, i] write A[t+1, i]

Statements run before the child loops of the loop that encloses them.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from pyparsing import (
    Group,
    Keyword,
    Literal,
    OneOrMore,
    Optional as Opt,
    ParseBaseException,
    ParserElement,
    Regex,
    Suppress,
    Word,
    ZeroOrMore,
    alphanums,
    alphas,
    delimited_list,
    nested_expr,
    nums,
    original_text_for,
)

from .errors import EdtflowError, KernelFormatError
from .kernels import KernelSpec, register_kernel, registry, statement_body
from .loop_tree import (
    AccessSummary,
    LoopNode,
    LoopTree,
    Statement,
    TreeBuilder,
    instances,
    iterate_sequentially,
)
from .models import AccessMode, LoopType

log = logging.getLogger(__name__)


def _build_line_grammar() -> ParserElement:
    ident = Word(alphas + "_", alphanums + "_")
    number = Word(nums).set_parse_action(lambda t: int(t[0]))
    # expression text: bare tokens plus balanced parentheses, no top-level commas
    piece = nested_expr("(", ")") | Regex(r"[^\s().,\[\]=]+")
    dim = original_text_for((Regex(r"[^\s().,\[\]=]+") + Opt(nested_expr("(", ")"))) | nested_expr("(", ")"))
    stop = Literal("..") | Keyword("tile") | Keyword("step") | Keyword("read") | Keyword("write")
    text = original_text_for(OneOrMore(~stop + piece))
    subscript = original_text_for(OneOrMore(piece))

    kernel = Keyword("kernel") + ident("name") + Opt(Regex(r'"[^"]*"')("title"))
    params = Keyword("params") + Group(OneOrMore(Group(ident + Suppress("=") + Regex(r"-?\d+"))))("bindings")
    array = (
        Keyword("array") + ident("name") + Group(OneOrMore(~Keyword("int64") + ~Keyword("float64") + dim))("dims")
        + Opt(Keyword("int64") | Keyword("float64"))("dtype")
    )
    distance = Keyword("distance") + ident("var") + Group(delimited_list(number))("values")
    split = Keyword("split") + ident("var") + text("cut")
    loop_type = Regex(r"doall|seq|perm:\d+")
    loop = (
        Keyword("loop") + ident("var") + loop_type("type") + text("lb") + Suppress("..") + text("ub")
        + Opt(Suppress(Keyword("step")) + number("step")) + Opt(Keyword("tile"))("tile")
    )
    access = Group(
        (Keyword("read") | Keyword("write"))
        + ident
        + Suppress("[")
        + Group(Opt(delimited_list(subscript)))
        + Suppress("]")
    )
    stmt = (
        Keyword("stmt") + ident("sid") + Suppress("=") + Regex(r"\w+\.\w+")("body")
        + Opt(Suppress(Keyword("flops") + Literal("=")) + number("flops"))
        + Group(ZeroOrMore(access))("accesses")
    )
    return kernel | params | array | distance | split | loop | stmt


_LINE = _build_line_grammar()


def _loop_type(text: str) -> LoopType:
    if text == "doall":
        return LoopType.parallel()
    if text == "seq":
        return LoopType.sequential()
    return LoopType.permutable(int(text.split(":", 1)[1]))


class _Loader:
    def __init__(self, source: str) -> None:
        self.source = source
        self.name: Optional[str] = None
        self.title: Optional[str] = None
        self.defaults: Dict[str, int] = {}
        self.arrays: List[Tuple[str, List[str], str]] = []
        self.distances: Dict[str, frozenset] = {}
        self.splits: Dict[str, str] = {}
        self.roots: List[LoopNode] = []
        self._stack: List[Tuple[int, LoopNode]] = []
        self._builder: Optional[TreeBuilder] = None

    @property
    def builder(self) -> TreeBuilder:
        if self._builder is None:
            self._builder = TreeBuilder(tuple(self.defaults))
        return self._builder

    def feed(self, lineno: int, raw: str) -> None:
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            return
        if "\t" in line[: len(line) - len(line.lstrip())]:
            raise KernelFormatError("tabs are not allowed in indentation", lineno)
        indent = len(line) - len(line.lstrip(" "))
        try:
            toks = _LINE.parse_string(line.strip(), parse_all=True)
        except ParseBaseException as exc:
            raise KernelFormatError(f"cannot parse {line.strip()!r}: {exc.msg}", lineno) from None
        try:
            self._dispatch(toks, indent, lineno)
        except KernelFormatError:
            raise
        except (EdtflowError, KeyError, ValueError) as exc:
            raise KernelFormatError(str(exc), lineno) from exc

    def _dispatch(self, toks, indent: int, lineno: int) -> None:
        head = toks[0]
        if head in ("loop", "stmt"):
            if self.name is None:
                raise KernelFormatError("'kernel' line must come first", lineno)
            getattr(self, f"_{head}")(toks, indent, lineno)
            return
        if indent:
            raise KernelFormatError(f"'{head}' must not be indented", lineno)
        if self.roots:
            raise KernelFormatError(f"'{head}' must come before the first loop", lineno)
        if head == "kernel":
            self.name = toks["name"]
            self.title = toks["title"].strip('"') if "title" in toks else None
        elif head == "params":
            self.defaults.update((name, int(value)) for name, value in toks["bindings"])
        elif head == "array":
            dtype = toks["dtype"] if "dtype" in toks else "float64"
            self.arrays.append((toks["name"], list(toks["dims"]), dtype))
        elif head == "distance":
            self.distances[toks["var"]] = frozenset(toks["values"])
        elif head == "split":
            self.splits[toks["var"]] = toks["cut"]

    def _parent(self, indent: int) -> Optional[LoopNode]:
        while self._stack and self._stack[-1][0] >= indent:
            self._stack.pop()
        return self._stack[-1][1] if self._stack else None

    def _loop(self, toks, indent: int, lineno: int) -> None:
        node = self.builder.loop(
            toks["var"],
            toks["lb"],
            toks["ub"],
            _loop_type(toks["type"]),
            tile="tile" in toks,
            step=toks["step"] if "step" in toks else 1,
        )
        parent = self._parent(indent)
        if parent is None:
            self.roots.append(node)
        else:
            parent.children.append(node)
        self._stack.append((indent, node))

    def _stmt(self, toks, indent: int, lineno: int) -> None:
        parent = self._parent(indent)
        if parent is None:
            raise KernelFormatError(f"statement {toks['sid']} is not inside a loop", lineno)
        accesses = [
            AccessSummary(
                array,
                tuple(self.builder.expr(ix) for ix in indices),
                AccessMode.READ if mode == "read" else AccessMode.WRITE,
            )
            for mode, array, indices in toks.get("accesses", [])
        ]
        stmt = self.builder.stmt(
            toks["sid"], statement_body(toks["body"]), *accesses, flops=toks["flops"] if "flops" in toks else 0
        )
        parent.statements.append(stmt)

    def tree(self) -> LoopTree:
        if self.name is None:
            raise KernelFormatError("missing 'kernel' line")
        if not self.roots:
            raise KernelFormatError(f"kernel {self.name} has no loops")
        decls = [self.builder.array(name, *dims, dtype=dtype) for name, dims, dtype in self.arrays]
        return self.builder.tree(self.name, *self.roots, arrays=decls)


def _parse(text: str) -> Tuple[LoopTree, _Loader]:
    loader = _Loader(text)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        loader.feed(lineno, raw)
    return loader.tree(), loader


def load_kernel(source: Union[str, Path], *, register: bool = True) -> KernelSpec:
    """Build a KernelSpec from kernel text or a path to a kernel file.

    The reference is the sequential interpretation of the same tree, so
    verification checks the parallel schedule rather than the statements.
    """
    text = source.read_text(encoding="utf-8") if isinstance(source, Path) else source
    tree, loader = _parse(text)
    params = tuple(tree.parameters)

    def reference_impl(p, store) -> None:
        iterate_sequentially(tree, p, store)

    spec = KernelSpec(
        name=tree.name,
        title=loader.title or tree.name.upper(),
        parameters=params,
        defaults=dict(loader.defaults),
        size_params=tuple(n for n in ("N",) if n in params) or params[-1:],
        tile_rank=0,
        builder=lambda tiles: tree,
        reference_impl=reference_impl,
        flops=lambda p: sum(stmt.flops for stmt, _ in instances(tree, p)),
        distances=dict(loader.distances),
        splits=dict(loader.splits),
        description=f"loaded from kernel text ({len(tree.statements())} statements)",
    )
    log.info("loaded kernel %s with %d loops", spec.name, len(tree.loops()))
    return register_kernel(spec) if register else spec


def dump_kernel(spec: KernelSpec, tiles: Tuple[int, ...] = ()) -> str:
    """Render a kernel tree in the text format.

    Statement bodies render as ``<kernel>.<id>``, which resolves back when
    the kernel is registered.
    """
    tree = spec.tree(tiles)
    lines = [f"kernel {tree.name}"]
    if spec.defaults:
        lines.append("params " + " ".join(f"{k}={v}" for k, v in spec.defaults.items()))
    for decl in tree.arrays:
        dims = " ".join(_dim_text(d) for d in decl.shape)
        lines.append(f"array {decl.name} {dims}" + (f" {decl.dtype}" if decl.dtype != "float64" else ""))
    for var, values in spec.distances.items():
        lines.append(f"distance {var} {', '.join(str(v) for v in sorted(values))}")
    for var, cut in spec.splits.items():
        lines.append(f"split {var} {cut}")

    def emit(node: LoopNode, depth: int) -> None:
        pad = "  " * depth
        extra = (f" step {node.step}" if node.step != 1 else "") + (" tile" if node.tile_boundary else "")
        lines.append(f"{pad}loop {node.var} {node.loop_type} {node.lb} .. {node.ub}{extra}")
        for stmt in node.statements:
            ref = _body_ref(stmt, spec)
            flops = f" flops={stmt.flops}" if stmt.flops else ""
            accesses = "".join(f" {acc}" for acc in stmt.accesses)
            lines.append(f"{pad}  stmt {stmt.id} = {ref}{flops}{accesses}")
        for child in node.children:
            emit(child, depth + 1)

    for loop in tree.root.children:
        emit(loop, 0)
    return "\n".join(lines) + "\n"


def _dim_text(expr) -> str:
    # function forms read back as name + (args); parenthesised sums need outer parens
    text = str(expr)
    return f"({text})" if expr.is_linear and "(" in text else text


def _body_ref(stmt: Statement, spec: KernelSpec) -> str:
    for candidate in registry():
        for other in candidate.tree().statements():
            if other.body is stmt.body:
                return f"{candidate.name}.{other.id}"
    return f"{spec.name}.{stmt.id}"
