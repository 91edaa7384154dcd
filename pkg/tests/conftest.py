from __future__ import annotations

from typing import Callable

import pytest

from edtflow.loop_tree import ArrayStore, LoopTree, TreeBuilder
from edtflow.models import LoopType
from edtflow.range_expr import Env


def _noop(env: Env, store: ArrayStore) -> None:
    pass


@pytest.fixture
def grid_tree() -> Callable[..., LoopTree]:
    """An N x N permutable band (i, j) with the tile boundary on j."""

    def build(n: str = "N", band: int = 1) -> LoopTree:
        b = TreeBuilder(("N",))
        s0 = b.stmt("S0", _noop)
        return b.tree(
            "grid",
            b.loop(
                "i", "0", f"{n}-1", LoopType.permutable(band),
                b.loop("j", "0", f"{n}-1", LoopType.permutable(band), tile=True, statements=[s0]),
            ),
        )

    return build


@pytest.fixture
def line_tree() -> LoopTree:
    """A single rectangular 1-D tile loop i in [0, 3]."""
    b = TreeBuilder(())
    return b.tree("line", b.loop("i", "0", "3", LoopType.permutable(1), tile=True, statements=[b.stmt("S0", _noop)]))
