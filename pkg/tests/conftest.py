"""Shared fixtures.  Expensive flows are computed once per session.

Set OVALLAB_TEST_CACHE to a directory to keep them between sessions; the
archives are keyed by the same config hash the CLI uses.
"""
import os
from pathlib import Path

import pytest

from ovallab.experiments.runner import Context
from ovallab.geometry import SymmetrySpec


@pytest.fixture(scope="session")
def flow_ctx():
    """The shared :class:`Context`; experiment runners given it reuse the session flows."""
    cache = os.environ.get("OVALLAB_TEST_CACHE")
    return Context(Path(cache) if cache else None)


@pytest.fixture(scope="session")
def flows(flow_ctx):
    ctx = flow_ctx

    def get(sym: SymmetrySpec, ell: float, a, grid=None, store_every=0.05, rtol=1e-8):
        solver = {"grid": grid, "rtol": rtol, "eps_ext": 1e-3, "store_every": store_every}
        return ctx.flow(sym, ell, a, 1.0, solver)

    return get


@pytest.fixture(scope="session")
def flow_l20(flows):
    """Normalized l = 20 ellipsoid flow, n = 2, k = 1, default grid."""
    return flows(SymmetrySpec(2, 1), 20.0, [1.0])


@pytest.fixture(scope="session")
def flow_small(flows):
    """A cheap normalized flow (l = 3, n = 2, k = 1, 128 cells)."""
    return flows(SymmetrySpec(2, 1), 3.0, [1.0], grid=128)


@pytest.fixture(scope="session")
def block_pair(flows):
    """BLOCK k = 2 flows of a = (1, 2) and a = (2, 1), l = 8, 32 x 32 cells."""
    sym = SymmetrySpec(3, 2, "BLOCK")
    return {(1.0, 2.0): flows(sym, 8.0, [1.0, 2.0], grid=32, store_every=0.1),
            (2.0, 1.0): flows(sym, 8.0, [2.0, 1.0], grid=32, store_every=0.1)}


@pytest.fixture(scope="session")
def k2_sweep(flows):
    """Diagonal sweep a = (s, s), k = 2, n = 3, l = 15, 256 cells."""
    sym = SymmetrySpec(3, 2)
    return {s: flows(sym, 15.0, [s, s], grid=256) for s in (0.5, 1.0, 2.0)}


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])
