import math

import numpy as np
import pytest

from ovallab.flow import (BracketError, FlowTrajectory, HypersurfaceSnapshot, SolverError, SolverOptions,
                          density_at_tau, dt_max, estimate_extinction, evolve_to_extinction, huisken_density,
                          normalize_flow, step)
from ovallab.geometry import (AngularGrid, GeometryError, RadialGraph, SymmetrySpec, ellipsoid_init, rescale,
                              sphere_init, target_density)


@pytest.mark.parametrize("sym,grid", [(SymmetrySpec(2, 1), 64), (SymmetrySpec(3, 1), 64),
                                      (SymmetrySpec(3, 2), 64), (SymmetrySpec(3, 2, "BLOCK"), 12)], ids=str)
def test_sphere_extinction_time(sym, grid):
    R0 = 1.3
    tr = evolve_to_extinction(HypersurfaceSnapshot(0.0, sphere_init(sym, R0, grid=grid)))
    exact = R0 * R0 / (2 * sym.n)
    assert tr.t_ext == pytest.approx(exact, abs=1e-6)
    # radius stays round and follows sqrt(R0^2 - 2n t)
    r_ex = np.sqrt(np.maximum(R0 * R0 - 2 * sym.n * tr.times, 0.0))
    keep = r_ex > 0.05 * R0
    rho = tr.rho.reshape(len(tr), -1)[keep]
    np.testing.assert_allclose(rho, np.repeat(r_ex[keep, None], rho.shape[1], axis=1), rtol=1e-3)


def test_fixed_step_second_order():
    sym = SymmetrySpec(2, 1)
    g = sphere_init(sym, 1.0, grid=32)
    t_end = 0.1
    errs = []
    for m in (8, 16, 32):
        snap = HypersurfaceSnapshot(0.0, g)
        for _ in range(m):
            snap = step(snap, t_end / m)
        errs.append(np.max(np.abs(snap.graph.rho - math.sqrt(1 - 4 * t_end))))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.8)


def test_step_rejects_large_dt():
    snap = HypersurfaceSnapshot(0.0, sphere_init(SymmetrySpec(2, 1), 1.0, grid=16))
    with pytest.raises(ValueError):
        step(snap, 2 * dt_max(snap))


def test_estimate_extinction_synthetic():
    # max rho = 2 sqrt(0.3 - t): the fit must return 0.3 exactly up to rounding
    sym = SymmetrySpec(2, 1)
    grid = AngularGrid((8,))
    ts = np.linspace(0.0, 0.29, 30)
    rho = np.stack([np.full(8, 2.0 * math.sqrt(0.3 - t)) for t in ts])
    tr = FlowTrajectory(sym, grid, rho, times=ts)
    assert estimate_extinction(tr) == pytest.approx(0.3, abs=1e-12)
    rn = tr.with_extinction(0.3)
    assert estimate_extinction(rn) == pytest.approx(0.3, abs=1e-12)
    np.testing.assert_allclose(rn.shapes, 2.0 * math.sqrt(1.0), rtol=1e-12)


def test_trajectory_invariants():
    sym = SymmetrySpec(2, 1)
    grid = AngularGrid((8,))
    with pytest.raises(SolverError):
        FlowTrajectory(sym, grid, np.ones((3, 9)), times=[0, 1, 2])
    with pytest.raises(SolverError):
        FlowTrajectory(sym, grid, np.ones((3, 8)), times=[0, 2, 1])
    with pytest.raises(SolverError):
        FlowTrajectory(sym, grid, -np.ones((3, 8)), times=[0, 1, 2])
    with pytest.raises(SolverError):
        FlowTrajectory.renormalized(sym, grid, [0.0, -1.0], np.ones((2, 8)), 1.0)
    tr = FlowTrajectory.renormalized(sym, grid, [0.0, 1.0, 2.0], np.ones((3, 8)), 1.0)
    assert tr == FlowTrajectory.renormalized(sym, grid, [0.0, 1.0, 2.0], np.ones((3, 8)), 1.0)
    assert tr != FlowTrajectory.renormalized(sym, grid, [0.0, 1.0, 2.0], np.ones((3, 8)), 1.5)
    with pytest.raises(SolverError):
        tr.shape_at(2.5)


def test_nonconvex_start_rejected():
    sym = SymmetrySpec(2, 1)
    g = sphere_init(sym, 1.0, grid=64)
    (phi,) = g.grid.nodes
    with pytest.raises(SolverError):
        evolve_to_extinction(HypersurfaceSnapshot(0.0, g.with_rho(1.0 + 0.6 * np.cos(4 * phi))))


@pytest.fixture(scope="module")
def small_run():
    sym = SymmetrySpec(2, 1)
    g = ellipsoid_init(sym, 3.0, [1.0], 1.0, grid=128)
    return g, evolve_to_extinction(HypersurfaceSnapshot(0.0, g))


def test_volume_decreases_and_density_monotone(small_run):
    _, tr = small_run
    assert np.all(np.diff(tr.log_volumes()) < 0)
    dens = np.array([huisken_density(tr, i) for i in range(len(tr))])
    assert np.all(np.diff(dens) <= 1e-9)


def test_normalization_hits_target(small_run):
    _, tr = small_run
    nf = normalize_flow(tr)
    assert nf.t_ext == 0.0
    assert nf.norm.density_at_minus_mu2 == pytest.approx(target_density(tr.sym), abs=1e-6)
    assert density_at_tau(nf, 0.0) == pytest.approx(target_density(tr.sym), abs=1e-6)
    # renormalized states are untouched, only the clock moves
    np.testing.assert_array_equal(nf.shapes, tr.shapes)
    np.testing.assert_allclose(nf.taus, tr.taus - 2 * nf.norm.log_lam, rtol=0, atol=1e-12 * np.max(np.abs(tr.taus)))


def test_normalization_scale_invariant(small_run):
    g, tr = small_run
    nf = normalize_flow(tr)
    tr2 = evolve_to_extinction(HypersurfaceSnapshot(0.0, rescale(g, 2.0)))
    nf2 = normalize_flow(tr2)
    assert nf2.norm.log_lam == pytest.approx(nf.norm.log_lam - math.log(2.0), abs=1e-6)
    np.testing.assert_allclose(nf2.shape_at(-1.0), nf.shape_at(-1.0), rtol=1e-6)


def test_normalization_mu_shift(small_run):
    _, tr = small_run
    a, b = normalize_flow(tr, mu=1.0), normalize_flow(tr, mu=2.0)
    assert b.norm.log_lam - a.norm.log_lam == pytest.approx(-math.log(2.0), abs=1e-12)
    np.testing.assert_allclose(b.taus - a.taus, 2 * math.log(2.0), rtol=1e-12)


def test_sphere_cannot_be_normalized():
    tr = evolve_to_extinction(HypersurfaceSnapshot(0.0, sphere_init(SymmetrySpec(2, 1), 1.0, grid=32)))
    with pytest.raises(BracketError):
        normalize_flow(tr)


def test_solver_options_respected():
    g = sphere_init(SymmetrySpec(2, 1), 1.0, grid=32)
    tr = evolve_to_extinction(HypersurfaceSnapshot(0.0, g), options=SolverOptions(rtol=1e-6), store_every=0.2)
    assert tr.meta["rtol"] == 1e-6 and tr.meta["store_every"] == 0.2
    with pytest.raises(ValueError):
        evolve_to_extinction(HypersurfaceSnapshot(0.0, g), store_every=-1.0)
    with pytest.raises(GeometryError):
        RadialGraph(g.sym, g.grid, np.zeros(32))
