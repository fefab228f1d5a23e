import math

import numpy as np
import pytest

from ovallab.geometry import (AngularGrid, GeometryError, RadialGraph, SymmetrySpec, auto_stretch,
                              check_entropy_constants, ellipsoid_init, ellipsoid_quadric, enclosed_volume,
                              gaussian_density, is_convex, mean_curvature, msum, principal_curvatures,
                              sphere_area, sphere_entropy, sphere_init, target_density, total_area)

SYMS = [SymmetrySpec(2, 1), SymmetrySpec(3, 1), SymmetrySpec(3, 2), SymmetrySpec(3, 2, "BLOCK"),
        SymmetrySpec(4, 2, "BLOCK")]


def _grid(sym, n=48, stretch=0.0):
    if sym.n_angles == 1:
        return AngularGrid((n,), (stretch,))
    return AngularGrid((n, n), (-stretch, 0.0))


def test_symmetry_validation():
    with pytest.raises(GeometryError):
        SymmetrySpec(2, 2)
    with pytest.raises(GeometryError):
        SymmetrySpec(5, 3, "BLOCK")
    assert SymmetrySpec(3, 2).cylinder_radius == pytest.approx(math.sqrt(2))
    assert SymmetrySpec(3, 2, "BLOCK").n_angles == 2


@pytest.mark.parametrize("sym", SYMS, ids=str)
@pytest.mark.parametrize("stretch", [0.0, 0.5])
def test_sphere_curvature_area_volume(sym, stretch):
    R = 1.7
    g = sphere_init(sym, R, grid=_grid(sym, stretch=stretch))
    n = sym.n
    np.testing.assert_allclose(mean_curvature(g).values, n / R, rtol=1e-12)
    pc, mult = principal_curvatures(g)
    assert sum(mult) == n
    # a double root of the shape operator: sqrt of a roundoff-sized discriminant
    np.testing.assert_allclose(pc, 1.0 / R, rtol=1e-7)
    assert total_area(g) == pytest.approx(sphere_area(n) * R ** n, rel=1e-10)
    assert enclosed_volume(g) == pytest.approx(sphere_area(n) * R ** (n + 1) / (n + 1), rel=1e-10)


def test_spheroid_curvatures_match_closed_form():
    # x^2/A^2 + r^2/B^2 = 1 rotated about x; meridian and parallel curvatures known
    sym = SymmetrySpec(2, 1)
    ell = 3.0
    g = ellipsoid_init(sym, ell, [1.0], 1.0, grid=AngularGrid((256,), (0.3,)))
    A, B = ell * math.sqrt(2.0), math.sqrt(2.0)
    (phi,) = g.grid.nodes
    x, r = g.rho * np.cos(phi), g.rho * np.sin(phi)
    t = np.arctan2(r / B, x / A)
    q = A * A * np.sin(t) ** 2 + B * B * np.cos(t) ** 2
    k_mer = A * B / q ** 1.5
    k_par = A / (B * np.sqrt(q))
    np.testing.assert_allclose(mean_curvature(g).values, k_mer + k_par, rtol=1e-6)


def test_block_mirror_is_exact():
    sym = SymmetrySpec(3, 2, "BLOCK")
    g1 = ellipsoid_init(sym, 4.0, [1.0, 2.0], 1.0, grid=24)
    g2 = ellipsoid_init(sym, 4.0, [2.0, 1.0], 1.0, grid=24)
    np.testing.assert_array_equal(g1.rho, g2.rho[:, ::-1])
    assert total_area(g1) == total_area(g2)
    assert gaussian_density(g1) == gaussian_density(g2)


def test_msum_reversal_invariant():
    x = np.random.default_rng(3).standard_normal((7, 11))
    assert msum(x) == msum(x[:, ::-1])
    assert msum(x) == pytest.approx(x.sum(), rel=1e-13)


def test_entropy_constants():
    check_entropy_constants()
    for n in (2, 3):
        # the shrinker sphere of radius sqrt(2n) has density equal to its entropy
        g = sphere_init(SymmetrySpec(n, 1), math.sqrt(2 * n))
        assert gaussian_density(g) == pytest.approx(sphere_entropy(n), rel=1e-12)
    assert sphere_entropy(1) == pytest.approx(math.sqrt(2 * math.pi / math.e), rel=1e-14)
    lo, hi = sphere_entropy(2), sphere_entropy(1)
    assert lo < target_density(SymmetrySpec(2, 1)) < hi


def test_ellipsoid_preconditions():
    with pytest.raises(GeometryError, match="noncompact"):
        ellipsoid_quadric(SymmetrySpec(3, 2, "BLOCK"), 5.0, [1.0, 0.0], 1.0)
    with pytest.raises(GeometryError):
        ellipsoid_quadric(SymmetrySpec(2, 1), -1.0, [1.0], 1.0)
    with pytest.raises(GeometryError, match="BLOCK"):
        ellipsoid_init(SymmetrySpec(3, 2), 5.0, [1.0, 2.0], 1.0)
    with pytest.raises(GeometryError):
        RadialGraph(SymmetrySpec(2, 1), AngularGrid((8,)), -np.ones(8))
    with pytest.raises(GeometryError):
        AngularGrid((8, 8), (0.0, 0.3))


def test_auto_stretch_bounds():
    assert auto_stretch(1.0, 512) == 0.0
    vals = [auto_stretch(a, 512) for a in (2.0, 5.0, 20.0, 1e3)]
    assert all(0.0 <= v <= 0.9 for v in vals)
    assert vals == sorted(vals)


def test_convexity_detection():
    sym = SymmetrySpec(2, 1)
    g = ellipsoid_init(sym, 5.0, [1.0], 1.0, grid=128)
    assert is_convex(g)
    (phi,) = g.grid.nodes
    dumbbell = g.with_rho(1.0 + 0.6 * np.cos(4 * phi))
    assert not is_convex(dumbbell)
