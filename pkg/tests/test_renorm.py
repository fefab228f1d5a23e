import math

import numpy as np
import pytest

from ovallab.geometry import HypersurfaceSnapshot, SymmetrySpec, sphere_init
from ovallab.renorm import (BGamma, ProfileFamily, TransformParams, WindowError, apply_transform, compose_params,
                            cylinder_family, default_theta, extract_profile, params_to_bgamma, quadratic_ansatz,
                            renormalize_at, shift_first_beta, tau_window, transform_family, transform_profile)


def test_params_to_bgamma():
    bg = params_to_bgamma(0.0, 0.0, -4.0)
    assert (bg.b, bg.Gamma) == (0.0, 0.0)
    beta, gamma, tau = 0.3, 0.2, -2.0
    bg = params_to_bgamma(beta, gamma, tau)
    arg = 1 + beta * math.exp(tau)
    assert bg.b == pytest.approx(math.sqrt(arg) - 1, rel=1e-15)
    assert bg.Gamma == pytest.approx((gamma - math.log(arg)) / tau, rel=1e-15)
    with pytest.raises(ValueError):
        params_to_bgamma(-10.0, 0.0, 0.0 - 1e-3)
    with pytest.raises(ValueError):
        BGamma(-1.0, 0.0, -1.0)


def test_transform_params_validation():
    with pytest.raises(ValueError):
        TransformParams(alpha=(0.1,))
    with pytest.raises(ValueError):
        TransformParams(R=(0, 0))
    assert TransformParams(R=(0, 1)).is_identity
    assert shift_first_beta(0.5, math.log(2.0)) == pytest.approx(1.0)


@pytest.mark.parametrize("sym", [SymmetrySpec(2, 1), SymmetrySpec(3, 2), SymmetrySpec(3, 2, "BLOCK")], ids=str)
def test_shrinker_sphere_profile(sym):
    # the round shrinker of radius sqrt(2n): v(y) = sqrt(2n - |y|^2)
    grid = 64 if sym.n_angles == 1 else 24
    snap = HypersurfaceSnapshot(-3.0, sphere_init(sym, math.sqrt(2 * sym.n), grid=grid))
    pts = np.random.default_rng(0).uniform(-1.5, 1.5, size=(40, sym.k))
    p = extract_profile(snap, points=pts)
    exact = np.sqrt(2 * sym.n - np.sum(pts * pts, axis=1))
    assert p.mask.all()
    np.testing.assert_allclose(p.v, exact, rtol=1e-9)
    # beyond the tip the fibre misses and the mask drops
    far = np.full((1, sym.k), 3.0)
    q = extract_profile(snap, points=far)
    assert not q.mask.any() and q.v[0] == 0.0


def test_cylinder_transform():
    sym = SymmetrySpec(2, 1)
    fam = cylinder_family(sym)
    p = transform_profile(fam, BGamma(0.1, 0.0, -5.0), points=np.linspace(-2, 2, 9))
    np.testing.assert_allclose(p.v, 1.1 * sym.cylinder_radius, rtol=1e-15)


def test_quadratic_ansatz_values():
    sym = SymmetrySpec(2, 1)
    y = np.array([[0.0], [math.sqrt(2.0)], [2.0]])
    v, hit = quadratic_ansatz(sym).evaluate(-10.0, y)
    r0 = math.sqrt(2.0)
    np.testing.assert_allclose(v, r0 - r0 / 40 * (y[:, 0] ** 2 - 2), rtol=1e-15)
    assert hit.all()
    with pytest.raises(WindowError):
        quadratic_ansatz(sym).evaluate(1.0, y)


def test_profile_family_symmetric(flow_small):
    fam = ProfileFamily(flow_small)
    y = np.linspace(0.2, 2.5, 12)[:, None]
    v1, h1 = fam.evaluate(-2.0, y)
    v2, h2 = fam.evaluate(-2.0, -y)
    np.testing.assert_array_equal(v1, v2)
    assert h1.all() and h2.all()
    with pytest.raises(WindowError):
        renormalize_at(flow_small, tau_window(flow_small)[0] - 1.0)


def test_apply_transform_identity_and_group_law(flow_small):
    assert apply_transform(flow_small, TransformParams()) == apply_transform(flow_small, TransformParams())
    p1, p2 = TransformParams(1e-3, 0.2), TransformParams(-5e-4, -0.1)
    two = apply_transform(apply_transform(flow_small, p1), p2)
    one = apply_transform(flow_small, compose_params(p1, p2))
    np.testing.assert_allclose(two.taus, one.taus, rtol=0, atol=1e-13)
    np.testing.assert_array_equal(two.shapes, one.shapes)
    assert two.t_ext == pytest.approx(one.t_ext, abs=1e-15)
    snap_a, snap_b = renormalize_at(two, -2.0), renormalize_at(one, -2.0)
    np.testing.assert_allclose(snap_a.graph.rho, snap_b.graph.rho, rtol=1e-12)


def test_transformed_family_matches_transformed_flow(flow_small):
    tp = TransformParams(2e-3, 0.15)
    pts = np.linspace(-2.0, 2.0, 17)[:, None]
    v1, _ = transform_family(ProfileFamily(flow_small), tp).evaluate(-1.5, pts)
    v2, _ = ProfileFamily(apply_transform(flow_small, tp)).evaluate(-1.5, pts)
    np.testing.assert_allclose(v1, v2, rtol=1e-9)


def test_pipeline_consistency_small_grid(flow_small):
    fam = ProfileFamily(flow_small)
    tau = -2.0
    for beta in (-5e-4, 0.0, 1e-3):
        for gamma in (-0.3, 0.0, 0.3):
            a = transform_profile(fam, params_to_bgamma(beta, gamma, tau))
            b = extract_profile(renormalize_at(apply_transform(flow_small, TransformParams(beta, gamma)), tau))
            np.testing.assert_array_equal(a.mask, b.mask)
            assert np.max(np.abs(a.v - b.v)) <= 1e-6


def test_default_theta():
    assert default_theta(SymmetrySpec(2, 1)) == pytest.approx(0.4 * math.sqrt(2))
