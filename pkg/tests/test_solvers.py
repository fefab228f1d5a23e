import math

import numpy as np
import pytest

from ovallab.geometry import SymmetrySpec
from ovallab.renorm import AnalyticFamily, ProfileFamily, TransformParams, apply_transform, cylinder_family, quadratic_ansatz
from ovallab.spectral import CONST, RADIAL, build_frame, compensated_ansatz, norm2
from ovallab.solvers import (PsiError, ShiftError, default_gamma_grid, in_disc, jacobian_predictions, psi_eval,
                             psi_jacobian, psi_zero_find, rescaling_monotonicity_scan, rescaling_prediction,
                             shift_objective, shift_solve)

SYM = SymmetrySpec(2, 1)
FR = build_frame(1)


@pytest.mark.parametrize("tau0", [-50.0, -10.0, -6.0])
def test_shift_on_ansatz(tau0):
    sh = shift_solve(quadratic_ansatz(SYM), tau0, FR)
    assert sh.monotone
    assert abs(sh.residual) <= 1e-9 * norm2(1.0, FR)
    assert shift_objective(quadratic_ansatz(SYM), tau0, sh.x, FR) == pytest.approx(sh.residual, abs=1e-15)


def test_shift_on_cylinder_is_zero():
    sh = shift_solve(cylinder_family(SYM), -10.0, FR)
    assert (sh.beta, sh.x, sh.residual) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        shift_solve(cylinder_family(SYM), 1.0, FR)


def test_shift_on_flow(flow_small):
    fam = ProfileFamily(flow_small)
    sh = shift_solve(fam, -2.0, FR)
    assert sh.monotone and abs(sh.residual) <= 1e-9 * norm2(1.0, FR)
    # shifting the flow by the solved beta and re-solving gives zero shift
    moved = apply_transform(flow_small, TransformParams(sh.beta, 0.0))
    again = shift_solve(ProfileFamily(moved), -2.0, FR)
    assert abs(again.x) <= 1e-6


def test_shift_outside_window():
    # the reachable shifts shrink the profile far below the cylinder
    with pytest.raises(ShiftError):
        shift_solve(compensated_ansatz(SYM, tau_range=(-3.0, -2.0)), -10.0, FR)


def test_psi_on_cylinder():
    tau = -10.0
    r0 = SYM.cylinder_radius
    p = psi_eval(cylinder_family(SYM), 0.0, 0.0, tau, FR)
    assert p[0] == pytest.approx(0.0, abs=1e-13)
    # <psi, r0 + r0 psi/(4|tau|)> = r0 ||psi||^2 / (4|tau|)
    assert p[1] == pytest.approx(r0 * norm2(RADIAL.values(FR), FR) / 40.0, rel=1e-12)


@pytest.mark.parametrize("tau,tol", [(-100.0, 1e-12), (-20.0, 1e-8)])
def test_psi_vanishes_on_ansatz(tau, tol):
    # only the clipped tail beyond |y|^2 = 2 + 4|tau| contributes
    p = psi_eval(compensated_ansatz(SYM), 0.0, 0.0, tau, FR)
    assert np.max(np.abs(p)) <= tol


def test_jacobian_predictions_structure():
    pr = jacobian_predictions(1, math.sqrt(2), -10.0, FR)
    n1, n2 = norm2(CONST.values(FR), FR), norm2(RADIAL.values(FR), FR)
    assert pr["J12"] == 0.0
    assert pr["det"] == pytest.approx(pr["J11"] * pr["J22"])
    assert pr["det_leading"] == pytest.approx(n1 * n2 / 20.0)
    assert pr["det"] / pr["det_leading"] == pytest.approx(1.1, rel=1e-12)


@pytest.mark.parametrize("tau", [-50.0, -8.0, -6.0])
def test_jacobian_on_compensated_ansatz(tau):
    rep = psi_jacobian(compensated_ansatz(SYM), 0.0, 0.0, tau, FR)
    assert rep.det > 0
    assert abs(rep.deviations["det_leading"]) <= 0.3
    assert abs(rep.deviations["J12_over_J11"]) <= 0.1
    # the full prediction carries the (1 + k/|tau|) factor
    assert abs(rep.deviations["J11"]) <= 0.02
    assert abs(rep.deviations["J22"]) <= 1.5 / abs(tau)


def test_zero_find_on_ansatz():
    st = psi_zero_find(compensated_ansatz(SYM), -6.0, 0.1, FR)
    assert st.warning == ""
    assert in_disc(st.b, st.Gamma, -6.0, 0.1)
    # the zero leaves the origin by the clipped tail, O(e^{tau})
    assert abs(6.0 * st.b) <= 1e-3 and abs(st.Gamma) <= 1e-2
    assert len(st.seeds) == 4
    assert max(np.max(np.abs(np.subtract(z, (st.b, st.Gamma)))) for _, z in st.seeds) <= 1e-6


def test_zero_find_recovers_pretransformed_ansatz():
    from ovallab.renorm import transform_family

    tau = -8.0
    fam = compensated_ansatz(SYM)
    st0 = psi_zero_find(fam, tau, 0.1, FR, check_kappa=False)
    beta, gamma = 2e-5, 0.05
    moved = transform_family(fam, TransformParams(beta, gamma))
    st = psi_zero_find(moved, tau, 0.1, FR, check_kappa=False)
    p = psi_eval(moved, st.b, st.Gamma, tau, FR)
    assert np.max(np.abs(p)) <= 1e-8 * norm2(RADIAL.values(FR), FR)
    assert (st.b, st.Gamma) != (st0.b, st0.Gamma)


def test_zero_find_reports_missing_zero():
    # a far-too-wide cylinder has Psi1 > 0 throughout the disc
    fam = AnalyticFamily(SYM, lambda p, t: np.full(p.shape[0], 1.5 * SYM.cylinder_radius))
    with pytest.raises(PsiError):
        psi_zero_find(fam, -10.0, 0.1, FR, check_kappa=False)


def test_rescaling_scan_on_ansatz():
    tau0 = -6.0
    grid = default_gamma_grid(tau0)
    assert len(grid) == 9 and grid[0] == -grid[-1] == pytest.approx(-0.6)
    rows = rescaling_monotonicity_scan(compensated_ansatz(SYM), tau0, grid, FR)
    ders = np.array([r.derivative for r in rows])
    assert np.all(ders < 0)
    ratio = ders.mean() / rescaling_prediction(SYM.cylinder_radius, tau0, FR)
    assert 0.6 <= ratio <= 1.4
