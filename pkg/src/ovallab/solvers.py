"""Normalization equations on profile families.

* :func:`shift_solve` finds the time shift beta that removes the constant
  mode of v_C - sqrt(2(n-k)) at tau0.
* :func:`psi_eval` / :func:`psi_jacobian` / :func:`psi_zero_find` handle the
  two-component map Psi(b, Gamma) that fixes the constant and radial modes
  of the (b, Gamma)-transformed profile.
* :func:`rescaling_monotonicity_scan` differentiates the radial projection
  along the family of dilations, each re-shifted by :func:`shift_solve`.

Everything works on profile families (see :mod:`ovallab.renorm`), evaluated
directly at the nodes of a :class:`~ovallab.spectral.GaussianFrame`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .renorm import BGamma, WindowError, as_family, transform_profile
from .spectral import CONST, RADIAL, GaussianFrame, inner, norm2, truncate_profile


class ShiftError(RuntimeError):
    """No sign change of the shift objective in the admissible bracket."""


class PsiError(RuntimeError):
    """No zero of Psi found in the disc."""


# ----------------------------------------------------------------------------
# shift map

@dataclass
class ShiftResult:
    beta: float
    x: float                    # log(1 + beta e^{tau0})
    residual: float
    bracket: tuple
    samples: list = field(default_factory=list)    # (x, objective) across the bracket
    monotone: bool = True


def _vc_at(fam, bg: BGamma, frame: GaussianFrame, theta) -> np.ndarray:
    p = transform_profile(fam, bg, points=frame.nodes, theta=theta)
    return truncate_profile(p, frame=frame)


def _shift_bg(x: float, tau0: float, gamma: float) -> BGamma:
    # 1 + beta e^{tau0} = e^x gives b = e^{x/2} - 1 and (1 + Gamma) tau0 = tau0 + gamma - x
    return BGamma(math.expm1(0.5 * x), (gamma - x) / tau0, tau0)


def shift_objective(family, tau0: float, x: float, frame: GaussianFrame, theta=None, gamma: float = 0.0) -> float:
    """<v^beta_C(tau0) - sqrt(2(n-k)), 1> with 1 + beta e^{tau0} = e^x."""
    fam = as_family(family)
    vc = _vc_at(fam, _shift_bg(x, tau0, gamma), frame, theta)
    return inner(vc - fam.sym.cylinder_radius, 1.0, frame)


def shift_solve(family, tau0: float, frame: GaussianFrame, theta=None, gamma: float = 0.0,
                x0: float = 0.5, n_check: int = 9) -> ShiftResult:
    """Time shift beta with <v^beta_C(tau0) - sqrt(2(n-k)), 1> = 0.

    The shift enters through x = log(1 + beta e^{tau0}): the shifted profile
    at tau0 is e^{x/2} v(y e^{-x/2}, tau0 + gamma - x), so x ranges over the
    part of the family's window it can reach.  The bracket [-x0, x0] is
    doubled until the objective changes sign, the root is found by Brent's
    method and the objective is sampled at ``n_check`` points across the
    bracket to confirm it increases strictly.

    Raises
    ------
    ShiftError
        If no sign change is found inside the window.
    """
    fam = as_family(family)
    if not tau0 < 0:
        raise ValueError("tau0 must be negative")
    lo_w, hi_w = fam.window()
    t_eff = tau0 + gamma
    # (1 + Gamma) tau0 = t_eff - x must be negative and inside the window
    x_min = max(t_eff, t_eff - hi_w, -50.0)
    x_max = min(t_eff - lo_w, 50.0)
    if not x_min < x_max:
        raise ShiftError(f"window [{lo_w}, {hi_w}] leaves no room for a shift at tau0={tau0}")
    pad = 1e-12 * max(1.0, abs(x_min), abs(x_max))
    x_min, x_max = x_min + pad, x_max - pad
    obj = lambda x: shift_objective(fam, tau0, x, frame, theta, gamma)
    c = min(max(0.0, x_min), x_max)
    a, b = max(c - x0, x_min), min(c + x0, x_max)
    if a < 0.0 < b and obj(0.0) == 0.0:
        # already solved, e.g. the cylinder whose objective vanishes identically
        samples = [(float(xx), obj(float(xx))) for xx in np.linspace(a, b, n_check)]
        vals = np.array([s[1] for s in samples])
        return ShiftResult(0.0, 0.0, 0.0, (float(a), float(b)), samples, bool(np.all(np.diff(vals) > 0)))
    fa, fb = obj(a), obj(b)
    while fa * fb > 0:
        if fa > 0 and a > x_min:
            a = max(x_min, a - 2.0 * (b - a))
            fa = obj(a)
        elif fb < 0 and b < x_max:
            b = min(x_max, b + 2.0 * (b - a))
            fb = obj(b)
        else:
            raise ShiftError(f"no sign change for x in [{a:.6g}, {b:.6g}]: objective {fa:.4g} .. {fb:.4g}")
    if fa == 0.0:
        x = a
    elif fb == 0.0:
        x = b
    else:
        x = brentq(obj, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    res = obj(x)
    xs = np.linspace(a, b, n_check)
    samples = [(float(xx), obj(float(xx))) for xx in xs]
    vals = np.array([s[1] for s in samples])
    beta = math.expm1(x) * math.exp(-tau0)
    return ShiftResult(beta, float(x), float(res), (float(a), float(b)), samples, bool(np.all(np.diff(vals) > 0)))


# ----------------------------------------------------------------------------
# Psi

def psi_eval(family, b: float, Gamma: float, tau: float, frame: GaussianFrame, theta=None) -> np.ndarray:
    """(<1, v^{b Gamma}_C - r0>, <psi, v^{b Gamma}_C + r0 psi / (4|tau|)>), r0 = sqrt(2(n-k)), psi = |y|^2 - 2k."""
    fam = as_family(family)
    r0 = fam.sym.cylinder_radius
    vc = _vc_at(fam, BGamma(b, Gamma, tau), frame, theta)
    psi = RADIAL.values(frame)
    return np.array([inner(vc - r0, 1.0, frame),
                     inner(psi, vc + r0 * psi / (4.0 * abs(tau)), frame)])


def jacobian_predictions(k: int, r0: float, tau: float, frame: GaussianFrame) -> dict:
    """Leading terms of the Jacobian of Psi at b = Gamma = 0 on the quadratic ansatz.

    d_b v = v - y.grad v and d_Gamma v = tau d_tau v give, with N1 = ||1||^2
    and N2 = ||psi||^2, J11 = r0 N1 (1 + k/|tau|), J21 = J22 = r0 N2 / (4|tau|),
    J12 = 0.  The determinant r0^2 N1 N2 (1 + k/|tau|) / (4|tau|) reduces to
    N1 N2 / (2|tau|) at leading order when r0^2 = 2.
    """
    n1 = norm2(CONST.values(frame), frame)
    n2 = norm2(RADIAL.values(frame), frame)
    at = abs(tau)
    j11 = r0 * n1 * (1.0 + k / at)
    j22 = r0 * n2 / (4.0 * at)
    return {"J11": j11, "J12": 0.0, "J21": j22, "J22": j22, "det": j11 * j22,
            "J11_leading": r0 * n1, "det_leading": n1 * n2 / (2.0 * at)}


@dataclass
class JacobianReport:
    jac: np.ndarray
    det: float
    predictions: dict
    deviations: dict
    h_b: float
    h_gamma: float


def psi_jacobian(family, b: float, Gamma: float, tau: float, frame: GaussianFrame, theta=None,
                 h_b: float | None = None, h_gamma: float = 1e-4) -> JacobianReport:
    """Central-difference Jacobian of Psi in (b, Gamma) with the closed-form comparison.

    Default steps: h_b = max(1e-5, 1e-3/|tau|), h_gamma = 1e-4.  Deviations are
    relative for the diagonal and the determinant; the off-diagonal entries
    are reported relative to J11 (the scale their smallness is measured against).
    """
    fam = as_family(family)
    h_b = max(1e-5, 1e-3 / abs(tau)) if h_b is None else float(h_b)
    f = lambda bb, gg: psi_eval(fam, bb, gg, tau, frame, theta)
    col_b = (f(b + h_b, Gamma) - f(b - h_b, Gamma)) / (2.0 * h_b)
    col_g = (f(b, Gamma + h_gamma) - f(b, Gamma - h_gamma)) / (2.0 * h_gamma)
    J = np.column_stack([col_b, col_g])
    det = float(np.linalg.det(J))
    pred = jacobian_predictions(fam.sym.k, fam.sym.cylinder_radius, tau, frame)
    dev = {"J11": J[0, 0] / pred["J11"] - 1.0, "J22": J[1, 1] / pred["J22"] - 1.0,
           "J21": J[1, 0] / pred["J21"] - 1.0, "det": det / pred["det"] - 1.0,
           "det_leading": det / pred["det_leading"] - 1.0,
           "J12_over_J11": J[0, 1] / pred["J11"], "J21_over_J11": J[1, 0] / pred["J11"]}
    return JacobianReport(J, det, pred, dev, h_b, h_gamma)


@dataclass
class PsiState:
    b: float
    Gamma: float
    residual: np.ndarray
    jac: np.ndarray
    tau: float = 0.0
    seeds: list = field(default_factory=list)    # (seed, zero) per restart
    method: str = "newton"
    warning: str = ""

    def __post_init__(self):
        if not (np.all(np.isfinite(self.residual)) and np.all(np.isfinite(self.jac))):
            raise PsiError("Psi state is not finite")


def in_disc(b: float, Gamma: float, tau: float, kappa: float) -> bool:
    return (tau * b) ** 2 + Gamma ** 2 <= 100.0 * kappa * kappa * (1 + 1e-12)


def _newton(f, jac, z0, tau, kappa, tol, max_iter=50):
    """Damped Newton in the disc; returns (z, F(z)) or None."""
    z = np.array(z0, dtype=float)
    F = f(*z)
    for _ in range(max_iter):
        if np.linalg.norm(F) <= tol:
            return z, F
        J = jac(*z)
        try:
            dz = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            return None
        lam = 1.0
        for _ in range(21):
            zn = z + lam * dz
            if in_disc(zn[0], zn[1], tau, kappa) and 1.0 + zn[0] > 0 and 1.0 + zn[1] > 0:
                Fn = f(*zn)
                if np.linalg.norm(Fn) < np.linalg.norm(F):
                    break
            lam *= 0.5
        else:
            return None
        z, F = zn, Fn
    return (z, F) if np.linalg.norm(F) <= tol else None


def _winding(f, box, m: int = 16) -> int:
    """Winding number of Psi around a rectangle (b0, b1, g0, g1)."""
    b0, b1, g0, g1 = box
    t = np.linspace(0.0, 1.0, m, endpoint=False)
    pts = ([(b0 + (b1 - b0) * s, g0) for s in t] + [(b1, g0 + (g1 - g0) * s) for s in t]
           + [(b1 - (b1 - b0) * s, g1) for s in t] + [(b0, g1 - (g1 - g0) * s) for s in t])
    ang = np.array([math.atan2(*reversed(f(*p))) for p in pts])
    d = np.diff(np.concatenate([ang, ang[:1]]))
    d = (d + np.pi) % (2 * np.pi) - np.pi
    return int(round(d.sum() / (2 * np.pi)))


def _bisect_zero(f, tau, kappa, depth: int = 12):
    """Nested-rectangle search: keep the quarter with nonzero winding number."""
    r = 10.0 * kappa / math.sqrt(2.0)      # square inscribed in the disc
    box = (-r / abs(tau), r / abs(tau), -r, r)
    if _winding(f, box) == 0:
        return None
    for _ in range(depth):
        b0, b1, g0, g1 = box
        bm, gm = 0.5 * (b0 + b1), 0.5 * (g0 + g1)
        for q in ((b0, bm, g0, gm), (bm, b1, g0, gm), (b0, bm, gm, g1), (bm, b1, gm, g1)):
            if _winding(f, q) != 0:
                box = q
                break
        else:
            break
    return 0.5 * (box[0] + box[1]), 0.5 * (box[2] + box[3])


def psi_zero_find(family, tau: float, kappa: float, frame: GaussianFrame, theta=None,
                  agree_tol: float = 1e-6, check_kappa: bool = True) -> PsiState:
    """Zero of Psi in D = {|tau|^2 b^2 + Gamma^2 <= 100 kappa^2}.

    Damped Newton from (0, 0) with finite-difference Jacobians; if that
    fails, a nested-rectangle winding-number search supplies the start.  The
    zero is then recomputed from the four seeds (+-7 kappa/|tau|, +-7 kappa)
    and all restarts must agree within ``agree_tol``.

    Raises
    ------
    PsiError
        If no zero is found or the restarts disagree.
    """
    from .spectral import kappa_report

    fam = as_family(family)
    n2 = norm2(RADIAL.values(frame), frame)
    tol = 1e-8 * n2 / abs(tau)
    f = lambda b, g: psi_eval(fam, b, g, tau, frame, theta)
    jac = lambda b, g: psi_jacobian(fam, b, g, tau, frame, theta).jac
    warning = ""
    if check_kappa:
        rep = kappa_report(fam, tau, kappa, frame, theta)
        if rep.kappa_verdict != "pass":
            warning = f"state is not kappa-quadratic ({rep.kappa_verdict}, residual*|tau| = {rep.residual_scaled:.3g})"
    method = "newton"
    out = _newton(f, jac, (0.0, 0.0), tau, kappa, tol)
    if out is None:
        start = _bisect_zero(f, tau, kappa)
        if start is not None:
            method = "winding+newton"
            out = _newton(f, jac, start, tau, kappa, tol)
    if out is None:
        grid = [(b, g, *f(b, g)) for b in np.linspace(-7 * kappa / abs(tau), 7 * kappa / abs(tau), 5)
                for g in np.linspace(-7 * kappa, 7 * kappa, 5)]
        raise PsiError(f"no zero of Psi in D at tau={tau}; coarse samples (b, Gamma, Psi1, Psi2): {grid}")
    z, F = out
    seeds = []
    for sb in (-1, 1):
        for sg in (-1, 1):
            s0 = (sb * 7 * kappa / abs(tau), sg * 7 * kappa)
            o = _newton(f, jac, s0, tau, kappa, tol)
            if o is None:
                raise PsiError(f"restart from seed {s0} did not converge")
            seeds.append((s0, tuple(float(v) for v in o[0])))
            if np.max(np.abs(o[0] - z)) > agree_tol:
                raise PsiError(f"restart from seed {s0} converged to {o[0]}, not {z}")
    return PsiState(float(z[0]), float(z[1]), F, jac(*z), float(tau), seeds, method, warning)


# ----------------------------------------------------------------------------
# rescaling monotonicity

@dataclass
class ScanRow:
    gamma: float
    beta: float | None
    derivative: float | None
    error: str = ""


def radial_projection_after_shift(family, tau0: float, gamma: float, frame: GaussianFrame, theta=None) -> tuple:
    """(beta(gamma), <v_C^{beta(gamma), gamma}(tau0), psi>)."""
    fam = as_family(family)
    sh = shift_solve(fam, tau0, frame, theta, gamma=gamma)
    vc = _vc_at(fam, _shift_bg(sh.x, tau0, gamma), frame, theta)
    return sh.beta, inner(vc, RADIAL.values(frame), frame)


def default_gamma_grid(tau0: float, kappa: float = 0.1, m: int = 9) -> np.ndarray:
    """m points symmetric about 0 with |gamma| <= kappa |tau0|, inside the hypothesis |gamma| <= 10 kappa |tau0|."""
    return np.linspace(-kappa * abs(tau0), kappa * abs(tau0), m)


def rescaling_monotonicity_scan(family, tau0: float, gamma_grid, frame: GaussianFrame, theta=None,
                                h: float = 1e-3) -> list:
    """For each gamma: beta(gamma) from the shift map and the central difference
    of the radial projection in gamma (with beta re-solved at gamma +- h).

    Rows whose shift solve fails carry ``error`` and no derivative.
    """
    fam = as_family(family)
    rows = []
    for g in np.asarray(gamma_grid, dtype=float):
        try:
            beta, _ = radial_projection_after_shift(fam, tau0, float(g), frame, theta)
            _, p_hi = radial_projection_after_shift(fam, tau0, float(g) + h, frame, theta)
            _, p_lo = radial_projection_after_shift(fam, tau0, float(g) - h, frame, theta)
            rows.append(ScanRow(float(g), beta, (p_hi - p_lo) / (2.0 * h)))
        except (ShiftError, WindowError, ValueError) as e:
            rows.append(ScanRow(float(g), None, None, str(e)))
    return rows


def rescaling_prediction(r0: float, tau0: float, frame: GaussianFrame) -> float:
    """Leading value -r0 ||psi||^2 / (4 tau0^2) of the gamma-derivative."""
    return -r0 * norm2(RADIAL.values(frame), frame) / (4.0 * tau0 * tau0)


__all__ = [
    "JacobianReport", "PsiError", "PsiState", "ScanRow", "ShiftError", "ShiftResult",
    "default_gamma_grid", "in_disc", "jacobian_predictions", "psi_eval", "psi_jacobian",
    "psi_zero_find", "radial_projection_after_shift", "rescaling_monotonicity_scan",
    "rescaling_prediction", "shift_objective", "shift_solve",
]
