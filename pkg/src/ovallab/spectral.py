"""Gaussian Hilbert space on the cylinder axis, the Ornstein-Uhlenbeck operator
and spectral diagnostics of profiles.

The space is L^2(R^k, e^{-|y|^2/4} dy).  Quadrature is tensorized
Gauss-Hermite with nodes y = 2x, so a frame of order m integrates
polynomials of degree 2m-1 exactly.  Profiles are evaluated by their family
directly at the nodes (see :func:`frame_profile`); interpolation from a
sampled profile is available for data that only exists on a grid.

The OU operator is L = Delta - y.grad/2 + 1 with eigenvalues 1 on constants,
1/2 on y_i, and 0 on y_i^2 - 2 and y_i y_j.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import hermite as _herm
from numpy.polynomial import polynomial as P
from scipy.interpolate import CubicSpline, RegularGridInterpolator

from .geometry import SymmetrySpec
from .renorm import AnalyticFamily, CylindricalProfile, WindowError, as_family, default_theta

DEFAULT_ORDER = 32


# ----------------------------------------------------------------------------
# frame and inner product

@dataclass(frozen=True, eq=False)
class GaussianFrame:
    """Tensor Gauss-Hermite rule for int f(y) e^{-|y|^2/4} dy on R^k."""

    k: int
    order: int
    nodes: np.ndarray = field(repr=False)     # (m, k)
    weights: np.ndarray = field(repr=False)   # (m,)

    @property
    def degree_exact(self) -> int:
        return 2 * self.order - 1

    @property
    def size(self) -> int:
        return len(self.weights)

    def sq_norm(self) -> np.ndarray:
        return np.sum(self.nodes ** 2, axis=1)


@lru_cache(maxsize=None)
def _frame(k: int, order: int) -> GaussianFrame:
    x, w = _herm.hermgauss(order)
    y1, w1 = 2.0 * x, 2.0 * w
    grids = np.meshgrid(*([y1] * k), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    wgrid = np.meshgrid(*([w1] * k), indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wgrid], axis=1), axis=1)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return GaussianFrame(k, order, nodes, weights)


def build_frame(k: int, order: int = DEFAULT_ORDER) -> GaussianFrame:
    """Gauss-Hermite frame of the given order per axis (exact to degree 2*order-1)."""
    if k not in (1, 2, 3):
        raise ValueError(f"frame dimension k={k} not supported")
    if order < 8:
        raise ValueError("order must be at least 8")
    return _frame(int(k), int(order))


def inner(f, g, frame: GaussianFrame) -> float:
    """Quadrature value of int f g e^{-|y|^2/4} dy.

    The sum is exactly rounded, so permuting the nodes cannot change the result.
    """
    f = np.broadcast_to(np.asarray(f, dtype=float), (frame.size,))
    g = np.broadcast_to(np.asarray(g, dtype=float), (frame.size,))
    return math.fsum(frame.weights * f * g)


def norm2(f, frame: GaussianFrame) -> float:
    return inner(f, f, frame)


# ----------------------------------------------------------------------------
# polynomials and the OU operator

@dataclass(frozen=True)
class PolyField:
    """Polynomial in k variables, ``coef[i, j, ...]`` multiplying y1^i y2^j ..."""

    coef: np.ndarray

    @property
    def k(self) -> int:
        return np.ndim(self.coef)

    def __call__(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.k)
        if self.k == 1:
            return P.polyval(pts[:, 0], self.coef)
        if self.k == 2:
            return P.polyval2d(pts[:, 0], pts[:, 1], self.coef)
        return P.polyval3d(pts[:, 0], pts[:, 1], pts[:, 2], self.coef)

    def on(self, frame: GaussianFrame) -> np.ndarray:
        return self(frame.nodes)

    def deriv(self, axis: int, m: int = 1) -> "PolyField":
        c = P.polyder(self.coef, m, axis=axis) if self.coef.shape[axis] > m else np.zeros_like(self.coef)
        return PolyField(_pad_like(c, self.coef.shape))

    def y_times_deriv(self, axis: int) -> "PolyField":
        """y_axis * d/dy_axis: multiplies the coefficient of degree d by d."""
        d = np.arange(self.coef.shape[axis], dtype=float)
        shape = [1] * self.k
        shape[axis] = -1
        return PolyField(self.coef * d.reshape(shape))

    def __add__(self, other):
        return PolyField(self.coef + other.coef)

    def __sub__(self, other):
        return PolyField(self.coef - other.coef)

    def __mul__(self, c: float):
        return PolyField(self.coef * c)

    __rmul__ = __mul__

    @classmethod
    def monomial(cls, powers, degree: int = 4) -> "PolyField":
        c = np.zeros((degree + 1,) * len(powers))
        c[tuple(powers)] = 1.0
        return cls(c)


def _pad_like(c: np.ndarray, shape: tuple) -> np.ndarray:
    out = np.zeros(shape)
    out[tuple(slice(0, s) for s in c.shape)] = c
    return out


def ou_operator(f: PolyField) -> PolyField:
    """L f = Delta f - y.grad f / 2 + f, exactly on the coefficients."""
    out = PolyField(f.coef.copy())
    for i in range(f.k):
        out = out + f.deriv(i, 2) - 0.5 * f.y_times_deriv(i)
    return out


def ou_apply(f, frame: GaussianFrame) -> np.ndarray:
    """L f sampled on the frame nodes; ``f`` must be a :class:`PolyField`."""
    if not isinstance(f, PolyField):
        raise TypeError("ou_apply needs a PolyField; node samples cannot be differentiated")
    if f.k != frame.k:
        raise ValueError("polynomial and frame dimensions differ")
    return ou_operator(f).on(frame)


# ----------------------------------------------------------------------------
# eigenmodes

@dataclass(frozen=True)
class EigenMode:
    """A Hermite mode of degree <= 2.

    tag is CONST (1), LIN (y_i), QUAD (y_i^2 - 2), CROSS (y_i y_j) or
    RADIAL (|y|^2 - 2k).
    """

    tag: str
    idx: tuple = ()

    def __post_init__(self):
        need = {"CONST": 0, "LIN": 1, "QUAD": 1, "CROSS": 2, "RADIAL": 0}
        if self.tag not in need or len(self.idx) != need[self.tag]:
            raise ValueError(f"bad mode {self.tag}{self.idx}")
        if self.tag == "CROSS" and self.idx[0] == self.idx[1]:
            raise ValueError("CROSS needs two distinct axes")

    @property
    def eigenvalue(self) -> float:
        return {"CONST": 1.0, "LIN": 0.5}.get(self.tag, 0.0)

    def poly(self, k: int) -> PolyField:
        if any(i >= k for i in self.idx):
            raise ValueError(f"mode {self} does not exist for k={k}")
        c = np.zeros((3,) * k)
        z = (0,) * k

        def mono(*axes):
            e = [0] * k
            for i in axes:
                e[i] += 1
            return tuple(e)

        if self.tag == "CONST":
            c[z] = 1.0
        elif self.tag == "LIN":
            c[mono(self.idx[0])] = 1.0
        elif self.tag == "QUAD":
            c[mono(self.idx[0], self.idx[0])] = 1.0
            c[z] = -2.0
        elif self.tag == "CROSS":
            c[mono(*self.idx)] = 1.0
        else:
            for i in range(k):
                c[mono(i, i)] = 1.0
            c[z] = -2.0 * k
        return PolyField(c)

    def values(self, frame: GaussianFrame) -> np.ndarray:
        return _mode_values(self, frame)


@lru_cache(maxsize=256)
def _mode_values(mode: EigenMode, frame: GaussianFrame) -> np.ndarray:
    y = frame.nodes
    if mode.tag == "CONST":
        v = np.ones(frame.size)
    elif mode.tag == "LIN":
        v = y[:, mode.idx[0]].copy()
    elif mode.tag == "QUAD":
        v = y[:, mode.idx[0]] ** 2 - 2.0
    elif mode.tag == "CROSS":
        v = y[:, mode.idx[0]] * y[:, mode.idx[1]]
    else:
        v = np.sum(y * y, axis=1) - 2.0 * frame.k
    v.setflags(write=False)
    return v


CONST = EigenMode("CONST")
RADIAL = EigenMode("RADIAL")


def LIN(i: int) -> EigenMode:
    return EigenMode("LIN", (i,))


def QUAD(i: int) -> EigenMode:
    return EigenMode("QUAD", (i,))


def CROSS(i: int, j: int) -> EigenMode:
    return EigenMode("CROSS", (min(i, j), max(i, j)))


def basis_modes(k: int) -> dict:
    """Orthogonal modes spanning the unstable (plus) and neutral (zero) eigenspaces."""
    plus = [CONST] + [LIN(i) for i in range(k)]
    zero = [QUAD(i) for i in range(k)] + [CROSS(i, j) for i in range(k) for j in range(i + 1, k)]
    return {"plus": plus, "zero": zero}


def project(vc, mode: EigenMode, frame: GaussianFrame, coefficient: bool = False) -> float:
    """<vc, mode>; with ``coefficient`` divided by the mode's squared norm."""
    e = mode.values(frame)
    val = inner(vc, e, frame)
    return val / norm2(e, frame) if coefficient else val


def decompose(vc, frame: GaussianFrame) -> dict:
    """Split node values into plus, zero and minus parts.

    The plus and zero parts are expansions in :func:`basis_modes`; the minus
    part is whatever is left.
    """
    vc = np.asarray(vc, dtype=float)
    out = {}
    parts = {}
    for name, modes in basis_modes(frame.k).items():
        coeffs = {_mode_name(m): project(vc, m, frame, coefficient=True) for m in modes}
        vals = sum(c * m.values(frame) for c, m in zip(coeffs.values(), modes))
        out[name] = coeffs
        parts[name] = vals
    minus = vc - parts["plus"] - parts["zero"]
    out["minus_values"] = minus
    out["minus_norm"] = math.sqrt(max(norm2(minus, frame), 0.0))
    out["plus_values"], out["zero_values"] = parts["plus"], parts["zero"]
    return out


def _mode_name(m: EigenMode) -> str:
    return m.tag + "".join(str(i + 1) for i in m.idx)


# ----------------------------------------------------------------------------
# truncation

def cutoff(v, theta: float) -> np.ndarray:
    """Smooth ramp: 0 for v <= 5 theta/8, 1 for v >= 7 theta/8, quintic in between
    with two vanishing derivatives at both ends."""
    x = np.clip((np.asarray(v, dtype=float) - 0.625 * theta) / (0.25 * theta), 0.0, 1.0)
    return x * x * x * (10.0 + x * (-15.0 + 6.0 * x))


def cutoff_inverse(a, theta: float, iters: int = 60) -> np.ndarray:
    """Solve v chi_C(v) = a for a > 0; v chi_C(v) increases strictly from 0 at 5 theta/8."""
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0):
        raise ValueError("cutoff_inverse needs positive values")
    out = a.copy()
    ramp = a < 0.875 * theta
    if np.any(ramp):
        lo = np.full(int(ramp.sum()), 0.625 * theta)
        hi = np.full_like(lo, 0.875 * theta)
        t = a[ramp]
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            big = mid * cutoff(mid, theta) > t
            hi = np.where(big, mid, hi)
            lo = np.where(big, lo, mid)
        out[ramp] = 0.5 * (lo + hi)
    return out


def compensated_ansatz(sym: SymmetrySpec, theta: float | None = None, coeffs=None, perturbation=None,
                       tau_range: tuple = (-math.inf, -1e-12)) -> AnalyticFamily:
    """Positive profile family whose truncation is the positive part of the ansatz.

    With a = sqrt(2(n-k)) - sum_j c_j sqrt(2(n-k)) (y_j^2 - 2) / (4|tau|), plus
    ``perturbation(points, tau)`` if given, the profile is v = chi^{-1}(a)
    where a > 0 (chi^{-1} inverting v -> v chi_C(v)) and a miss elsewhere.
    Its v_C equals max(a, 0) exactly, so the distance of v_C to the ansatz
    comes only from the region where the ansatz is negative.  This is the
    closest a positive profile can get to the ansatz after truncation.
    """
    theta = default_theta(sym) if theta is None else float(theta)
    r0 = sym.cylinder_radius
    c = np.ones(sym.k) if coeffs is None else np.asarray(coeffs, dtype=float).reshape(sym.k)

    def f(p, tau):
        a = r0 - (r0 / (4.0 * abs(tau))) * ((p * p - 2.0) @ c)
        if perturbation is not None:
            a = a + np.asarray(perturbation(p, tau), dtype=float)
        out = np.zeros_like(a)
        pos = a > 0
        if np.any(pos):
            out[pos] = cutoff_inverse(a[pos], theta)
        return out

    return AnalyticFamily(sym, f, tau_range, "compensated ansatz")


def frame_profile(family, tau: float, frame: GaussianFrame, theta: float | None = None) -> CylindricalProfile:
    """Profile of a family (or trajectory) evaluated directly at the frame nodes."""
    fam = as_family(family)
    if fam.sym.k != frame.k:
        raise ValueError("frame dimension differs from the cylinder dimension")
    return fam.profile(tau, points=frame.nodes, theta=theta)


def _interp_to(p: CylindricalProfile, frame: GaussianFrame) -> tuple:
    """(v, inside) at the frame nodes from a gridded profile; cubic interpolation."""
    y = frame.nodes
    vm = np.where(p.mask, p.v, 0.0)
    if p.layout == "line":
        g = p.ygrid
        x = y[:, 0]
        inside = (x >= g[0]) & (x <= g[-1])
        out = CubicSpline(g, vm)(np.clip(x, g[0], g[-1]))
    elif p.layout == "radial":
        g = p.ygrid
        r = np.sqrt(np.sum(y * y, axis=1))
        inside = r <= g[-1]
        # even extension so the spline has zero slope at the axis
        gg = np.concatenate([-g[:0:-1], g])
        vv = np.concatenate([vm[:0:-1], vm])
        out = CubicSpline(gg, vv)(np.minimum(r, g[-1]))
    elif p.layout == "lattice":
        g = p.ygrid
        inside = np.all((y >= g[0]) & (y <= g[-1]), axis=1)
        interp = RegularGridInterpolator((g, g), vm, method="cubic")
        out = interp(np.clip(y, g[0], g[-1]))
    else:
        raise ValueError(f"cannot interpolate layout {p.layout!r}")
    return np.where(inside, out, 0.0), inside


def truncate_profile(p: CylindricalProfile, theta: float | None = None,
                     frame: GaussianFrame | None = None) -> np.ndarray:
    """v_C = v chi_C(v) on the frame nodes.

    A profile sampled at the frame nodes (``layout == "points"``) is used
    directly; gridded profiles are interpolated, and nodes outside their box
    count as 0.  Off-mask nodes contribute 0.
    """
    theta = p.theta if theta is None else float(theta)
    frame = frame or build_frame(p.sym.k)
    if p.layout == "points":
        if p.v.size != frame.size or not np.array_equal(p.ygrid.reshape(-1, frame.k), frame.nodes):
            raise ValueError("profile points are not the frame nodes")
        v = np.where(p.mask, p.v, 0.0)
    else:
        v, _ = _interp_to(p, frame)
    return v * cutoff(v, theta)


def truncated(family, tau: float, frame: GaussianFrame, theta: float | None = None) -> np.ndarray:
    """v_C at the frame nodes for a family at time tau."""
    p = frame_profile(family, tau, frame, theta)
    return truncate_profile(p, frame=frame)


# ----------------------------------------------------------------------------
# spectral maps

def spectral_map_scriptE(family, tau0: float, frame: GaussianFrame, theta: float | None = None) -> np.ndarray:
    """The k-vector <v_C(tau0), 2 - y_j^2>."""
    vc = truncated(family, tau0, frame, theta)
    return np.array([-project(vc, QUAD(j), frame) for j in range(frame.k)])


def summed_spectral_value(family, tau0: float, frame: GaussianFrame, theta: float | None = None) -> float:
    """<v_C(tau0), 2k - |y|^2>, the sum of the components of the spectral map."""
    vc = truncated(family, tau0, frame, theta)
    return -project(vc, RADIAL, frame)


def spectral_ratio_E(family, tau0: float, frame: GaussianFrame, theta: float | None = None,
                     tol_denom: float = 1e-12) -> np.ndarray:
    """Components <v_C, y_j^2 - 2> / <v_C, |y|^2 - 2k>; they sum to 1."""
    se = spectral_map_scriptE(family, tau0, frame, theta)
    den = math.fsum(se)
    if abs(den) <= tol_denom:
        raise ZeroDivisionError(f"radial projection {den:.3g} below tol_denom={tol_denom:g}")
    return se / den


# ----------------------------------------------------------------------------
# kappa-quadraticity

@dataclass
class SpectralReport:
    tau0: float
    kappa: float
    projections: dict
    residual_norm: float            # || v_C - ansatz ||_H
    residual_scaled: float          # residual_norm * |tau0|, compared with kappa
    c4_proxy: float | None          # sup |tau|^{1/50} ||v - r0||_{C^4(ball)} over [2 tau0, tau0]
    c4_taus: list = field(default_factory=list)
    graphical_radius: float | None = None
    kappa_verdict: str = "indeterminate"
    note: str = ""

    def as_dict(self) -> dict:
        return {"tau0": self.tau0, "kappa": self.kappa, "projections": dict(self.projections),
                "residual_norm": self.residual_norm, "residual_scaled": self.residual_scaled,
                "c4_proxy": self.c4_proxy, "graphical_radius": self.graphical_radius,
                "kappa_verdict": self.kappa_verdict, "note": self.note}


def ansatz_values(sym: SymmetrySpec, tau: float, points) -> np.ndarray:
    """sqrt(2(n-k)) - sqrt(2(n-k)) (|y|^2 - 2k) / (4 |tau|)."""
    r0 = sym.cylinder_radius
    pts = np.asarray(points, dtype=float).reshape(-1, sym.k)
    return r0 - r0 * (np.sum(pts * pts, axis=1) - 2.0 * sym.k) / (4.0 * abs(tau))


def c4_norm(family, tau: float, radius: float, h: float = 0.1) -> float:
    """Finite-difference proxy for ||v - r0||_{C^4(B(0, radius))}.

    Largest absolute value of all divided differences up to order 4 on a
    lattice of spacing h, restricted to stencils inside the ball.  Fibres
    that miss the surface inside the ball make the norm infinite.
    """
    fam = as_family(family)
    k, r0 = fam.sym.k, fam.sym.cylinder_radius
    m = int(math.ceil(radius / h))
    ax = h * np.arange(-m, m + 1)
    if k == 1:
        pts = ax[:, None]
    else:
        g = np.meshgrid(*([ax] * k), indexing="ij")
        pts = np.stack([a.ravel() for a in g], axis=1)
    v, hit = fam.evaluate(tau, pts)
    shape = (len(ax),) * k
    inball = (np.sum(pts * pts, axis=1) <= radius * radius + 1e-12).reshape(shape)
    if not np.all(hit.reshape(shape)[inball]):
        return math.inf
    w = (v - r0).reshape(shape)
    best = 0.0
    for orders in np.ndindex(*([5] * k)):
        if sum(orders) > 4:
            continue
        d, ok = w, inball
        for axis, o in enumerate(orders):
            for _ in range(o):
                d = np.diff(d, axis=axis) / h
                # a difference is valid when both stencil ends lie in the ball
                sl_lo = [slice(None)] * k
                sl_hi = [slice(None)] * k
                sl_lo[axis] = slice(None, -1)
                sl_hi[axis] = slice(1, None)
                ok = ok[tuple(sl_lo)] & ok[tuple(sl_hi)]
        if np.any(ok):
            best = max(best, float(np.max(np.abs(d[ok]))))
    return best


def kappa_report(family, tau0: float, kappa: float, frame: GaussianFrame, theta: float | None = None,
                 n_c4: int = 5, h_c4: float = 0.1) -> SpectralReport:
    """Check both conditions of kappa-quadraticity at tau0.

    Condition 1: ||v_C(tau0) - ansatz||_H <= kappa / |tau0|.
    Condition 2: |tau|^{1/50} ||v - sqrt(2(n-k))||_{C^4(B(0, 2|tau|^{1/100}))} <= 1
    for tau in [2 tau0, tau0], sampled at ``n_c4`` times.

    The verdict is "fail" if a checked condition fails, "indeterminate" if
    condition 1 holds but [2 tau0, tau0] is not covered, "pass" otherwise.
    """
    if not tau0 < 0:
        raise ValueError("tau0 must be negative")
    fam = as_family(family)
    sym = fam.sym
    vc = truncated(fam, tau0, frame, theta)
    res = vc - ansatz_values(sym, tau0, frame.nodes)
    rn = math.sqrt(norm2(res, frame))
    projections = {_mode_name(m): project(vc, m, frame) for m in
                   basis_modes(frame.k)["plus"] + basis_modes(frame.k)["zero"] + [RADIAL]}
    cond1 = rn * abs(tau0) <= kappa
    lo, hi = fam.window()
    rep = SpectralReport(float(tau0), float(kappa), projections, rn, rn * abs(tau0), None)
    rep.graphical_radius = graphical_radius(fam, tau0, theta)
    if not lo <= 2.0 * tau0:
        rep.note = f"[2 tau0, tau0] = [{2 * tau0:g}, {tau0:g}] not covered by the window [{lo:g}, {hi:g}]"
        rep.kappa_verdict = "indeterminate" if cond1 else "fail"
        return rep
    worst = 0.0
    for tau in np.linspace(2.0 * tau0, tau0, n_c4):
        r = 2.0 * abs(tau) ** 0.01
        val = abs(tau) ** 0.02 * c4_norm(fam, float(tau), r, h_c4)
        rep.c4_taus.append((float(tau), val))
        worst = max(worst, val)
    rep.c4_proxy = worst
    rep.kappa_verdict = "pass" if cond1 and worst <= 1.0 else "fail"
    return rep


def graphical_radius(family, tau: float, theta: float | None = None, rmax: float = 20.0,
                     dr: float = 0.05) -> float:
    """Largest r (on a grid of step dr) such that v >= theta on every sampled point of |y| <= r."""
    fam = as_family(family)
    theta = default_theta(fam.sym) if theta is None else float(theta)
    k = fam.sym.k
    rs = np.arange(0.0, rmax + dr / 2, dr)
    if k == 1:
        pts = np.concatenate([rs, -rs])[:, None]
        rr = np.concatenate([rs, rs])
    else:
        # axes and diagonals; exact for the symmetric reductions used here
        dirs = [(1, 0), (0, 1), (1, 1), (1, -1)]
        pts = np.concatenate([np.outer(rs, np.array(d) / np.hypot(*d)) for d in dirs])
        rr = np.tile(rs, len(dirs))
    v, hit = fam.evaluate(tau, pts)
    bad = ~hit | (v < theta)
    if not np.any(bad):
        return float(rmax)
    return float(max(np.min(rr[bad]) - dr, 0.0))


# ----------------------------------------------------------------------------
# quadratic bending

@lru_cache(maxsize=8)
def _ball_rule(k: int, radius: float, m: int = 64) -> tuple:
    """Gauss-Legendre rule on the ball |y| <= radius with weight e^{-|y|^2/4}."""
    x, w = np.polynomial.legendre.leggauss(m)
    if k == 1:
        y = radius * x
        return y[:, None], radius * w * np.exp(-0.25 * y * y)
    r = 0.5 * radius * (x + 1.0)
    wr = 0.5 * radius * w * r * np.exp(-0.25 * r * r)
    na = 4 * m
    a = 2.0 * math.pi * (np.arange(na) + 0.5) / na
    R, A = np.meshgrid(r, a, indexing="ij")
    W = np.repeat(wr[:, None], na, axis=1) * (2.0 * math.pi / na)
    pts = np.stack([(R * np.cos(A)).ravel(), (R * np.sin(A)).ravel()], axis=1)
    return pts, W.ravel()


def bending_fit(family, tau_samples, frame: GaussianFrame | None = None, R_fit: float = 3.0) -> list:
    """Fit v = sqrt(2(n-k)) - c(tau)(|y|^2 - 2k) by weighted least squares on |y| <= R_fit.

    Returns rows (tau, c, c |tau|); the k-oval value of c |tau| is sqrt(2(n-k))/4.
    """
    fam = as_family(family)
    k, r0 = fam.sym.k, fam.sym.cylinder_radius
    taus = [float(t) for t in tau_samples]
    if len(taus) < 3:
        raise ValueError("bending_fit needs at least 3 tau samples")
    pts, w = _ball_rule(k, float(R_fit))
    q = np.sum(pts * pts, axis=1) - 2.0 * k
    qq = math.fsum(w * q * q)
    rows = []
    for tau in taus:
        v, hit = fam.evaluate(tau, pts)
        if not np.all(hit):
            raise WindowError(f"profile at tau={tau:g} does not cover |y| <= {R_fit}")
        c = -math.fsum(w * (v - r0) * q) / qq
        rows.append((tau, c, c * abs(tau)))
    return rows


__all__ = [
    "CONST", "CROSS", "DEFAULT_ORDER", "EigenMode", "GaussianFrame", "LIN", "PolyField", "QUAD",
    "RADIAL", "SpectralReport", "ansatz_values", "basis_modes", "bending_fit", "build_frame",
    "c4_norm", "compensated_ansatz", "cutoff", "cutoff_inverse", "decompose", "frame_profile", "graphical_radius", "inner", "kappa_report",
    "norm2", "ou_apply", "ou_operator", "project", "spectral_map_scriptE", "spectral_ratio_E",
    "summed_spectral_value", "truncate_profile", "truncated",
]
