"""Renormalized flow, cylindrical profiles and the (beta, gamma) transformation calculus.

For a flow extinct at the origin at time ``t_ext`` the renormalized surface at
time tau is ``e^{tau/2} M_{-e^{-tau}}``.  Over a point y of the cylinder axis
R^k it meets the fibre ``{y} x R^{n+1-k}`` in a round sphere of radius v(y, tau),
the profile.

Profiles are found by solving a one-dimensional equation along each fibre on
the spectral (cosine-series) interpolant of the radial graph, so they can be
evaluated at arbitrary points, in particular directly at Gaussian quadrature
nodes.  A :class:`ProfileFamily` does this on demand at any tau of the stored
window; :class:`AnalyticFamily` wraps closed-form model profiles.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _angular as ang
from .flow import FlowTrajectory
from .geometry import HypersurfaceSnapshot, RadialGraph, Reduction, SymmetrySpec

DEFAULT_YBOX = 6.0


class WindowError(ValueError):
    """Requested renormalized time is not covered by the data."""


def default_theta(sym: SymmetrySpec) -> float:
    return 0.4 * sym.cylinder_radius


# ----------------------------------------------------------------------------
# types

@dataclass(eq=False)
class CylindricalProfile:
    """Profile values on a set of axis points.

    ``layout`` says how ``ygrid`` is to be read:

    * ``"line"``: k = 1, ``ygrid`` is a 1D array of y values;
    * ``"radial"``: AXIAL with k >= 2, ``ygrid`` holds |y| values;
    * ``"lattice"``: k = 2, ``ygrid`` is the common 1D axis of a square lattice
      and ``v`` has shape (m, m) indexed [i1, i2];
    * ``"points"``: ``ygrid`` has shape (m, k).

    Off-mask entries of ``v`` are 0.
    """

    sym: SymmetrySpec
    tau: float
    ygrid: np.ndarray
    v: np.ndarray
    mask: np.ndarray
    theta: float
    layout: str = "points"

    def points(self) -> np.ndarray:
        return layout_points(self.ygrid, self.layout, self.sym.k)


@dataclass(frozen=True)
class TransformParams:
    """Parameters of ``e^{gamma/2} R (M_{e^{-gamma}(t - beta)} - alpha)``.

    ``R`` is a permutation of the first k coordinates, ``(R x)_i = x_{R[i]}``;
    ``None`` is the identity.  Only ``alpha = 0`` is supported: the symmetry
    pins every flow here to the origin.
    """

    beta: float = 0.0
    gamma: float = 0.0
    R: tuple | None = None
    alpha: tuple = ()

    def __post_init__(self):
        if any(a != 0 for a in self.alpha):
            raise ValueError("alpha must vanish for symmetric flows")
        if not (math.isfinite(self.beta) and math.isfinite(self.gamma)):
            raise ValueError("beta and gamma must be finite")
        if self.R is not None:
            perm = tuple(int(i) for i in self.R)
            if sorted(perm) != list(range(len(perm))):
                raise ValueError(f"R={self.R} is not a permutation")
            object.__setattr__(self, "R", perm)

    @property
    def is_identity(self) -> bool:
        return self.beta == 0 and self.gamma == 0 and (self.R is None or self.R == tuple(range(len(self.R))))


@dataclass(frozen=True)
class BGamma:
    b: float
    Gamma: float
    tau: float

    def __post_init__(self):
        if not 1.0 + self.b > 0:
            raise ValueError(f"need 1 + b > 0, got b={self.b}")
        if not 1.0 + self.Gamma > 0:
            raise ValueError(f"need 1 + Gamma > 0, got Gamma={self.Gamma}")


def shift_first_beta(beta_pre: float, gamma: float) -> float:
    """Convert a shift applied before the dilation into the ``beta`` of :class:`TransformParams`."""
    return beta_pre * math.exp(gamma)


def compose_params(first: TransformParams, second: TransformParams) -> TransformParams:
    """Parameters of applying ``first`` and then ``second``."""
    beta = second.beta + first.beta * math.exp(second.gamma)
    gamma = first.gamma + second.gamma
    if first.R is None and second.R is None:
        R = None
    else:
        k = len(first.R or second.R)
        p1 = first.R or tuple(range(k))
        p2 = second.R or tuple(range(k))
        # (R2 R1 x)_i = (R1 x)_{p2[i]} = x_{p1[p2[i]]}
        R = tuple(p1[p2[i]] for i in range(k))
    return TransformParams(beta, gamma, R)


def params_to_bgamma(beta: float, gamma: float, tau: float) -> BGamma:
    """(b, Gamma) with v^{b Gamma}(y, tau) = (1+b) v(y/(1+b), (1+Gamma) tau).

    ``beta`` is the shift of :class:`TransformParams` (extinction moves to
    t = beta); it enters as b = sqrt(1 + beta e^tau) - 1 and
    Gamma = (gamma - log(1 + beta e^tau)) / tau.
    """
    if tau == 0:
        raise ValueError("tau must be nonzero")
    arg = 1.0 + beta * math.exp(tau)
    if not arg > 0:
        raise ValueError(f"1 + beta e^tau = {arg:.6g} must be positive")
    return BGamma(math.sqrt(arg) - 1.0, (gamma - math.log(arg)) / tau, tau)


# ----------------------------------------------------------------------------
# renormalization

def tau_window(traj: FlowTrajectory) -> tuple:
    """Renormalized times whose physical time -e^{-tau} is stored."""
    if not traj.is_renormalized:
        raise WindowError("trajectory has no extinction time")
    t0, t1 = traj.tau_window()
    if traj.t_ext == 0:
        return t0, t1
    # stored remaining times run from e^{-t0} down to e^{-t1}; physical time -e^{-tau}
    # has remaining time t_ext + e^{-tau}
    first = math.exp(-t0) - traj.t_ext
    last = math.exp(-t1) - traj.t_ext
    if not first > 0:
        raise WindowError("no stored time precedes t = 0")
    return -math.log(first), (-math.log(last) if last > 0 else math.inf)


def renormalize_at(traj: FlowTrajectory, tau: float) -> HypersurfaceSnapshot:
    """The surface e^{tau/2} M_{-e^{-tau}}, stamped with t = tau."""
    lo, hi = tau_window(traj)
    slack = 1e-12 * max(1.0, abs(lo), abs(hi) if math.isfinite(hi) else 0.0)
    if not lo - slack <= tau <= hi + slack:
        raise WindowError(f"tau={tau:.10g} outside the renormalized window [{lo:.10g}, {hi:.10g}]")
    if traj.t_ext == 0:
        rho = traj.shape_at(tau)
    else:
        a = traj.t_ext * math.exp(tau)
        t_int = min(max(tau - math.log1p(a), traj.taus[0]), traj.taus[-1])
        rho = math.sqrt(1.0 + a) * traj.shape_at(t_int)
    return HypersurfaceSnapshot(float(tau), RadialGraph(traj.sym, traj.grid, rho))


def apply_transform(traj: FlowTrajectory, tp: TransformParams) -> FlowTrajectory:
    """Stored trajectory of e^{gamma/2} R M_{e^{-gamma}(t - beta)}; no re-solving.

    In renormalized storage the dilation only shifts tau by -gamma, and
    extinction moves to beta + e^{gamma} t_ext (to beta for a normalized
    flow).  A swap of the two cylinder axes of a BLOCK k = 2 trajectory
    mirrors the phi axis, which is exact on the symmetric grid.
    """
    if not traj.is_renormalized:
        raise WindowError("trajectory has no extinction time")
    swap = (traj.sym.reduction is Reduction.BLOCK and traj.sym.k == 2
            and tp.R is not None and tp.R == (1, 0))
    shapes = traj.shapes[:, :, ::-1] if swap else traj.shapes
    meta = dict(traj.meta)
    meta["transform"] = {"beta": tp.beta, "gamma": tp.gamma, "R": list(tp.R) if tp.R else None}
    t_ext = tp.beta + math.exp(tp.gamma) * traj.t_ext if traj.t_ext else tp.beta
    return FlowTrajectory.renormalized(traj.sym, traj.grid, traj.taus - tp.gamma, shapes, t_ext,
                                       norm=traj.norm if tp.is_identity else None, meta=meta)


# ----------------------------------------------------------------------------
# fibre solves

def layout_points(ygrid: np.ndarray, layout: str, k: int) -> np.ndarray:
    y = np.asarray(ygrid, dtype=float)
    if layout == "points":
        return y.reshape(-1, k)
    if layout == "line":
        return y.reshape(-1, 1)
    if layout == "radial":
        pts = np.zeros((y.size, k))
        pts[:, 0] = y
        return pts
    if layout == "lattice":
        a, b = np.meshgrid(y, y, indexing="ij")
        return np.stack([a.ravel(), b.ravel()], axis=1)
    raise ValueError(f"unknown layout {layout!r}")


def default_ygrid(sym: SymmetrySpec, ybox: float = DEFAULT_YBOX, m: int | None = None) -> tuple:
    """Default (ygrid, layout) covering [-ybox, ybox]^k."""
    if sym.k == 1:
        return np.linspace(-ybox, ybox, m or 241), "line"
    if sym.reduction is Reduction.AXIAL:
        return np.linspace(0.0, ybox, m or 121), "radial"
    return np.linspace(-ybox, ybox, m or 97), "lattice"


def _reduced(points: np.ndarray, sym: SymmetrySpec) -> np.ndarray:
    """Axis points reduced by the symmetry: |y| (AXIAL) or (|y1|, |y2|) (BLOCK k=2)."""
    p = np.abs(np.asarray(points, dtype=float).reshape(-1, sym.k))
    if sym.n_angles == 1:
        return np.sqrt(np.sum(p * p, axis=1))[:, None] if sym.k > 1 else p
    return p


class _Fibres:
    """Cosine-series interpolant of one radial graph, solved along fibres.

    With u the angle measured from the fibre direction (u = pi/2 - phi for
    AXIAL, u = theta for BLOCK) the fibre over |y| = r meets the surface where
    S(u) sin(u) = r, S the radius in that direction; then v = S(u) cos(u).
    On a convex graph S sin u increases with u, so every fibre has at most
    one crossing, which is bracketed between samples and polished by
    safeguarded Newton iteration in the grid coordinate xi.
    """

    def __init__(self, graph: RadialGraph):
        self.sym = graph.sym
        rho = np.array(graph.rho)
        if self.sym.n_angles == 1:
            # reversing the samples maps xi to pi/2 - xi, which flips the stretch
            self.su = -graph.grid.stretch[0]
            self.vals = rho[::-1][None, :]
            self.acoef = ang.cos_coeffs(self.vals, axis=1)
        else:
            self.su = graph.grid.stretch[0]
            # phi-series of the graph and of its x1 <-> x2 mirror image
            self.phi_coef = ang.cos_coeffs(rho, axis=1)
            self.phi_coef_sw = ang.cos_coeffs(rho[:, ::-1].copy(), axis=1)

    def solve(self, red: np.ndarray) -> tuple:
        """Profile values and hit flags at reduced points (see :func:`_reduced`)."""
        m = red.shape[0]
        if self.sym.n_angles == 1:
            r = red[:, 0]
            vals = np.broadcast_to(self.vals, (m, self.vals.shape[1]))
            coef = np.broadcast_to(self.acoef, vals.shape)
        else:
            p, q = red[:, 0], red[:, 1]
            sw = q > p
            hi = np.where(sw, q, p)
            lo = np.where(sw, p, q)
            r = np.hypot(hi, lo)
            phis = np.arctan2(lo, hi)
            cm = ang.cos_matrix(phis, self.phi_coef.shape[1])
            vals = np.where(sw[:, None], cm @ self.phi_coef_sw.T, cm @ self.phi_coef.T)
            coef = ang.cos_coeffs(vals, axis=1)
        return _fibre_roots(vals, coef, self.su, r)


def _fibre_roots(vals, coef, su, r):
    m, N = vals.shape
    v = np.zeros(m)
    hit = np.zeros(m, dtype=bool)
    if m == 0:
        return v, hit
    xi_nodes = ang.cell_nodes(N)
    u_nodes = ang.stretch_map(xi_nodes, su)[0]
    big = np.max(np.abs(coef))
    keep = np.nonzero(np.max(np.abs(coef), axis=0) > 1e-17 * big)[0]
    ncoef = int(keep[-1]) + 1 if keep.size else 1
    coef = np.ascontiguousarray(coef[:, :ncoef])
    j = np.arange(ncoef, dtype=float)
    alt = np.where(np.arange(ncoef) % 2 == 0, 1.0, -1.0)
    s_end = coef @ alt                                  # S at xi = pi/2
    g_nodes = vals * np.sin(u_nodes)[None, :]
    ok = (r >= 0) & (r < s_end) & (s_end > 0)
    idx = np.sum(g_nodes < r[:, None], axis=1)
    x_ext = np.concatenate([[0.0], xi_nodes, [ang.HALF_PI]])
    g_ext = np.concatenate([np.zeros((m, 1)), g_nodes, s_end[:, None]], axis=1)
    lo = x_ext[idx]
    hi = x_ext[idx + 1]
    rows = np.arange(m)
    g_lo = g_ext[rows, idx]
    g_hi = g_ext[rows, idx + 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(g_hi > g_lo, (r - g_lo) / (g_hi - g_lo), 0.5)
    x = lo + np.clip(frac, 0.0, 1.0) * (hi - lo)
    act = np.nonzero(ok)[0]
    for _ in range(100):
        if act.size == 0:
            break
        xx = x[act]
        arg = 2.0 * np.outer(xx, j)
        c = coef[act]
        S = np.sum(c * np.cos(arg), axis=1)
        dS = -np.sum(c * (2.0 * j) * np.sin(arg), axis=1)
        u, du, _ = ang.stretch_map(xx, su)
        su_, cu = np.sin(u), np.cos(u)
        g = S * su_ - r[act]
        dg = dS * su_ + S * cu * du
        below = g < 0
        lo[act] = np.where(below, xx, lo[act])
        hi[act] = np.where(below, hi[act], xx)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = xx - g / dg
        bad = ~np.isfinite(xn) | (xn <= lo[act]) | (xn >= hi[act])
        xn = np.where(bad, 0.5 * (lo[act] + hi[act]), xn)
        step = np.abs(xn - xx)
        x[act] = xn
        done = (step <= 4e-16 * np.maximum(1.0, xn)) | (hi[act] - lo[act] <= 4e-16)
        act = act[~done]
    arg = 2.0 * np.outer(x[ok], j)
    S = np.sum(coef[ok] * np.cos(arg), axis=1)
    v[ok] = S * np.cos(ang.stretch_map(x[ok], su)[0])
    hit[ok] = v[ok] > 0
    v[~hit] = 0.0
    return v, hit


def _solve_points(fib: _Fibres, points: np.ndarray) -> tuple:
    red = _reduced(points, fib.sym)
    # symmetric point sets repeat reduced coordinates; solve each once
    uniq, inv = np.unique(red, axis=0, return_inverse=True)
    v, hit = fib.solve(uniq)
    inv = inv.ravel()
    return v[inv], hit[inv]


def _shape_profile(sym, tau, ygrid, layout, v, hit, theta):
    mask = hit & (v >= 0.25 * theta)
    v = np.where(hit, v, 0.0)
    if layout == "lattice":
        m = len(ygrid)
        v, mask = v.reshape(m, m), mask.reshape(m, m)
    return CylindricalProfile(sym, float(tau), np.asarray(ygrid, dtype=float), v, mask, float(theta), layout)


def extract_profile(snap: HypersurfaceSnapshot, sym: SymmetrySpec | None = None, theta: float | None = None,
                    ybox: float = DEFAULT_YBOX, points: np.ndarray | None = None) -> CylindricalProfile:
    """Profile v(y) of a renormalized snapshot.

    Without ``points`` the default lattice over [-ybox, ybox]^k is used.  The
    mask marks fibres that meet the surface with v >= theta/4; off-mask nodes
    (including fibres beyond the tips) carry v = 0.
    """
    sym = sym or snap.sym
    if sym != snap.sym:
        raise ValueError("symmetry does not match the snapshot")
    theta = default_theta(sym) if theta is None else float(theta)
    if not theta > 0:
        raise ValueError("theta must be positive")
    if points is None:
        ygrid, layout = default_ygrid(sym, ybox)
    else:
        ygrid, layout = np.asarray(points, dtype=float).reshape(-1, sym.k), "points"
    v, hit = _solve_points(_Fibres(snap.graph), layout_points(ygrid, layout, sym.k))
    return _shape_profile(sym, snap.t, ygrid, layout, v, hit, theta)


# ----------------------------------------------------------------------------
# profile families

class _Family:
    sym: SymmetrySpec

    def evaluate(self, tau: float, points: np.ndarray) -> tuple:
        """(v, hit) at the given axis points; v = 0 where the fibre misses."""
        raise NotImplementedError

    def window(self) -> tuple:
        return -math.inf, math.inf

    def profile(self, tau: float, points: np.ndarray | None = None, theta: float | None = None,
                ybox: float = DEFAULT_YBOX) -> CylindricalProfile:
        theta = default_theta(self.sym) if theta is None else float(theta)
        if points is None:
            ygrid, layout = default_ygrid(self.sym, ybox)
        else:
            ygrid, layout = np.asarray(points, dtype=float).reshape(-1, self.sym.k), "points"
        v, hit = self.evaluate(tau, layout_points(ygrid, layout, self.sym.k))
        return _shape_profile(self.sym, tau, ygrid, layout, v, hit, theta)


class ProfileFamily(_Family):
    """Profiles of a trajectory, extracted on demand at any tau of its window."""

    def __init__(self, traj: FlowTrajectory, cache_size: int = 16):
        self.traj = traj
        self.sym = traj.sym
        self._window = tau_window(traj)
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size

    def window(self) -> tuple:
        return self._window

    def _fibres(self, tau: float) -> _Fibres:
        key = float(tau)
        fib = self._cache.get(key)
        if fib is None:
            fib = _Fibres(renormalize_at(self.traj, tau).graph)
            self._cache[key] = fib
            if len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        else:
            self._cache.move_to_end(key)
        return fib

    def evaluate(self, tau, points):
        return _solve_points(self._fibres(tau), points)


@dataclass(eq=False)
class AnalyticFamily(_Family):
    """Model profiles v = func(points, tau); nonpositive values count as misses.

    ``func`` receives the (m, k) point array and tau and returns m values.
    """

    sym: SymmetrySpec
    func: Callable
    tau_range: tuple = (-math.inf, 0.0)
    name: str = "analytic"

    def window(self):
        return tuple(self.tau_range)

    def evaluate(self, tau, points):
        lo, hi = self.tau_range
        if not lo <= tau <= hi:
            raise WindowError(f"tau={tau:.10g} outside [{lo}, {hi}] for {self.name}")
        pts = np.asarray(points, dtype=float).reshape(-1, self.sym.k)
        v = np.asarray(self.func(pts, float(tau)), dtype=float).reshape(-1)
        hit = np.isfinite(v) & (v > 0)
        return np.where(hit, v, 0.0), hit


@dataclass(eq=False)
class TransformedFamily(_Family):
    """Profiles of the transformed flow of :class:`TransformParams`."""

    base: _Family
    params: TransformParams

    def __post_init__(self):
        self.sym = self.base.sym

    def evaluate(self, tau, points):
        bg = params_to_bgamma(self.params.beta, self.params.gamma, tau)
        pts = np.asarray(points, dtype=float).reshape(-1, self.sym.k)
        if self.params.R is not None:
            inv = np.empty(self.sym.k, dtype=int)
            inv[list(self.params.R)] = np.arange(self.sym.k)
            pts = pts[:, inv]
        return _scaled_eval(self.base, bg, pts)


def _scaled_eval(base: _Family, bg: BGamma, pts: np.ndarray) -> tuple:
    s = 1.0 + bg.b
    v, hit = base.evaluate((1.0 + bg.Gamma) * bg.tau, pts / s)
    return s * v, hit


def cylinder_family(sym: SymmetrySpec) -> AnalyticFamily:
    r = sym.cylinder_radius
    return AnalyticFamily(sym, lambda p, tau: np.full(p.shape[0], r), (-math.inf, math.inf), "cylinder")


def quadratic_ansatz(sym: SymmetrySpec, coeffs=None) -> AnalyticFamily:
    """v = sqrt(2(n-k)) - sum_j c_j(tau) (y_j^2 - 2) with c_j = coeffs_j * sqrt(2(n-k)) / (4|tau|).

    ``coeffs`` defaults to all ones, which is the k-oval model.
    """
    r0 = sym.cylinder_radius
    c = np.ones(sym.k) if coeffs is None else np.asarray(coeffs, dtype=float).reshape(sym.k)

    def f(p, tau):
        return r0 - (r0 / (4.0 * abs(tau))) * ((p * p - 2.0) @ c)

    return AnalyticFamily(sym, f, (-math.inf, -1e-12), "quadratic ansatz")


def as_family(obj) -> _Family:
    if isinstance(obj, _Family):
        return obj
    if isinstance(obj, FlowTrajectory):
        return ProfileFamily(obj)
    raise TypeError(f"cannot build a profile family from {type(obj).__name__}")


def transform_family(family, tp: TransformParams) -> TransformedFamily:
    return TransformedFamily(as_family(family), tp)


def transform_profile(family, bg: BGamma, points: np.ndarray | None = None, theta: float | None = None,
                      ybox: float = DEFAULT_YBOX) -> CylindricalProfile:
    """(1+b) v(y/(1+b), (1+Gamma) tau) at tau = bg.tau, on ``points`` or the default lattice."""
    fam = as_family(family)
    theta = default_theta(fam.sym) if theta is None else float(theta)
    if points is None:
        ygrid, layout = default_ygrid(fam.sym, ybox)
    else:
        ygrid, layout = np.asarray(points, dtype=float).reshape(-1, fam.sym.k), "points"
    v, hit = _scaled_eval(fam, bg, layout_points(ygrid, layout, fam.sym.k))
    return _shape_profile(fam.sym, bg.tau, ygrid, layout, v, hit, theta)


__all__ = [
    "AnalyticFamily", "BGamma", "CylindricalProfile", "ProfileFamily", "TransformParams",
    "TransformedFamily", "WindowError", "apply_transform", "as_family", "compose_params",
    "cylinder_family", "default_theta", "default_ygrid", "extract_profile", "layout_points",
    "params_to_bgamma", "quadratic_ansatz", "renormalize_at", "shift_first_beta", "tau_window",
    "transform_family", "transform_profile",
]
