"""Symmetric convex hypersurfaces stored as radial graphs over a reduced sphere.

Two reductions are supported.

* ``AXIAL``: O(k) x O(n+1-k) symmetry.  A point is
  ``rho(phi) * (cos(phi) w1, sin(phi) w2)`` with ``w1`` in S^{k-1} and ``w2`` in
  S^{n-k}; the grid is cell-centred on phi in [0, pi/2].
* ``BLOCK``: Z_2^k x O(n+1-k) symmetry, k <= 2.  For k = 2 a point of the reduced
  3-space is ``rho(theta, phi) * (sin(theta) cos(phi), sin(theta) sin(phi), cos(theta))``
  with the last coordinate the radius of the O(n-1) orbit.  BLOCK with k = 1
  coincides with AXIAL and uses the same one-angle code.

Derivatives are fourth-order centred differences with reflected ghost cells;
integrals use interpolatory cosine quadrature on the same cells.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy import integrate, optimize

from . import _angular as ang


class GeometryError(ValueError):
    pass


class Reduction(str, Enum):
    AXIAL = "AXIAL"
    BLOCK = "BLOCK"


def sphere_area(m: int) -> float:
    """Area of the unit sphere S^m (|S^0| = 2)."""
    return 2.0 * math.pi ** ((m + 1) / 2.0) / math.gamma((m + 1) / 2.0)


@dataclass(frozen=True)
class SymmetrySpec:
    n: int
    k: int
    reduction: Reduction = Reduction.AXIAL

    def __post_init__(self):
        object.__setattr__(self, "reduction", Reduction(self.reduction))
        if int(self.n) != self.n or int(self.k) != self.k:
            raise GeometryError("n and k must be integers")
        if not 1 <= self.k <= self.n - 1:
            raise GeometryError(f"need 1 <= k <= n-1, got n={self.n}, k={self.k}")
        if self.reduction is Reduction.BLOCK and self.k > 2:
            raise GeometryError("BLOCK reduction is implemented for k <= 2 only")

    @property
    def n_angles(self) -> int:
        return 2 if (self.reduction is Reduction.BLOCK and self.k == 2) else 1

    @property
    def cylinder_radius(self) -> float:
        """Radius sqrt(2(n-k)) of the round factor of the self-shrinking cylinder."""
        return math.sqrt(2.0 * (self.n - self.k))

    def as_dict(self) -> dict:
        return {"n": self.n, "k": self.k, "reduction": self.reduction.value}


@dataclass(frozen=True)
class AngularGrid:
    """Cell-centred grid on [0, pi/2]^d, optionally stretched per axis.

    Axis nodes are a = xi - (s/2) sin(2 xi) at uniform cell centres xi; s > 0
    refines near 0, s < 0 near pi/2 (see :mod:`ovallab._angular`).  On a BLOCK
    grid the phi axis must stay uniform so the x1 <-> x2 mirror is exact.
    """

    shape: tuple
    stretch: tuple | None = None

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if len(shape) not in (1, 2) or min(shape) < 4:
            raise GeometryError(f"bad angular grid shape {self.shape}")
        object.__setattr__(self, "shape", shape)
        st = (0.0,) * len(shape) if self.stretch is None else tuple(float(x) for x in self.stretch)
        if len(st) != len(shape) or any(not abs(x) < 1.0 for x in st):
            raise GeometryError(f"bad grid stretch {self.stretch}")
        if len(shape) == 2 and st[1] != 0.0:
            raise GeometryError("the phi axis of a two-angle grid must be uniform")
        object.__setattr__(self, "stretch", st)

    @property
    def spacing(self) -> tuple:
        """Uniform spacing of the computational coordinate xi per axis."""
        return tuple(ang.HALF_PI / s for s in self.shape)

    @property
    def xi_nodes(self) -> tuple:
        return tuple(ang.cell_nodes(s) for s in self.shape)

    @property
    def nodes(self) -> tuple:
        return tuple(ang.stretch_map(ang.cell_nodes(n), s)[0] for n, s in zip(self.shape, self.stretch))

    def metric(self, axis: int = 0) -> tuple:
        """(d a/d xi, d^2 a/d xi^2) at the nodes of one axis."""
        _, d1, d2 = ang.stretch_map(ang.cell_nodes(self.shape[axis]), self.stretch[axis])
        return d1, d2


DEFAULT_AXIAL_N = 512
DEFAULT_BLOCK_N = 192
MAX_STRETCH = 0.9


def tip_stretch(sym: SymmetrySpec, alpha: float) -> tuple:
    """Per-axis stretch refining toward the cylinder axes by the factor 1 - alpha."""
    return (alpha,) if sym.n_angles == 1 else (-alpha, 0.0)


def default_grid(sym: SymmetrySpec, alpha: float = 0.0) -> AngularGrid:
    if sym.n_angles == 1:
        return AngularGrid((DEFAULT_AXIAL_N,), tip_stretch(sym, alpha))
    return AngularGrid((DEFAULT_BLOCK_N, DEFAULT_BLOCK_N), tip_stretch(sym, alpha))


def _grid_for(sym: SymmetrySpec, grid, alpha: float = 0.0) -> AngularGrid:
    if grid is None:
        return default_grid(sym, alpha)
    if isinstance(grid, AngularGrid):
        g = grid
    elif isinstance(grid, (int, np.integer)):
        g = AngularGrid((int(grid),) * sym.n_angles, tip_stretch(sym, alpha))
    else:
        g = AngularGrid(tuple(grid), tip_stretch(sym, alpha))
    if len(g.shape) != sym.n_angles:
        raise GeometryError(f"grid {g.shape} does not match a {sym.n_angles}-angle reduction")
    return g


@dataclass(eq=False)
class RadialGraph:
    sym: SymmetrySpec
    grid: AngularGrid
    rho: np.ndarray

    def __post_init__(self):
        rho = np.array(self.rho, dtype=float)
        if rho.shape != self.grid.shape:
            raise GeometryError(f"rho has shape {rho.shape}, grid expects {self.grid.shape}")
        if not np.all(np.isfinite(rho)) or np.any(rho <= 0.0):
            raise GeometryError("rho must be finite and strictly positive")
        rho.setflags(write=False)
        self.rho = rho

    def with_rho(self, rho) -> "RadialGraph":
        return RadialGraph(self.sym, self.grid, rho)


@dataclass(eq=False)
class HypersurfaceSnapshot:
    t: float
    graph: RadialGraph

    @property
    def sym(self) -> SymmetrySpec:
        return self.graph.sym


@dataclass(eq=False)
class ScalarField:
    graph: RadialGraph
    values: np.ndarray = field(repr=False)


# ----------------------------------------------------------------------------
# construction

def unit_directions(sym: SymmetrySpec, grid: AngularGrid) -> np.ndarray:
    """Unit directions at the nodes in reduced coordinates.

    AXIAL: (cos phi, sin phi) = (|x'|, |x''|) components.  BLOCK k=2:
    (x1, x2, |x''|) components, shape (3, Ntheta, Nphi).
    """
    if sym.n_angles == 1:
        (phi,) = grid.nodes
        return np.stack([np.cos(phi), np.sin(phi)])
    theta, phi = grid.nodes
    cphi = np.cos(phi)
    sphi = cphi[::-1].copy()  # exact mirror of cphi keeps the x1 <-> x2 swap bit-exact
    st, ct = np.sin(theta)[:, None], np.cos(theta)[:, None]
    ones = np.ones_like(cphi)[None, :]
    return np.stack([st * cphi[None, :], st * sphi[None, :], ct * ones])


def sphere_init(sym: SymmetrySpec, radius: float, grid=None) -> RadialGraph:
    if not radius > 0:
        raise GeometryError(f"sphere radius must be positive, got {radius}")
    g = _grid_for(sym, grid)
    return RadialGraph(sym, g, np.full(g.shape, float(radius)))


def ellipsoid_quadric(sym: SymmetrySpec, ell: float, a: Sequence[float], mu: float) -> np.ndarray:
    """Diagonal coefficients q of sum q_j x_j^2 = 2(n-k) for the ellipsoid E^{ell,a}_mu."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.shape != (sym.k,):
        raise GeometryError(f"need {sym.k} entries in a, got {a.size}")
    if np.any(a == 0.0):
        raise GeometryError("a component vanishes: noncompact limit (cylinder), not an ellipsoid")
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise GeometryError("a must be positive and finite")
    if not ell > 0:
        raise GeometryError(f"ell must be positive, got {ell}")
    if not mu > 0:
        raise GeometryError(f"mu must be positive, got {mu}")
    return np.concatenate([(a / ell) ** 2, np.full(sym.n + 1 - sym.k, float(mu) ** 2)])


def auto_stretch(aspect: float, n_cells: int) -> float:
    """Stretch putting about two cells across the tip cap of a prolate body.

    A tip of a body with aspect ratio A has radius ~ b/A^2 relative to the
    long semi-axis b*A; the local spacing there is A*b*h*(1 - alpha).
    """
    h = ang.HALF_PI / n_cells
    if aspect <= 1.0:
        return 0.0
    return float(np.clip(1.0 - 0.5 / (aspect * aspect * h), 0.0, MAX_STRETCH))


def ellipsoid_init(sym: SymmetrySpec, ell: float, a, mu: float, grid=None) -> RadialGraph:
    """Radial graph of {sum_j (a_j x_j / ell)^2 + mu^2 |x''|^2 = 2(n-k)}.

    Unless ``grid`` is an :class:`AngularGrid`, the grid is stretched toward
    the long axes by :func:`auto_stretch`.
    """
    q = ellipsoid_quadric(sym, ell, a, mu)
    if isinstance(grid, AngularGrid):
        g = _grid_for(sym, grid)
    else:
        ncell = DEFAULT_AXIAL_N if sym.n_angles == 1 else DEFAULT_BLOCK_N
        if grid is not None:
            ncell = int(np.atleast_1d(grid)[0])
        aspect = math.sqrt(q[-1] / float(np.max(q[: sym.k])))
        g = _grid_for(sym, grid, auto_stretch(aspect, ncell))
    dirs = unit_directions(sym, g)
    if sym.n_angles == 1:
        if sym.k > 1 and not np.allclose(q[: sym.k], q[0], rtol=0, atol=0):
            raise GeometryError("AXIAL reduction needs equal a components; use BLOCK")
        denom = q[0] * dirs[0] ** 2 + q[-1] * dirs[1] ** 2
    else:
        denom = q[0] * dirs[0] ** 2 + q[1] * dirs[1] ** 2 + q[-1] * dirs[2] ** 2
    return RadialGraph(sym, g, np.sqrt(2.0 * (sym.n - sym.k) / denom))


def reduced_points(graph: RadialGraph) -> np.ndarray:
    return graph.rho[None] * unit_directions(graph.sym, graph.grid)


def rescale(graph: RadialGraph, c: float) -> RadialGraph:
    return graph.with_rho(c * graph.rho)


# ----------------------------------------------------------------------------
# differential geometry

@dataclass
class _Terms:
    H: np.ndarray
    principal: np.ndarray      # (m, *shape) distinct principal curvatures
    multiplicity: tuple        # multiplicities of the rows of ``principal``
    speed: np.ndarray          # rho_t = -H * speed for normal motion at speed H
    jac: np.ndarray            # area element / (rho^{n-1} * angular kernel)
    sprad: float = 0.0         # bound on the spectral radius of the discrete flow operator


# symbol maxima of the fourth-order stencils
_D2MAX = 16.0 / 3.0
_D1MAX = 1.3722
_SAFETY = 1.15


def _terms_1d(graph: RadialGraph) -> _Terms:
    sym = graph.sym
    n, k = sym.n, sym.k
    (h,) = graph.grid.spacing
    (phi,) = graph.grid.nodes
    m1, m2 = graph.grid.metric(0)
    c, s = np.cos(phi), np.sin(phi)
    rp = ang.pad_even(graph.rho)
    r = graph.rho
    r1 = ang.d1(rp, h, 0) / m1
    r2 = (ang.d2(rp, h, 0) - m2 * r1) / (m1 * m1)
    w2 = r * r + r1 * r1
    w = np.sqrt(w2)
    kappa0 = (r * r + 2.0 * r1 * r1 - r * r2) / (w2 * w)
    nu1 = (r * c + r1 * s) / w
    nu2 = (r * s - r1 * c) / w
    k1 = nu1 / (r * c)
    k2 = nu2 / (r * s)
    H = kappa0 + (k - 1) * k1 + (n - k) * k2
    rows, mult = [kappa0], [1]
    if k > 1:
        rows.append(k1)
        mult.append(k - 1)
    rows.append(k2)
    mult.append(n - k)
    hl = h * m1   # local spacing in phi
    first = (((n - k) * c / s + (k - 1) * s / c) + np.abs(m2) / (m1 * m1)) / w2
    sprad = float(np.max(_D2MAX / (w2 * hl * hl) + _D1MAX * first / hl))
    return _Terms(H, np.stack(rows), tuple(mult), w / r, w, _SAFETY * sprad)


def _terms_2d(graph: RadialGraph) -> _Terms:
    n = graph.sym.n
    ht, hp = graph.grid.spacing
    theta, _ = graph.grid.nodes
    m1, m2 = (x[:, None] for x in graph.grid.metric(0))
    st = np.sin(theta)[:, None]
    ct = np.cos(theta)[:, None]
    rp = ang.pad_even(graph.rho)
    r = graph.rho
    rt = ang.strip(ang.d1(rp, ht, 0), 1) / m1
    rtt = (ang.strip(ang.d2(rp, ht, 0), 1) - m2 * rt) / (m1 * m1)
    rf_full = ang.d1(rp, hp, 1)                 # padded in theta, interior in phi
    rf = ang.strip(rf_full, 0)
    rff = ang.strip(ang.d2(rp, hp, 1), 0)
    rtf = ang.d1(rf_full, ht, 0) / m1
    q2 = st * st * (r * r + rt * rt) + rf * rf
    q = np.sqrt(q2)
    E = r * r + rt * rt
    F = rt * rf
    G = rf * rf + r * r * st * st
    L = -((rtt - r) * r * st - 2.0 * rt * rt * st) / q
    M = -(r * rtf * st - 2.0 * rt * rf * st - r * rf * ct) / q
    N = -((rff - r * st * st) * r * st + rt * r * st * st * ct - 2.0 * rf * rf * st) / q
    det = E * G - F * F
    h_sigma = (E * N - 2.0 * F * M + G * L) / det
    gauss = (L * N - M * M) / det
    disc = np.sqrt(np.maximum(0.25 * h_sigma * h_sigma - gauss, 0.0))
    k_orbit = st * (r * ct + rt * st) / (q * r * ct)
    H = h_sigma + (n - 2) * k_orbit
    principal = np.stack([0.5 * h_sigma + disc, 0.5 * h_sigma - disc, k_orbit])
    # q / sin(theta) stays finite at the pole
    qs = np.sqrt(r * r + rt * rt + (rf / st) ** 2)
    det_r = r * r * q2
    a_tt, a_ff, a_tf = G / det_r, E / det_r, np.abs(F) / det_r
    hl = ht * m1
    first = ((n - 2) * st / ct + ct / st) / (r * r) + a_tt * np.abs(m2) / (m1 * m1)
    sprad = float(np.max(_D2MAX * (a_tt / hl ** 2 + a_ff / hp ** 2) + 2 * _D1MAX ** 2 * a_tf / (hl * hp)
                         + _D1MAX * first / hl))
    return _Terms(H, principal, (1, 1, n - 2), qs / r, qs, _SAFETY * sprad)


def _terms(graph: RadialGraph) -> _Terms:
    return _terms_1d(graph) if graph.sym.n_angles == 1 else _terms_2d(graph)


def mean_curvature(graph: RadialGraph) -> ScalarField:
    """Scalar mean curvature (sum of principal curvatures, outward normal).

    Equals n / r on a round sphere of radius r.
    """
    return ScalarField(graph, _terms(graph).H)


def principal_curvatures(graph: RadialGraph) -> tuple:
    """Distinct principal curvatures per node and their multiplicities."""
    t = _terms(graph)
    return t.principal, t.multiplicity


def normal_speed_factor(graph: RadialGraph) -> np.ndarray:
    """Factor f with rho_t = -H f for the flow with normal velocity -H."""
    return _terms(graph).speed


def _weights(graph: RadialGraph) -> np.ndarray:
    sym = graph.sym
    n, k = sym.n, sym.k
    if sym.n_angles == 1:
        (N,) = graph.grid.shape
        orbit = sphere_area(k - 1) * sphere_area(n - k)
        return orbit * ang.kernel_weights(N, n - k, k - 1, graph.grid.stretch[0])
    nt, nf = graph.grid.shape
    orbit = 4.0 * sphere_area(n - 2)
    wf = ang.kernel_weights(nf)
    wf = 0.5 * (wf + wf[::-1])  # exact palindrome, see msum
    return orbit * np.outer(ang.kernel_weights(nt, 1, n - 2, graph.grid.stretch[0]), wf)


def msum(x: np.ndarray) -> float:
    """Sum of a node array, invariant bit-for-bit under reversal of the phi axis.

    Columns j and N-1-j are added first (a commutative pair), so a surface and
    its x1 <-> x2 mirror image give identical reductions.
    """
    if x.ndim < 2:
        return float(np.sum(x))
    nf = x.shape[-1]
    h = nf // 2
    paired = x[..., :h] + x[..., ::-1][..., :h]
    total = float(np.sum(paired))
    if nf % 2:
        total += float(np.sum(x[..., h]))
    return total


def _area_density(graph: RadialGraph, terms: _Terms | None = None) -> np.ndarray:
    terms = terms or _terms(graph)
    return graph.rho ** (graph.sym.n - 1) * terms.jac


def area_measure(graph: RadialGraph) -> ScalarField:
    """Per-node area weights; they sum to the total area of the full hypersurface."""
    return ScalarField(graph, _weights(graph) * _area_density(graph))


def total_area(graph: RadialGraph) -> float:
    return msum(area_measure(graph).values)


def enclosed_volume(graph: RadialGraph) -> float:
    n = graph.sym.n
    return msum(_weights(graph) * graph.rho ** (n + 1)) / (n + 1)


def gaussian_density(snap, scale: float = 1.0) -> float:
    """Gaussian density (4 pi)^{-n/2} int exp(-|x|^2/4) dA of ``scale * M``."""
    graph = snap.graph if isinstance(snap, HypersurfaceSnapshot) else snap
    if not scale > 0:
        raise GeometryError("scale must be positive")
    n = graph.sym.n
    # |x| = rho on a radial graph, and area scales like scale^n
    r = scale * graph.rho
    dens = _area_density(graph) * scale ** n
    return msum(_weights(graph) * dens * np.exp(-0.25 * r * r)) / (4.0 * math.pi) ** (n / 2.0)


def min_principal_curvature(graph: RadialGraph) -> float:
    return float(np.min(_terms(graph).principal))


def is_convex(graph: RadialGraph, rel_tol: float = 1e-6) -> bool:
    t = _terms(graph)
    return bool(np.min(t.principal) >= -rel_tol * np.max(np.abs(t.H)))


# ----------------------------------------------------------------------------
# entropy of round spheres

def sphere_entropy(m: int) -> float:
    """Ent(S^m) = (4 pi)^{-m/2} |S^m| (2m)^{m/2} e^{-m/2}."""
    return (4.0 * math.pi) ** (-m / 2.0) * sphere_area(m) * (2.0 * m) ** (m / 2.0) * math.exp(-m / 2.0)


def sphere_density_quadrature(m: int, radius: float) -> float:
    """Gaussian density of S^m(radius) by direct quadrature over the polar angle."""
    angular, _ = integrate.quad(lambda p: math.sin(p) ** (m - 1), 0.0, math.pi, epsabs=1e-13, epsrel=1e-13)
    area = sphere_area(m - 1) * angular * radius ** m
    return (4.0 * math.pi) ** (-m / 2.0) * area * math.exp(-radius * radius / 4.0)


def sphere_entropy_quadrature(m: int) -> float:
    """Entropy of S^m as the supremum over radii of the quadrature density."""
    res = optimize.minimize_scalar(
        lambda r: -sphere_density_quadrature(m, r), bounds=(0.1, 10.0), method="bounded",
        options={"xatol": 1e-10},
    )
    return -float(res.fun)


def target_density(sym: SymmetrySpec) -> float:
    """Midpoint between the entropies of the two neighbouring round cylinders."""
    m = sym.n - sym.k
    return 0.5 * (sphere_entropy(m) + sphere_entropy(m + 1))


def check_entropy_constants(tol: float = 1e-8) -> None:
    """Cross-check the closed-form sphere entropies against quadrature."""
    for m in (1, 2, 3):
        a, b = sphere_entropy(m), sphere_entropy_quadrature(m)
        if abs(a - b) > tol * a:
            raise GeometryError(f"entropy constant for S^{m} disagrees with quadrature: {a} vs {b}")


__all__ = [
    "AngularGrid", "GeometryError", "HypersurfaceSnapshot", "RadialGraph", "Reduction",
    "ScalarField", "SymmetrySpec", "area_measure", "auto_stretch", "tip_stretch", "check_entropy_constants", "default_grid",
    "ellipsoid_init", "ellipsoid_quadric", "enclosed_volume", "gaussian_density", "is_convex",
    "mean_curvature", "min_principal_curvature", "normal_speed_factor", "principal_curvatures",
    "reduced_points", "rescale", "sphere_area", "sphere_entropy", "sphere_entropy_quadrature",
    "sphere_init", "target_density", "total_area", "unit_directions",
]
