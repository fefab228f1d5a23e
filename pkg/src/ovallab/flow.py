"""Mean curvature flow of radial graphs, extinction estimates and normalization.

Time stepping is the second-order Runge-Kutta-Chebyshev scheme (RKC2) of
Sommeijer, Shampine and Verwer: explicit, with a stage count chosen from an
analytic bound on the spectral radius of the discrete operator, so the
parabolic step restriction costs O(sqrt(stiffness)) right-hand sides instead
of O(stiffness).
Step sizes are controlled by the embedded RKC error estimate with an absolute
tolerance proportional to the current size of the surface, which makes a run
covariant under parabolic rescaling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import _kernels
from .geometry import (
    GeometryError,
    HypersurfaceSnapshot,
    RadialGraph,
    SymmetrySpec,
    _terms,
    enclosed_volume,
    gaussian_density,
    msum,
    target_density,
)


class SolverError(RuntimeError):
    pass


class StepRejected(SolverError):
    def __init__(self, msg: str, t: float):
        super().__init__(f"{msg} at t={t:.6g}")
        self.t = t


class BracketError(SolverError):
    pass


@dataclass
class SolverOptions:
    rtol: float = 1e-8
    eps_ext: float = 1e-3          # stop once max rho < eps_ext * initial max rho ...
    round_tol: float = 1e-2        # ... and max rho / min rho - 1 < round_tol
    store_every: float = 0.05      # storage spacing in renormalized time (log of time-to-go)
    convex_tol: float = 1e-6
    max_steps: int = 5_000_000


@dataclass
class NormalizationRecord:
    """Dilation ``lam = exp(log_lam)`` and time shift of a normalized flow.

    The dilation of a long flow can exceed the floating point range, so the
    logarithm is the primary quantity.
    """

    log_lam: float
    tshift: float
    density_at_minus_mu2: float
    target_density: float
    mu: float = 1.0

    @property
    def lam(self) -> float:
        return math.exp(self.log_lam) if self.log_lam < 709.0 else math.inf

    def as_dict(self) -> dict:
        return {"lambda": self.lam, "log_lambda": self.log_lam, "tshift": self.tshift, "mu": self.mu,
                "density_at_minus_mu2": self.density_at_minus_mu2, "target_density": self.target_density}


def _lagrange4(us: np.ndarray, stack: np.ndarray, u: float) -> np.ndarray:
    if len(us) < 4:
        raise SolverError("cubic interpolation needs at least 4 snapshots")
    i = int(np.searchsorted(us, u, side="right")) - 1
    i0 = min(max(i - 1, 0), len(us) - 4)
    nodes = us[i0:i0 + 4]
    w = np.ones(4)
    for a in range(4):
        for b in range(4):
            if a != b:
                w[a] *= (u - nodes[b]) / (nodes[a] - nodes[b])
    return np.tensordot(w, stack[i0:i0 + 4], axes=1)


class FlowTrajectory:
    """Stored states of one flow.

    With a known extinction time the states are kept in renormalized form
    about the extinction point: state i sits at tau_i = -log(t_ext - t_i) and
    stores shape_i = exp(tau_i / 2) rho_i.  Shapes stay O(1) however close to
    extinction the run went, while rho_i and t_ext - t_i can leave the
    floating point range for long thin surfaces.  Interpolation is cubic in
    tau on the shapes.  Without an extinction time (synthetic or partial
    runs) physical times and radii are stored instead.

    Use :meth:`from_snapshots` or :meth:`renormalized` to build one.
    """

    def __init__(self, sym: SymmetrySpec, grid, data: np.ndarray, *, taus=None, times=None,
                 t_ext: float | None = None, norm: NormalizationRecord | None = None, meta: dict | None = None):
        data = np.array(data, dtype=float)
        if data.ndim != 1 + len(grid.shape) or data.shape[1:] != grid.shape or len(data) == 0:
            raise SolverError("state stack does not match the grid")
        if not np.all(np.isfinite(data)) or np.any(data <= 0):
            raise SolverError("stored radii must be positive and finite")
        self.sym, self.grid = sym, grid
        self.norm = norm
        self.meta = dict(meta or {})
        if taus is not None:
            if t_ext is None or not math.isfinite(t_ext):
                raise SolverError("renormalized storage needs a finite extinction time")
            taus = np.array(taus, dtype=float)
            if taus.shape != data.shape[:1] or not np.all(np.isfinite(taus)):
                raise SolverError("tau array does not match the states")
            if np.any(np.diff(taus) <= 0):
                raise SolverError("time to extinction must be strictly decreasing")
            self.taus, self._times = taus, None
        else:
            times = np.array(times, dtype=float)
            if times.shape != data.shape[:1]:
                raise SolverError("time array does not match the states")
            if np.any(np.diff(times) <= 0):
                raise SolverError("snapshot times must be strictly increasing")
            if t_ext is not None:
                raise SolverError("use from_snapshots to attach an extinction time")
            self.taus, self._times = None, times
        self.t_ext = None if t_ext is None else float(t_ext)
        self._data = data
        self._snaps = None

    def __eq__(self, other) -> bool:
        """Field-by-field equality, bit-exact on the stored floats."""
        if not isinstance(other, FlowTrajectory):
            return NotImplemented
        def same(a, b):
            return (a is None and b is None) or (a is not None and b is not None and np.array_equal(a, b))
        return (self.sym == other.sym and self.grid.shape == other.grid.shape
                and tuple(self.grid.stretch) == tuple(other.grid.stretch)
                and self.t_ext == other.t_ext and same(self.taus, other.taus)
                and same(self._times, other._times) and np.array_equal(self._data, other._data)
                and self.norm == other.norm and self.meta == other.meta)

    __hash__ = None

    # -- construction
    @classmethod
    def from_snapshots(cls, snapshots, t_ext: float | None = None, norm=None, meta=None) -> "FlowTrajectory":
        """Trajectory from physical snapshots, renormalized about ``t_ext`` if given."""
        if not snapshots:
            raise SolverError("trajectory needs at least one snapshot")
        g0 = snapshots[0].graph
        for s in snapshots:
            if s.graph.grid.shape != g0.grid.shape or s.graph.sym != g0.sym:
                raise SolverError("snapshots must share symmetry and grid")
        ts = np.array([s.t for s in snapshots], dtype=float)
        rho = np.stack([s.graph.rho for s in snapshots])
        if t_ext is None:
            return cls(g0.sym, g0.grid, rho, times=ts, norm=norm, meta=meta)
        rem = t_ext - ts
        if np.any(rem <= 0):
            raise SolverError("extinction time must follow every snapshot")
        shapes = rho / np.sqrt(rem).reshape((-1,) + (1,) * (rho.ndim - 1))
        return cls(g0.sym, g0.grid, shapes, taus=-np.log(rem), t_ext=t_ext, norm=norm, meta=meta)

    @classmethod
    def renormalized(cls, sym, grid, taus, shapes, t_ext: float, norm=None, meta=None) -> "FlowTrajectory":
        return cls(sym, grid, shapes, taus=taus, t_ext=t_ext, norm=norm, meta=meta)

    def with_extinction(self, t_ext: float) -> "FlowTrajectory":
        return FlowTrajectory.from_snapshots(self.snapshots, t_ext=t_ext, norm=self.norm, meta=self.meta)

    # -- views
    def __len__(self) -> int:
        return len(self._data)

    @property
    def is_renormalized(self) -> bool:
        return self.taus is not None

    @property
    def shapes(self) -> np.ndarray:
        if self.taus is None:
            raise SolverError("trajectory has no extinction time")
        return self._data

    @property
    def remaining(self) -> np.ndarray | None:
        """t_ext - t per state; underflows to zero for states very close to extinction."""
        return None if self.taus is None else np.exp(-self.taus)

    @property
    def times(self) -> np.ndarray:
        return self._times if self.taus is None else self.t_ext - np.exp(-self.taus)

    def _scales(self) -> np.ndarray:
        return np.exp(-0.5 * self.taus).reshape((-1,) + (1,) * len(self.grid.shape))

    @property
    def rho(self) -> np.ndarray:
        return self._data if self.taus is None else self._data * self._scales()

    @property
    def snapshots(self) -> list:
        """Physical snapshots; raises if a state is below the floating point range."""
        if self._snaps is None:
            rho, ts = self.rho, self.times
            if self.taus is not None and (np.any(rho <= 1e-290) or np.any(self.remaining <= 0)):
                raise SolverError("states too close to extinction for physical snapshots; use shapes")
            self._snaps = [HypersurfaceSnapshot(float(t), RadialGraph(self.sym, self.grid, r)) for t, r in zip(ts, rho)]
        return self._snaps

    def time_window(self) -> tuple:
        """(first, last) stored time in the trajectory's own clock."""
        ts = self.times
        return float(ts[0]), float(ts[-1])

    def tau_window(self) -> tuple:
        """(first, last) stored -log(t_ext - t)."""
        if self.taus is None:
            raise SolverError("trajectory has no extinction time")
        return float(self.taus[0]), float(self.taus[-1])

    def log_volumes(self) -> np.ndarray:
        """log of the enclosed volume per state."""
        out = np.empty(len(self))
        for i, r in enumerate(self._data):
            v = math.log(enclosed_volume(RadialGraph(self.sym, self.grid, r)))
            out[i] = v if self.taus is None else v - 0.5 * (self.sym.n + 1) * self.taus[i]
        return out

    # -- interpolation
    def shape_at(self, tau: float) -> np.ndarray:
        """Renormalized state exp(tau/2) rho at tau = -log(t_ext - t)."""
        if self.taus is None:
            raise SolverError("trajectory has no extinction time")
        taus = self.taus
        tol = 1e-12 * max(1.0, abs(taus[0]), abs(taus[-1]))
        if not taus[0] - tol <= tau <= taus[-1] + tol:
            raise SolverError(f"tau={tau:.10g} outside stored range [{taus[0]:.10g}, {taus[-1]:.10g}]")
        return _lagrange4(taus, self._data, tau)

    def rho_at_remaining(self, s: float) -> np.ndarray:
        """Interpolated radii at time-to-extinction ``s``."""
        if self.taus is None:
            raise SolverError("trajectory has no extinction time")
        if not s > 0:
            raise SolverError("time to extinction must be positive")
        return math.sqrt(s) * self.shape_at(-math.log(s))

    def rho_at(self, t: float) -> np.ndarray:
        """Interpolated radii at time ``t``."""
        if self.taus is not None:
            s = self.t_ext - t
            if not s > 0:
                raise SolverError(f"t={t:.10g} is not before extinction at {self.t_ext:.10g}")
            return self.rho_at_remaining(s)
        ts = self._times
        tol = 1e-12 * max(1.0, abs(ts[0]), abs(ts[-1]))
        if not ts[0] - tol <= t <= ts[-1] + tol:
            raise SolverError(f"t={t:.10g} outside stored range [{ts[0]:.10g}, {ts[-1]:.10g}]")
        return _lagrange4(ts, self._data, t)

    def snapshot_at(self, t: float) -> HypersurfaceSnapshot:
        return HypersurfaceSnapshot(float(t), RadialGraph(self.sym, self.grid, self.rho_at(t)))


# ----------------------------------------------------------------------------
# right-hand side and RKC2

def velocity(rho: np.ndarray, sym: SymmetrySpec, grid) -> tuple:
    """rho_t for normal velocity -H, plus the curvature terms it was built from."""
    if np.any(rho <= 0) or not np.all(np.isfinite(rho)):
        raise GeometryError("nonpositive radius")
    t = _terms(RadialGraph(sym, grid, rho))
    return -t.H * t.speed, t


class _Stepper:
    """Compiled right-hand side and RKC2 stage loop bound to one grid."""

    def __init__(self, sym: SymmetrySpec, grid):
        self.sym, self.grid = sym, grid
        self.n, self.k = sym.n, sym.k
        m1, self.m2 = grid.metric(0)
        self.ig = 1.0 / m1
        if sym.n_angles == 1:
            (self.h,) = grid.spacing
            (phi,) = grid.nodes
            self.c, self.s = np.cos(phi), np.sin(phi)
        else:
            self.ht, self.hp = grid.spacing
            theta, _ = grid.nodes
            self.st, self.ct = np.sin(theta), np.cos(theta)

    def f(self, y: np.ndarray) -> np.ndarray:
        out = np.empty_like(y)
        if self.sym.n_angles == 1:
            bad = _kernels.velocity_1d(y, self.n, self.k, self.h, self.c, self.s, self.ig, self.m2, out)
        else:
            bad = _kernels.velocity_2d(y, self.n, self.ht, self.hp, self.st, self.ct, self.ig, self.m2, out)
        if bad or not np.all(np.isfinite(out)):
            raise GeometryError("nonpositive radius")
        return out

    def rkc(self, y, fy, dt, s):
        mu, nu, mut, gt = rkc_coefficients(s)
        if self.sym.n_angles == 1:
            y1, ok = _kernels._rkc_loop_1d(y, fy, dt, mu, nu, mut, gt, self.n, self.k, self.h,
                                           self.c, self.s, self.ig, self.m2)
        else:
            y1, ok = _kernels._rkc_loop_2d(y, fy, dt, mu, nu, mut, gt, self.n, self.ht, self.hp,
                                           self.st, self.ct, self.ig, self.m2)
        if not ok or np.any(y1 <= 0) or not np.all(np.isfinite(y1)):
            raise GeometryError("nonpositive radius")
        return y1


def spectral_radius(f: Callable, y: np.ndarray, fy: np.ndarray, v0: np.ndarray | None = None,
                    iters: int = 30) -> tuple:
    """Nonlinear power iteration for the dominant Jacobian eigenvalue modulus.

    The stepper uses the cheaper analytic bound from the curvature terms; this
    estimate is kept to check that bound.
    """
    rng = np.random.default_rng(12345)
    v = v0 if v0 is not None else rng.standard_normal(y.shape)
    ynorm = np.linalg.norm(y)
    delta = 1e-7 * max(ynorm, 1e-12)
    v = delta * v / np.linalg.norm(v)
    sig = 0.0
    for _ in range(iters):
        fv = f(y + v)
        dv = fv - fy
        nd = np.linalg.norm(dv)
        if nd == 0.0:
            break
        sig_new = nd / delta
        v = delta * dv / nd
        if sig > 0 and abs(sig_new - sig) <= 0.01 * sig_new:
            sig = sig_new
            break
        sig = sig_new
    return 1.2 * sig, v / delta


_EPS = 2.0 / 13.0


def rkc_coefficients(s: int):
    """Stage coefficients (mu, nu, mu_tilde, gamma_tilde) of damped RKC2 with s stages."""
    w0 = 1.0 + _EPS / (s * s)
    T = np.zeros(s + 1); dT = np.zeros(s + 1); d2T = np.zeros(s + 1)
    T[0], T[1], dT[1] = 1.0, w0, 1.0
    for j in range(2, s + 1):
        T[j] = 2 * w0 * T[j - 1] - T[j - 2]
        dT[j] = 2 * T[j - 1] + 2 * w0 * dT[j - 1] - dT[j - 2]
        d2T[j] = 4 * dT[j - 1] + 2 * w0 * d2T[j - 1] - d2T[j - 2]
    w1 = dT[s] / d2T[s]
    b = np.zeros(s + 1)
    b[2:] = d2T[2:] / dT[2:] ** 2
    b[0] = b[1] = b[2]
    a = 1.0 - b * T
    mu = np.zeros(s + 1); nu = np.zeros(s + 1); mut = np.zeros(s + 1); gt = np.zeros(s + 1)
    mut[1] = b[1] * w1
    for j in range(2, s + 1):
        mu[j] = 2 * b[j] * w0 / b[j - 1]
        nu[j] = -b[j] / b[j - 2]
        mut[j] = 2 * b[j] * w1 / b[j - 1]
        gt[j] = -a[j - 1] * mut[j]
    return mu, nu, mut, gt


def stages_for(dt: float, sprad: float) -> int:
    return max(2, 1 + int(math.sqrt(1.54 * dt * sprad + 1.0)))


def rkc_step(f: Callable, y: np.ndarray, fy: np.ndarray, dt: float, s: int) -> np.ndarray:
    mu, nu, mut, gt = rkc_coefficients(s)
    y_prev2 = y
    y_prev = y + mut[1] * dt * fy
    for j in range(2, s + 1):
        y_new = (1.0 - mu[j] - nu[j]) * y + mu[j] * y_prev + nu[j] * y_prev2 \
            + mut[j] * dt * f(y_prev) + gt[j] * dt * fy
        y_prev2, y_prev = y_prev, y_new
    return y_prev


def dt_max(snap: HypersurfaceSnapshot) -> float:
    """Largest step accepted by :func:`step`: a tenth of the lifetime of the
    round sphere with the same maximal mean curvature."""
    n = snap.sym.n
    hmax = float(np.max(np.abs(_terms(snap.graph).H)))
    return 0.1 * (n / hmax) ** 2 / (2.0 * n)


def _check_state(rho, terms, t, convex_tol):
    if np.any(rho <= 0) or not np.all(np.isfinite(rho)):
        raise StepRejected("nonpositive radius", t)
    hmax = np.max(np.abs(terms.H))
    if np.min(terms.principal) < -convex_tol * hmax:
        raise StepRejected("convexity lost", t)


def step(snap: HypersurfaceSnapshot, dt: float, convex_tol: float = 1e-6) -> HypersurfaceSnapshot:
    """Advance one RKC2 step of size ``dt``.

    Raises
    ------
    StepRejected
        If a stage leaves the positive cone or the result is no longer convex.
    """
    if not 0 < dt <= dt_max(snap) * (1 + 1e-12):
        raise ValueError(f"dt must lie in (0, dt_max={dt_max(snap):.3g}]")
    sym, grid = snap.sym, snap.graph.grid
    st = _Stepper(sym, grid)
    y = np.array(snap.graph.rho)
    try:
        fy = st.f(y)
        y1 = st.rkc(y, fy, dt, stages_for(dt, _terms(snap.graph).sprad))
        _, terms = velocity(y1, sym, grid)
    except GeometryError:
        raise StepRejected("nonpositive radius", snap.t + dt) from None
    _check_state(y1, terms, snap.t + dt, convex_tol)
    return HypersurfaceSnapshot(snap.t + dt, RadialGraph(sym, grid, y1))


_RESCALE_BELOW = 1e-6


def evolve_to_extinction(snap0: HypersurfaceSnapshot, store_every: float | None = None,
                         options: SolverOptions | None = None, progress: Callable | None = None) -> FlowTrajectory:
    """Run the flow until the surface is tiny and round, then extrapolate t_ext.

    The run stops once max rho < eps_ext * (initial max rho) and the surface is
    round to ``round_tol``, so that the c sqrt(t_ext - t) fit of
    :func:`estimate_extinction` applies.  Long thin surfaces round off only
    after many decades of shrinking, so the state is rescaled to unit size
    whenever it gets small and the scale is tracked as a logarithm; the flow
    is scale covariant, so this only changes units.

    ``store_every`` is the storage spacing in renormalized time: a state is
    kept whenever the elapsed time exceeds store_every * min(rho)^2 / (2(n-k)),
    the time left for a cylinder of that neck radius.  Step sizes are summed
    backwards in log form afterwards, so every stored tau keeps full relative
    precision.
    """
    opt = options or SolverOptions()
    if store_every is not None:
        if not store_every > 0:
            raise ValueError("store_every must be positive")
        opt = replace(opt, store_every=store_every)
    sym, grid = snap0.sym, snap0.graph.grid
    n, k = sym.n, sym.k
    stepper = _Stepper(sym, grid)
    f = stepper.f
    y = np.array(snap0.graph.rho)
    ls = 0.0                                # physical radii are exp(ls) * y
    log_stop = math.log(opt.eps_ext * float(np.max(y)))
    fy = f(y)
    terms = _terms(snap0.graph)
    _check_state(y, terms, snap0.t, opt.convex_tol)
    sprad = terms.sprad
    hmax = float(np.max(np.abs(terms.H)))
    dt = 1e-3 * (n / hmax) ** 2
    log_dts: list = []
    stored_idx, stored, stored_ls = [0], [y.copy()], [0.0]
    elapsed = 0.0
    t_disp = float(snap0.t)
    nrej = nevals = nrescale = 0

    def done(y):
        ymax, ymin = float(np.max(y)), float(np.min(y))
        return ls + math.log(ymax) < log_stop and ymax / ymin - 1.0 < opt.round_tol

    while not done(y):
        if len(log_dts) + nrej >= opt.max_steps:
            raise SolverError(f"no extinction after {opt.max_steps} steps (t={t_disp:.6g})")
        cadence = opt.store_every * float(np.min(y)) ** 2 / (2.0 * (n - k))
        dt = min(dt, cadence)
        s = stages_for(dt, sprad)
        try:
            y1 = stepper.rkc(y, fy, dt, s)
            f1 = f(y1)
        except GeometryError:
            nrej += 1
            dt *= 0.25
            continue
        nevals += s + 1
        scale = opt.rtol * float(np.max(y))
        est = 0.8 * (y - y1) + 0.4 * dt * (fy + f1)
        err = math.sqrt(msum((est / (scale + opt.rtol * np.maximum(np.abs(y), np.abs(y1)))) ** 2) / y.size)
        if err > 1.0:
            nrej += 1
            dt *= max(0.1, 0.8 / err ** (1 / 3))
            continue
        terms1 = _terms(RadialGraph(sym, grid, y1))
        _check_state(y1, terms1, t_disp + dt, opt.convex_tol)
        log_dts.append(2.0 * ls + math.log(dt))
        elapsed += dt
        t_disp += math.exp(2.0 * ls) * dt
        y, fy = y1, f1
        sprad = terms1.sprad
        dt *= min(4.0, max(0.2, 0.8 / max(err, 1e-10) ** (1 / 3)))
        ymax = float(np.max(y))
        if ymax < _RESCALE_BELOW:
            # F(y / c) = c F(y): rescale state, velocity, step and stiffness together
            y = y / ymax
            fy = fy * ymax
            dt /= ymax * ymax
            elapsed /= ymax * ymax
            sprad *= ymax * ymax
            ls += math.log(ymax)
            nrescale += 1
        if elapsed >= cadence * (1 - 1e-9) or done(y):
            stored_idx.append(len(log_dts))
            stored.append(y.copy())
            stored_ls.append(ls)
            elapsed = 0.0
        if progress is not None:
            progress(t_disp, y, ls)
    # log of the time from each step to the final state, summed from the small end
    lf = np.concatenate([np.logaddexp.accumulate(np.asarray(log_dts)[::-1])[::-1], [-np.inf]])
    log_to_final = lf[np.asarray(stored_idx)]
    stored_ls = np.asarray(stored_ls)
    # tail fit on the terminal states in the units of the last one
    m = 6
    if len(stored) < m:
        raise SolverError(f"need at least {m} terminal snapshots, have {len(stored)}")
    ref = stored_ls[-1]
    x = np.exp(log_to_final[-m:] - 2.0 * ref)
    r = np.array([np.max(v) for v in stored[-m:]]) * np.exp(stored_ls[-m:] - ref)
    tail = _fit_tail(x, r, m)
    if not tail > 0:
        raise SolverError("fitted extinction time coincides with the last stored state")
    log_rem = np.logaddexp(log_to_final, math.log(tail) + 2.0 * ref)
    taus = -log_rem
    shapes = np.stack([v * math.exp(l + 0.5 * t) for v, l, t in zip(stored, stored_ls, taus)])
    t_ext = float(snap0.t) + math.exp(log_rem[0])
    meta = {"steps": len(log_dts), "rejected": nrej, "rhs_evals": nevals, "rescalings": nrescale,
            "rtol": opt.rtol, "eps_ext": opt.eps_ext, "store_every": opt.store_every}
    return FlowTrajectory.renormalized(sym, grid, taus, shapes, t_ext, meta=meta)


def _fit_tail(to_final: np.ndarray, rmax: np.ndarray, m: int = 6) -> float:
    """Time from the last snapshot to extinction from max rho^2 = c^2 (t_ext - t)."""
    if m < 4 or len(rmax) < m:
        raise SolverError(f"need at least max(4, m) terminal snapshots, have {len(rmax)}")
    x = to_final[-m:]
    r2 = rmax[-m:] ** 2
    xs, rs = float(np.max(x)), float(np.max(r2))
    if not xs > 0:
        raise SolverError("terminal snapshots do not span any time")
    # r2 = c^2 (tail + x) is linear in x; fit in scaled units to avoid underflow
    slope, icpt = np.polyfit(x / xs, r2 / rs, 1)
    if slope <= 0:
        raise SolverError("max radius is not shrinking on the final snapshots")
    tail = icpt / slope * xs
    if tail < 0:
        raise SolverError("fitted extinction time precedes the last stored snapshot")
    return float(tail)


def estimate_extinction(traj: FlowTrajectory, m: int = 6) -> float:
    """Least-squares fit of max rho(t) = c sqrt(t_ext - t) on the last ``m`` snapshots.

    For a renormalized trajectory the fit is redone in units of the last
    remaining time, which returns the stored t_ext up to the fit's accuracy.
    """
    if traj.is_renormalized:
        taus = traj.taus[-m:]
        x = np.exp(taus[-1] - taus)                      # remaining / last remaining
        rmax = np.max(traj.shapes[-m:].reshape(len(taus), -1), axis=1) * np.sqrt(x)
        tail = _fit_tail(x - 1.0, rmax, min(m, len(taus)))
        return float(traj.t_ext + (tail - 1.0) * math.exp(-traj.taus[-1]))
    rmax = np.max(traj.rho.reshape(len(traj), -1), axis=1)
    ts = traj.times
    return float(ts[-1] + _fit_tail(ts[-1] - ts, rmax, m))


# ----------------------------------------------------------------------------
# normalization

def density_at_tau(traj: FlowTrajectory, tau: float) -> float:
    """Gaussian density of the renormalized state at ``tau`` = -log(t_ext - t).

    This is the density of the flow at time t centred at the extinction point
    and taken at the parabolic scale sqrt(t_ext - t).
    """
    return gaussian_density(RadialGraph(traj.sym, traj.grid, traj.shape_at(tau)))


def density_profile(traj: FlowTrajectory, lam: float, mu: float = 1.0) -> float:
    """Density at normalized time -mu^{-2}, at scale 1/mu, for dilation ``lam``."""
    return density_at_tau(traj, 2.0 * math.log(lam * mu))


def log_lambda_range(traj: FlowTrajectory, mu: float = 1.0) -> tuple:
    """log of the dilation factors whose normalization time is stored."""
    t0, t1 = traj.tau_window()
    return 0.5 * t0 - math.log(mu), 0.5 * t1 - math.log(mu)


def normalize_flow(traj: FlowTrajectory, mu: float = 1.0, tol_density: float = 1e-6,
                   max_iter: int = 200) -> FlowTrajectory:
    """Dilate and shift so the flow dies at t=0 with the target density at t=-mu^{-2}.

    The normalized flow is lam * M_{lam^{-2} t + tshift} with tshift = t_ext.
    The density at time -mu^{-2} is taken at the matching parabolic scale
    1/mu, so the flows for different mu differ by a parabolic dilation; for
    mu = 1 this is the plain (4 pi)^{-n/2} exp(-|x|^2/4) integral.
    In renormalized storage this is a pure shift tau -> tau - 2 log(lam), so
    the search runs over tau: by Huisken monotonicity the density of the
    renormalized state decreases in tau, and bisection finds the tau where it
    equals the target.  The sign change at the ends of the stored range is
    checked first.

    Raises
    ------
    BracketError
        If the target density is not attained on the stored time range, for
        instance for a round sphere whose density does not depend on lam.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    if not traj.is_renormalized:
        traj = traj.with_extinction(estimate_extinction(traj))
    target = target_density(traj.sym)
    lo, hi = traj.tau_window()
    pad = 1e-12 * max(1.0, abs(lo), abs(hi))
    lo, hi = lo + pad, hi - pad
    if not lo < hi:
        raise BracketError("stored time range too short to normalize")
    f_lo = density_at_tau(traj, lo) - target
    f_hi = density_at_tau(traj, hi) - target
    if f_lo * f_hi > 0:
        raise BracketError(
            f"target density {target:.6f} not bracketed: density spans "
            f"[{f_hi + target:.6f}, {f_lo + target:.6f}] over the stored range")
    a, b, fa = lo, hi, f_lo
    for _ in range(max_iter):
        m = 0.5 * (a + b)
        fm = density_at_tau(traj, m) - target
        if fm == 0.0:
            a = b = m
            break
        if (fm > 0) == (fa > 0):
            a, fa = m, fm
        else:
            b = m
        if b - a < 1e-14 * max(1.0, abs(a)):
            break
    tau_star = 0.5 * (a + b)
    dens = density_at_tau(traj, tau_star)
    if abs(dens - target) > tol_density:
        raise BracketError(f"bisection stalled with density residual {dens - target:.3g}")
    log_lam = 0.5 * tau_star - math.log(mu)
    rec = NormalizationRecord(log_lam, traj.t_ext, dens, target, mu)
    return FlowTrajectory.renormalized(traj.sym, traj.grid, traj.taus - 2.0 * log_lam, traj.shapes,
                                       0.0, norm=rec, meta=traj.meta)


def huisken_density(traj: FlowTrajectory, i: int) -> float:
    """Gaussian density of state i centred at the extinction point."""
    return gaussian_density(RadialGraph(traj.sym, traj.grid, traj.shapes[i]))
