"""Cell-centred angular grids on [0, pi/2] and the cosine-series tools built on them.

Every profile quantity we store is even about both ends of the interval, so the
natural basis is cos(2 m xi).  Samples at cell centres map to coefficients with
a type-II DCT, which gives spectral interpolation and interpolatory quadrature.

Grids may be stretched by angle = xi - (s/2) sin(2 xi) with |s| < 1.  The map is
odd about both ends, so even functions of the angle stay even in xi, and it
concentrates nodes near 0 (s > 0) or near pi/2 (s < 0) by the factor 1 - |s|.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import fft

HALF_PI = 0.5 * np.pi


def cell_nodes(n: int) -> np.ndarray:
    h = HALF_PI / n
    return (np.arange(n) + 0.5) * h


def stretch_map(xi: np.ndarray, s: float) -> tuple:
    """(angle, d angle/d xi, d^2 angle/d xi^2) of the stretched grid map."""
    xi = np.asarray(xi, dtype=float)
    if s == 0:
        return xi.copy(), np.ones_like(xi), np.zeros_like(xi)
    return xi - 0.5 * s * np.sin(2.0 * xi), 1.0 - s * np.cos(2.0 * xi), 2.0 * s * np.sin(2.0 * xi)


def cos_coeffs(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Coefficients a_m with values = sum_m a_m cos(2 m phi) at the cell nodes."""
    n = values.shape[axis]
    a = fft.dct(values, type=2, axis=axis) / n
    idx = [slice(None)] * a.ndim
    idx[axis] = 0
    a[tuple(idx)] *= 0.5
    return a


def cos_matrix(phi: np.ndarray, n: int) -> np.ndarray:
    """Rows cos(2 m phi_i), m = 0..n-1."""
    return np.cos(2.0 * np.outer(np.asarray(phi, float).ravel(), np.arange(n)))


def eval_cos_series(a: np.ndarray, phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, float)
    return (cos_matrix(phi, a.shape[-1]) @ a).reshape(phi.shape)


@lru_cache(maxsize=64)
def _kernel_weights(n: int, p: int, q: int, s: float) -> np.ndarray:
    # exact moments of cos(2 m xi) against the pulled-back kernel, then mapped to samples
    x, w = np.polynomial.legendre.leggauss(2 * n + 64)
    xi = HALF_PI * (x + 1.0) / 2.0
    w = w * HALF_PI / 2.0
    ang, dang, _ = stretch_map(xi, s)
    kern = np.sin(ang) ** p * np.cos(ang) ** q * dang
    moments = cos_matrix(xi, n).T @ (w * kern)
    nodes = cell_nodes(n)
    c = 2.0 * cos_matrix(nodes, n).T / n
    c[0] *= 0.5
    out = c.T @ moments
    out.setflags(write=False)
    return out


def kernel_weights(n: int, p: int = 0, q: int = 0, s: float = 0.0) -> np.ndarray:
    """Weights w_j with sum_j w_j g(a_j) ~ int_0^{pi/2} g(a) sin^p(a) cos^q(a) da for even smooth g.

    The a_j are the nodes of the grid stretched by ``s``.
    """
    return _kernel_weights(int(n), int(p), int(q), float(s))


def pad_even(f: np.ndarray, width: int = 2) -> np.ndarray:
    """Ghost cells by reflection about both ends of every axis."""
    return np.pad(f, width, mode="symmetric")


def d1(fp: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Fourth-order centred first derivative of a 2-ghost padded array along ``axis``.

    Written as differences of mirrored pairs so a reflection of the grid flips
    the sign bit-exactly.
    """
    n = fp.shape[axis] - 4
    s = lambda o: _shift(fp, axis, o, n)
    return (8.0 * (s(1) - s(-1)) - (s(2) - s(-2))) / (12.0 * h)


def d2(fp: np.ndarray, h: float, axis: int) -> np.ndarray:
    n = fp.shape[axis] - 4
    s = lambda o: _shift(fp, axis, o, n)
    return (16.0 * (s(1) + s(-1)) - (s(2) + s(-2)) - 30.0 * s(0)) / (12.0 * h * h)


def _shift(fp, axis, o, n):
    idx = [slice(None)] * fp.ndim
    idx[axis] = slice(2 + o, 2 + o + n)
    return fp[tuple(idx)]


def strip(fp: np.ndarray, axis: int, width: int = 2) -> np.ndarray:
    idx = [slice(None)] * fp.ndim
    idx[axis] = slice(width, fp.shape[axis] - width)
    return fp[tuple(idx)]
