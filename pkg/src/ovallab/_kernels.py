"""Compiled right-hand sides and RKC2 stage loops for the radial-graph flow.

These mirror :mod:`ovallab.geometry` node by node; the tests check the two
agree.  Index reflection implements the even ghost cells.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _refl(i, n):
    if i < 0:
        return -i - 1
    if i >= n:
        return 2 * n - 1 - i
    return i


@njit(cache=True)
def velocity_1d(rho, n, k, h, c, s, ig, m2, out):
    N = rho.shape[0]
    bad = False
    for j in range(N):
        r = rho[j]
        if not r > 0.0:
            bad = True
        fm2 = rho[_refl(j - 2, N)]
        fm1 = rho[_refl(j - 1, N)]
        fp1 = rho[_refl(j + 1, N)]
        fp2 = rho[_refl(j + 2, N)]
        # xi-derivatives, then the chain rule of the stretched grid (ig = 1/a')
        r1 = (8.0 * (fp1 - fm1) - (fp2 - fm2)) / (12.0 * h) * ig[j]
        r2 = ((16.0 * (fp1 + fm1) - (fp2 + fm2) - 30.0 * r) / (12.0 * h * h) - m2[j] * r1) * ig[j] * ig[j]
        w2 = r * r + r1 * r1
        w = math.sqrt(w2)
        kappa0 = (r * r + 2.0 * r1 * r1 - r * r2) / (w2 * w)
        nu1 = (r * c[j] + r1 * s[j]) / w
        nu2 = (r * s[j] - r1 * c[j]) / w
        H = kappa0 + (k - 1) * nu1 / (r * c[j]) + (n - k) * nu2 / (r * s[j])
        out[j] = -H * w / r
    return bad


@njit(cache=True)
def velocity_2d(rho, n, ht, hp, st, ct, ig, m2, out):
    NT, NP = rho.shape
    bad = False
    ht12 = 12.0 * ht
    hp12 = 12.0 * hp
    for i in range(NT):
        im2 = _refl(i - 2, NT)
        im1 = _refl(i - 1, NT)
        ip1 = _refl(i + 1, NT)
        ip2 = _refl(i + 2, NT)
        sn = st[i]
        cs = ct[i]
        gi = ig[i]
        mi = m2[i]
        for j in range(NP):
            r = rho[i, j]
            if not r > 0.0:
                bad = True
            jm2 = _refl(j - 2, NP)
            jm1 = _refl(j - 1, NP)
            jp1 = _refl(j + 1, NP)
            jp2 = _refl(j + 2, NP)
            rt = (8.0 * (rho[ip1, j] - rho[im1, j]) - (rho[ip2, j] - rho[im2, j])) / ht12 * gi
            rtt = ((16.0 * (rho[ip1, j] + rho[im1, j]) - (rho[ip2, j] + rho[im2, j]) - 30.0 * r) / (ht12 * ht)
                   - mi * rt) * gi * gi
            rf = (8.0 * (rho[i, jp1] - rho[i, jm1]) - (rho[i, jp2] - rho[i, jm2])) / hp12
            rff = (16.0 * (rho[i, jp1] + rho[i, jm1]) - (rho[i, jp2] + rho[i, jm2]) - 30.0 * r) / (hp12 * hp)
            fp1 = (8.0 * (rho[ip1, jp1] - rho[ip1, jm1]) - (rho[ip1, jp2] - rho[ip1, jm2])) / hp12
            fm1 = (8.0 * (rho[im1, jp1] - rho[im1, jm1]) - (rho[im1, jp2] - rho[im1, jm2])) / hp12
            fp2 = (8.0 * (rho[ip2, jp1] - rho[ip2, jm1]) - (rho[ip2, jp2] - rho[ip2, jm2])) / hp12
            fm2 = (8.0 * (rho[im2, jp1] - rho[im2, jm1]) - (rho[im2, jp2] - rho[im2, jm2])) / hp12
            rtf = (8.0 * (fp1 - fm1) - (fp2 - fm2)) / ht12 * gi
            q = math.sqrt(sn * sn * (r * r + rt * rt) + rf * rf)
            E = r * r + rt * rt
            F = rt * rf
            G = rf * rf + r * r * sn * sn
            L = -((rtt - r) * r * sn - 2.0 * rt * rt * sn) / q
            M = -(r * rtf * sn - 2.0 * rt * rf * sn - r * rf * cs) / q
            Nn = -((rff - r * sn * sn) * r * sn + rt * r * sn * sn * cs - 2.0 * rf * rf * sn) / q
            hs = (E * Nn - 2.0 * F * M + G * L) / (E * G - F * F)
            ko = sn * (r * cs + rt * sn) / (q * r * cs)
            H = hs + (n - 2) * ko
            qs = math.sqrt(r * r + rt * rt + (rf / sn) ** 2)
            out[i, j] = -H * qs / r
    return bad


@njit(cache=True)
def _rkc_loop_1d(y, fy, dt, mu, nu, mut, gt, n, k, h, c, s, ig, m2):
    ns = mu.shape[0] - 1
    yp2 = y.copy()
    yp = y + mut[1] * dt * fy
    f = np.empty_like(y)
    ynew = np.empty_like(y)
    for j in range(2, ns + 1):
        if velocity_1d(yp, n, k, h, c, s, ig, m2, f):
            return yp, False
        a = 1.0 - mu[j] - nu[j]
        for i in range(y.shape[0]):
            ynew[i] = a * y[i] + mu[j] * yp[i] + nu[j] * yp2[i] + mut[j] * dt * f[i] + gt[j] * dt * fy[i]
        yp2, yp, ynew = yp, ynew, yp2
    return yp, True


@njit(cache=True)
def _rkc_loop_2d(y, fy, dt, mu, nu, mut, gt, n, ht, hp, st, ct, ig, m2):
    ns = mu.shape[0] - 1
    yp2 = y.copy()
    yp = y + mut[1] * dt * fy
    f = np.empty_like(y)
    ynew = np.empty_like(y)
    for j in range(2, ns + 1):
        if velocity_2d(yp, n, ht, hp, st, ct, ig, m2, f):
            return yp, False
        a = 1.0 - mu[j] - nu[j]
        for p in range(y.shape[0]):
            for q in range(y.shape[1]):
                ynew[p, q] = (a * y[p, q] + mu[j] * yp[p, q] + nu[j] * yp2[p, q]
                              + mut[j] * dt * f[p, q] + gt[j] * dt * fy[p, q])
        yp2, yp, ynew = yp, ynew, yp2
    return yp, True
