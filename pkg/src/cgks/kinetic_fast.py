"""Numba kernel for the per-face interface evolution.

Mirrors kinetic.interface_evolution term for term; the equivalence is pinned
by tests/test_kinetic_fast.py.  Used automatically when numba imports.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange


@njit(cache=True)
def _moment_table(rho, U, V, lam, K, mu, mv, mxi, mu_pos, mu_neg):
    sq = math.sqrt(lam)
    gauss = 0.5 * math.exp(-lam * U * U) / math.sqrt(math.pi * lam)
    mu[0] = 1.0
    mu[1] = U
    mu_pos[0] = 0.5 * math.erfc(-sq * U)
    mu_pos[1] = U * mu_pos[0] + gauss
    mu_neg[0] = 0.5 * math.erfc(sq * U)
    mu_neg[1] = U * mu_neg[0] - gauss
    mv[0] = 1.0
    mv[1] = V
    for a in range(1, 6):
        mu[a + 1] = U * mu[a] + a / (2.0 * lam) * mu[a - 1]
        mu_pos[a + 1] = U * mu_pos[a] + a / (2.0 * lam) * mu_pos[a - 1]
        mu_neg[a + 1] = U * mu_neg[a] + a / (2.0 * lam) * mu_neg[a - 1]
        mv[a + 1] = V * mv[a] + a / (2.0 * lam) * mv[a - 1]
    mxi[0] = 1.0
    for c in range(3):
        mxi[c + 1] = mxi[c] * (K + 2.0 * c) / (2.0 * lam)


@njit(cache=True)
def _psi_mom(mu, mv, mxi, a, b, x, out):
    base = mv[b] * mxi[x]
    out[0] = mu[a] * base
    out[1] = mu[a + 1] * base
    out[2] = mu[a] * mv[b + 1] * mxi[x]
    out[3] = 0.5 * (
        mu[a + 2] * base + mu[a] * mv[b + 2] * mxi[x] + mu[a] * mv[b] * mxi[x + 1]
    )


@njit(cache=True)
def _slope_psi_mom(mu, mv, mxi, c, a, b, out):
    t0 = np.empty(4)
    t1 = np.empty(4)
    t2 = np.empty(4)
    t3 = np.empty(4)
    t4 = np.empty(4)
    _psi_mom(mu, mv, mxi, a, b, 0, t0)
    _psi_mom(mu, mv, mxi, a + 1, b, 0, t1)
    _psi_mom(mu, mv, mxi, a, b + 1, 0, t2)
    _psi_mom(mu, mv, mxi, a + 2, b, 0, t3)
    _psi_mom(mu, mv, mxi, a, b + 2, 0, t4)
    t5 = np.empty(4)
    _psi_mom(mu, mv, mxi, a, b, 1, t5)
    for i in range(4):
        out[i] = (
            c[0] * t0[i]
            + c[1] * t1[i]
            + c[2] * t2[i]
            + 0.5 * c[3] * (t3[i] + t4[i] + t5[i])
        )


@njit(cache=True)
def _solve4(M, b, out):
    """4x4 Gaussian elimination with partial pivoting."""
    A = np.empty((4, 5))
    for i in range(4):
        for j in range(4):
            A[i, j] = M[i, j]
        A[i, 4] = b[i]
    for col in range(4):
        p = col
        best = abs(A[col, col])
        for r in range(col + 1, 4):
            if abs(A[r, col]) > best:
                best = abs(A[r, col])
                p = r
        if p != col:
            for j in range(5):
                tmp = A[col, j]
                A[col, j] = A[p, j]
                A[p, j] = tmp
        piv = A[col, col]
        for r in range(col + 1, 4):
            f = A[r, col] / piv
            for j in range(col, 5):
                A[r, j] -= f * A[col, j]
    for i in range(3, -1, -1):
        s = A[i, 4]
        for j in range(i + 1, 4):
            s -= A[i, j] * out[j]
        out[i] = s / A[i, i]


@njit(cache=True)
def _micro_slope(mu, mv, mxi, rho, b, out):
    M = np.empty((4, 4))
    col = np.empty(4)
    _psi_mom(mu, mv, mxi, 0, 0, 0, col)
    for i in range(4):
        M[i, 0] = col[i]
    _psi_mom(mu, mv, mxi, 1, 0, 0, col)
    for i in range(4):
        M[i, 1] = col[i]
    _psi_mom(mu, mv, mxi, 0, 1, 0, col)
    for i in range(4):
        M[i, 2] = col[i]
    c1 = np.empty(4)
    c2 = np.empty(4)
    c3 = np.empty(4)
    _psi_mom(mu, mv, mxi, 2, 0, 0, c1)
    _psi_mom(mu, mv, mxi, 0, 2, 0, c2)
    _psi_mom(mu, mv, mxi, 0, 0, 1, c3)
    for i in range(4):
        M[i, 3] = 0.5 * (c1[i] + c2[i] + c3[i])
    rhs = np.empty(4)
    for i in range(4):
        rhs[i] = b[i] / rho
    _solve4(M, rhs, out)


@njit(cache=True)
def _time_slope(mu, mv, mxi, rho, ax, ay, out):
    bx = np.empty(4)
    by = np.empty(4)
    _slope_psi_mom(mu, mv, mxi, ax, 1, 0, bx)
    _slope_psi_mom(mu, mv, mxi, ay, 0, 1, by)
    b = np.empty(4)
    for i in range(4):
        b[i] = -(bx[i] + by[i]) * rho
    _micro_slope(mu, mv, mxi, rho, b, out)


@njit(cache=True)
def _params(W, Kgas, gamma):
    rho = W[0]
    U = W[1] / rho
    V = W[2] / rho
    eint = W[3] - 0.5 * rho * (U * U + V * V)
    lam = (Kgas + 2.0) * rho / (4.0 * eint)
    return rho, U, V, lam


@njit(cache=True, parallel=True)
def _evolve_kernel(WL, bnL, btL, WR, bnR, btR, tau, dt, gamma, upwind_blend,
                   F, Ft, Wq, Wtq):
    n = WL.shape[0]
    K = (4.0 - 2.0 * gamma) / (gamma - 1.0)
    for f in prange(n):
        mul = np.empty(7); mvl = np.empty(7); mxl = np.empty(4)
        mupl = np.empty(7); munl = np.empty(7)
        mur = np.empty(7); mvr = np.empty(7); mxr = np.empty(4)
        mupr = np.empty(7); munr = np.empty(7)
        mu0 = np.empty(7); mv0 = np.empty(7); mx0 = np.empty(4)
        mup0 = np.empty(7); mun0 = np.empty(7)

        rl, Ul, Vl, laml = _params(WL[f], K, gamma)
        rr, Ur, Vr, lamr = _params(WR[f], K, gamma)
        _moment_table(rl, Ul, Vl, laml, K, mul, mvl, mxl, mupl, munl)
        _moment_table(rr, Ur, Vr, lamr, K, mur, mvr, mxr, mupr, munr)

        a1l = np.empty(4); a2l = np.empty(4); Al = np.empty(4)
        _micro_slope(mul, mvl, mxl, rl, bnL[f], a1l)
        _micro_slope(mul, mvl, mxl, rl, btL[f], a2l)
        _time_slope(mul, mvl, mxl, rl, a1l, a2l, Al)
        a1r = np.empty(4); a2r = np.empty(4); Ar = np.empty(4)
        _micro_slope(mur, mvr, mxr, rr, bnR[f], a1r)
        _micro_slope(mur, mvr, mxr, rr, btR[f], a2r)
        _time_slope(mur, mvr, mxr, rr, a1r, a2r, Ar)

        # colliding equilibrium state from the half moments
        W0 = np.empty(4)
        tposl = np.empty(4); tnegr = np.empty(4)
        _psi_mom(mupl, mvl, mxl, 0, 0, 0, tposl)
        _psi_mom(munr, mvr, mxr, 0, 0, 0, tnegr)
        for i in range(4):
            W0[i] = rl * tposl[i] + rr * tnegr[i]
        r0, U0, V0, lam0 = _params(W0, K, gamma)
        _moment_table(r0, U0, V0, lam0, K, mu0, mv0, mx0, mup0, mun0)

        bx = np.empty(4); by = np.empty(4)
        if upwind_blend:
            hl = rl * mupl[0] / r0
            hr = rr * munr[0] / r0
        else:
            hl = 0.5
            hr = 0.5
        for i in range(4):
            bx[i] = hl * bnL[f, i] + hr * bnR[f, i]
            by[i] = hl * btL[f, i] + hr * btR[f, i]
        ax = np.empty(4); ay = np.empty(4); A0 = np.empty(4)
        _micro_slope(mu0, mv0, mx0, r0, bx, ax)
        _micro_slope(mu0, mv0, mx0, r0, by, ay)
        _time_slope(mu0, mv0, mx0, r0, ax, ay, A0)

        # six moment blocks, flux (a=1) and state (a=0)
        m = np.empty((2, 6, 4))
        t1 = np.empty(4); t2 = np.empty(4)
        for k in range(2):
            a = 1 - k  # k=0: flux, k=1: state
            _psi_mom(mu0, mv0, mx0, a, 0, 0, t1)
            for i in range(4):
                m[k, 0, i] = r0 * t1[i]
            _slope_psi_mom(mu0, mv0, mx0, ax, a + 1, 0, t1)
            _slope_psi_mom(mu0, mv0, mx0, ay, a, 1, t2)
            for i in range(4):
                m[k, 1, i] = r0 * (t1[i] + t2[i])
            _slope_psi_mom(mu0, mv0, mx0, A0, a, 0, t1)
            for i in range(4):
                m[k, 2, i] = r0 * t1[i]
            _psi_mom(mupl, mvl, mxl, a, 0, 0, t1)
            _psi_mom(munr, mvr, mxr, a, 0, 0, t2)
            for i in range(4):
                m[k, 3, i] = rl * t1[i] + rr * t2[i]
            _slope_psi_mom(mupl, mvl, mxl, a1l, a + 1, 0, t1)
            _slope_psi_mom(mupl, mvl, mxl, a2l, a, 1, t2)
            for i in range(4):
                m[k, 4, i] = rl * (t1[i] + t2[i])
            _slope_psi_mom(munr, mvr, mxr, a1r, a + 1, 0, t1)
            _slope_psi_mom(munr, mvr, mxr, a2r, a, 1, t2)
            for i in range(4):
                m[k, 4, i] += rr * (t1[i] + t2[i])
            _slope_psi_mom(mupl, mvl, mxl, Al, a, 0, t1)
            _slope_psi_mom(munr, mvr, mxr, Ar, a, 0, t2)
            for i in range(4):
                m[k, 5, i] = rl * t1[i] + rr * t2[i]

        tv = tau[f]
        Eh = math.exp(-0.5 * dt / tv)
        Ef = math.exp(-dt / tv)
        emh = -math.expm1(-0.5 * dt / tv)
        emf = -math.expm1(-dt / tv)
        qh = np.empty(6); qf = np.empty(6)
        Th = 0.5 * dt
        qh[0] = Th - tv * emh
        qh[1] = 2.0 * tv * tv * emh - tv * Th * Eh - tv * Th
        qh[2] = 0.5 * Th * Th - tv * Th + tv * tv * emh
        qh[3] = tv * emh
        qh[4] = 2.0 * tv * tv * emh - tv * Th * Eh
        qh[5] = tv * tv * emh
        qf[0] = dt - tv * emf
        qf[1] = 2.0 * tv * tv * emf - tv * dt * Ef - tv * dt
        qf[2] = 0.5 * dt * dt - tv * dt + tv * tv * emf
        qf[3] = tv * emf
        qf[4] = 2.0 * tv * tv * emf - tv * dt * Ef
        qf[5] = tv * tv * emf

        for i in range(4):
            fv = 0.0
            fd = 0.0
            wv = 0.0
            wd = 0.0
            for s in range(6):
                sign = -1.0 if s >= 4 else 1.0
                kv = (4.0 * qh[s] - qf[s]) / dt * sign
                kd = 4.0 * (qf[s] - 2.0 * qh[s]) / (dt * dt) * sign
                fv += kv * m[0, s, i]
                fd += kd * m[0, s, i]
                wv += kv * m[1, s, i]
                wd += kd * m[1, s, i]
            F[f, i] = fv
            Ft[f, i] = fd
            Wq[f, i] = wv
            Wtq[f, i] = wd


def evolve_batch(WL, bnL, btL, WR, bnR, btR, tau, dt, gamma, upwind_blend=False):
    """Drop-in replacement for kinetic.interface_evolution on batches."""
    n = len(WL)
    F = np.empty((n, 4))
    Ft = np.empty((n, 4))
    Wq = np.empty((n, 4))
    Wtq = np.empty((n, 4))
    _evolve_kernel(
        np.ascontiguousarray(WL),
        np.ascontiguousarray(bnL),
        np.ascontiguousarray(btL),
        np.ascontiguousarray(WR),
        np.ascontiguousarray(bnR),
        np.ascontiguousarray(btR),
        np.ascontiguousarray(tau),
        float(dt),
        float(gamma),
        bool(upwind_blend),
        F,
        Ft,
        Wq,
        Wtq,
    )
    return F, Ft, Wq, Wtq
