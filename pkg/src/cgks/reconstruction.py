"""Compact linear + nonlinear reconstruction from cell averages and gradients.

The linear polynomial comes from a constrained least-squares (CLS) fit over
the ten-member stencil: cell averages of the owner and its three neighbors
are enforced exactly through Lagrange multipliers, everything else (second
ring averages, gradient rows) is matched in the least-squares sense.  Seven
lower-order candidates built the same way combine with the large polynomial
through WENO-Z style weights into the final non-oscillatory polynomial.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import factorial

import numpy as np

from .mesh import Mesh
from .stencil import (
    SUB_PATTERNS,
    basis_eval,
    basis_exponents,
    basis_size,
    build_member_table,
    tri_monomial_integral,
)

log = logging.getLogger(__name__)


@dataclass
class WenoConfig:
    """Free parameters of the nonlinear combination."""

    c_large: float = 5.0
    n_cand: int = 7
    power: float = 3.0
    eps: float = 1e-8
    c_k: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.c_k is None:
            self.c_k = np.full(self.n_cand, 1.0 / self.n_cand)
        self.c_k = np.asarray(self.c_k, dtype=float)
        if self.c_large <= 0:
            raise ValueError("C must be positive")
        if abs(self.c_k.sum() - 1.0) > 1e-12 or (self.c_k <= 0).any() or (self.c_k >= 1).any():
            raise ValueError("candidate constants must be in (0,1) and sum to 1")

    @property
    def d_bar(self):
        """Normalized linear weights (d0 for the large polynomial first)."""
        d = np.empty(self.n_cand + 1)
        d[0] = self.c_large / (1.0 + self.c_large)
        d[1:] = self.c_k / (1.0 + self.c_large)
        return d


class ReconstructionError(Exception):
    pass


def _constraint_independent_subset(rows_con, tol=1e-10):
    """Greedy independent subset of constraint rows, always keeping row 0."""
    keep = [0]
    basis = [rows_con[0] / np.linalg.norm(rows_con[0])]
    for i in range(1, len(rows_con)):
        v = rows_con[i].astype(float).copy()
        for b in basis:
            v -= (v @ b) * b
        nv = np.linalg.norm(v)
        if nv > tol * max(1.0, np.linalg.norm(rows_con[i])):
            keep.append(i)
            basis.append(v / nv)
    return keep


def cls_operator(rows_ls, rows_con, cond_limit=1e12):
    """Solution operator of the CLS system.

    Returns (G_ls, G_con, ncols) with a = G_ls @ data_ls + G_con @ data_con,
    where ncols is the basis size actually used after any degree reduction.
    """
    rows_ls = np.atleast_2d(np.asarray(rows_ls, dtype=float))
    rows_con = np.atleast_2d(np.asarray(rows_con, dtype=float))
    N = rows_ls.shape[1]

    keep = _constraint_independent_subset(rows_con)
    if len(keep) < len(rows_con):
        log.warning("dropping %d dependent CLS constraints", len(rows_con) - len(keep))

    # trailing basis columns are the highest-degree terms; drop them on retry
    ncols = N
    degree_sizes = [basis_size(d) for d in range(10) if basis_size(d) <= N]
    while True:
        A = rows_ls[:, :ncols]
        C = rows_con[keep][:, :ncols]
        nc = len(keep)
        kkt = np.zeros((ncols + nc, ncols + nc))
        kkt[:ncols, :ncols] = 2.0 * A.T @ A
        kkt[:ncols, ncols:] = C.T
        kkt[ncols:, :ncols] = C
        cond = np.linalg.cond(kkt)
        if cond <= cond_limit and np.isfinite(cond):
            inv = np.linalg.inv(kkt)
            G_ls = np.zeros((N, len(rows_ls)))
            G_con = np.zeros((N, len(rows_con)))
            G_ls[:ncols] = 2.0 * inv[:ncols, :ncols] @ A.T
            G_con[:ncols, keep] = inv[:ncols, ncols:]
            return G_ls, G_con, ncols
        smaller = [s for s in degree_sizes if s < ncols]
        if not smaller:
            raise ReconstructionError(
                f"CLS system ill-conditioned (cond={cond:.2e}) even at degree 0"
            )
        ncols = smaller[-1]
        log.warning("ill-conditioned CLS system, retrying with %d unknowns", ncols)


def cls_solve(rows_ls, data_ls, rows_con, data_con, cond_limit=1e12):
    """Least-squares coefficients with the constrained rows satisfied exactly."""
    G_ls, G_con, _ = cls_operator(rows_ls, rows_con, cond_limit)
    return G_ls @ np.asarray(data_ls, dtype=float) + G_con @ np.asarray(
        data_con, dtype=float
    )


def smoothness_matrices(degree):
    """Quadratic forms of the indicator, one matrix per derivative order."""
    exps = basis_exponents(degree)
    N = len(exps)
    mats = []
    for m in range(1, degree + 1):
        M = np.zeros((N, N))
        for a1 in range(m + 1):
            a2 = m - a1
            coef = np.zeros(N)
            mono = []
            for n, (p, q) in enumerate(exps):
                if p >= a1 and q >= a2:
                    coef[n] = (
                        factorial(p)
                        // factorial(p - a1)
                        * (factorial(q) // factorial(q - a2))
                    ) / factorial(p + q)
                    mono.append((p - a1, q - a2))
                else:
                    mono.append(None)
            for i in range(N):
                if mono[i] is None:
                    continue
                for j in range(N):
                    if mono[j] is None:
                        continue
                    M[i, j] += coef[i] * coef[j] * tri_monomial_integral(
                        mono[i][0] + mono[j][0], mono[i][1] + mono[j][1]
                    )
        mats.append(M)
    return mats


def smoothness_indicator(coeffs, area, mats):
    """IS of a polynomial: sum_m area^(m-1) * a^T M_m a (zero iff constant)."""
    coeffs = np.asarray(coeffs, dtype=float)
    single = coeffs.ndim == 1
    a = coeffs[None, :, None] if single else coeffs
    area = np.atleast_1d(np.asarray(area, dtype=float))
    out = np.zeros(a.shape[:1] + a.shape[2:])
    for m, M in enumerate(mats, start=1):
        n = M.shape[0]
        quad = np.einsum("cnv,nk,ckv->cv", a[:, :n], M, a[:, :n])
        out += area[:, None] ** (m - 1) * quad
    return float(out[0, 0]) if single else out


def tau_z(is_values):
    """High-order reference value from the indicator differences.

    is_values holds IS_0 (large polynomial) then IS_1..IS_6(+) of the
    candidates, in the leading axis.
    """
    is_values = np.asarray(is_values, dtype=float)
    t = np.zeros(is_values.shape[1:])
    for l in range(3):
        t = t + np.abs(
            2.0 * is_values[0] - is_values[1 + 2 * l] - is_values[2 + 2 * l]
        )
    return t


def nonlinear_weights(is_values, tau, cfg: WenoConfig):
    """WENO-Z weights over (large, candidates); normalized to sum to one."""
    is_values = np.asarray(is_values, dtype=float)
    d = cfg.d_bar
    shape = (len(d),) + (1,) * (is_values.ndim - 1)
    wt = d.reshape(shape) * (1.0 + (tau / (is_values + cfg.eps)) ** cfg.power)
    return wt / wt.sum(axis=0)


def nonlinear_reconstruct(p_large, candidates, weights, cfg: WenoConfig):
    """Combine the large polynomial with the candidates.

    R = sum_k w_k q_k + w_0*((1+C)/C * P - sum_k (C_k/C) q_k); reduces to P
    exactly when the weights equal the linear ones.
    """
    p_large = np.asarray(p_large, dtype=float)
    out = weights[0] * (1.0 + cfg.c_large) / cfg.c_large * p_large
    for k, q in enumerate(candidates):
        qk = np.asarray(q, dtype=float)
        coef = weights[1 + k] - weights[0] * cfg.c_k[k] / cfg.c_large
        out[: qk.shape[0]] += coef * qk
    return out


# ---------------------------------------------------------------------------
# batched operators


@dataclass
class ReconstructionContext:
    mesh: Mesh
    degree: int
    q: int
    N: int
    nd: int                 # members carrying derivative rows
    nrows: int              # data rows per cell
    member_ids: np.ndarray  # (M,10)
    G_all: np.ndarray       # (M, N + 42, nrows)
    is_mats: list
    fq: object
    idx_left: np.ndarray    # (F*q,)
    idx_right: np.ndarray   # (F*q,) -1 on boundary
    eval_left: np.ndarray   # (F*q, 3, N) value/gx/gy rows
    eval_right: np.ndarray
    sub_degree: np.ndarray  # (M,7)
    grad_weight: float = 1.0

    @property
    def ncand_coeff(self):
        return 6


def _batched_cls(A_ls, A_con):
    """Vectorized CLS operators; returns (G_ls, G_con, cond)."""
    n, r, N = A_ls.shape
    nc = A_con.shape[1]
    kkt = np.zeros((n, N + nc, N + nc))
    kkt[:, :N, :N] = 2.0 * np.einsum("nrm,nrk->nmk", A_ls, A_ls)
    kkt[:, :N, N:] = np.swapaxes(A_con, 1, 2)
    kkt[:, N:, :N] = A_con
    cond = np.linalg.cond(kkt)
    good = np.isfinite(cond) & (cond < 1e12)
    G_ls = np.zeros((n, N, r))
    G_con = np.zeros((n, N, nc))
    if good.any():
        inv = np.linalg.inv(kkt[good])
        G_ls[good] = 2.0 * np.einsum("nmk,nrk->nmr", inv[:, :N, :N], A_ls[good])
        G_con[good] = inv[:, :N, N:]
    return G_ls, G_con, good


def build_operators(
    mesh: Mesh, degree: int = 3, q: int = 2, grad_weight: float = 1.0
) -> ReconstructionContext:
    """Precompute everything geometry-dependent for reconstruction.

    grad_weight scales the gradient rows of the least-squares objective
    relative to the cell-average rows (the data rows are scaled to match in
    reconstruct()).
    """
    M = mesh.ncells
    N = basis_size(degree)
    nd = 4 if degree == 3 else 10
    nrows = 10 + 2 * nd

    (member_ids, member_shift, ravg, rdxi, rdeta, valid, sub_degree, _sten) = (
        build_member_table(mesh, degree)
    )

    ravg = np.where(valid[:, :, None], ravg, 0.0)
    rdxi = rdxi * grad_weight
    rdeta = rdeta * grad_weight

    # ----- large polynomial: constraints = averages of slots 0..3
    A_con = ravg[:, :4, :]
    ls_rows = np.concatenate(
        [ravg[:, 4:, :], rdxi[:, :nd, :], rdeta[:, :nd, :]], axis=1
    )
    G_ls, G_con, good = _batched_cls(ls_rows, A_con)
    col_ls = list(range(4, 10)) + list(range(10, 10 + 2 * nd))
    G_large = np.zeros((M, N, nrows))
    G_large[:, :, col_ls] = G_ls
    G_large[:, :, 0:4] = G_con

    for c in np.nonzero(~good)[0]:
        gl, gc, used = cls_operator(ls_rows[c], A_con[c])
        G_large[c, :, col_ls] = gl.T
        G_large[c, :, 0:4] = gc
        log.warning("cell %d: large stencil reduced to %d unknowns", c, used)

    # ----- seven candidates, quadratic (or linear where reduced)
    G_subs = []
    for s, pat in enumerate(SUB_PATTERNS):
        if s < 6:
            cols = [pat[1], pat[2], pat[3], pat[4], 10 + pat[1], 10 + nd + pat[1]]
        else:
            cols = [pat[1], pat[2], pat[3]]
        A_con_s = ravg[:, [0], :6]
        rows = []
        for p in pat[1:]:
            rows.append(np.where(valid[:, p, None], ravg[:, p, :6], 0.0))
        if s < 6:
            ok2 = valid[:, pat[1], None]
            rows.append(np.where(ok2, rdxi[:, pat[1], :6], 0.0))
            rows.append(np.where(ok2, rdeta[:, pat[1], :6], 0.0))
        A_ls_s = np.stack(rows, axis=1)

        deg2 = sub_degree[:, s] == 2
        Gs = np.zeros((M, 6, nrows))
        for degsel, ncols in ((deg2, 6), (~deg2, 3)):
            idx = np.nonzero(degsel)[0]
            if not idx.size:
                continue
            gl, gc, okb = _batched_cls(A_ls_s[idx, :, :ncols], A_con_s[idx, :, :ncols])
            Gfull = np.zeros((len(idx), 6, len(cols) + 1))
            Gfull[:, :ncols, 1:] = gl
            Gfull[:, :ncols, :1] = gc
            for jbad in np.nonzero(~okb)[0]:
                c = idx[jbad]
                gl1, gc1, used = cls_operator(
                    A_ls_s[c, :, :3], A_con_s[c, :, :3]
                )
                Gfull[jbad] = 0.0
                Gfull[jbad, :3, 1:] = gl1
                Gfull[jbad, :3, :1] = gc1
            Gs[idx[:, None], :, np.array([0] + cols)[None, :]] = np.swapaxes(
                Gfull, 1, 2
            )
        G_subs.append(Gs)

    G_all = np.concatenate([G_large] + G_subs, axis=1)

    # ----- face evaluation tables
    fq = mesh.face_quadrature(q)
    F = mesh.nfaces
    pos = fq.pos.reshape(F * q, 2)
    idx_left = np.repeat(mesh.face_left, q)
    idx_right = np.repeat(mesh.face_right, q)
    shift = np.repeat(mesh.face_shift, q, axis=0)

    def eval_rows(cells, points):
        ref = np.einsum(
            "fyx,fx->fy", mesh.frame_Jinv[cells], points - mesh.frame_origin[cells]
        )
        val = basis_eval(ref[:, 0], ref[:, 1], degree)
        dxi = basis_eval(ref[:, 0], ref[:, 1], degree, dxi=1)
        deta = basis_eval(ref[:, 0], ref[:, 1], degree, deta=1)
        ji = mesh.frame_Jinv[cells]
        gx = dxi * ji[:, None, 0, 0] + deta * ji[:, None, 1, 0]
        gy = dxi * ji[:, None, 0, 1] + deta * ji[:, None, 1, 1]
        return np.stack([val, gx, gy], axis=1)

    eval_left = eval_rows(idx_left, pos)
    has_r = idx_right >= 0
    eval_right = np.zeros_like(eval_left)
    if has_r.any():
        eval_right[has_r] = eval_rows(
            idx_right[has_r], pos[has_r] - shift[has_r]
        )

    return ReconstructionContext(
        mesh=mesh,
        degree=degree,
        q=q,
        N=N,
        nd=nd,
        nrows=nrows,
        member_ids=member_ids,
        G_all=G_all,
        is_mats=smoothness_matrices(degree),
        fq=fq,
        idx_left=idx_left,
        idx_right=idx_right,
        eval_left=eval_left,
        eval_right=eval_right,
        sub_degree=sub_degree,
        grad_weight=grad_weight,
    )


def reconstruct(
    ctx: ReconstructionContext,
    W,
    GX,
    GY,
    cfg: WenoConfig,
    nonlinear=True,
    return_weights=False,
):
    """Per-cell polynomial coefficients (M, N, nvar) from the current state.

    W/GX/GY cover real cells followed by ghost slots; gradients are the
    physical-frame cell-averaged derivatives.
    """
    mesh = ctx.mesh
    M = mesh.ncells
    N, nd = ctx.N, ctx.nd

    # the fit runs on deviations from the owner average: constants are then
    # reproduced exactly regardless of the conditioning of the CLS systems
    Q0 = W[:M]
    D = np.empty((M, ctx.nrows, W.shape[1]))
    D[:, :10] = W[ctx.member_ids] - Q0[:, None, :]
    dids = ctx.member_ids[:, :nd]
    gx = GX[dids]
    gy = GY[dids]
    J = mesh.frame_J
    D[:, 10 : 10 + nd] = J[:, 0, 0, None, None] * gx + J[:, 1, 0, None, None] * gy
    D[:, 10 + nd :] = J[:, 0, 1, None, None] * gx + J[:, 1, 1, None, None] * gy
    if ctx.grad_weight != 1.0:
        D[:, 10:] *= ctx.grad_weight

    out = np.matmul(ctx.G_all, D)
    a_large = out[:, :N]
    a_large[:, 0] += Q0
    a_subs = out[:, N:].reshape(M, 7, 6, -1)
    a_subs[:, :, 0] += Q0[:, None, :]

    if not nonlinear:
        if return_weights:
            d = WenoConfig().d_bar if cfg is None else cfg.d_bar
            return a_large, np.broadcast_to(
                d[None, :, None], (M, 8, W.shape[1])
            )
        return a_large

    area = mesh.areas
    is_all = np.empty((8, M, W.shape[1]))
    is_all[0] = smoothness_indicator(a_large, area, ctx.is_mats)
    sub_mats = [m[:6, :6] for m in ctx.is_mats[:2]]
    for s in range(7):
        is_all[1 + s] = smoothness_indicator(a_subs[:, s], area, sub_mats)

    tau = tau_z(is_all[:7])
    # the indicator driving the large-polynomial weight is floored by the
    # candidates' indicators: a wild candidate would otherwise leak into the
    # combination through the -w0*(C_k/C) q_k terms
    is_w = is_all.copy()
    is_w[0] = np.maximum(is_all[0], is_all[1:7].max(axis=0))
    w = nonlinear_weights(is_w, tau, cfg)

    coef0 = w[0] * (1.0 + cfg.c_large) / cfg.c_large
    R = coef0[:, None, :] * a_large
    for s in range(7):
        ck = w[1 + s] - w[0] * cfg.c_k[s] / cfg.c_large
        R[:, :6] += ck[:, None, :] * a_subs[:, s]

    if return_weights:
        return R, np.moveaxis(w, 0, 1)
    return R


def evaluate_faces(ctx: ReconstructionContext, coeffs):
    """Left/right traces and physical gradients at every face Gauss point.

    Right-side entries are zero on non-periodic boundary faces; the solver
    fills them from the active boundary condition.
    """
    cl = coeffs[ctx.idx_left]
    left = np.einsum("fen,fnv->fev", ctx.eval_left, cl)
    right = np.zeros_like(left)
    has_r = ctx.idx_right >= 0
    cr = coeffs[ctx.idx_right[has_r]]
    right[has_r] = np.einsum("fen,fnv->fev", ctx.eval_right[has_r], cr)
    return left, right


def evaluate_at_points(mesh, coeffs, cells, points, degree):
    """Values of the per-cell polynomials at arbitrary physical points."""
    cells = np.asarray(cells)
    points = np.asarray(points, dtype=float)
    ref = np.einsum(
        "fyx,fx->fy", mesh.frame_Jinv[cells], points - mesh.frame_origin[cells]
    )
    rows = basis_eval(ref[:, 0], ref[:, 1], degree)
    return np.einsum("fn,fnv->fv", rows, coeffs[cells])
