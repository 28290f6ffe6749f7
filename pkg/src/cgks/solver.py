"""Run orchestration: boundary conditions, initialization, main loop.

A Simulation owns the immutable mesh/operators and a mutable snapshot of
cell averages plus cell-averaged gradients.  Each step runs two stages:
reconstruct, evolve the interface distribution for fluxes and interface
states, update the averages (fourth order) and the gradients (third order,
Gauss's theorem on the evolved interface values).  There is no limiter and
no trouble-cell detection; positivity violations abort loudly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kinetic, reconstruction, timestep
from .kinetic import PositivityError
from .mesh import Mesh, clip_polygon_halfplane, polygon_triangles, triangle_quadrature_points
from .reconstruction import WenoConfig
from .timestep import TimeController

log = logging.getLogger(__name__)

WALL_TAGS = ("wall_slip", "wall_noslip_adiabatic", "wall_noslip_isothermal")


class SolverError(Exception):
    pass


def mirror_matrices(normals):
    """Reflection across a line with the given unit normal."""
    n = np.asarray(normals, dtype=float)
    eye = np.eye(2)
    return eye[None] - 2.0 * n[:, :, None] * n[:, None, :]


def dmr_shock_x(params, y, t):
    """Horizontal position of the oblique shock at height y and time t."""
    return params["x0"] + (y + params["speed"] * t) / np.sqrt(3.0)


def _transform_states(tag, params, val, gx, gy, normal, pos, t, gamma):
    """Ghost/right-side state and gradients from the interior ones.

    val (B,4), gx/gy (B,4) physical-frame gradients, normal (B,2) outward
    unit normals, pos (B,2) evaluation positions.  Returns transformed
    (val, gx, gy).
    """
    B = len(val)
    n = normal
    if tag == "outflow":
        return val.copy(), gx.copy(), gy.copy()

    if tag == "inflow":
        W = np.tile(np.asarray(params["state"], dtype=float), (B, 1))
        z = np.zeros((B, 4))
        return W, z, z.copy()

    if tag == "post_shock_dmr":
        W = np.tile(np.asarray(params["post"], dtype=float), (B, 1))
        z = np.zeros((B, 4))
        return W, z, z.copy()

    if tag == "top_dmr":
        xs = dmr_shock_x(params, pos[:, 1], t)
        post = np.asarray(params["post"], dtype=float)
        pre = np.asarray(params["pre"], dtype=float)
        W = np.where(pos[:, [0]] < xs[:, None], post[None, :], pre[None, :])
        z = np.zeros((B, 4))
        return W, z, z.copy()

    if tag not in WALL_TAGS:
        raise SolverError(f"unknown boundary tag {tag!r}")

    rho = val[:, 0]
    U = val[:, 1] / rho
    V = val[:, 2] / rho
    p = (gamma - 1.0) * (val[:, 3] - 0.5 * rho * (U * U + V * V))

    if tag == "wall_slip":
        un = U * n[:, 0] + V * n[:, 1]
        Ug = U - 2.0 * un * n[:, 0]
        Vg = V - 2.0 * un * n[:, 1]
        rg, pg = rho, p
        S = np.zeros((B, 4, 4))
        S[:, 0, 0] = 1.0
        S[:, 3, 3] = 1.0
        R = mirror_matrices(n)
        S[:, 1:3, 1:3] = R
    else:
        if "velocity_fn" in params:
            uw = np.asarray(params["velocity_fn"](pos), dtype=float)
            uw = np.broadcast_to(uw, (B, 2))
        else:
            uw = np.broadcast_to(
                np.asarray(params.get("velocity", (0.0, 0.0)), dtype=float), (B, 2)
            )
        Ug = 2.0 * uw[:, 0] - U
        Vg = 2.0 * uw[:, 1] - V
        if tag == "wall_noslip_adiabatic":
            rg, pg = rho, p
        else:
            Tw = params["temperature"]
            Tg = np.maximum(2.0 * Tw - p / rho, 0.05 * Tw)
            pg = p
            rg = pg / Tg
        S = np.zeros((B, 4, 4))
        S[:, 0, 0] = 1.0
        S[:, 3, 3] = 1.0
        S[:, 1, 1] = -1.0
        S[:, 2, 2] = -1.0

    Wg = kinetic.primitive_to_conserved(rg, Ug, Vg, pg, gamma)
    # ghost field F_g(x) = S F(M x): gradients pick up S on components and
    # the mirror M on the spatial index
    M = mirror_matrices(n)
    gmx = M[:, 0, 0, None] * gx + M[:, 0, 1, None] * gy
    gmy = M[:, 1, 0, None] * gx + M[:, 1, 1, None] * gy
    gxg = np.einsum("bij,bj->bi", S, gmx)
    gyg = np.einsum("bij,bj->bi", S, gmy)
    return Wg, gxg, gyg


def apply_bcs(tag, interior, grads, normal, pos, t, gamma, params=None):
    """Ghost state and gradients for one boundary condition (spec surface)."""
    val = np.atleast_2d(np.asarray(interior, dtype=float))
    gx = np.atleast_2d(np.asarray(grads[0], dtype=float))
    gy = np.atleast_2d(np.asarray(grads[1], dtype=float))
    n = np.atleast_2d(np.asarray(normal, dtype=float))
    p = np.atleast_2d(np.asarray(pos, dtype=float))
    return _transform_states(tag, params or {}, val, gx, gy, n, p, t, gamma)


@dataclass
class RunState:
    t: float
    step: int
    W: np.ndarray
    GX: np.ndarray
    GY: np.ndarray
    totals: list = field(default_factory=list)


class Simulation:
    """Owner of one run: immutable geometry/operators plus the state arrays."""

    def __init__(
        self,
        mesh: Mesh,
        gamma=1.4,
        viscosity=None,
        degree=3,
        q=2,
        weno=None,
        nonlinear=True,
        ctrl=None,
        bc_params=None,
        backend="auto",
        ctx=None,
    ):
        self.mesh = mesh
        self.gamma = gamma
        self.viscosity = viscosity
        self.ctx = ctx if ctx is not None else reconstruction.build_operators(mesh, degree, q)
        self.weno = weno or WenoConfig()
        self.nonlinear = nonlinear
        self.ctrl = ctrl or TimeController()
        self.bc_params = bc_params or {}
        self.t = 0.0
        self.step = 0
        ntot = mesh.ncells + mesh.nghost
        self.W = np.zeros((ntot, 4))
        self.GX = np.zeros((ntot, 4))
        self.GY = np.zeros((ntot, 4))
        self.totals = []
        self.boundary_flux_total = np.zeros(4)

        self._prepare_boundary_groups()
        self._evolve = self._make_backend(backend)

    # ------------------------------------------------------------------
    def _prepare_boundary_groups(self):
        mesh = self.mesh
        self._ghost_groups = []
        if mesh.nghost:
            tags = np.array([mesh.face_tag[f] for f in mesh.ghost_face])
            for tag in np.unique(tags):
                sel = np.nonzero(tags == tag)[0]
                faces = mesh.ghost_face[sel]
                self._ghost_groups.append(
                    dict(
                        tag=str(tag),
                        ghost_rows=mesh.ncells + sel,
                        src=mesh.ghost_src[sel],
                        normal=mesh.face_normal[faces],
                        pos=mesh.ghost_tri[sel].mean(axis=1),
                    )
                )
        q = self.ctx.q
        bqp = []
        for f in mesh.boundary_faces:
            bqp.extend(range(f * q, (f + 1) * q))
        bqp = np.array(bqp, dtype=np.int64)
        self._bface_groups = []
        if bqp.size:
            pos = self.ctx.fq.pos.reshape(-1, 2)
            tags = np.array([mesh.face_tag[i // q] for i in bqp])
            for tag in np.unique(tags):
                sel = bqp[tags == tag]
                self._bface_groups.append(
                    dict(
                        tag=str(tag),
                        qp=sel,
                        normal=np.repeat(mesh.face_normal, q, axis=0)[sel],
                        pos=pos[sel],
                    )
                )

    def _make_backend(self, backend):
        if backend in ("auto", "numba"):
            try:
                from . import kinetic_fast

                return kinetic_fast.evolve_batch
            except Exception:  # pragma: no cover - numba genuinely missing
                if backend == "numba":
                    raise
        return None

    # ------------------------------------------------------------------
    def fill_ghosts(self, W, GX, GY, t):
        for g in self._ghost_groups:
            params = self.bc_params.get(g["tag"], {})
            src = g["src"]
            Wg, gxg, gyg = _transform_states(
                g["tag"], params, W[src], GX[src], GY[src], g["normal"], g["pos"], t, self.gamma
            )
            W[g["ghost_rows"]] = Wg
            GX[g["ghost_rows"]] = gxg
            GY[g["ghost_rows"]] = gyg

    def _boundary_traces(self, left, right, t):
        """Fill the right-side traces of boundary faces from the BCs."""
        for g in self._bface_groups:
            params = self.bc_params.get(g["tag"], {})
            sel = g["qp"]
            Wr, gxr, gyr = _transform_states(
                g["tag"],
                params,
                left[sel, 0],
                left[sel, 1],
                left[sel, 2],
                g["normal"],
                g["pos"],
                t,
                self.gamma,
            )
            right[sel, 0] = Wr
            right[sel, 1] = gxr
            right[sel, 2] = gyr

    # ------------------------------------------------------------------
    def stage(self, W, GX, GY, dt, t_stage):
        """One reconstruction/evolution pass from the given snapshot.

        Returns (L, Lt, Wqp, Wtqp): residual, its time derivative, and the
        interface values/time derivatives at every face quadrature point in
        the global frame.
        """
        mesh, ctx = self.mesh, self.ctx
        self.fill_ghosts(W, GX, GY, t_stage)
        coeffs = reconstruction.reconstruct(
            ctx, W, GX, GY, self.weno, nonlinear=self.nonlinear
        )
        left, right = reconstruction.evaluate_faces(ctx, coeffs)
        self._boundary_traces(left, right, t_stage)

        n = np.repeat(mesh.face_normal, ctx.q, axis=0)
        gamma = self.gamma

        try:
            WL = kinetic.rotate_state(left[:, 0], n)
            WR = kinetic.rotate_state(right[:, 0], n)
            # slopes along the face frame: normal and tangential directional
            # derivatives, with rotated momentum components
            def frame_slopes(tr):
                bn = kinetic.rotate_state(
                    n[:, 0, None] * tr[:, 1] + n[:, 1, None] * tr[:, 2], n
                )
                bt = kinetic.rotate_state(
                    -n[:, 1, None] * tr[:, 1] + n[:, 0, None] * tr[:, 2], n
                )
                return bn, bt

            bnL, btL = frame_slopes(left)
            bnR, btR = frame_slopes(right)

            pl = (gamma - 1.0) * (
                WL[:, 3] - 0.5 * (WL[:, 1] ** 2 + WL[:, 2] ** 2) / WL[:, 0]
            )
            pr = (gamma - 1.0) * (
                WR[:, 3] - 0.5 * (WR[:, 1] ** 2 + WR[:, 2] ** 2) / WR[:, 0]
            )
            if np.any(pl <= 0) or np.any(pr <= 0) or np.any(WL[:, 0] <= 0) or np.any(WR[:, 0] <= 0):
                bad = int(np.argmax((pl <= 0) | (pr <= 0) | (WL[:, 0] <= 0) | (WR[:, 0] <= 0)))
                raise PositivityError(
                    f"nonpositive trace at face qp {bad} (step {self.step})", bad
                )
            if self.viscosity is None:
                tau = kinetic.collision_time(pl, pr, dt)
            else:
                p0 = self._interface_pressure(WL, WR)
                tau = kinetic.collision_time(
                    pl, pr, dt, mu=self.viscosity, p_interface=p0
                )

            if self._evolve is not None:
                F, Ft, Wq, Wtq = self._evolve(
                    WL, bnL, btL, WR, bnR, btR, tau, dt, gamma
                )
            else:
                F, Ft, Wq, Wtq = kinetic.interface_evolution(
                    WL, (bnL, btL), WR, (bnR, btR), tau, dt, gamma
                )
        except PositivityError as e:
            raise PositivityError(
                f"{e} at t={self.t:.6g} step {self.step}", e.index
            ) from e

        F = kinetic.unrotate_state(F, n)
        Ft = kinetic.unrotate_state(Ft, n)
        Wq = kinetic.unrotate_state(Wq, n)
        Wtq = kinetic.unrotate_state(Wtq, n)

        L = timestep.assemble_residual(mesh, ctx.fq, F)
        Lt = timestep.assemble_residual(mesh, ctx.fq, Ft)
        return L, Lt, F, Wq, Wtq

    def _interface_pressure(self, WL, WR):
        K = kinetic.internal_dof(self.gamma)
        tl = kinetic.moments(*kinetic.params_from_state(WL, self.gamma), K, order=2)
        tr = kinetic.moments(*kinetic.params_from_state(WR, self.gamma), K, order=2)
        W0 = tl.rho[:, None] * kinetic.psi_moments(tl, "pos", 0, 0) + tr.rho[
            :, None
        ] * kinetic.psi_moments(tr, "neg", 0, 0)
        _, _, _, lam0 = kinetic.params_from_state(W0, self.gamma)
        return W0[:, 0] / (2.0 * lam0)

    # ------------------------------------------------------------------
    def advance(self, dt):
        mesh = self.mesh
        M = mesh.ncells
        W0 = self.W.copy()
        L1, Lt1, F1, Wq1, Wtq1 = self.stage(self.W, self.GX, self.GY, dt, self.t)

        Wh = self.W.copy()
        Wh[:M] = timestep.s2o4_half(W0[:M], L1[:M], Lt1[:M], dt)
        Wq_half = Wq1 + 0.5 * dt * Wtq1
        GXh, GYh = gauss_with_ghosts(mesh, self.ctx.fq, Wq_half, self.GX, self.GY)

        L2, Lt2, F2, Wq2, Wtq2 = self.stage(Wh, GXh, GYh, dt, self.t + 0.5 * dt)

        Wn = self.W.copy()
        Wn[:M] = timestep.s2o4_step(W0[:M], L1[:M], Lt1[:M], Lt2[:M], dt)
        Wq_new = Wq1 + dt * Wtq2
        GXn, GYn = gauss_with_ghosts(mesh, self.ctx.fq, Wq_new, self.GX, self.GY)

        if not np.isfinite(Wn[:M]).all():
            bad = int(np.argmax(~np.isfinite(Wn[:M]).all(axis=1)))
            raise SolverError(f"NaN detected in cell {bad} at step {self.step}")
        try:
            kinetic.params_from_state(Wn[:M], self.gamma)
        except PositivityError as e:
            raise PositivityError(
                f"positivity violated in cell {e.index} after step {self.step}",
                e.index,
            ) from e

        # half-step flux balance gives the per-step boundary flux total
        self.W, self.GX, self.GY = Wn, GXn, GYn
        self.t += dt
        self.step += 1
        self.totals.append(self.conserved_totals())

    def conserved_totals(self):
        return self.mesh.areas @ self.W[: self.mesh.ncells]

    def run(self, t_end, max_steps=10**9, callback=None, record_every=1):
        self.totals.append(self.conserved_totals())
        while self.t < t_end - 1e-14 and self.step < max_steps:
            dt = timestep.compute_dt(
                self.mesh, self.W, self.gamma, self.ctrl, self.viscosity
            )
            dt = min(dt, t_end - self.t)
            self.advance(dt)
            if callback is not None:
                callback(self)
        return RunState(
            t=self.t, step=self.step, W=self.W, GX=self.GX, GY=self.GY, totals=self.totals
        )


def gauss_with_ghosts(mesh, fq, Wqp, GX_prev, GY_prev):
    """Gradient update on real cells, keeping ghost rows for later refill."""
    GX = GX_prev.copy()
    GY = GY_prev.copy()
    gx, gy = timestep.gauss_cell_gradients(mesh, fq, Wqp)
    GX[: mesh.ncells] = gx
    GY[: mesh.ncells] = gy
    return GX, GY


# ---------------------------------------------------------------------------
# initialization


def initialize(mesh, case, refine=3):
    """Cell averages and average gradients of a case's initial field.

    Smooth regions use subdivided quadrature of the field and its analytic
    gradient; cells straddling a break line get exact split averaging with
    zero gradients.
    """
    field = case.field
    M = mesh.ncells
    W = np.zeros((M + mesh.nghost, 4))
    GX = np.zeros_like(W)
    GY = np.zeros_like(W)

    breaks = getattr(field, "breaks", [])
    tri = mesh.nodes[mesh.cells]
    straddle = np.zeros(M, dtype=bool)
    for (a, b, c) in breaks:
        d = a * tri[..., 0] + b * tri[..., 1] - c
        straddle |= (d.max(axis=1) > 1e-12) & (d.min(axis=1) < -1e-12)

    smooth = np.nonzero(~straddle)[0]
    if smooth.size:
        # batched quadrature over all smooth cells
        base, wbase = triangle_quadrature_points(
            np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), refine=refine
        )
        lam = np.stack([1.0 - base[:, 0] - base[:, 1], base[:, 0], base[:, 1]], axis=1)
        for chunk in np.array_split(smooth, max(1, smooth.size // 2000)):
            pts = np.einsum("qb,cbx->cqx", lam, tri[chunk])
            x, y = pts[..., 0], pts[..., 1]
            vals = field.value(x, y)
            W[chunk] = np.einsum("q,cqv->cv", wbase, vals) / wbase.sum()
            gx, gy = field.gradient(x, y)
            GX[chunk] = np.einsum("q,cqv->cv", wbase, gx) / wbase.sum()
            GY[chunk] = np.einsum("q,cqv->cv", wbase, gy) / wbase.sum()

    for c in np.nonzero(straddle)[0]:
        poly = [tuple(p) for p in tri[c]]
        pieces = [poly]
        for (a, b, cc) in breaks:
            nxt = []
            for pc in pieces:
                lo = clip_polygon_halfplane(pc, a, b, cc)
                hi = clip_polygon_halfplane(pc, -a, -b, -cc)
                nxt.extend(p for p in (lo, hi) if len(p) >= 3)
            pieces = nxt
        acc = np.zeros(4)
        area = 0.0
        for pc in pieces:
            for t in polygon_triangles(pc):
                pts, w = triangle_quadrature_points(t, refine=max(1, refine - 1))
                acc += np.einsum("q,qv->v", w, field.value(pts[:, 0], pts[:, 1]))
                area += w.sum()
        W[c] = acc / area
    return W, GX, GY


def conservation_audit(totals, boundary_open=False):
    """Max relative drift of each conserved quantity over a totals history."""
    totals = np.asarray(totals, dtype=float)
    if len(totals) < 2:
        raise SolverError("need at least two recorded totals")
    ref = np.abs(totals[0])
    scale = np.where(ref > 1e-12, ref, 1.0)
    drift = np.abs(totals - totals[0]).max(axis=0) / scale
    flagged = bool(drift[0] > 1e-10) and not boundary_open
    return {"drift": drift, "flagged": flagged}
