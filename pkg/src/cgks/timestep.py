"""Time-step control, residual assembly and the two-stage updates.

Cell averages advance with the two-stage fourth-order scheme driven by the
flux and its time derivative; cell-averaged gradients advance by updating the
interface point values to third order and applying Gauss's theorem over each
cell boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinetic import PositivityError, conserved_to_primitive


@dataclass
class TimeController:
    cfl: float = 0.4
    viscous_factor: float = 0.7
    dt_fixed: float = None
    dt_law: tuple = None  # (coef, power): dt = coef * h**power


def dt_from_speeds(h, speed, cfl):
    """Convective time-step bound per cell."""
    return cfl * np.min(np.asarray(h) / np.asarray(speed))


def compute_dt(mesh, W, gamma, ctrl: TimeController, viscosity=None):
    """Global time step from the CFL bound and, if viscous, the diffusive one.

    The cell size is the inscribed-circle diameter, the most restrictive
    natural length of a triangle.
    """
    if ctrl.dt_fixed is not None:
        return ctrl.dt_fixed
    rho, U, V, p = conserved_to_primitive(W[: mesh.ncells], gamma)
    if np.any(rho <= 0) or np.any(p <= 0):
        raise PositivityError(
            "nonpositive state in time-step evaluation",
            int(np.argmax((rho <= 0) | (p <= 0))),
        )
    c = np.sqrt(gamma * p / rho)
    speed = np.hypot(U, V) + c
    dt = dt_from_speeds(mesh.h_inscribed, speed, ctrl.cfl)
    if viscosity is not None and viscosity > 0:
        nu = viscosity / rho
        dt = min(dt, ctrl.viscous_factor * np.min(mesh.h_inscribed**2 / (2.0 * nu)))
    return dt


def _face_sums(mesh, fq, values):
    """omega-weighted sums per face of quadrature-point values."""
    F = mesh.nfaces
    v = values.reshape(F, fq.q, -1)
    return np.einsum("k,fkv->fv", fq.w, v)


def assemble_residual(mesh, fq, flux_qp):
    """L_j = -(1/|Omega_j|) sum_faces |Gamma| sum_k w_k F_k per cell.

    flux_qp holds the face-normal flux at every quadrature point (outward
    from the left cell); interior faces contribute with opposite signs to
    their two cells, so interior contributions telescope exactly.
    """
    M = mesh.ncells
    contrib = _face_sums(mesh, fq, flux_qp) * mesh.face_len[:, None]
    interior = mesh.face_right >= 0
    L = np.zeros((M, contrib.shape[1]))
    for comp in range(contrib.shape[1]):
        L[:, comp] = -np.bincount(
            mesh.face_left, weights=contrib[:, comp], minlength=M
        )
        L[:, comp] += np.bincount(
            mesh.face_right[interior],
            weights=contrib[interior, comp],
            minlength=M,
        )
    return L / mesh.areas[:, None]


def s2o4_step(W, L_n, Lt_n, Lt_half, dt):
    """Full fourth-order update from the stage residuals."""
    return W + dt * L_n + dt * dt / 6.0 * (Lt_n + 2.0 * Lt_half)


def s2o4_half(W, L_n, Lt_n, dt):
    """Middle state at t + dt/2."""
    return W + 0.5 * dt * L_n + 0.125 * dt * dt * Lt_n


def gauss_cell_gradients(mesh, fq, W_qp):
    """Cell-averaged gradients from interface values by Gauss's theorem.

    W_{j,x} = (1/|Omega_j|) sum_l |Gamma_l| n_{l,x} sum_k w_k W(x_k), and
    likewise for y, with outward normals per cell.
    """
    M = mesh.ncells
    contrib = _face_sums(mesh, fq, W_qp) * mesh.face_len[:, None]
    interior = mesh.face_right >= 0
    nvar = contrib.shape[1]
    GX = np.zeros((M, nvar))
    GY = np.zeros((M, nvar))
    for comp in range(nvar):
        for G, nc in ((GX, mesh.face_normal[:, 0]), (GY, mesh.face_normal[:, 1])):
            G[:, comp] += np.bincount(
                mesh.face_left, weights=contrib[:, comp] * nc, minlength=M
            )
            G[:, comp] -= np.bincount(
                mesh.face_right[interior],
                weights=(contrib[:, comp] * nc)[interior],
                minlength=M,
            )
    return GX / mesh.areas[:, None], GY / mesh.areas[:, None]
