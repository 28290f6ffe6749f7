"""Benchmark catalog and verification oracles.

Holds the case definitions (initial fields, domains, boundary maps, run
parameters), the exact Riemann solver used to verify the shock-tube runs,
and the error-norm / convergence-order helpers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kinetic import primitive_to_conserved
from .mesh import (
    build_mesh,
    generate_mesh,
    lattice_points,
    rectangle_tags,
    triangulate,
    triangle_quadrature_points,
)


class RiemannError(Exception):
    pass


def prim_state(rho, U, V, p, gamma=1.4):
    """Conserved 4-vector from scalar primitives."""
    return primitive_to_conserved(
        np.float64(rho), np.float64(U), np.float64(V), np.float64(p), gamma
    )


# ---------------------------------------------------------------------------
# initial fields


class SmoothField:
    """Analytic initial data: value(x,y) -> (...,4), gradient -> ((...,4), (...,4))."""

    breaks = ()

    def __init__(self, value, gradient):
        self.value = value
        self.gradient = gradient


class UniformField(SmoothField):
    def __init__(self, state):
        state = np.asarray(state, dtype=float)

        def value(x, y):
            return np.broadcast_to(state, np.shape(x) + (4,)).copy()

        def gradient(x, y):
            z = np.zeros(np.shape(x) + (4,))
            return z, z.copy()

        super().__init__(value, gradient)
        self.state = state


class PiecewiseField:
    """Smooth pieces separated by straight break lines a*x + b*y = c."""

    def __init__(self, breaks, selector, pieces):
        self.breaks = list(breaks)
        self.selector = selector
        self.pieces = pieces

    def value(self, x, y):
        idx = self.selector(np.asarray(x), np.asarray(y))
        out = np.zeros(np.shape(x) + (4,))
        for k, piece in enumerate(self.pieces):
            m = idx == k
            if m.any():
                out[m] = piece.value(np.asarray(x)[m], np.asarray(y)[m])
        return out

    def gradient(self, x, y):
        idx = self.selector(np.asarray(x), np.asarray(y))
        gx = np.zeros(np.shape(x) + (4,))
        gy = np.zeros(np.shape(x) + (4,))
        for k, piece in enumerate(self.pieces):
            m = idx == k
            if m.any():
                a, b = piece.gradient(np.asarray(x)[m], np.asarray(y)[m])
                gx[m], gy[m] = a, b
        return gx, gy


def advected_sine_field(gamma, t=0.0):
    """rho = 1 + 0.2 sin(pi(x+y)) advected with (U,V) = (1,1) at p = 1."""

    def value(x, y):
        rho = 1.0 + 0.2 * np.sin(np.pi * (x + y - 2.0 * t))
        return primitive_to_conserved(
            rho, np.ones_like(rho), np.ones_like(rho), np.ones_like(rho), gamma
        )

    def gradient(x, y):
        d = 0.2 * np.pi * np.cos(np.pi * (x + y - 2.0 * t))
        g = np.stack([d, d, d, d], axis=-1)  # E = p/(g-1) + rho -> dE = drho
        return g, g.copy()

    return SmoothField(value, gradient)


def x_split_field(xsplits, states, gamma):
    """Piecewise-constant states split at vertical lines."""
    xsplits = list(xsplits)

    def selector(x, y):
        return np.searchsorted(np.asarray(xsplits), np.asarray(x), side="right")

    pieces = [UniformField(prim_state(*s, gamma)) for s in states]
    breaks = [(1.0, 0.0, xs) for xs in xsplits]
    return PiecewiseField(breaks, selector, pieces)


# ---------------------------------------------------------------------------
# case specs


@dataclass
class CaseSpec:
    id: str
    domain: tuple
    h: float
    mesh_kind: str
    tags: tuple
    field: object
    t_end: float
    cfl: float = 0.4
    gamma: float = 1.4
    viscosity: float = None
    dt_law: tuple = None
    bc_params: dict = field(default_factory=dict)
    seed: int = 0
    category: str = "acceptance"  # acceptance | smoke | extended
    notes: str = ""
    mesh_builder: object = None  # overrides the rectangle generator

    def build_mesh(self, h=None, kind=None, seed=None):
        if self.mesh_builder is not None:
            return self.mesh_builder(h or self.h)
        return generate_mesh(
            kind or self.mesh_kind,
            self.domain,
            h or self.h,
            seed=self.seed if seed is None else seed,
            tags=self.tags,
        )


def _sod_like(case_id, left, right, t_end, notes=""):
    gamma = 1.4
    return CaseSpec(
        id=case_id,
        domain=(0.0, 0.0, 1.0, 0.5),
        h=1 / 100,
        mesh_kind="irregular",
        tags=("outflow", "outflow", "wall_slip", "wall_slip"),
        field=x_split_field([0.5], [left, right], gamma),
        t_end=t_end,
        notes=notes,
    )


def step_tunnel_mesh(h):
    """Mach-3 wind tunnel with a step: lattice filtered around the notch."""
    pts, interior = lattice_points((0.0, 0.0, 3.0, 1.0), h)
    # keep the lattice aligned with the step corner (0.6, 0.2)
    keep = ~((pts[:, 0] > 0.6 + 1e-9) & (pts[:, 1] < 0.2 - 1e-9))
    pts = pts[keep]
    on_step_edge = (np.abs(pts[:, 0] - 0.6) < 1e-9) & (pts[:, 1] < 0.2 + 1e-9)
    cells = triangulate(pts)
    mids = pts[cells].mean(axis=1)
    cells = cells[~((mids[:, 0] > 0.6) & (mids[:, 1] < 0.2))]
    used = np.unique(cells)
    remap = -np.ones(len(pts), dtype=np.int64)
    remap[used] = np.arange(used.size)
    pts = pts[used]
    cells = remap[cells]

    def tag(mx, my):
        if abs(mx - 0.0) < 1e-9:
            return "inflow"
        if abs(mx - 3.0) < 1e-9:
            return "outflow"
        return "wall_slip"

    tol = 1e-9
    edge_count = {}
    for tri in cells:
        for e in range(3):
            a, b = int(tri[e]), int(tri[(e + 1) % 3])
            key = (min(a, b), max(a, b))
            edge_count[key] = edge_count.get(key, 0) + 1
    btags = {}
    for key, cnt in edge_count.items():
        if cnt == 1:
            m = 0.5 * (pts[key[0]] + pts[key[1]])
            btags[key] = tag(m[0], m[1])
    return build_mesh(pts, cells, btags)


def dmr_params():
    gamma = 1.4
    post = prim_state(8.0, 4.125 * np.sqrt(3.0), -4.125, 116.5, gamma)
    pre = prim_state(1.4, 0.0, 0.0, 1.0, gamma)
    return {"x0": 1.0 / 6.0, "speed": 20.0, "post": post, "pre": pre}


def case_catalog():
    """All benchmark cases addressable from the CLI."""
    gamma = 1.4
    cases = {}

    def add(spec):
        cases[spec.id] = spec

    add(
        CaseSpec(
            id="advect_sine",
            domain=(0.0, 0.0, 2.0, 2.0),
            h=1 / 10,
            mesh_kind="regular",
            tags=("periodic_x", "periodic_x", "periodic_y", "periodic_y"),
            field=advected_sine_field(gamma),
            t_end=2.0,
            cfl=1.0,
            viscosity=0.0,
            notes="density-perturbation advection accuracy test (exact Euler: "
            "tau carries only the pressure-jump term)",
        )
    )

    add(_sod_like("sod", (1.0, 0.0, 0.0, 1.0), (0.125, 0.0, 0.0, 0.1), 0.2))
    add(
        _sod_like(
            "lax", (0.445, 0.698, 0.0, 3.528), (0.5, 0.0, 0.0, 0.571), 0.16
        )
    )

    shu_left = (3.857134, 2.629369, 0.0, 10.33333)

    def shu_right_value(x, y):
        rho = 1.0 + 0.2 * np.sin(5.0 * x)
        z = np.zeros_like(rho)
        return primitive_to_conserved(rho, z, z, np.ones_like(rho), gamma)

    def shu_right_gradient(x, y):
        d = np.cos(5.0 * x)
        gx = np.stack([d, 0 * d, 0 * d, 0 * d], axis=-1)
        return gx, np.zeros_like(gx)

    shu_field = PiecewiseField(
        [(1.0, 0.0, 1.0)],
        lambda x, y: (np.asarray(x) > 1.0).astype(int),
        [
            UniformField(prim_state(*shu_left, gamma)),
            SmoothField(shu_right_value, shu_right_gradient),
        ],
    )
    add(
        CaseSpec(
            id="shu_osher",
            domain=(0.0, 0.0, 10.0, 0.25),
            h=1 / 40,
            mesh_kind="irregular",
            tags=("inflow", "outflow", "wall_slip", "wall_slip"),
            field=shu_field,
            t_end=1.8,
            bc_params={"inflow": {"state": prim_state(*shu_left, gamma)}},
            notes="shock / high-frequency density wave interaction",
        )
    )

    add(
        CaseSpec(
            id="blast_wave",
            domain=(0.0, 0.0, 1.0, 0.25),
            h=1 / 400,
            mesh_kind="regular",
            tags=("wall_slip", "wall_slip", "wall_slip", "wall_slip"),
            field=x_split_field(
                [0.1, 0.9],
                [(1.0, 0.0, 0.0, 1000.0), (1.0, 0.0, 0.0, 0.01), (1.0, 0.0, 0.0, 100.0)],
                gamma,
            ),
            t_end=0.038,
            cfl=0.2,
            category="smoke",
            notes="interacting blast waves; CFL 0.2",
        )
    )

    dmr = dmr_params()
    s3 = 1.0 / np.sqrt(3.0)

    def dmr_tag_bottom(mx, my):
        return "post_shock_dmr" if mx < dmr["x0"] else "wall_slip"

    add(
        CaseSpec(
            id="dmr",
            domain=(0.0, 0.0, 3.2, 1.0),
            h=1 / 120,
            mesh_kind="regular",
            tags=("inflow", "outflow", dmr_tag_bottom, "top_dmr"),
            field=PiecewiseField(
                [(1.0, -s3, dmr["x0"])],
                lambda x, y: (np.asarray(x) - s3 * np.asarray(y) > dmr["x0"]).astype(int),
                [UniformField(dmr["post"]), UniformField(dmr["pre"])],
            ),
            t_end=0.2,
            bc_params={
                "inflow": {"state": dmr["post"]},
                "post_shock_dmr": dmr,
                "top_dmr": dmr,
            },
            category="smoke",
            notes="Mach-10 double Mach reflection",
        )
    )

    add(
        CaseSpec(
            id="forward_step",
            domain=(0.0, 0.0, 3.0, 1.0),
            h=1 / 60,
            mesh_kind="regular",
            tags=("inflow", "outflow", "wall_slip", "wall_slip"),
            field=UniformField(prim_state(1.0, 3.0, 0.0, 1.0 / 1.4, gamma)),
            t_end=4.0,
            bc_params={"inflow": {"state": prim_state(1.0, 3.0, 0.0, 1.0 / 1.4, gamma)}},
            mesh_builder=step_tunnel_mesh,
            category="smoke",
            notes="Mach-3 wind tunnel with a step",
        )
    )

    add(
        CaseSpec(
            id="freestream",
            domain=(0.0, 0.0, 1.0, 1.0),
            h=1 / 10,
            mesh_kind="irregular",
            tags=("inflow", "outflow", "wall_slip", "wall_slip"),
            field=UniformField(prim_state(1.0, 0.5, 0.0, 1.0, gamma)),
            t_end=1.0,
            bc_params={"inflow": {"state": prim_state(1.0, 0.5, 0.0, 1.0, gamma)}},
            notes="uniform flow with mixed boundary tags",
        )
    )

    u_lid = 0.15 * np.sqrt(gamma)
    add(
        CaseSpec(
            id="cavity_re1000",
            domain=(0.0, 0.0, 1.0, 1.0),
            h=1 / 32,
            mesh_kind="regular",
            tags=(
                "wall_noslip_isothermal",
                "wall_noslip_isothermal",
                "wall_noslip_isothermal",
                "wall_noslip_isothermal",
            ),
            field=UniformField(prim_state(1.0, 0.0, 0.0, 1.0, gamma)),
            t_end=30.0,
            viscosity=u_lid / 1000.0,
            bc_params={
                "wall_noslip_isothermal": {
                    "temperature": 1.0,
                    "velocity_fn": lambda pos: np.where(
                        pos[:, [1]] > 1.0 - 1e-9, np.array([[u_lid, 0.0]]), 0.0
                    ),
                }
            },
            category="extended",
            notes="lid-driven cavity, Re 1000, lid Mach 0.15 (R = 1 units)",
        )
    )

    ma, re = 0.15, 1.0e3
    u_inf = ma * np.sqrt(gamma)
    add(
        CaseSpec(
            id="laminar_flat_plate",
            domain=(-0.25, 0.0, 1.0, 0.5),
            h=1 / 40,
            mesh_kind="regular",
            tags=(
                "inflow",
                "outflow",
                lambda mx, my: "wall_slip" if mx < 0 else "wall_noslip_adiabatic",
                "outflow",
            ),
            field=UniformField(prim_state(1.0, u_inf, 0.0, 1.0, gamma)),
            t_end=10.0,
            viscosity=u_inf / re,
            bc_params={"inflow": {"state": prim_state(1.0, u_inf, 0.0, 1.0, gamma)}},
            category="extended",
            notes="uniform-mesh reduced-Re smoke version; the stretched-mesh "
            "high-Re setup is out of reach of the rectangle generator",
        )
    )

    # sound/entropy/vorticity pulses on a uniform stream (ungated config)
    eps1, eps2, eps3 = 1e-2, 1e-3, 4e-4
    b1, b2 = 3.0, 5.0
    a1 = np.log(2.0) / b1**2
    a2 = np.log(2.0) / b2**2
    x1c, x2c = -100.0 / 3.0, 100.0 / 3.0

    def pulse_value(x, y):
        r1 = (x - x1c) ** 2 + y**2
        r2 = (x - x2c) ** 2 + y**2
        rho = 1.0 + eps1 * np.exp(-a1 * r1) + eps2 * np.exp(-a2 * r2)
        p = 1.0 / gamma + eps1 * np.exp(-a1 * r1)
        U = 0.5 + eps3 * np.exp(-a2 * r2) * y
        V = -eps3 * np.exp(-a2 * r2) * (x - x2c)
        return primitive_to_conserved(rho, U, V, p, gamma)

    def pulse_gradient(x, y):
        # initialized numerically; the pulses are ungated smoke configs
        d = 1e-6
        gx = (pulse_value(x + d, y) - pulse_value(x - d, y)) / (2 * d)
        gy = (pulse_value(x, y + d) - pulse_value(x, y - d)) / (2 * d)
        return gx, gy

    add(
        CaseSpec(
            id="acoustic_pulses",
            domain=(-125.0, -125.0, 125.0, 125.0),
            h=2.0,
            mesh_kind="irregular",
            tags=("outflow", "outflow", "outflow", "outflow"),
            field=SmoothField(pulse_value, pulse_gradient),
            t_end=56.9,
            bc_params={},
            category="extended",
            notes="sound/entropy/vorticity pulses; buffer region approximated "
            "by zero-order outflow",
        )
    )

    return cases


# ---------------------------------------------------------------------------
# exact Riemann solver (verification oracle)


@dataclass
class RiemannSolution:
    p_star: float
    u_star: float
    left: tuple
    right: tuple
    gamma: float
    pattern: str

    def sample(self, xi):
        """Self-similar state (rho, u, p) at xi = x/t."""
        return _sample_riemann(self, np.asarray(xi, dtype=float))


def _fk(p, rho_k, p_k, gamma):
    a_k = np.sqrt(gamma * p_k / rho_k)
    if p > p_k:
        A = 2.0 / ((gamma + 1.0) * rho_k)
        B = (gamma - 1.0) / (gamma + 1.0) * p_k
        f = (p - p_k) * np.sqrt(A / (B + p))
        df = np.sqrt(A / (B + p)) * (1.0 - 0.5 * (p - p_k) / (B + p))
    else:
        f = 2.0 * a_k / (gamma - 1.0) * ((p / p_k) ** ((gamma - 1) / (2 * gamma)) - 1.0)
        df = 1.0 / (rho_k * a_k) * (p / p_k) ** (-(gamma + 1) / (2 * gamma))
    return f, df


def exact_riemann(left, right, gamma=1.4, tol=1e-12):
    """Star-region solution of the 1D Riemann problem (Godunov oracle).

    left/right = (rho, u, p).  Raises on vacuum-forming data.
    """
    rho_l, u_l, p_l = left
    rho_r, u_r, p_r = right
    if min(rho_l, rho_r, p_l, p_r) <= 0:
        raise RiemannError("nonpositive input state")
    a_l = np.sqrt(gamma * p_l / rho_l)
    a_r = np.sqrt(gamma * p_r / rho_r)
    if 2.0 * (a_l + a_r) / (gamma - 1.0) <= u_r - u_l:
        raise RiemannError("vacuum-forming data")

    # two-rarefaction initial guess
    z = (gamma - 1.0) / (2.0 * gamma)
    p = (
        (a_l + a_r - 0.5 * (gamma - 1.0) * (u_r - u_l))
        / (a_l / p_l**z + a_r / p_r**z)
    ) ** (1.0 / z)
    p = max(p, 1e-14)
    for _ in range(100):
        fl, dfl = _fk(p, rho_l, p_l, gamma)
        fr, dfr = _fk(p, rho_r, p_r, gamma)
        dp = (fl + fr + (u_r - u_l)) / (dfl + dfr)
        p_new = p - dp
        if p_new <= 0:
            p_new = 0.5 * p
        if abs(p_new - p) < tol * max(p, p_new):
            p = p_new
            break
        p = p_new
    fl, _ = _fk(p, rho_l, p_l, gamma)
    fr, _ = _fk(p, rho_r, p_r, gamma)
    u = 0.5 * (u_l + u_r) + 0.5 * (fr - fl)
    pattern = ("shock" if p > p_l else "fan") + "-" + ("shock" if p > p_r else "fan")
    return RiemannSolution(
        p_star=float(p), u_star=float(u), left=tuple(left), right=tuple(right),
        gamma=gamma, pattern=pattern,
    )


def _sample_riemann(sol, xi):
    gamma = sol.gamma
    g1 = (gamma - 1.0) / (gamma + 1.0)
    rho_l, u_l, p_l = sol.left
    rho_r, u_r, p_r = sol.right
    a_l = np.sqrt(gamma * p_l / rho_l)
    a_r = np.sqrt(gamma * p_r / rho_r)
    ps, us = sol.p_star, sol.u_star

    rho = np.empty_like(xi)
    u = np.empty_like(xi)
    p = np.empty_like(xi)

    Lside = xi < us
    # left wave
    if ps > p_l:  # shock
        s_l = u_l - a_l * np.sqrt((gamma + 1) / (2 * gamma) * ps / p_l + (gamma - 1) / (2 * gamma))
        rho_sl = rho_l * ((ps / p_l + g1) / (g1 * ps / p_l + 1.0))
        reg = Lside & (xi < s_l)
        rho[reg], u[reg], p[reg] = rho_l, u_l, p_l
        reg = Lside & (xi >= s_l)
        rho[reg], u[reg], p[reg] = rho_sl, us, ps
    else:  # rarefaction
        a_sl = a_l * (ps / p_l) ** ((gamma - 1) / (2 * gamma))
        head, tail = u_l - a_l, us - a_sl
        reg = Lside & (xi < head)
        rho[reg], u[reg], p[reg] = rho_l, u_l, p_l
        reg = Lside & (xi >= tail)
        rho[reg] = rho_l * (ps / p_l) ** (1 / gamma)
        u[reg], p[reg] = us, ps
        reg = Lside & (xi >= head) & (xi < tail)
        fac = 2 / (gamma + 1) + g1 / a_l * (u_l - xi[reg])
        rho[reg] = rho_l * fac ** (2 / (gamma - 1))
        u[reg] = 2 / (gamma + 1) * (a_l + 0.5 * (gamma - 1) * u_l + xi[reg])
        p[reg] = p_l * fac ** (2 * gamma / (gamma - 1))

    Rside = ~Lside
    if ps > p_r:  # shock
        s_r = u_r + a_r * np.sqrt((gamma + 1) / (2 * gamma) * ps / p_r + (gamma - 1) / (2 * gamma))
        rho_sr = rho_r * ((ps / p_r + g1) / (g1 * ps / p_r + 1.0))
        reg = Rside & (xi > s_r)
        rho[reg], u[reg], p[reg] = rho_r, u_r, p_r
        reg = Rside & (xi <= s_r)
        rho[reg], u[reg], p[reg] = rho_sr, us, ps
    else:
        a_sr = a_r * (ps / p_r) ** ((gamma - 1) / (2 * gamma))
        head, tail = u_r + a_r, us + a_sr
        reg = Rside & (xi > head)
        rho[reg], u[reg], p[reg] = rho_r, u_r, p_r
        reg = Rside & (xi <= tail)
        rho[reg] = rho_r * (ps / p_r) ** (1 / gamma)
        u[reg], p[reg] = us, ps
        reg = Rside & (xi <= head) & (xi > tail)
        fac = 2 / (gamma + 1) - g1 / a_r * (u_r - xi[reg])
        rho[reg] = rho_r * fac ** (2 / (gamma - 1))
        u[reg] = 2 / (gamma + 1) * (-a_r + 0.5 * (gamma - 1) * u_r + xi[reg])
        p[reg] = p_r * fac ** (2 * gamma / (gamma - 1))

    return rho, u, p


# ---------------------------------------------------------------------------
# error norms and convergence orders


def exact_cell_averages(mesh, value_fn, refine=3):
    """Reference cell averages of an analytic field by subdivided quadrature."""
    tri = mesh.nodes[mesh.cells]
    base, wbase = triangle_quadrature_points(
        np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), refine=refine
    )
    lam = np.stack([1.0 - base[:, 0] - base[:, 1], base[:, 0], base[:, 1]], axis=1)
    out = None
    for chunk in np.array_split(np.arange(mesh.ncells), max(1, mesh.ncells // 2000)):
        pts = np.einsum("qb,cbx->cqx", lam, tri[chunk])
        vals = value_fn(pts[..., 0], pts[..., 1])
        avg = np.einsum("q,cq...->c...", wbase, vals) / wbase.sum()
        if out is None:
            out = np.zeros((mesh.ncells,) + avg.shape[1:])
        out[chunk] = avg
    return out


def error_norms(values, reference, mesh):
    """(L1, Linf) of a cell-average field against reference cell averages."""
    diff = np.abs(np.asarray(values) - np.asarray(reference))
    l1 = float((mesh.areas * diff).sum() / mesh.areas.sum())
    return l1, float(diff.max())


def convergence_order(errors, hs):
    """order_i = log(e_{i-1}/e_i) / log(h_{i-1}/h_i); inf for zero error."""
    errors = np.asarray(errors, dtype=float)
    hs = np.asarray(hs, dtype=float)
    if len(errors) != len(hs) or len(errors) < 2:
        raise ValueError("need matching error/h sequences of length >= 2")
    if np.any(np.diff(hs) >= 0):
        raise ValueError("h must be strictly decreasing")
    out = []
    for i in range(1, len(errors)):
        if errors[i] == 0.0:
            out.append(np.inf)
        else:
            out.append(float(np.log(errors[i - 1] / errors[i]) / np.log(hs[i - 1] / hs[i])))
    return out
