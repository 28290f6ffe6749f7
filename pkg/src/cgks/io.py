"""Configuration parsing, output writers and line probes."""

from __future__ import annotations

import configparser
import io as _io
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .kinetic import conserved_to_primitive
from .reconstruction import evaluate_at_points

log = logging.getLogger(__name__)


class ConfigError(Exception):
    pass


VALID_KEYS = {
    "case": str,
    "mesh_file": str,
    "mesh_kind": str,
    "h": float,
    "seed": int,
    "degree": int,
    "cfl": float,
    "dt_fixed": float,
    "dt_law": str,
    "q": int,
    "weno_c": float,
    "weno_power": float,
    "weno_eps": float,
    "gamma": float,
    "viscosity": float,
    "t_end": float,
    "max_steps": int,
    "output_dir": str,
    "probe": str,
    "probe_samples": int,
    "workers": int,
    "reconstruction": str,
    "grad_weight": float,
    "freestream": str,
    "bc_left": str,
    "bc_right": str,
    "bc_bottom": str,
    "bc_top": str,
    "field_every": int,
}


@dataclass
class RunConfig:
    case: str = None
    mesh_file: str = None
    mesh_kind: str = None
    h: float = None
    seed: int = None
    degree: int = 3
    cfl: float = None
    dt_fixed: float = None
    dt_law: str = "cfl"
    q: int = 2
    weno_c: float = 5.0
    weno_power: float = 3.0
    weno_eps: float = 1e-8
    gamma: float = None
    viscosity: float = None
    t_end: float = None
    max_steps: int = 10**9
    output_dir: str = "out"
    probe: str = None
    probe_samples: int = 400
    workers: int = 1
    reconstruction: str = "nonlinear"
    grad_weight: float = 1.0
    freestream: str = None
    bc_left: str = None
    bc_right: str = None
    bc_bottom: str = None
    bc_top: str = None
    field_every: int = 0

    def validate(self):
        if self.degree not in (3, 4, 5):
            raise ConfigError(f"degree must be one of 3, 4, 5, got {self.degree}")
        if self.q not in (1, 2, 3):
            raise ConfigError(f"q must be 1, 2 or 3, got {self.q}")
        if self.cfl is not None and self.dt_fixed is not None:
            raise ConfigError("cfl and dt_fixed are contradictory; set only one")
        if self.reconstruction not in ("nonlinear", "linear"):
            raise ConfigError("reconstruction must be 'nonlinear' or 'linear'")
        if self.mesh_kind not in (None, "regular", "irregular"):
            raise ConfigError("mesh_kind must be 'regular' or 'irregular'")
        return self


def parse_config(path):
    """Flat key-value configuration; a bare file with no section is allowed."""
    text = open(path).read()
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError:
        cp.read_string("[run]\n" + text)
    cfg = RunConfig()
    for section in cp.sections():
        for key, raw in cp.items(section):
            if key not in VALID_KEYS:
                raise ConfigError(
                    f"unknown key {key!r}; valid keys: {', '.join(sorted(VALID_KEYS))}"
                )
            typ = VALID_KEYS[key]
            try:
                setattr(cfg, key, typ(raw))
            except ValueError as e:
                raise ConfigError(f"bad value for {key!r}: {raw!r}") from e
    return cfg.validate()


# ---------------------------------------------------------------------------
# field output (legacy ASCII unstructured-grid format)


def write_field(path, mesh, W, gamma):
    """Cell-centered rho, U, V, p, Mach on the triangulation."""
    rho, U, V, p = conserved_to_primitive(W[: mesh.ncells], gamma)
    mach = np.hypot(U, V) / np.sqrt(gamma * p / rho)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("cgks field output\n")
        fh.write("ASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(mesh.nodes)} double\n")
        for x, y in mesh.nodes:
            fh.write(f"{x:.9g} {y:.9g} 0\n")
        M = mesh.ncells
        fh.write(f"CELLS {M} {4 * M}\n")
        for a, b, c in mesh.cells:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"CELL_TYPES {M}\n")
        fh.write("5\n" * M)
        fh.write(f"CELL_DATA {M}\n")
        for name, arr in (
            ("density", rho),
            ("velocity_x", U),
            ("velocity_y", V),
            ("pressure", p),
            ("mach", mach),
        ):
            fh.write(f"SCALARS {name} double\nLOOKUP_TABLE default\n")
            fh.write("\n".join(f"{v:.9g}" for v in arr))
            fh.write("\n")


def read_field(path):
    """Minimal reader for the writer's output (round-trip checks)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    i = lines.index(next(l for l in lines if l.startswith("POINTS")))
    npts = int(lines[i].split()[1])
    pts = np.array([[float(v) for v in lines[i + 1 + k].split()[:2]] for k in range(npts)])
    i = next(j for j, l in enumerate(lines) if l.startswith("CELLS"))
    M = int(lines[i].split()[1])
    cells = np.array([[int(v) for v in lines[i + 1 + k].split()[1:]] for k in range(M)])
    data = {}
    j = 0
    while j < len(lines):
        if lines[j].startswith("SCALARS"):
            name = lines[j].split()[1]
            vals = [float(lines[j + 2 + k]) for k in range(M)]
            data[name] = np.array(vals)
            j += 2 + M
        else:
            j += 1
    return pts, cells, data


def save_state(path, mesh, W, GX, GY, gamma, t, meta=None):
    """Plain state dump sufficient to restart probes and postprocessing."""
    np.savez_compressed(
        path,
        nodes=mesh.nodes,
        cells=mesh.cells,
        face_nodes=mesh.face_nodes,
        face_tags=np.array(mesh.face_tag, dtype=object),
        W=W,
        GX=GX,
        GY=GY,
        gamma=gamma,
        t=t,
        meta=np.array(str(meta or "")),
    )


def load_state(path):
    from .mesh import build_mesh

    z = np.load(path, allow_pickle=True)
    tags = {}
    for (a, b), tag in zip(z["face_nodes"], z["face_tags"]):
        if tag:
            tags[(min(int(a), int(b)), max(int(a), int(b)))] = str(tag)
    mesh = build_mesh(z["nodes"], z["cells"], tags)
    return mesh, z["W"], z["GX"], z["GY"], float(z["gamma"]), float(z["t"])


# ---------------------------------------------------------------------------
# probes


def locate_cells(mesh, points, tol=1e-10):
    """Containing cell per point, or -1 when outside the mesh."""
    tree = cKDTree(mesh.centroids)
    pts = np.asarray(points, dtype=float)
    k = min(24, mesh.ncells)
    _, cand = tree.query(pts, k=k)
    cand = np.atleast_2d(cand)
    tri = mesh.nodes[mesh.cells]
    out = np.full(len(pts), -1, dtype=np.int64)
    for i, p in enumerate(pts):
        for c in cand[i]:
            a, b, d = tri[c]
            den = (b[1] - d[1]) * (a[0] - d[0]) + (d[0] - b[0]) * (a[1] - d[1])
            l1 = ((b[1] - d[1]) * (p[0] - d[0]) + (d[0] - b[0]) * (p[1] - d[1])) / den
            l2 = ((d[1] - a[1]) * (p[0] - d[0]) + (a[0] - d[0]) * (p[1] - d[1])) / den
            l3 = 1.0 - l1 - l2
            if min(l1, l2, l3) >= -tol:
                out[i] = c
                break
    return out


def sample_reconstruction(mesh, coeffs, degree, points):
    """Values of the reconstructed field at points; NaN outside the mesh."""
    cells = locate_cells(mesh, points)
    inside = cells >= 0
    vals = np.full((len(points), coeffs.shape[2]), np.nan)
    if inside.any():
        vals[inside] = evaluate_at_points(
            mesh, coeffs, cells[inside], np.asarray(points)[inside], degree
        )
    return vals, inside


def write_probe(path, mesh, coeffs, degree, gamma, line, n):
    """CSV of x, y, rho, U, V, p sampled from the reconstruction on a line."""
    (x0, y0, x1, y1) = line
    s = (np.arange(n) + 0.5) / n
    pts = np.stack([x0 + s * (x1 - x0), y0 + s * (y1 - y0)], axis=1)
    vals, inside = sample_reconstruction(mesh, coeffs, degree, pts)
    if not inside.all():
        log.warning("probe: %d of %d points outside the mesh, skipped", (~inside).sum(), n)
    with open(path, "w") as fh:
        fh.write("x,y,rho,U,V,p\n")
        for p, v, ok in zip(pts, vals, inside):
            if not ok:
                continue
            rho, U, V, pr = conserved_to_primitive(v, gamma)
            fh.write(
                f"{p[0]:.9g},{p[1]:.9g},{rho:.9g},{U:.9g},{V:.9g},{pr:.9g}\n"
            )
    return pts, vals, inside


def write_conservation(path, totals):
    totals = np.asarray(totals)
    with open(path, "w") as fh:
        fh.write("step,mass,momentum_x,momentum_y,energy\n")
        for k, row in enumerate(totals):
            fh.write(f"{k}," + ",".join(f"{v:.14g}" for v in row) + "\n")
