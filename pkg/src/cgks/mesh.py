"""Unstructured triangular mesh: geometry, connectivity, stencils, quadrature.

Everything built here is immutable after construction and shared read-only by
the reconstruction and flux stages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay


class MeshError(Exception):
    pass


BOUNDARY_TAGS = (
    "wall_slip",
    "wall_noslip_adiabatic",
    "wall_noslip_isothermal",
    "inflow",
    "outflow",
    "periodic_x",
    "periodic_y",
    "post_shock_dmr",
    "top_dmr",
)

# degree-5 symmetric 7-point rule on the triangle, barycentric coordinates
_S15 = np.sqrt(15.0)
_A1 = (6.0 + _S15) / 21.0
_A2 = (6.0 - _S15) / 21.0
TRI_QP_BARY = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [1 - 2 * _A1, _A1, _A1],
        [_A1, 1 - 2 * _A1, _A1],
        [_A1, _A1, 1 - 2 * _A1],
        [1 - 2 * _A2, _A2, _A2],
        [_A2, 1 - 2 * _A2, _A2],
        [_A2, _A2, 1 - 2 * _A2],
    ]
)
TRI_QP_W = np.array(
    [9 / 40]
    + [(155.0 + _S15) / 1200.0] * 3
    + [(155.0 - _S15) / 1200.0] * 3
)


def tri_area(p1, p2, p3):
    """Signed area of a triangle (positive for counterclockwise nodes)."""
    return 0.5 * (
        (p2[..., 0] - p1[..., 0]) * (p3[..., 1] - p1[..., 1])
        - (p3[..., 0] - p1[..., 0]) * (p2[..., 1] - p1[..., 1])
    )


def subdivide_triangle(tri):
    """Split a triangle (3,2) into four congruent children (4,3,2)."""
    p1, p2, p3 = tri
    m12, m23, m31 = 0.5 * (p1 + p2), 0.5 * (p2 + p3), 0.5 * (p3 + p1)
    return np.array(
        [[p1, m12, m31], [m12, p2, m23], [m31, m23, p3], [m12, m23, m31]]
    )


def triangle_quadrature_points(tri, refine=0):
    """Quadrature points and weights over a triangle; weights sum to its area.

    refine=k subdivides the triangle 4**k times before applying the base
    degree-5 rule, raising the effective accuracy for non-polynomial fields.
    """
    tris = np.asarray(tri, dtype=float)[None]
    for _ in range(refine):
        tris = np.concatenate([subdivide_triangle(t) for t in tris])
    pts = np.einsum("qb,tbx->tqx", TRI_QP_BARY, tris).reshape(-1, 2)
    areas = np.abs(tri_area(tris[:, 0], tris[:, 1], tris[:, 2]))
    w = (areas[:, None] * TRI_QP_W[None, :]).reshape(-1)
    return pts, w


def triangle_average(f, tri, refine=2):
    """Average of f(x, y) over a triangle by the subdivided degree-5 rule."""
    pts, w = triangle_quadrature_points(tri, refine)
    vals = f(pts[:, 0], pts[:, 1])
    return np.tensordot(w, vals, axes=(0, 0)) / w.sum()


def clip_polygon_halfplane(poly, a, b, c):
    """Clip a polygon (list of 2d points) to the half-plane a*x + b*y <= c."""
    out = []
    n = len(poly)
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        dp = a * p[0] + b * p[1] - c
        dq = a * q[0] + b * q[1] - c
        if dp <= 0:
            out.append(p)
        if (dp < 0 < dq) or (dq < 0 < dp):
            t = dp / (dp - dq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def polygon_triangles(poly):
    """Fan triangulation of a convex polygon."""
    return [
        np.array([poly[0], poly[i], poly[i + 1]])
        for i in range(1, len(poly) - 1)
    ]


@dataclass
class FaceQuadrature:
    """Gauss points on every face; weights are normalized to sum to 1."""

    q: int
    s: np.ndarray        # (q,) positions along the face in [0,1]
    w: np.ndarray        # (q,)
    pos: np.ndarray      # (F, q, 2) physical coordinates


def gauss_segment(q):
    if q == 1:
        return np.array([0.5]), np.array([1.0])
    if q == 2:
        d = 0.5 / np.sqrt(3.0)
        return np.array([0.5 - d, 0.5 + d]), np.array([0.5, 0.5])
    if q == 3:
        d = 0.5 * np.sqrt(0.6)
        return np.array([0.5 - d, 0.5, 0.5 + d]), np.array(
            [5 / 18, 8 / 18, 5 / 18]
        )
    raise ValueError(f"face quadrature supports q in 1..3, got {q}")


@dataclass
class Mesh:
    nodes: np.ndarray
    cells: np.ndarray
    areas: np.ndarray
    centroids: np.ndarray
    h_inscribed: np.ndarray
    face_nodes: np.ndarray
    face_left: np.ndarray
    face_right: np.ndarray     # cell id, or -1 for a non-periodic boundary
    face_normal: np.ndarray    # unit, outward from the left cell
    face_len: np.ndarray
    face_tag: list
    face_shift: np.ndarray     # translation placing the right cell adjacent
    cell_faces: np.ndarray
    neighbors: np.ndarray      # (M,3) cell or ghost id per local edge
    neighbor_shift: np.ndarray
    ghost_tri: np.ndarray      # (G,3,2) mirrored triangles
    ghost_src: np.ndarray
    ghost_face: np.ndarray
    frame_origin: np.ndarray
    frame_J: np.ndarray
    frame_detJ: np.ndarray
    frame_Jinv: np.ndarray
    bbox: tuple

    @property
    def ncells(self):
        return len(self.cells)

    @property
    def nghost(self):
        return len(self.ghost_src)

    @property
    def nfaces(self):
        return len(self.face_left)

    def is_boundary_face(self, f):
        return self.face_right[f] < 0

    @property
    def boundary_faces(self):
        return np.nonzero(self.face_right < 0)[0]

    def member_triangle(self, cell_id, shift=(0.0, 0.0)):
        """Physical triangle of a real or ghost cell, translated by shift."""
        if cell_id < self.ncells:
            tri = self.nodes[self.cells[cell_id]]
        else:
            tri = self.ghost_tri[cell_id - self.ncells]
        return tri + np.asarray(shift)

    def member_area(self, cell_id):
        if cell_id < self.ncells:
            return self.areas[cell_id]
        return self.areas[self.ghost_src[cell_id - self.ncells]]

    def face_quadrature(self, q=2):
        s, w = gauss_segment(q)
        p0 = self.nodes[self.face_nodes[:, 0]]
        p1 = self.nodes[self.face_nodes[:, 1]]
        pos = p0[:, None, :] + s[None, :, None] * (p1 - p0)[:, None, :]
        return FaceQuadrature(q=q, s=s, w=w, pos=pos)

    def reference_coords(self, cell_id, points):
        """Map physical points into a cell's reference frame."""
        rel = np.asarray(points) - self.frame_origin[cell_id]
        return rel @ self.frame_Jinv[cell_id].T


def _orient_ccw(nodes, cells):
    p = nodes[cells]
    a = tri_area(p[:, 0], p[:, 1], p[:, 2])
    flip = a < 0
    cells = cells.copy()
    cells[flip] = cells[flip][:, [0, 2, 1]]
    return cells, np.abs(a)


def build_mesh(nodes, cells, boundary_tags):
    """Assemble a Mesh from raw arrays.

    boundary_tags maps a sorted node-index pair to a tag string; every
    boundary edge must be covered.
    """
    nodes = np.asarray(nodes, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    cells, areas = _orient_ccw(nodes, cells)
    scale = np.sqrt(areas.mean())
    bad = np.nonzero(areas < 1e-14 * scale**2 + 1e-300)[0]
    if areas.size and areas.min() <= 0 or bad.size:
        raise MeshError(f"degenerate (zero-area) cell {bad[0] if bad.size else int(np.argmin(areas))}")
    centroids = nodes[cells].mean(axis=1)

    # faces from cell edges; left = first (lowest-id) cell seen
    edge_map = {}
    for c in range(len(cells)):
        tri = cells[c]
        for e in range(3):
            a, b = int(tri[e]), int(tri[(e + 1) % 3])
            edge_map.setdefault((min(a, b), max(a, b)), []).append((c, e, a, b))

    face_nodes, face_left, face_right = [], [], []
    face_tag = []
    cell_faces = np.full((len(cells), 3), -1, dtype=np.int64)
    for key in sorted(edge_map):
        uses = edge_map[key]
        if len(uses) > 2:
            raise MeshError(f"edge {key} shared by more than two cells")
        c0, e0, a, b = uses[0]
        fid = len(face_nodes)
        face_nodes.append((a, b))
        face_left.append(c0)
        cell_faces[c0, e0] = fid
        if len(uses) == 2:
            c1, e1, _, _ = uses[1]
            if c1 == c0:
                raise MeshError(f"cell {c0} lists edge {key} twice")
            face_right.append(c1)
            face_tag.append("")
            cell_faces[c1, e1] = fid
        else:
            if key not in boundary_tags:
                raise MeshError(f"boundary edge {key} has no tag")
            face_right.append(-1)
            face_tag.append(boundary_tags[key])

    face_nodes = np.array(face_nodes, dtype=np.int64)
    face_left = np.array(face_left, dtype=np.int64)
    face_right = np.array(face_right, dtype=np.int64)
    tvec = nodes[face_nodes[:, 1]] - nodes[face_nodes[:, 0]]
    face_len = np.hypot(tvec[:, 0], tvec[:, 1])
    face_normal = np.stack([tvec[:, 1], -tvec[:, 0]], axis=1) / face_len[:, None]
    face_shift = np.zeros((len(face_nodes), 2))

    bbox = (
        nodes[:, 0].min(),
        nodes[:, 1].min(),
        nodes[:, 0].max(),
        nodes[:, 1].max(),
    )

    # pair periodic faces: each pair collapses into one interior-like face
    keep = np.ones(len(face_nodes), dtype=bool)
    for tag, axis in (("periodic_x", 0), ("periodic_y", 1)):
        ids = [f for f in range(len(face_nodes)) if face_tag[f] == tag]
        if not ids:
            continue
        mids = 0.5 * (nodes[face_nodes[ids, 0]] + nodes[face_nodes[ids, 1]])
        lo_val = min(m[axis] for m in mids)
        lo = [f for f, m in zip(ids, mids) if abs(m[axis] - lo_val) < 1e-9 * (1 + abs(lo_val))]
        hi = [f for f in ids if f not in lo]
        if len(lo) != len(hi):
            raise MeshError(f"unbalanced {tag} faces: {len(lo)} vs {len(hi)}")
        other_ax = 1 - axis
        tol = 1e-8 * max(1.0, bbox[2] - bbox[0], bbox[3] - bbox[1])
        hi_by_key = {}
        for f in hi:
            m = 0.5 * (nodes[face_nodes[f, 0]] + nodes[face_nodes[f, 1]])
            hi_by_key[round(m[other_ax] / tol)] = f
        for f in lo:
            m = 0.5 * (nodes[face_nodes[f, 0]] + nodes[face_nodes[f, 1]])
            g = hi_by_key.get(round(m[other_ax] / tol))
            if g is None:
                g = hi_by_key.get(round(m[other_ax] / tol) + 1)
            if g is None:
                g = hi_by_key.get(round(m[other_ax] / tol) - 1)
            if g is None:
                raise MeshError(f"no {tag} partner for face {f}")
            mg = 0.5 * (nodes[face_nodes[g, 0]] + nodes[face_nodes[g, 1]])
            face_right[f] = face_left[g]
            face_shift[f] = m - mg
            keep[g] = False
            # repoint the partner cell's local edge at the kept face
            cg = face_left[g]
            cell_faces[cg, np.nonzero(cell_faces[cg] == g)[0][0]] = f

    if not keep.all():
        remap = -np.ones(len(face_nodes), dtype=np.int64)
        remap[keep] = np.arange(keep.sum())
        face_nodes = face_nodes[keep]
        face_left = face_left[keep]
        face_right = face_right[keep]
        face_normal = face_normal[keep]
        face_len = face_len[keep]
        face_shift = face_shift[keep]
        face_tag = [t for t, k in zip(face_tag, keep) if k]
        cell_faces = remap[cell_faces]
        if (cell_faces < 0).any():
            raise MeshError("face remap failed")

    # ghosts: one mirrored cell per remaining boundary face
    bfaces = np.nonzero(face_right < 0)[0]
    ghost_tri = np.zeros((len(bfaces), 3, 2))
    ghost_src = np.zeros(len(bfaces), dtype=np.int64)
    ghost_face = np.zeros(len(bfaces), dtype=np.int64)
    ghost_of_face = {}
    for j, f in enumerate(bfaces):
        c = face_left[f]
        o = nodes[face_nodes[f, 0]]
        n = face_normal[f]
        tri = nodes[cells[c]]
        d = (tri - o) @ n
        ghost_tri[j] = tri - 2.0 * d[:, None] * n[None, :]
        ghost_src[j] = c
        ghost_face[j] = f
        ghost_of_face[f] = len(cells) + j

    # neighbor map in local edge order
    M = len(cells)
    neighbors = np.zeros((M, 3), dtype=np.int64)
    neighbor_shift = np.zeros((M, 3, 2))
    for c in range(M):
        for e in range(3):
            f = cell_faces[c, e]
            if face_left[f] == c:
                if face_right[f] >= 0:
                    neighbors[c, e] = face_right[f]
                    neighbor_shift[c, e] = face_shift[f]
                else:
                    neighbors[c, e] = ghost_of_face[f]
            else:
                neighbors[c, e] = face_left[f]
                neighbor_shift[c, e] = -face_shift[f]

    # reference frames
    p = nodes[cells]
    frame_origin = p[:, 0].copy()
    frame_J = np.stack(
        [p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2
    )  # columns (x2-x1, x3-x1)
    frame_detJ = (
        frame_J[:, 0, 0] * frame_J[:, 1, 1] - frame_J[:, 0, 1] * frame_J[:, 1, 0]
    )
    if np.any(np.abs(frame_detJ) < 1e-300):
        raise MeshError("singular reference transform (degenerate cell)")
    frame_Jinv = np.empty_like(frame_J)
    frame_Jinv[:, 0, 0] = frame_J[:, 1, 1] / frame_detJ
    frame_Jinv[:, 0, 1] = -frame_J[:, 0, 1] / frame_detJ
    frame_Jinv[:, 1, 0] = -frame_J[:, 1, 0] / frame_detJ
    frame_Jinv[:, 1, 1] = frame_J[:, 0, 0] / frame_detJ

    # inscribed-circle diameter: 4*area / perimeter
    side = np.stack(
        [
            np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
            np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
            np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
        ],
        axis=1,
    )
    h_inscribed = 4.0 * areas / side.sum(axis=1)

    mesh = Mesh(
        nodes=nodes,
        cells=cells,
        areas=areas,
        centroids=centroids,
        h_inscribed=h_inscribed,
        face_nodes=face_nodes,
        face_left=face_left,
        face_right=face_right,
        face_normal=face_normal,
        face_len=face_len,
        face_tag=face_tag,
        face_shift=face_shift,
        cell_faces=cell_faces,
        neighbors=neighbors,
        neighbor_shift=neighbor_shift,
        ghost_tri=ghost_tri,
        ghost_src=ghost_src,
        ghost_face=ghost_face,
        frame_origin=frame_origin,
        frame_J=frame_J,
        frame_detJ=frame_detJ,
        frame_Jinv=frame_Jinv,
        bbox=bbox,
    )
    _check_closed_cells(mesh)
    return mesh


def _check_closed_cells(mesh):
    acc = np.zeros((mesh.ncells, 2))
    for e in range(3):
        f = mesh.cell_faces[:, e]
        sign = np.where(mesh.face_left[f] == np.arange(mesh.ncells), 1.0, -1.0)
        acc += sign[:, None] * mesh.face_len[f, None] * mesh.face_normal[f]
    perim = sum(
        mesh.face_len[mesh.cell_faces[:, e]] for e in range(3)
    )
    rel = np.abs(acc).max(axis=1) / perim
    if rel.max() > 1e-12:
        raise MeshError(f"cell {int(rel.argmax())} violates the closed-polygon identity")


def load_mesh(path):
    """Read the ASCII mesh format; see save_mesh for the layout."""
    with open(path) as fh:
        lines = fh.read().splitlines()

    def fail(lineno, msg):
        raise MeshError(f"{path}:{lineno + 1}: {msg}")

    if not lines:
        raise MeshError(f"{path}: empty file")
    head = lines[0].split()
    if len(head) != 6 or head[0] != "nodes" or head[2] != "cells" or head[4] != "bfaces":
        fail(0, "expected header 'nodes N cells M bfaces B'")
    try:
        nn, nc, nb = int(head[1]), int(head[3]), int(head[5])
    except ValueError:
        fail(0, "non-integer counts in header")
    if len(lines) < 1 + nn + nc + nb:
        raise MeshError(f"{path}: truncated file")

    nodes = np.zeros((nn, 2))
    for i in range(nn):
        parts = lines[1 + i].split()
        try:
            nodes[i] = [float(parts[0]), float(parts[1])]
        except (ValueError, IndexError):
            fail(1 + i, "expected 'x y'")
    cells = np.zeros((nc, 3), dtype=np.int64)
    for i in range(nc):
        parts = lines[1 + nn + i].split()
        try:
            cells[i] = [int(parts[0]) - 1, int(parts[1]) - 1, int(parts[2]) - 1]
        except (ValueError, IndexError):
            fail(1 + nn + i, "expected 'n1 n2 n3'")
        if cells[i].min() < 0 or cells[i].max() >= nn:
            fail(1 + nn + i, "node index out of range")
    btags = {}
    for i in range(nb):
        parts = lines[1 + nn + nc + i].split()
        try:
            a, b, tag = int(parts[0]) - 1, int(parts[1]) - 1, parts[2]
        except (ValueError, IndexError):
            fail(1 + nn + nc + i, "expected 'n1 n2 tag'")
        if tag not in BOUNDARY_TAGS:
            fail(1 + nn + nc + i, f"unknown boundary tag {tag!r}")
        btags[(min(a, b), max(a, b))] = tag
    return build_mesh(nodes, cells, btags)


def save_mesh(path, nodes, cells, boundary_tags):
    """Write the ASCII mesh format (1-based node indices)."""
    with open(path, "w") as fh:
        fh.write(f"nodes {len(nodes)} cells {len(cells)} bfaces {len(boundary_tags)}\n")
        for x, y in nodes:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        for a, b, c in cells:
            fh.write(f"{a + 1} {b + 1} {c + 1}\n")
        for (a, b), tag in sorted(boundary_tags.items()):
            fh.write(f"{a + 1} {b + 1} {tag}\n")


def rectangle_tags(nodes, tris, bounds, tags):
    """Tag boundary edges of a rectangle mesh by the side they lie on.

    tags = (left, right, bottom, top); an entry may be a callable taking the
    edge midpoint and returning the tag (for split boundaries).
    """
    x0, y0, x1, y1 = bounds
    tol = 1e-9 * max(x1 - x0, y1 - y0)
    edge_count = {}
    for tri in tris:
        for e in range(3):
            a, b = int(tri[e]), int(tri[(e + 1) % 3])
            key = (min(a, b), max(a, b))
            edge_count[key] = edge_count.get(key, 0) + 1

    def resolve(tag, a, b):
        if callable(tag):
            m = 0.5 * (nodes[a] + nodes[b])
            return tag(m[0], m[1])
        return tag

    btags = {}
    for (a, b), cnt in edge_count.items():
        if cnt != 1:
            continue
        pa, pb = nodes[a], nodes[b]
        if abs(pa[0] - x0) < tol and abs(pb[0] - x0) < tol:
            btags[(a, b)] = resolve(tags[0], a, b)
        elif abs(pa[0] - x1) < tol and abs(pb[0] - x1) < tol:
            btags[(a, b)] = resolve(tags[1], a, b)
        elif abs(pa[1] - y0) < tol and abs(pb[1] - y0) < tol:
            btags[(a, b)] = resolve(tags[2], a, b)
        elif abs(pa[1] - y1) < tol and abs(pb[1] - y1) < tol:
            btags[(a, b)] = resolve(tags[3], a, b)
        else:
            raise MeshError(f"boundary edge {(a, b)} not on the rectangle outline")
    return btags


def lattice_points(domain, h):
    """Plain grid covering a rectangle at spacing ~h in both directions."""
    x0, y0, x1, y1 = domain
    lx, ly = x1 - x0, y1 - y0
    ncols = max(1, round(lx / h))
    nrows = max(1, round(ly / h))
    xs = x0 + lx / ncols * np.arange(ncols + 1)
    ys = y0 + ly / nrows * np.arange(nrows + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    interior = (
        (np.abs(pts[:, 0] - x0) > 1e-12 * max(1, lx))
        & (np.abs(pts[:, 0] - x1) > 1e-12 * max(1, lx))
        & (np.abs(pts[:, 1] - y0) > 1e-12 * max(1, ly))
        & (np.abs(pts[:, 1] - y1) > 1e-12 * max(1, ly))
    )
    return pts, interior


def split_cells(domain, h):
    """Uniform diagonal split of the grid squares (two triangles each)."""
    x0, y0, x1, y1 = domain
    ncols = max(1, round((x1 - x0) / h))
    nrows = max(1, round((y1 - y0) / h))

    def nid(i, j):
        return i * (nrows + 1) + j

    cells = []
    for i in range(ncols):
        for j in range(nrows):
            a, b, c, d = nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)
            cells.append((a, b, c))
            cells.append((a, c, d))
    return np.array(cells, dtype=np.int64)


def triangulate(points):
    """Delaunay triangulation, dropping degenerate slivers."""
    dt = Delaunay(points)
    tris = dt.simplices
    p = points[tris]
    a = np.abs(tri_area(p[:, 0], p[:, 1], p[:, 2]))
    tris = tris[a > 1e-12 * a.max()]
    return tris


def generate_mesh(kind, domain, h, seed=0, tags=("periodic_x", "periodic_x", "periodic_y", "periodic_y")):
    """Regular (near-uniform lattice) or irregular (perturbed) triangulation.

    tags assigns boundary conditions to the (left, right, bottom, top) sides.
    """
    nodes, cells = generate_points_cells(kind, domain, h, seed)
    btags = rectangle_tags(nodes, cells, domain, tags)
    return build_mesh(nodes, cells, btags)


def generate_points_cells(kind, domain, h, seed=0):
    if kind not in ("regular", "irregular"):
        raise ValueError(f"mesh kind must be 'regular' or 'irregular', got {kind!r}")
    pts, interior = lattice_points(domain, h)
    if kind == "regular":
        return pts, split_cells(domain, h)
    rng = np.random.default_rng(seed)
    base_off = rng.uniform(-0.3 * h, 0.3 * h, size=(interior.sum(), 2))
    amp = 1.0
    ref_area = h * h / 2.0
    for _ in range(10):
        p = pts.copy()
        p[interior] += amp * base_off
        cells = triangulate(p)
        q = p[cells]
        if np.abs(tri_area(q[:, 0], q[:, 1], q[:, 2])).min() > 0.1 * ref_area:
            return p, cells
        amp *= 0.5
    raise MeshError("could not generate a valid irregular mesh after 10 retries")
