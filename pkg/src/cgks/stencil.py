"""Compact reconstruction stencils and the reference-frame polynomial basis.

The stencil of a cell is the owner, its three edge neighbors (i, j, k) and the
neighbors' neighbors (i1, i2, j1, j2, k1, k2), at most ten members.  Geometry
rows are cell averages of the basis functions (and of their reference-frame
derivatives) over each member triangle mapped into the owner's frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from .mesh import Mesh, MeshError, TRI_QP_BARY, TRI_QP_W

# sub-stencil member patterns, as indices into the canonical member order
# (owner, i, j, k, i1, i2, j1, j2, k1, k2); the second entry is the member
# whose cell-averaged gradients join the least-squares system
SUB_PATTERNS = (
    (0, 1, 4, 5, 2),
    (0, 1, 4, 5, 3),
    (0, 2, 6, 7, 1),
    (0, 2, 6, 7, 3),
    (0, 3, 8, 9, 2),
    (0, 3, 8, 9, 1),
    (0, 1, 2, 3),
)


def basis_size(degree):
    return (degree + 1) * (degree + 2) // 2


def basis_exponents(degree):
    """Total-degree ordered exponent pairs (k1, k2)."""
    exps = []
    for d in range(degree + 1):
        for i in range(d, -1, -1):
            exps.append((i, d - i))
    return exps


def basis_eval(xi, eta, degree, dxi=0, deta=0):
    """Evaluate d^(dxi,deta) of every basis function at points.

    The basis is phi = xi^k1 * eta^k2 / (k1+k2)!.  Returns an array with a
    trailing axis over the basis functions.
    """
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    out = np.zeros(xi.shape + (basis_size(degree),))
    for n, (a, b) in enumerate(basis_exponents(degree)):
        if a < dxi or b < deta:
            continue
        coef = (
            factorial(a) // factorial(a - dxi) * (factorial(b) // factorial(b - deta))
        ) / factorial(a + b)
        aa, bb = a - dxi, b - deta
        out[..., n] = coef * xi**aa * eta**bb
    return out


def tri_monomial_integral(a, b):
    """Exact integral of xi^a * eta^b over the unit right triangle."""
    return factorial(a) * factorial(b) / factorial(a + b + 2)


@dataclass
class Stencil:
    cell: int
    member_ids: np.ndarray      # (nm,)
    member_shift: np.ndarray    # (nm, 2)
    slots: np.ndarray           # (10,) index into members per canonical slot
    rows_avg: np.ndarray        # (nm, N)
    rows_dxi: np.ndarray        # (nm, N)
    rows_deta: np.ndarray       # (nm, N)
    sub_members: list           # 7 lists of member indices (deduplicated)
    sub_degree: np.ndarray      # (7,)


def _member_rows(mesh, owner, member_id, shift, degree):
    tri = mesh.member_triangle(member_id, shift)
    ref = (tri - mesh.frame_origin[owner]) @ mesh.frame_Jinv[owner].T
    pts = TRI_QP_BARY @ ref
    avg = TRI_QP_W @ basis_eval(pts[:, 0], pts[:, 1], degree)
    dxi = TRI_QP_W @ basis_eval(pts[:, 0], pts[:, 1], degree, dxi=1)
    deta = TRI_QP_W @ basis_eval(pts[:, 0], pts[:, 1], degree, deta=1)
    return avg, dxi, deta


def _neighbor_list(mesh, cell):
    return [
        (int(mesh.neighbors[cell, e]), mesh.neighbor_shift[cell, e].copy())
        for e in range(3)
    ]


def build_stencil(mesh: Mesh, cell: int, degree: int = 3) -> Stencil:
    """Member list, sub-stencils and geometry rows for one cell."""
    M = mesh.ncells
    ring1 = _neighbor_list(mesh, cell)
    if len({m for m, _ in ring1}) < 3 and all(m < M for m, _ in ring1):
        raise MeshError(f"interior cell {cell} has fewer than 3 distinct neighbors")

    tol = 1e-9 * (1.0 + np.abs(mesh.nodes).max())

    def key(mid, shift):
        return (mid, round(shift[0] / tol), round(shift[1] / tol))

    members = [(cell, np.zeros(2))]
    index = {key(cell, np.zeros(2)): 0}
    slots = np.zeros(10, dtype=np.int64)

    def add(mid, shift):
        k = key(mid, shift)
        if k not in index:
            index[k] = len(members)
            members.append((mid, shift))
        return index[k]

    for e, (mid, shift) in enumerate(ring1):
        slots[1 + e] = add(mid, shift)
    for e, (mid, shift) in enumerate(ring1):
        if mid >= M:  # ghost: no second ring behind it
            slots[4 + 2 * e] = slots[1 + e]
            slots[5 + 2 * e] = slots[1 + e]
            continue
        second = []
        for nid, nshift in _neighbor_list(mesh, mid):
            total = shift + nshift
            if nid == cell and np.abs(total).max() < tol:
                continue
            second.append((nid, total))
        if len(second) > 2:
            second = second[:2]
        while len(second) < 2:
            second.append((mid, shift))
        slots[4 + 2 * e] = add(*second[0])
        slots[5 + 2 * e] = add(*second[1])

    sub_members, sub_degree = [], []
    for pat in SUB_PATTERNS:
        mem = []
        for p in pat:
            m = slots[p]
            if m not in mem:
                mem.append(m)
        n_avail = len(mem)
        if pat is SUB_PATTERNS[-1]:
            deg = 1
        else:
            deg = 2 if n_avail + 2 >= 6 else 1
        sub_members.append(mem)
        sub_degree.append(deg)

    nm = len(members)
    N = basis_size(degree)
    rows_avg = np.zeros((nm, N))
    rows_dxi = np.zeros((nm, N))
    rows_deta = np.zeros((nm, N))
    for m, (mid, shift) in enumerate(members):
        rows_avg[m], rows_dxi[m], rows_deta[m] = _member_rows(
            mesh, cell, mid, shift, degree
        )

    return Stencil(
        cell=cell,
        member_ids=np.array([m for m, _ in members], dtype=np.int64),
        member_shift=np.array([s for _, s in members]),
        slots=slots,
        rows_avg=rows_avg,
        rows_dxi=rows_dxi,
        rows_deta=rows_deta,
        sub_members=sub_members,
        sub_degree=np.array(sub_degree, dtype=np.int64),
    )


def build_boundary_stencil(mesh: Mesh, cell: int, degree: int = 3):
    """Stencil for a boundary-adjacent cell plus its reduced sub-stencils."""
    if not any(mesh.neighbors[cell] >= mesh.ncells):
        raise MeshError(f"cell {cell} has no boundary face")
    st = build_stencil(mesh, cell, degree)
    return st, list(zip(st.sub_members, st.sub_degree))


def generic_interior_cells(mesh: Mesh):
    """Cells whose stencil is the full 10-member pattern of real cells.

    For these the member table and geometry rows can be built in batch; all
    others (boundary-adjacent or coincidence-degenerate) take the scalar path.
    """
    M = mesh.ncells
    nb = mesh.neighbors
    ok = (nb < M).all(axis=1)
    ring2 = nb[nb.clip(max=M - 1)]  # (M,3,3), garbage where ring1 is ghost
    ok &= (ring2 < M).all(axis=(1, 2))

    shift1 = mesh.neighbor_shift                        # (M,3,2)
    shift2 = mesh.neighbor_shift[nb.clip(max=M - 1)]    # (M,3,3,2)
    total = shift1[:, :, None, :] + shift2              # (M,3,3,2)

    scale = 1.0 + np.abs(mesh.nodes).max()
    back = (ring2 == np.arange(M)[:, None, None]) & (
        np.abs(total).max(axis=3) < 1e-9 * scale
    )
    ok &= (back.sum(axis=2) == 1).all(axis=1)
    return ok, ring2, total, back


def build_member_table(mesh: Mesh, degree: int = 3):
    """Stencil members and geometry rows for every cell, padded to 10 slots.

    Returns (member_ids (M,10), rows_avg/rows_dxi/rows_deta (M,10,N),
    valid (M,10) bool, sub_degree (M,7), stencils dict for non-generic cells).
    Padded slots repeat the owner id and are masked out of the operators.
    """
    M = mesh.ncells
    N = basis_size(degree)
    member_ids = np.tile(np.arange(M)[:, None], (1, 10))
    member_shift = np.zeros((M, 10, 2))
    valid = np.zeros((M, 10), dtype=bool)
    rows_avg = np.zeros((M, 10, N))
    rows_dxi = np.zeros((M, 10, N))
    rows_deta = np.zeros((M, 10, N))
    sub_degree = np.full((M, 7), 2, dtype=np.int64)
    sub_degree[:, 6] = 1

    ok, ring2, total, back = generic_interior_cells(mesh)
    gen = np.nonzero(ok)[0]
    if gen.size:
        ids = member_ids[gen]
        shf = member_shift[gen]
        ids[:, 1:4] = mesh.neighbors[gen]
        shf[:, 1:4] = mesh.neighbor_shift[gen]
        # the two onward neighbors of each first-ring member, in local order
        sel = ~back[gen]  # (g,3,3) with exactly two True per ring1 member
        r2 = ring2[gen]
        t2 = total[gen]
        for e in range(3):
            pick = sel[:, e]  # (g,3)
            order = np.argsort(~pick, axis=1, kind="stable")[:, :2]  # (g,2)
            rows = np.arange(len(gen))[:, None]
            ids[:, 4 + 2 * e : 6 + 2 * e] = r2[rows, e, order]
            shf[:, 4 + 2 * e : 6 + 2 * e] = t2[rows, e, order]
        member_ids[gen] = ids
        member_shift[gen] = shf

        # distinctness: duplicated members push the cell to the scalar path
        scale = 1.0 + np.abs(mesh.nodes).max()
        code = ids * 4_000_037 + np.round(shf[..., 0] / (1e-9 * scale)).astype(
            np.int64
        ) * 7_368_787 + np.round(shf[..., 1] / (1e-9 * scale)).astype(np.int64)
        srt = np.sort(code, axis=1)
        dup = (np.diff(srt, axis=1) == 0).any(axis=1)
        ok[gen[dup]] = False
        gen = np.nonzero(ok)[0]

    if gen.size:
        tri = np.where(
            (member_ids[gen] < M)[..., None, None],
            mesh.nodes[mesh.cells[member_ids[gen].clip(max=M - 1)]],
            0.0,
        )
        tri = tri + member_shift[gen][:, :, None, :]
        rel = tri - mesh.frame_origin[gen][:, None, None, :]
        ref = np.einsum("cmpx,cyx->cmpy", rel, mesh.frame_Jinv[gen])
        pts = np.einsum("qb,cmbx->cmqx", TRI_QP_BARY, ref)  # (g,10,7,2)
        xi, eta = pts[..., 0], pts[..., 1]
        rows_avg[gen] = np.einsum("q,cmqn->cmn", TRI_QP_W, basis_eval(xi, eta, degree))
        rows_dxi[gen] = np.einsum(
            "q,cmqn->cmn", TRI_QP_W, basis_eval(xi, eta, degree, dxi=1)
        )
        rows_deta[gen] = np.einsum(
            "q,cmqn->cmn", TRI_QP_W, basis_eval(xi, eta, degree, deta=1)
        )
        valid[gen] = True

    stencils = {}
    for c in np.nonzero(~ok)[0]:
        st = build_stencil(mesh, int(c), degree)
        stencils[int(c)] = st
        nm = len(st.member_ids)
        sl = st.slots
        member_ids[c] = st.member_ids[sl]
        member_shift[c] = st.member_shift[sl]
        seen = set()
        for slot in range(10):
            m = int(sl[slot])
            if m in seen:
                valid[c, slot] = False
            else:
                seen.add(m)
                valid[c, slot] = True
            rows_avg[c, slot] = st.rows_avg[m]
            rows_dxi[c, slot] = st.rows_dxi[m]
            rows_deta[c, slot] = st.rows_deta[m]
        sub_degree[c] = st.sub_degree

    return member_ids, member_shift, rows_avg, rows_dxi, rows_deta, valid, sub_degree, stencils
