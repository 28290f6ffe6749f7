import numpy as np
import pytest

from cgks.mesh import (
    MeshError,
    build_mesh,
    gauss_segment,
    generate_mesh,
    load_mesh,
    save_mesh,
    triangle_average,
    triangle_quadrature_points,
)
from cgks.stencil import (
    basis_eval,
    basis_exponents,
    basis_size,
    build_boundary_stencil,
    build_stencil,
    build_member_table,
)


def write_mesh(tmp_path, text):
    p = tmp_path / "m.msh"
    p.write_text(text)
    return p


UNIT_TRI = """nodes 3 cells 1 bfaces 3
0.0 0.0
1.0 0.0
0.0 1.0
1 2 3
1 2 wall_slip
2 3 wall_slip
1 3 wall_slip
"""

UNIT_SQUARE = """nodes 4 cells 2 bfaces 4
0.0 0.0
1.0 0.0
1.0 1.0
0.0 1.0
1 2 3
1 3 4
1 2 outflow
2 3 outflow
3 4 outflow
1 4 outflow
"""


class TestLoadMesh:
    def test_single_triangle(self, tmp_path):
        m = load_mesh(write_mesh(tmp_path, UNIT_TRI))
        assert m.ncells == 1
        assert m.areas[0] == pytest.approx(0.5)
        assert len(m.boundary_faces) == 3

    def test_square_interior_face(self, tmp_path):
        m = load_mesh(write_mesh(tmp_path, UNIT_SQUARE))
        interior = [f for f in range(m.nfaces) if m.face_right[f] >= 0]
        assert len(interior) == 1
        f = interior[0]
        assert m.face_len[f] == pytest.approx(np.sqrt(2.0))
        # normal points out of the left cell; the right cell sees the opposite
        n = m.face_normal[f]
        toward = m.centroids[m.face_right[f]] - m.centroids[m.face_left[f]]
        assert n @ toward > 0

    def test_clockwise_input_reoriented(self, tmp_path):
        cw = UNIT_TRI.replace("1 2 3", "1 3 2")
        m1 = load_mesh(write_mesh(tmp_path, UNIT_TRI))
        m2 = load_mesh(write_mesh(tmp_path, cw))
        assert m2.areas[0] == pytest.approx(m1.areas[0])
        assert sorted(map(tuple, m2.nodes[m2.cells[0]].tolist())) == sorted(
            map(tuple, m1.nodes[m1.cells[0]].tolist())
        )

    def test_degenerate_cell_rejected(self, tmp_path):
        bad = UNIT_TRI.replace("0.0 1.0", "2.0 0.0")
        with pytest.raises(MeshError, match="cell"):
            load_mesh(write_mesh(tmp_path, bad))

    def test_malformed_line_number(self, tmp_path):
        bad = UNIT_TRI.replace("1.0 0.0", "1.0 oops")
        with pytest.raises(MeshError, match=":3:"):
            load_mesh(write_mesh(tmp_path, bad))

    def test_save_round_trip(self, tmp_path):
        m = load_mesh(write_mesh(tmp_path, UNIT_SQUARE))
        btags = {
            tuple(sorted(m.face_nodes[f])): m.face_tag[f]
            for f in m.boundary_faces
        }
        p = tmp_path / "rt.msh"
        save_mesh(p, m.nodes, m.cells, btags)
        m2 = load_mesh(p)
        assert m2.ncells == m.ncells
        assert np.allclose(m2.areas, m.areas)


class TestGenerate:
    def test_regular_cell_quality(self):
        m = generate_mesh("regular", (0, 0, 2, 2), 1 / 5)
        assert m.areas.min() > 0
        # lattice cells are near-uniform: no cell smaller than half the mode
        assert m.areas.min() > 0.25 * np.median(m.areas)
        assert np.isclose(m.areas.sum(), 4.0, rtol=1e-12)

    def test_irregular_deterministic(self):
        m1 = generate_mesh("irregular", (0, 0, 2, 2), 1 / 5, seed=7)
        m2 = generate_mesh("irregular", (0, 0, 2, 2), 1 / 5, seed=7)
        assert np.array_equal(m1.nodes, m2.nodes)
        assert np.array_equal(m1.cells, m2.cells)
        m3 = generate_mesh("irregular", (0, 0, 2, 2), 1 / 5, seed=8)
        assert not np.array_equal(m1.nodes, m3.nodes)

    def test_cell_count(self):
        m = generate_mesh(
            "regular",
            (0, 0, 1, 0.5),
            1 / 100,
            tags=("outflow", "outflow", "outflow", "outflow"),
        )
        assert abs(m.ncells - 2 * 100 * 50) <= 0.1 * 2 * 100 * 50

    def test_periodic_pairing(self):
        m = generate_mesh("regular", (0, 0, 2, 2), 1 / 5)
        # fully periodic: no boundary faces survive pairing
        assert len(m.boundary_faces) == 0
        assert m.nghost == 0
        # paired faces carry a translation by the domain period
        shifts = np.abs(m.face_shift).max(axis=1)
        assert np.isclose(shifts.max(), 2.0)

    def test_irregular_boundary_nodes_unperturbed(self):
        m = generate_mesh("irregular", (0, 0, 2, 2), 1 / 5, seed=3)
        on_edge = (
            np.isclose(m.nodes[:, 0], 0)
            | np.isclose(m.nodes[:, 0], 2)
            | np.isclose(m.nodes[:, 1], 0)
            | np.isclose(m.nodes[:, 1], 2)
        )
        r = generate_mesh("regular", (0, 0, 2, 2), 1 / 5)
        assert on_edge.sum() == (
            np.isclose(r.nodes[:, 0], 0)
            | np.isclose(r.nodes[:, 0], 2)
            | np.isclose(r.nodes[:, 1], 0)
            | np.isclose(r.nodes[:, 1], 2)
        ).sum()


class TestFaceQuadrature:
    def test_midpoint(self, tmp_path):
        s, w = gauss_segment(1)
        assert s.tolist() == [0.5] and w.tolist() == [1.0]

    def test_two_point_nodes(self):
        s, w = gauss_segment(2)
        d = 1 / (2 * np.sqrt(3.0))
        assert np.allclose(s, [0.5 - d, 0.5 + d])
        assert np.allclose(w, [0.5, 0.5])

    def test_two_point_exact_cubic(self):
        s, w = gauss_segment(2)
        assert np.dot(w, s**2) == pytest.approx(1 / 3, abs=1e-15)
        assert np.dot(w, s**3) == pytest.approx(1 / 4, abs=1e-15)

    def test_positions_on_face(self, tmp_path):
        m = load_mesh(write_mesh(tmp_path, UNIT_SQUARE))
        fq = m.face_quadrature(2)
        for f in range(m.nfaces):
            p0 = m.nodes[m.face_nodes[f, 0]]
            p1 = m.nodes[m.face_nodes[f, 1]]
            for k in range(2):
                d1, d2 = p1 - p0, fq.pos[f, k] - p0
                assert abs(d1[0] * d2[1] - d1[1] * d2[0]) < 1e-14


class TestReferenceFrame:
    def test_identity(self, tmp_path):
        m = load_mesh(write_mesh(tmp_path, UNIT_TRI))
        assert np.allclose(m.frame_J[0], np.eye(2))
        assert m.frame_detJ[0] == pytest.approx(1.0)

    def test_scaling(self, tmp_path):
        scaled = UNIT_TRI.replace("1.0 0.0", "2.0 0.0").replace("0.0 1.0", "0.0 2.0")
        m = load_mesh(write_mesh(tmp_path, scaled))
        assert m.frame_detJ[0] == pytest.approx(4.0)

    def test_gradient_pullback(self, tmp_path):
        # (Q_xi, Q_eta) = J^T (Q_x, Q_y): identity J leaves the slope alone
        m = load_mesh(write_mesh(tmp_path, UNIT_TRI))
        q = m.frame_J[0].T @ np.array([1.0, 0.0])
        assert np.allclose(q, [1.0, 0.0])


def exact_poly_average(coeffs, degree, tri_ref):
    """Average of a reference-frame polynomial over a triangle, by quadrature."""
    pts, w = triangle_quadrature_points(tri_ref, refine=2)
    vals = basis_eval(pts[:, 0], pts[:, 1], degree) @ coeffs
    return w @ vals / w.sum()


class TestStencil:
    def test_ten_distinct_members(self):
        m = generate_mesh("regular", (0, 0, 2, 2), 1 / 5)
        c = int(np.argmin(np.linalg.norm(m.centroids - [1, 1], axis=1)))
        st = build_stencil(m, c)
        keys = {(i, round(s[0], 6), round(s[1], 6)) for i, s in zip(st.member_ids, st.member_shift)}
        assert len(st.member_ids) == 10
        assert len(keys) == 10

    def test_constant_basis_row_is_unity(self):
        m = generate_mesh("regular", (0, 0, 2, 2), 1 / 5)
        st = build_stencil(m, 0)
        assert st.rows_avg[0, 0] == pytest.approx(1.0, abs=1e-13)
        assert np.allclose(st.rows_avg[:, 0], 1.0, atol=1e-13)

    def test_rows_reproduce_polynomial_averages(self):
        # geometry rows dotted with exact coefficients = member cell averages
        m = generate_mesh("irregular", (0, 0, 2, 2), 1 / 5, seed=1)
        rng = np.random.default_rng(0)
        coeffs = rng.normal(size=basis_size(3))
        for c in [0, m.ncells // 2, m.ncells - 1]:
            st = build_stencil(m, c, degree=3)
            for mm in range(len(st.member_ids)):
                tri = m.member_triangle(st.member_ids[mm], st.member_shift[mm])
                ref = (tri - m.frame_origin[c]) @ m.frame_Jinv[c].T
                want = exact_poly_average(coeffs, 3, ref)
                got = st.rows_avg[mm] @ coeffs
                assert got == pytest.approx(want, rel=1e-12, abs=1e-13)

    def test_derivative_rows(self):
        m = generate_mesh("irregular", (0, 0, 2, 2), 1 / 5, seed=2)
        rng = np.random.default_rng(1)
        coeffs = rng.normal(size=basis_size(3))
        c = m.ncells // 3
        st = build_stencil(m, c, degree=3)
        # derivative coefficients of the same polynomial
        exps = basis_exponents(3)
        for mm in [0, 1, 4]:
            tri = m.member_triangle(st.member_ids[mm], st.member_shift[mm])
            ref = (tri - m.frame_origin[c]) @ m.frame_Jinv[c].T
            pts, w = triangle_quadrature_points(ref, refine=2)
            dvals = basis_eval(pts[:, 0], pts[:, 1], 3, dxi=1) @ coeffs
            want = w @ dvals / w.sum()
            assert st.rows_dxi[mm] @ coeffs == pytest.approx(want, rel=1e-11, abs=1e-12)

    def test_deterministic(self):
        m = generate_mesh("regular", (0, 0, 2, 2), 1 / 5)
        a = build_stencil(m, 5)
        b = build_stencil(m, 5)
        assert np.array_equal(a.member_ids, b.member_ids)
        assert np.array_equal(a.slots, b.slots)

    def test_member_table_matches_scalar_path(self):
        m = generate_mesh("irregular", (0, 0, 2, 2), 1 / 4, seed=4)
        ids, shf, ravg, rdxi, rdeta, valid, subdeg, stencils = build_member_table(m, 3)
        for c in range(0, m.ncells, 7):
            st = build_stencil(m, c, 3)
            want = st.member_ids[st.slots]
            assert np.array_equal(ids[c], want)
            assert np.allclose(ravg[c], st.rows_avg[st.slots], atol=1e-13)


class TestBoundaryStencil:
    def mesh(self):
        return generate_mesh(
            "regular",
            (0, 0, 1, 0.5),
            1 / 8,
            tags=("wall_slip", "outflow", "wall_slip", "wall_slip"),
        )

    def test_wall_cell_has_ghost(self):
        m = self.mesh()
        c = int(m.face_left[m.boundary_faces[0]])
        st, subs = build_boundary_stencil(m, c)
        assert (st.member_ids >= m.ncells).any()
        # one first-ring ghost per boundary face of this cell
        nb = (m.neighbors[c] >= m.ncells).sum()
        ring1 = st.member_ids[st.slots[1:4]]
        assert (ring1 >= m.ncells).sum() == nb

    def test_corner_cell_reduced_substencils(self, tmp_path):
        walls = UNIT_SQUARE.replace("outflow", "wall_slip")
        m = load_mesh(write_mesh(tmp_path, walls))
        assert (m.neighbors[0] >= m.ncells).sum() == 2
        st, subs = build_boundary_stencil(m, 0)
        assert (st.sub_degree[:6] == 1).sum() >= 2

    def test_one_wall_face_reduces_two_substencils(self):
        m = self.mesh()
        c = int(m.face_left[m.boundary_faces[0]])
        st, _ = build_boundary_stencil(m, c)
        assert (st.sub_degree[:6] == 1).sum() >= 2

    def test_ghost_mirrors_centroid(self):
        m = self.mesh()
        f = m.boundary_faces[0]
        c = int(m.face_left[f])
        g = np.nonzero(m.ghost_face == f)[0][0]
        tri = m.ghost_tri[g]
        o = m.nodes[m.face_nodes[f, 0]]
        n = m.face_normal[f]
        gc = tri.mean(axis=0)
        cc = m.centroids[c]
        mirror = cc - 2 * ((cc - o) @ n) * n
        assert np.allclose(gc, mirror, atol=1e-13)


class TestQuadratureUtilities:
    def test_degree5_exact(self):
        tri = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        for a, b in [(0, 0), (2, 1), (3, 2), (5, 0)]:
            got = triangle_average(lambda x, y: x**a * y**b, tri, refine=0)
            from cgks.stencil import tri_monomial_integral

            assert got == pytest.approx(tri_monomial_integral(a, b) / 0.5, rel=1e-14)

    def test_refined_sine_average(self):
        tri = np.array([[0.1, 0.2], [0.5, 0.25], [0.3, 0.6]])
        f = lambda x, y: np.sin(np.pi * (x + y))
        ref = triangle_average(f, tri, refine=6)
        errs = [abs(triangle_average(f, tri, refine=r) - ref) for r in (2, 3, 4)]
        assert errs[2] < 5e-12
        # sixth-order decay per subdivision level
        assert errs[0] / errs[1] > 40
        assert errs[1] / errs[2] > 40
