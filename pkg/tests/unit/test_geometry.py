"""Unit tests for robocell_geometry.py.

Tests for:
- TriangleMesh / RigidTransform validation
- closedness, volume and surface sampling
- distance, winding number and containment queries
- surface intersection
- OBJ and ASCII/binary STL file I/O
"""

import math
import tempfile
from pathlib import Path

import numpy as np
import pytest

from robocell_errors import MeshError, MeshNotClosedError, MeshParseError
from robocell_geometry import (
    RigidTransform,
    TriangleMesh,
    aabb_mesh,
    box_mesh,
    clean_mesh,
    compact,
    concatenate,
    contains,
    cylinder_mesh,
    exact_winding_number,
    load_mesh,
    mesh_volume,
    meshes_intersect,
    sample_surface,
    save_mesh,
    signed_distance,
    subdivide,
    surfaces_intersect,
    transform_mesh,
    triangle_pairs_intersect,
    unsigned_distance,
    winding_number,
)


class TestTriangleMesh:
    """Tests for TriangleMesh construction and topology."""

    def test_face_index_out_of_range(self):
        """Faces must reference existing vertices."""
        with pytest.raises(MeshError, match="out of range"):
            TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))

    def test_repeated_vertex_rejected(self):
        """A face with a repeated index is degenerate."""
        with pytest.raises(MeshError, match="repeats"):
            TriangleMesh(np.eye(3), np.array([[0, 1, 1]]))

    def test_arrays_are_read_only(self, unit_cube):
        """Mesh arrays cannot be mutated after construction."""
        with pytest.raises(ValueError):
            unit_cube.vertices[0, 0] = 5.0

    def test_box_is_closed(self, unit_cube):
        """trimesh boxes are watertight and consistently oriented."""
        assert unit_cube.closed
        assert unit_cube.n_faces == 12

    def test_single_triangle_is_open(self, open_mesh):
        assert not open_mesh.closed

    def test_flipped_face_is_not_closed(self, unit_cube):
        """One reversed face breaks consistent orientation."""
        faces = unit_cube.faces.copy()
        faces[0] = faces[0][::-1]
        assert not TriangleMesh(unit_cube.vertices, faces).closed

    def test_empty_mesh(self):
        empty = TriangleMesh.empty()
        assert empty.is_empty
        assert empty.closed
        assert mesh_volume(empty) == 0.0

    def test_bounds(self):
        lo, hi = aabb_mesh((-1.0, 0.0, 2.0), (1.0, 3.0, 4.0)).bounds()
        np.testing.assert_allclose(lo, [-1.0, 0.0, 2.0])
        np.testing.assert_allclose(hi, [1.0, 3.0, 4.0])

    def test_concatenate_offsets_faces(self, unit_cube):
        far = box_mesh((1.0, 1.0, 1.0), center=(5.0, 0.0, 0.0))
        both = concatenate([unit_cube, far])
        assert both.n_faces == 24
        assert both.closed
        assert mesh_volume(both) == pytest.approx(2.0)

    def test_compact_drops_unused_vertices(self):
        verts = np.array([[0.0, 0.0, 0.0], [9.0, 9.0, 9.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        mesh = compact(verts, np.array([[0, 2, 3]]))
        assert mesh.n_vertices == 3
        assert not np.any(np.all(mesh.vertices == 9.0, axis=1))

    def test_clean_mesh_drops_zero_area_faces(self):
        verts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        mesh = clean_mesh(verts, np.array([[0, 1, 2], [0, 1, 3]]))
        assert mesh.n_faces == 1


class TestRigidTransform:
    """Tests for RigidTransform."""

    def test_rejects_reflection(self):
        with pytest.raises(MeshError):
            RigidTransform(np.diag([1.0, 1.0, -1.0]))

    def test_inverse_round_trip(self):
        T = RigidTransform.from_xyz_rpy((0.3, -0.2, 1.0), (0.1, 0.4, -0.7))
        p = np.array([[0.5, 0.25, -1.0], [2.0, 0.0, 0.0]])
        np.testing.assert_allclose((T.inverse() @ T).apply(p), p, atol=1e-12)
        np.testing.assert_allclose(T.apply_inverse(T.apply(p)), p, atol=1e-12)

    def test_composition_order(self):
        """(A @ B) applies B first."""
        A = RigidTransform.from_xyz_rpy((1.0, 0.0, 0.0))
        B = RigidTransform.from_rotvec((0.0, 0.0, math.pi / 2.0))
        np.testing.assert_allclose((A @ B).apply([1.0, 0.0, 0.0]), [1.0, 1.0, 0.0], atol=1e-12)

    def test_xyz_rpy_round_trip(self):
        T = RigidTransform.from_xyz_rpy((0.1, 0.2, 0.3), (0.3, -0.2, 0.1))
        xyz, rpy = T.xyz_rpy()
        np.testing.assert_allclose(xyz, [0.1, 0.2, 0.3])
        np.testing.assert_allclose(rpy, [0.3, -0.2, 0.1], atol=1e-12)


class TestVolumeAndSampling:
    """Tests for mesh_volume(), transform_mesh() and sample_surface()."""

    def test_box_volume(self):
        assert mesh_volume(box_mesh((0.5, 2.0, 3.0))) == pytest.approx(3.0)

    def test_box_surface_area(self):
        assert box_mesh((1.0, 2.0, 3.0)).surface_area() == pytest.approx(22.0)

    def test_volume_invariant_under_rigid_motion(self, unit_cube):
        T = RigidTransform.from_xyz_rpy((3.0, -1.0, 2.0), (0.5, 1.0, -0.3))
        assert mesh_volume(transform_mesh(unit_cube, T)) == pytest.approx(1.0)

    def test_sphere_volume_below_ball(self, sphere):
        """An inscribed polyhedron has less volume than the ball."""
        ball = 4.0 / 3.0 * math.pi * 0.5 ** 3
        assert 0.95 * ball < mesh_volume(sphere) < ball

    def test_volume_of_open_mesh_raises(self, open_mesh):
        with pytest.raises(MeshNotClosedError):
            mesh_volume(open_mesh)

    def test_subdivide_keeps_volume(self, unit_cube):
        fine = subdivide(unit_cube, 2)
        assert fine.n_faces == 12 * 16
        assert fine.closed
        assert mesh_volume(fine) == pytest.approx(1.0)

    def test_samples_lie_on_surface(self, unit_cube):
        pts = sample_surface(unit_cube, count=500, seed=3)
        assert len(pts) == 508  # 8 vertices + 500 face samples
        np.testing.assert_allclose(unsigned_distance(unit_cube, pts), 0.0, atol=1e-12)

    def test_sampling_is_deterministic(self, sphere):
        a = sample_surface(sphere, count=100, seed=11)
        b = sample_surface(sphere, count=100, seed=11)
        np.testing.assert_array_equal(a, b)

    def test_density_sets_count(self, unit_cube):
        """6 m^2 at 10 samples per m^2 gives 60 face samples (rounded up)."""
        pts = sample_surface(unit_cube, density=10.0, include_vertices=False)
        assert 60 <= len(pts) <= 61


class TestDistanceQueries:
    """Tests for unsigned/signed distance and winding numbers."""

    def test_unsigned_distance_to_face(self, unit_cube):
        assert unsigned_distance(unit_cube, [1.5, 0.0, 0.0]) == pytest.approx(1.0)

    def test_unsigned_distance_to_corner(self, unit_cube):
        d = unsigned_distance(unit_cube, [1.5, 1.5, 1.5])
        assert d == pytest.approx(math.sqrt(3.0))

    def test_upper_caps_distance(self, unit_cube):
        assert unsigned_distance(unit_cube, [10.0, 0.0, 0.0], upper=0.5) == pytest.approx(0.5)

    def test_signed_distance_sign(self, unit_cube):
        sd = signed_distance(unit_cube, np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 2.0]]))
        assert sd[0] == pytest.approx(-0.5)
        assert sd[1] == pytest.approx(1.5)

    def test_signed_distance_requires_closed(self, open_mesh):
        with pytest.raises(MeshNotClosedError):
            signed_distance(open_mesh, [0.0, 0.0, 1.0])

    def test_winding_number_inside_and_outside(self, sphere):
        w = winding_number(sphere, np.array([[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]]))
        assert w[0] == pytest.approx(1.0, abs=1e-6)
        assert w[1] == pytest.approx(0.0, abs=1e-3)

    def test_fast_winding_matches_exact(self, sphere):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-1.0, 1.0, size=(300, 3))
        fast = winding_number(sphere, pts) >= 0.5
        exact = exact_winding_number(sphere, pts) >= 0.5
        np.testing.assert_array_equal(fast, exact)

    def test_contains(self, unit_cube):
        assert contains(unit_cube, [0.1, 0.2, -0.3])
        assert not contains(unit_cube, [0.1, 0.2, -0.6])

    def test_cylinder_contains_axis_points(self):
        cyl = cylinder_mesh(0.2, 1.0)
        assert contains(cyl, [0.0, 0.0, 0.45])
        assert not contains(cyl, [0.25, 0.0, 0.0])


class TestIntersection:
    """Tests for surface intersection and nested containment."""

    def test_overlapping_boxes(self, unit_cube):
        other = box_mesh((1.0, 1.0, 1.0), center=(0.7, 0.2, 0.1))
        assert surfaces_intersect(unit_cube, other)
        assert meshes_intersect(unit_cube, other)

    def test_disjoint_boxes(self, unit_cube):
        other = box_mesh((1.0, 1.0, 1.0), center=(3.0, 0.0, 0.0))
        assert not meshes_intersect(unit_cube, other)

    def test_nested_boxes_intersect_without_surface_contact(self, unit_cube, small_box):
        assert not surfaces_intersect(unit_cube, small_box)
        assert meshes_intersect(unit_cube, small_box)
        assert meshes_intersect(small_box, unit_cube)

    def test_bvh_path_matches_brute_force(self, sphere):
        for offset in (0.3, 0.9, 1.2):
            other = transform_mesh(sphere, RigidTransform.from_xyz_rpy((offset, 0.05, 0.0)))
            assert surfaces_intersect(sphere, other) == triangle_pairs_intersect(sphere, other)

    def test_empty_mesh_never_intersects(self, unit_cube):
        assert not meshes_intersect(unit_cube, TriangleMesh.empty())


class TestMeshFiles:
    """Tests for load_mesh() / save_mesh()."""

    def test_obj_round_trip(self, sphere):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = save_mesh(sphere, Path(tmpdir) / "s.obj")
            loaded = load_mesh(path)
            assert loaded.n_faces == sphere.n_faces
            assert loaded.closed
            np.testing.assert_allclose(loaded.vertices, sphere.vertices, atol=1e-8)

    def test_stl_round_trip_welds_vertices(self, unit_cube):
        with tempfile.TemporaryDirectory() as tmpdir:
            loaded = load_mesh(save_mesh(unit_cube, Path(tmpdir) / "c.stl"))
            assert loaded.n_vertices == 8
            assert loaded.closed
            assert mesh_volume(loaded) == pytest.approx(1.0, rel=1e-6)

    def test_obj_quads_are_triangulated(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "quad.obj"
            path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
            assert load_mesh(path).n_faces == 2

    def test_obj_bad_vertex_reports_line(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "bad.obj"
            path.write_text("# header\nv 0 0 zero\n")
            with pytest.raises(MeshParseError, match="line 2"):
                load_mesh(path)

    def test_obj_face_index_out_of_range(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "bad.obj"
            path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 7\n")
            with pytest.raises(MeshParseError, match="out of range"):
                load_mesh(path)

    def test_truncated_stl_reports_byte(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "short.stl"
            path.write_bytes(b"\0" * 40)
            with pytest.raises(MeshParseError, match="byte"):
                load_mesh(path)

    def test_ascii_stl_round_trip(self, unit_cube):
        lines = ["solid cube"]
        for n, tri in zip(unit_cube.face_normals().tolist(), unit_cube.triangles().tolist()):
            lines.append("  facet normal {:.6e} {:.6e} {:.6e}".format(*n))
            lines.append("    outer loop")
            lines += ["      vertex {:.9g} {:.9g} {:.9g}".format(*p) for p in tri]
            lines.append("    endloop")
            lines.append("  endfacet")
        lines.append("endsolid cube")
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "c.stl"
            path.write_text("\n".join(lines) + "\n", encoding="ascii")
            loaded = load_mesh(path)
            assert loaded.n_vertices == 8
            assert loaded.n_faces == 12
            assert loaded.closed
            assert mesh_volume(loaded) == pytest.approx(1.0, rel=1e-9)

    def test_ascii_stl_bad_vertex_reports_line(self):
        text = ("solid t\nfacet normal 0 0 1\nouter loop\nvertex 0 0 0\n"
                "vertex 1 0 zero\nvertex 0 1 0\nendloop\nendfacet\nendsolid t\n")
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "bad.stl"
            path.write_text(text, encoding="ascii")
            with pytest.raises(MeshParseError, match="line 5"):
                load_mesh(path)

    def test_ascii_stl_short_facet_reports_line(self):
        text = "solid t\nfacet normal 0 0 1\nouter loop\nvertex 0 0 0\nvertex 1 0 0\nendloop\nendfacet\n"
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "bad.stl"
            path.write_text(text, encoding="ascii")
            with pytest.raises(MeshParseError, match="line 7"):
                load_mesh(path)

    def test_unsupported_extension(self):
        with pytest.raises(MeshError, match="unsupported"):
            load_mesh("mesh.ply")
