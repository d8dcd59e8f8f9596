"""Edge case tests for unusual input data: files, meshes and trajectories."""

import struct
import tempfile
from pathlib import Path

import numpy as np
import pytest

from robocell_errors import MeshParseError, TrajectoryError
from robocell_geometry import TriangleMesh, box_mesh, clean_mesh, load_mesh, mesh_volume
from robocell_kinematics import (
    PRISMATIC,
    Joint,
    JointTrajectory,
    KinematicChain,
    Link,
    check_limits,
    load_trajectory,
    resample_for_sweep,
)
from robocell_sweep import GridSpec, SdfGrid, compute_swept_volumes, extract_surface
from tests.conftest import write_traj_csv


class TestTrajectoryFiles:
    """Odd trajectory CSVs."""

    def test_nan_value(self, slider_chain):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = write_traj_csv(Path(tmpdir) / "t.csv", ["t", "q1"], [[0.0, 0.0], [0.1, "nan"]])
            with pytest.raises(TrajectoryError, match="line 3: non-finite"):
                load_trajectory(path, slider_chain)

    def test_infinite_time(self, slider_chain):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = write_traj_csv(Path(tmpdir) / "t.csv", ["t", "q1"], [[0.0, 0.0], ["inf", 0.1]])
            with pytest.raises(TrajectoryError, match="non-finite"):
                load_trajectory(path, slider_chain)

    def test_blank_lines_are_skipped(self, slider_chain):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "t.csv"
            path.write_text("t,q1\n0.0,0.0\n\n , \n0.1,0.2\n", encoding="utf-8")
            assert len(load_trajectory(path, slider_chain)) == 2

    def test_duplicate_timestamp(self, slider_chain):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = write_traj_csv(Path(tmpdir) / "t.csv", ["t", "q1"], [[0.0, 0.0], [0.0, 0.1]])
            with pytest.raises(TrajectoryError, match="strictly increasing at sample 1"):
                load_trajectory(path, slider_chain)

    def test_clamp_flags_samples(self, slider_chain):
        traj = JointTrajectory([0.0, 1.0, 2.0], [[0.0], [1.5], [-3.0]])
        clamped = check_limits(slider_chain, traj, "clamp")
        assert clamped.positions[:, 0].tolist() == [0.0, 1.0, -1.0]
        assert clamped.flagged.tolist() == [False, True, True]

    def test_single_sample_needs_no_resampling(self, slider_chain):
        traj = JointTrajectory([0.0], [[0.2]])
        assert resample_for_sweep(traj, slider_chain, 0.01) is traj


class TestMeshFiles:
    """Odd mesh files."""

    def test_empty_obj(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "empty.obj"
            path.write_text("# nothing here\n", encoding="utf-8")
            mesh = load_mesh(path)
            assert mesh.is_empty
            assert mesh.closed

    def test_obj_with_texture_and_normal_indices(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "tri.obj"
            path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\nf 1/1/1 2/1/1 3/1/1\n",
                            encoding="utf-8")
            assert load_mesh(path).n_faces == 1

    def test_obj_negative_indices(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "tri.obj"
            path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n", encoding="utf-8")
            assert load_mesh(path).faces.tolist() == [[0, 1, 2]]

    def test_obj_quad_is_fan_triangulated(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "quad.obj"
            path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n", encoding="utf-8")
            assert load_mesh(path).faces.tolist() == [[0, 1, 2], [0, 2, 3]]

    def test_stl_with_missing_triangles(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "short.stl"
            path.write_bytes(b"\0" * 80 + struct.pack("<I", 3) + b"\0" * 50)
            with pytest.raises(MeshParseError, match="byte"):
                load_mesh(path)

    def test_degenerate_faces_dropped(self, caplog):
        v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]], dtype=float)
        f = np.array([[0, 1, 2], [0, 1, 3]])
        mesh = clean_mesh(v, f, source="test")
        assert mesh.n_faces == 1
        assert "degenerate" in caplog.text


class TestDegenerateGeometry:
    """Sweeps and extraction at the limits of the grid."""

    def test_link_thinner_than_erosion_vanishes(self):
        """A sliver thinner than the erosion band leaves no swept volume."""
        sliver = Link("sliver", box_mesh((0.3, 0.3, 0.01)), Joint(PRISMATIC, (1.0, 0.0, 0.0), limits=(-1, 1)))
        chain = KinematicChain("sliver", TriangleMesh.empty(), (sliver,))
        result = compute_swept_volumes(chain, JointTrajectory([0.0], [[0.0]]), GridSpec(0.02, 0.06), workers=1)
        assert result.meshes[0].is_empty
        assert result.stats[0].volume == 0.0

    def test_constant_grid_is_empty(self):
        assert extract_surface(SdfGrid((0, 0, 0), 0.1, np.zeros((3, 3, 3))), iso=0.0).is_empty

    def test_volume_of_inverted_mesh_is_negative(self, unit_cube):
        flipped = TriangleMesh(unit_cube.vertices, unit_cube.faces[:, ::-1])
        assert mesh_volume(flipped) == pytest.approx(-1.0)
