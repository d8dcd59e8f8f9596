"""Unit tests for robocell_kinematics.py.

Tests for:
- joint and chain validation
- forward kinematics (single and batched)
- displacement bounds and trajectory resampling
- trajectory CSV and chain JSON files
"""

import json
import math
import tempfile
from pathlib import Path

import numpy as np
import pytest

from robocell_errors import (
    ChainSchemaError,
    DimensionMismatchError,
    KinematicsError,
    TrajectoryError,
)
from robocell_geometry import TriangleMesh, mesh_volume
from robocell_harness import make_arm_chain, make_cube_tool, make_planar_chain
from robocell_kinematics import (
    PRISMATIC,
    REVOLUTE,
    Joint,
    JointTrajectory,
    KinematicChain,
    Link,
    attach_tool,
    check_limits,
    detach_tool,
    displacement_bound,
    displacement_bounds,
    flange_pose,
    forward_kinematics,
    forward_kinematics_batch,
    load_chain,
    load_trajectory,
    max_step_bound,
    posed_link_meshes,
    resample_for_sweep,
    save_chain,
    save_trajectory,
)
from tests.conftest import write_traj_csv


class TestJoint:
    """Tests for Joint validation."""

    def test_unknown_type(self):
        with pytest.raises(KinematicsError, match="unknown joint type"):
            Joint("spherical", (0.0, 0.0, 1.0))

    def test_non_unit_axis_rejected(self):
        with pytest.raises(KinematicsError, match="non-unit axis"):
            Joint(REVOLUTE, (0.0, 0.0, 2.0))

    def test_nearly_unit_axis_normalized(self, caplog):
        joint = Joint(REVOLUTE, (0.0, 0.0, 1.0005))
        assert np.linalg.norm(joint.axis) == pytest.approx(1.0)
        assert "Normalizing" in caplog.text

    def test_limits_out_of_order(self):
        with pytest.raises(KinematicsError, match="out of order"):
            Joint(REVOLUTE, (0.0, 0.0, 1.0), limits=(1.0, -1.0))

    def test_prismatic_motion_translates(self):
        joint = Joint(PRISMATIC, (0.0, 1.0, 0.0))
        np.testing.assert_allclose(joint.motion(0.3).translation, [0.0, 0.3, 0.0])


class TestKinematicChain:
    """Tests for chain construction and tools."""

    def test_needs_a_link(self):
        with pytest.raises(KinematicsError):
            KinematicChain("empty", TriangleMesh.empty(), ())

    def test_open_link_mesh_rejected(self, open_mesh):
        link = Link("bad", open_mesh, Joint(REVOLUTE, (0.0, 0.0, 1.0)))
        with pytest.raises(KinematicsError, match="not closed"):
            KinematicChain("bad", TriangleMesh.empty(), (link,))

    def test_tool_merges_into_last_link(self, planar_chain):
        tooled = attach_tool(planar_chain, make_cube_tool(0.1))
        assert tooled.link_meshes[-1].n_faces == planar_chain.link_meshes[-1].n_faces + 12
        assert tooled.link_meshes[0] is planar_chain.link_meshes[0]
        assert detach_tool(tooled).link_meshes[-1].n_faces == planar_chain.link_meshes[-1].n_faces

    def test_tool_widens_reach(self, planar_chain):
        tooled = attach_tool(planar_chain, make_cube_tool(0.2))
        assert tooled.reach_radii[-1] > planar_chain.reach_radii[-1]

    def test_arm_chain_links(self):
        arm = make_arm_chain()
        assert arm.n_links == 6
        assert arm.link_names[0] == "shoulder"
        assert arm.base_mesh.closed


class TestForwardKinematics:
    """Tests for forward_kinematics() and friends."""

    def test_planar_zero_pose(self):
        chain = make_planar_chain(3, 0.5, 0.1)
        np.testing.assert_allclose(flange_pose(chain, [0.0, 0.0, 0.0]).translation, [1.5, 0.0, 0.0], atol=1e-12)

    def test_planar_quarter_turn(self):
        chain = make_planar_chain(3, 0.5, 0.1)
        T = flange_pose(chain, [math.pi / 2.0, 0.0, 0.0])
        np.testing.assert_allclose(T.translation, [0.0, 1.5, 0.0], atol=1e-12)

    def test_planar_folded(self):
        """Folding the second joint back points the third link at the base."""
        chain = make_planar_chain(3, 0.5, 0.1)
        T = flange_pose(chain, [0.0, math.pi, 0.0])
        np.testing.assert_allclose(T.translation, [-0.5, 0.0, 0.0], atol=1e-12)

    def test_prismatic_link(self, slider_chain):
        poses = forward_kinematics(slider_chain, [0.25])
        np.testing.assert_allclose(poses[0].translation, [0.25, 0.0, 0.0])

    def test_batch_matches_single(self):
        arm = make_arm_chain()
        rng = np.random.default_rng(4)
        Q = rng.uniform(-1.0, 1.0, size=(7, 6))
        rots, trans = forward_kinematics_batch(arm, Q)
        for k, q in enumerate(Q):
            for i, T in enumerate(forward_kinematics(arm, q)):
                np.testing.assert_allclose(rots[k, i], T.rotation, atol=1e-12)
                np.testing.assert_allclose(trans[k, i], T.translation, atol=1e-12)

    def test_wrong_joint_count(self, planar_chain):
        with pytest.raises(DimensionMismatchError):
            forward_kinematics(planar_chain, [0.0, 0.0, 0.0])

    def test_posed_meshes_keep_volume(self, planar_chain):
        rest = [mesh_volume(m) for m in planar_chain.link_meshes]
        posed = [mesh_volume(m) for m in posed_link_meshes(planar_chain, [0.7, -1.2])]
        np.testing.assert_allclose(posed, rest)


class TestDisplacementBound:
    """Tests for displacement_bound() and resample_for_sweep()."""

    def test_bound_covers_vertex_motion(self):
        arm = attach_tool(make_arm_chain(), make_cube_tool())
        rng = np.random.default_rng(9)
        for _ in range(5):
            qa = rng.uniform(-1.0, 1.0, 6)
            qb = qa + rng.uniform(-0.2, 0.2, 6)
            bound = displacement_bound(arm, qa, qb)
            for frac in (0.25, 0.5, 1.0):
                q = qa + frac * (qb - qa)
                for ma, mb in zip(posed_link_meshes(arm, qa), posed_link_meshes(arm, q)):
                    moved = np.linalg.norm(mb.vertices - ma.vertices, axis=1).max()
                    assert moved <= bound + 1e-12

    def test_single_link_bound_is_arc_radius(self):
        chain = make_planar_chain(1, 1.0, 0.1)
        reach = chain.reach_radii[0]
        assert displacement_bound(chain, [0.0], [0.1]) == pytest.approx(0.1 * reach)

    def test_prismatic_bound_is_travel(self, slider_chain):
        assert displacement_bound(slider_chain, [0.0], [0.3]) == pytest.approx(0.3)

    def test_bounds_match_pairwise(self, planar_chain, planar_traj):
        Q = planar_traj.positions
        expected = [displacement_bound(planar_chain, a, b) for a, b in zip(Q[:-1], Q[1:])]
        np.testing.assert_allclose(displacement_bounds(planar_chain, Q), expected)

    def test_resample_meets_step_bound(self, planar_chain, planar_traj):
        dense = resample_for_sweep(planar_traj, planar_chain, 0.01)
        assert max_step_bound(planar_chain, dense) <= 0.01 * (1.0 + 1e-9)
        assert np.isin(planar_traj.times, dense.times).all()
        np.testing.assert_allclose(dense.positions[0], planar_traj.positions[0])
        np.testing.assert_allclose(dense.positions[-1], planar_traj.positions[-1])

    def test_resample_keeps_dense_trajectory(self, planar_chain, planar_traj):
        assert resample_for_sweep(planar_traj, planar_chain, 10.0) is planar_traj

    def test_resample_rejects_non_positive_step(self, planar_chain, planar_traj):
        with pytest.raises(TrajectoryError):
            resample_for_sweep(planar_traj, planar_chain, 0.0)


class TestJointTrajectory:
    """Tests for JointTrajectory validation and limits."""

    def test_timestamps_must_increase(self):
        with pytest.raises(TrajectoryError, match="strictly increasing"):
            JointTrajectory([0.0, 1.0, 1.0], np.zeros((3, 2)))

    def test_length_mismatch(self):
        with pytest.raises(TrajectoryError):
            JointTrajectory([0.0, 1.0], np.zeros((3, 2)))

    def test_concatenated_shifts_clock(self):
        a = JointTrajectory([0.0, 1.0], np.zeros((2, 1)))
        b = JointTrajectory([0.0, 1.0], np.ones((2, 1)))
        joined = a.concatenated(b, gap=0.5)
        np.testing.assert_allclose(joined.times, [0.0, 1.0, 1.5, 2.5])

    def test_reject_out_of_limits(self, slider_chain):
        traj = JointTrajectory([0.0, 1.0], [[0.0], [1.5]])
        with pytest.raises(TrajectoryError, match="outside joint limits"):
            check_limits(slider_chain, traj, "reject")

    def test_clamp_out_of_limits(self, slider_chain):
        traj = JointTrajectory([0.0, 1.0], [[0.0], [1.5]])
        clamped = check_limits(slider_chain, traj, "clamp")
        assert clamped.positions[1, 0] == 1.0
        assert clamped.flagged.tolist() == [False, True]


class TestTrajectoryFiles:
    """Tests for load_trajectory() / save_trajectory()."""

    def test_round_trip(self, planar_chain, planar_traj):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = save_trajectory(planar_traj, Path(tmpdir) / "t.csv")
            loaded = load_trajectory(path, planar_chain)
            np.testing.assert_array_equal(loaded.times, planar_traj.times)
            np.testing.assert_array_equal(loaded.positions, planar_traj.positions)

    def test_header_width_checked(self, planar_chain):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = write_traj_csv(Path(tmpdir) / "t.csv", ["t", "q1"], [[0.0, 0.0]])
            with pytest.raises(TrajectoryError, match="expected 3 columns"):
                load_trajectory(path, planar_chain)

    def test_ragged_row_reports_line(self, planar_chain):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = write_traj_csv(Path(tmpdir) / "t.csv", ["t", "q1", "q2"], [[0.0, 0.0, 0.0], [0.1, 0.0]])
            with pytest.raises(TrajectoryError, match="line 3"):
                load_trajectory(path, planar_chain)

    def test_non_numeric_value(self, planar_chain):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = write_traj_csv(Path(tmpdir) / "t.csv", ["t", "q1", "q2"], [[0.0, "x", 0.0]])
            with pytest.raises(TrajectoryError, match="line 2"):
                load_trajectory(path, planar_chain)

    def test_empty_file(self, planar_chain):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "t.csv"
            path.write_text("")
            with pytest.raises(TrajectoryError, match="empty"):
                load_trajectory(path, planar_chain)

    def test_header_only_gives_empty_trajectory(self, planar_chain):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = write_traj_csv(Path(tmpdir) / "t.csv", ["t", "q1", "q2"], [])
            assert len(load_trajectory(path, planar_chain)) == 0


class TestChainFiles:
    """Tests for load_chain() / save_chain()."""

    def test_round_trip_with_tool(self):
        arm = attach_tool(make_arm_chain(), make_cube_tool())
        with tempfile.TemporaryDirectory() as tmpdir:
            path = save_chain(arm, Path(tmpdir) / "chain.json")
            loaded = load_chain(path)
            assert loaded.link_names == arm.link_names
            assert loaded.tool is not None
            q = np.linspace(-0.5, 0.5, 6)
            np.testing.assert_allclose(flange_pose(loaded, q).matrix(), flange_pose(arm, q).matrix(), atol=1e-7)

    def test_missing_file(self):
        with pytest.raises(ChainSchemaError, match="not found"):
            load_chain("/nonexistent/chain.json")

    def test_invalid_json(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "chain.json"
            path.write_text("{not json")
            with pytest.raises(ChainSchemaError, match="invalid JSON"):
                load_chain(path)

    def _saved_doc(self, tmpdir, chain):
        path = save_chain(chain, Path(tmpdir) / "chain.json")
        return path, json.loads(path.read_text())

    def test_bad_axis_reports_field_path(self, planar_chain):
        with tempfile.TemporaryDirectory() as tmpdir:
            path, doc = self._saved_doc(tmpdir, planar_chain)
            doc["links"][1]["joint"]["axis"] = [0.0, 0.0, 3.0]
            path.write_text(json.dumps(doc))
            with pytest.raises(ChainSchemaError) as exc_info:
                load_chain(path)
            assert exc_info.value.field_path == "links.1.joint.axis"

    def test_unknown_joint_type_reports_field_path(self, planar_chain):
        with tempfile.TemporaryDirectory() as tmpdir:
            path, doc = self._saved_doc(tmpdir, planar_chain)
            doc["links"][0]["joint"]["type"] = "ball"
            path.write_text(json.dumps(doc))
            with pytest.raises(ChainSchemaError) as exc_info:
                load_chain(path)
            assert exc_info.value.field_path.startswith("links.0.joint.type")

    def test_missing_mesh_file(self, planar_chain):
        with tempfile.TemporaryDirectory() as tmpdir:
            path, doc = self._saved_doc(tmpdir, planar_chain)
            doc["links"][0]["mesh"] = "missing.obj"
            path.write_text(json.dumps(doc))
            with pytest.raises(ChainSchemaError, match="not found") as exc_info:
                load_chain(path)
            assert exc_info.value.field_path == "links.0.mesh"

    def test_open_link_mesh_file(self, planar_chain):
        with tempfile.TemporaryDirectory() as tmpdir:
            path, doc = self._saved_doc(tmpdir, planar_chain)
            (Path(tmpdir) / "tri.obj").write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
            doc["links"][0]["mesh"] = "tri.obj"
            path.write_text(json.dumps(doc))
            with pytest.raises(ChainSchemaError, match="not closed"):
                load_chain(path)
