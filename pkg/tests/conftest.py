"""Shared pytest fixtures and configuration for robocell tests."""

import csv
import math

import numpy as np
import pytest

import robocell_config
from robocell_carve import obstacle_representation, spec_for_carve
from robocell_geometry import box_mesh, icosphere_mesh, TriangleMesh
from robocell_harness import make_planar_chain
from robocell_kinematics import (
    PRISMATIC,
    Joint,
    JointTrajectory,
    KinematicChain,
    Link,
)


@pytest.fixture(autouse=True)
def quiet_config(monkeypatch):
    """No log file and single-worker runs unless a test asks otherwise."""
    monkeypatch.setattr(robocell_config, "LOG_FILE", "")
    monkeypatch.setattr(robocell_config, "WORKERS", 1)
    yield


@pytest.fixture
def unit_cube():
    """1 m cube centered at the origin."""
    return box_mesh((1.0, 1.0, 1.0))


@pytest.fixture
def small_box():
    """0.4 m cube centered at the origin."""
    return box_mesh((0.4, 0.4, 0.4))


@pytest.fixture
def sphere():
    """Icosphere of radius 0.5 (1280 faces)."""
    return icosphere_mesh(3, 0.5)


@pytest.fixture
def open_mesh():
    """A single triangle; not closed."""
    return TriangleMesh(np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
                        np.array([[0, 1, 2]]))


@pytest.fixture
def slider_chain():
    """One 0.1 m cube link on a prismatic joint along x."""
    joint = Joint(PRISMATIC, (1.0, 0.0, 0.0), limits=(-1.0, 1.0))
    link = Link("slider", box_mesh((0.1, 0.1, 0.1)), joint)
    return KinematicChain("slider", TriangleMesh.empty(), (link,))


@pytest.fixture
def planar_chain():
    """Two revolute links of 0.5 m rotating about z."""
    return make_planar_chain(2, 0.5, 0.1)


@pytest.fixture
def wide_planar_chain():
    """Two revolute links of 0.5 m, 0.2 m thick; survives erosion on a 4 cm grid."""
    return make_planar_chain(2, 0.5, 0.2)


@pytest.fixture
def planar_traj():
    """Short quarter-turn sweep of the first joint."""
    t = np.arange(5) * 0.04
    q = np.column_stack([np.linspace(0.0, math.pi / 2.0, 5), np.zeros(5)])
    return JointTrajectory(t, q)


@pytest.fixture
def shell_model(unit_cube, small_box):
    """V_O of a 1 m cube with a 0.4 m swept box carved from its center."""
    return obstacle_representation(unit_cube, [small_box], spec_for_carve(0.05))


def write_traj_csv(path, header, rows):
    """Write a trajectory CSV with arbitrary (possibly invalid) content."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)
    return path
