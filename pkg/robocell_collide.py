"""Collision queries against an obstacle model."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

import robocell_config as config
from robocell_carve import ObstacleModel
from robocell_errors import ConfigError, DimensionMismatchError, InsufficientResamplingError
from robocell_geometry import meshes_intersect, sample_surface, signed_distance, transform_mesh
from robocell_kinematics import JointTrajectory, KinematicChain, forward_kinematics, max_step_bound

log = logging.getLogger("robocell.collide")


@dataclass
class LinkCollision:
    name: str
    intersects: bool
    min_distance: float
    penetration_depth: float
    in_collision: bool


@dataclass
class CollisionReport:
    collision: bool
    links: List[LinkCollision] = field(default_factory=list)

    @property
    def offending_links(self) -> List[str]:
        return [l.name for l in self.links if l.in_collision]

    @property
    def penetration_depth(self) -> float:
        return max((l.penetration_depth for l in self.links), default=0.0)

    def to_dict(self) -> Dict:
        return {
            "collision": self.collision,
            "offending_links": self.offending_links,
            "penetration_depth": self.penetration_depth,
            "links": [asdict(l) for l in self.links],
        }


@dataclass
class TrajectoryReport:
    free: bool
    n_samples: int
    verdicts: List[bool] = field(default_factory=list)
    first_collision: Optional[int] = None
    offending: List[int] = field(default_factory=list)
    max_penetration: float = 0.0
    clearance: float = 0.0
    allowed_penetration: float = 0.0
    seconds: float = 0.0

    def to_dict(self, include_verdicts: bool = False) -> Dict:
        d = asdict(self)
        if not include_verdicts:
            d.pop("verdicts")
        return d


def link_samples(chain: KinematicChain, spacing: float, seed: int = 0) -> List[np.ndarray]:
    """Link-frame surface samples: vertices plus at least one point per spacing^2."""
    density = 1.0 / (spacing * spacing)
    return [sample_surface(m, density=density, seed=seed + i) for i, m in enumerate(chain.link_meshes)]


@dataclass(frozen=True)
class LinkInterior:
    """Link-frame cell centers inside a link and their depth below its surface."""
    points: np.ndarray
    depth: np.ndarray


def link_interiors(chain: KinematicChain, spacing: float) -> List[LinkInterior]:
    """Interior cell centers of every link on a lattice of half the given spacing."""
    step = 0.5 * spacing
    out = []
    for mesh in chain.link_meshes:
        if mesh.is_empty:
            out.append(LinkInterior(np.zeros((0, 3)), np.zeros(0)))
            continue
        lo, hi = mesh.bounds()
        axes = [np.arange(a + 0.5 * step, b, step) for a, b in zip(lo, hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        depth = -np.asarray(signed_distance(mesh, grid)) if len(grid) else np.zeros(0)
        keep = depth > 0.0
        out.append(LinkInterior(grid[keep], depth[keep]))
    return out


def _check(chain: KinematicChain, q, model: ObstacleModel, clearance: float,
           samples: Sequence[np.ndarray], interiors: Sequence[LinkInterior],
           allowed_penetration: float = 0.0) -> CollisionReport:
    poses = forward_kinematics(chain, q)
    links: List[LinkCollision] = []
    empty = model.mesh.is_empty
    bvh = None if empty else model.mesh.bvh
    for name, mesh, pts, inner, T in zip(chain.link_names, chain.link_meshes, samples, interiors, poses):
        if empty or not len(pts):
            links.append(LinkCollision(name, False, math.inf, 0.0, False))
            continue
        sd = signed_distance(bvh, T.apply(pts))
        min_sd = float(sd.min())
        intersects = meshes_intersect(transform_mesh(mesh, T), bvh)
        touching = intersects or min_sd < 0.0
        depth = 0.0
        if touching and len(inner.points):
            # deepest link point that V_O reaches
            inside = np.asarray(signed_distance(bvh, T.apply(inner.points))) < 0.0
            if inside.any():
                depth = float(inner.depth[inside].max())
        contact = depth > allowed_penetration if allowed_penetration > 0.0 else touching
        hit = contact or (clearance > 0.0 and min_sd < clearance)
        links.append(LinkCollision(name, intersects, min_sd, depth, hit))
    return CollisionReport(any(l.in_collision for l in links), links)


def config_in_collision(chain: KinematicChain, q, model: ObstacleModel, clearance: float = 0.0,
                        samples: Optional[Sequence[np.ndarray]] = None,
                        allowed_penetration: float = 0.0,
                        interiors: Optional[Sequence[LinkInterior]] = None) -> CollisionReport:
    """Whether the robot at `q` touches V_O or comes closer than `clearance`.

    A link's penetration depth is how far V_O reaches below the link
    surface, measured at link interior points half the model spacing apart. With
    `allowed_penetration` > 0 a link only counts as touching V_O when that
    depth exceeds the tolerance; pass the model's margin_budget to check
    recorded motion against its own model. Self-collision is not checked.
    """
    _check_tolerances(clearance, allowed_penetration)
    spacing = model.spacing or config.GRID_SPACING
    if samples is None:
        samples = link_samples(chain, spacing)
    if interiors is None:
        interiors = link_interiors(chain, spacing)
    return _check(chain, q, model, clearance, samples, interiors, allowed_penetration)


def _check_tolerances(clearance: float, allowed_penetration: float) -> None:
    if clearance < 0.0:
        raise ConfigError(f"clearance must be >= 0, got {clearance}")
    if allowed_penetration < 0.0:
        raise ConfigError(f"allowed_penetration must be >= 0, got {allowed_penetration}")


def trajectory_collision_free(chain: KinematicChain, traj: JointTrajectory, model: ObstacleModel,
                              clearance: float = 0.0, workers: Optional[int] = None,
                              allowed_penetration: float = 0.0) -> TrajectoryReport:
    """Check every sample of a trajectory.

    With a positive clearance the trajectory must be resampled so that no
    step moves a material point further than the clearance; motion between
    samples then cannot pass through V_O unnoticed.
    """
    t0 = time.perf_counter()
    _check_tolerances(clearance, allowed_penetration)
    if not len(traj):
        return TrajectoryReport(True, 0, clearance=clearance, allowed_penetration=allowed_penetration)
    if traj.n_joints != chain.n_links:
        raise DimensionMismatchError(f"trajectory has {traj.n_joints} joints, chain has {chain.n_links}")
    if clearance > 0.0:
        bound = max_step_bound(chain, traj)
        if bound > clearance * (1.0 + 1e-9):
            raise InsufficientResamplingError(
                f"trajectory steps move up to {bound:.5f} m, more than the clearance {clearance:.5f} m; "
                "resample the trajectory first")

    spacing = model.spacing or config.GRID_SPACING
    samples = link_samples(chain, spacing)
    interiors = link_interiors(chain, spacing)
    configs = list(traj.positions)
    n_workers = min(config.effective_workers(workers), len(configs))
    if n_workers <= 1:
        reports = [_check(chain, q, model, clearance, samples, interiors, allowed_penetration) for q in configs]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            reports = list(pool.map(
                lambda q: _check(chain, q, model, clearance, samples, interiors, allowed_penetration), configs))

    verdicts = [not r.collision for r in reports]
    offending = [i for i, ok in enumerate(verdicts) if not ok]
    report = TrajectoryReport(
        free=not offending, n_samples=len(reports), verdicts=verdicts,
        first_collision=offending[0] if offending else None, offending=offending,
        max_penetration=max((r.penetration_depth for r in reports), default=0.0),
        clearance=clearance, allowed_penetration=allowed_penetration,
        seconds=time.perf_counter() - t0,
    )
    log.info("[COLLISION_CHECK] samples=%d free=%s first=%s offending=%d max_penetration=%.5f "
             "clearance=%.4f elapsed=%.2fs", report.n_samples, report.free, report.first_collision,
             len(offending), report.max_penetration, clearance, report.seconds)
    return report
