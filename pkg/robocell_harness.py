"""Synthetic robot cells for testing the pipeline against ground truth.

A scene is a chain plus posed primitive obstacles. `explore` produces a
seeded random walk through the free space of a scene, standing in for hand
guidance; `monte_carlo_oracle` classifies uniform samples with its own
brute-force point-in-mesh test so accelerated queries can be cross-checked.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

import robocell_config as config
from robocell_errors import ExplorationStalledError, HarnessError, SceneCollisionError
from robocell_geometry import (
    RigidTransform,
    TriangleMesh,
    box_mesh,
    cylinder_mesh,
    meshes_intersect,
    save_mesh,
)
from robocell_kinematics import (
    REVOLUTE,
    Joint,
    JointTrajectory,
    KinematicChain,
    Link,
    ToolAttachment,
    attach_tool,
    displacement_bound,
    forward_kinematics_batch,
    save_chain,
    save_trajectory,
)

log = logging.getLogger("robocell.harness")

SCENES = ("planar3", "wall", "box-cell", "cube-tool", "open")
TOOLS = ("cube", "cylinder", "prism")
CYLINDER_SECTIONS = 24
_ORACLE_CHUNK = 100_000
_ORACLE_POINT_BLOCK = 4096
_MIN_ACCEPTANCE = 0.01
_MIN_ATTEMPTS = 100
_MOMENTUM = 0.8


# =============================================================================
# Chains and tools
# =============================================================================

def make_planar_chain(n_links: int = 3, link_length: float = 1.0, link_width: float = 0.1,
                      thickness: Optional[float] = None) -> KinematicChain:
    """Serial revolute chain rotating about z; link i is a box along its +x axis."""
    if n_links < 1:
        raise HarnessError("a planar chain needs at least one link")
    thickness = link_width if thickness is None else thickness
    mesh = box_mesh((link_length + link_width, link_width, thickness), center=(link_length / 2.0, 0.0, 0.0))
    links = []
    for i in range(n_links):
        origin = RigidTransform.identity() if i == 0 else RigidTransform.from_xyz_rpy((link_length, 0.0, 0.0))
        joint = Joint(REVOLUTE, (0.0, 0.0, 1.0), origin, (-2.0 * math.pi, 2.0 * math.pi))
        links.append(Link(f"link_{i + 1}", mesh, joint))
    return KinematicChain(f"planar{n_links}", TriangleMesh.empty(), tuple(links),
                          flange=RigidTransform.from_xyz_rpy((link_length, 0.0, 0.0)))


def make_arm_chain() -> KinematicChain:
    """Desk-scale 6-DOF arm (z-y-y-z-y-z) standing on a cylindrical base."""
    z, y = (0.0, 0.0, 1.0), (0.0, 1.0, 0.0)

    def at(height: float) -> RigidTransform:
        return RigidTransform.from_xyz_rpy((0.0, 0.0, height))

    parts = [
        ("shoulder", z, 0.15, (-math.pi, math.pi), cylinder_mesh(0.06, 0.2, center=(0.0, 0.0, 0.1))),
        ("upper_arm", y, 0.2, (-math.pi / 2.0, math.pi / 2.0), box_mesh((0.08, 0.08, 0.43), center=(0.0, 0.0, 0.175))),
        ("forearm", y, 0.35, (-2.3, 2.3), box_mesh((0.07, 0.07, 0.37), center=(0.0, 0.0, 0.15))),
        ("wrist_1", z, 0.3, (-math.pi, math.pi), cylinder_mesh(0.04, 0.08, center=(0.0, 0.0, 0.04))),
        ("wrist_2", y, 0.08, (-2.0, 2.0), box_mesh((0.06, 0.06, 0.08), center=(0.0, 0.0, 0.04))),
        ("wrist_3", z, 0.08, (-math.pi, math.pi), cylinder_mesh(0.04, 0.03, center=(0.0, 0.0, 0.015))),
    ]
    links = tuple(Link(name, mesh, Joint(REVOLUTE, axis, at(h), limits)) for name, axis, h, limits, mesh in parts)
    base = cylinder_mesh(0.1, 0.15, center=(0.0, 0.0, 0.075))
    return KinematicChain("arm6", base, links, flange=at(0.03))


def make_cube_tool(size: float = 0.2) -> ToolAttachment:
    return ToolAttachment(box_mesh((size,) * 3, center=(0.0, 0.0, size / 2.0)), name="cube")


def make_cylinder_tool(radius: float = 0.08, height: float = 0.2) -> ToolAttachment:
    return ToolAttachment(cylinder_mesh(radius, height, center=(0.0, 0.0, height / 2.0)), name="cylinder")


def make_prism_tool(radius: float = 0.1, height: float = 0.2) -> ToolAttachment:
    """Triangular prism (a three-sided cylinder)."""
    return ToolAttachment(cylinder_mesh(radius, height, sections=3, center=(0.0, 0.0, height / 2.0)), name="prism")


def make_tool(kind: str) -> ToolAttachment:
    builders = {"cube": make_cube_tool, "cylinder": make_cylinder_tool, "prism": make_prism_tool}
    if kind not in builders:
        raise HarnessError(f"unknown tool {kind!r}; choose from {TOOLS}")
    return builders[kind]()


# =============================================================================
# Scenes
# =============================================================================

@dataclass(frozen=True, eq=False)
class ObstacleSpec:
    """Posed primitive: box `size=(x, y, z)` or cylinder `size=(radius, height)`."""
    kind: str
    size: Tuple[float, ...]
    pose: RigidTransform = field(default_factory=RigidTransform.identity)
    name: str = "obstacle"

    def __post_init__(self):
        expected = {"box": 3, "cylinder": 2}
        if self.kind not in expected:
            raise HarnessError(f"unknown obstacle kind {self.kind!r}")
        if len(self.size) != expected[self.kind] or min(self.size) <= 0.0:
            raise HarnessError(f"bad {self.kind} size {self.size}")
        object.__setattr__(self, "size", tuple(float(s) for s in self.size))

    def mesh(self, inflate: float = 0.0) -> TriangleMesh:
        """World-frame mesh, optionally grown to contain every point within `inflate`."""
        if self.kind == "box":
            return box_mesh([s + 2.0 * inflate for s in self.size], transform=self.pose)
        radius, height = self.size
        r = (radius + inflate) / math.cos(math.pi / CYLINDER_SECTIONS) if inflate > 0.0 else radius
        return cylinder_mesh(r, height + 2.0 * inflate, CYLINDER_SECTIONS, transform=self.pose)

    def sample_interior(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "box":
            local = (rng.random((n, 3)) - 0.5) * np.array(self.size)
        else:
            radius, height = self.size
            # stay inside the inscribed circle of the polygonal mesh
            r = radius * math.cos(math.pi / CYLINDER_SECTIONS) * np.sqrt(rng.random(n))
            a = rng.random(n) * 2.0 * math.pi
            local = np.column_stack([r * np.cos(a), r * np.sin(a), (rng.random(n) - 0.5) * height])
        return self.pose.apply(local)

    def to_dict(self) -> Dict:
        xyz, rpy = self.pose.xyz_rpy()
        return {"name": self.name, "kind": self.kind, "size": list(self.size), "xyz": xyz, "rpy": rpy}


@dataclass(frozen=True, eq=False)
class Scene:
    """Ground-truth cell; the seed configuration must clear every obstacle by `guard`."""
    name: str
    chain: KinematicChain
    obstacles: Tuple[ObstacleSpec, ...]
    seed_q: np.ndarray
    step: float = 0.05
    guard: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        q = np.array(self.seed_q, dtype=np.float64).reshape(-1)
        if len(q) != self.chain.n_links:
            raise HarnessError(f"seed has {len(q)} values for {self.chain.n_links} joints")
        q.setflags(write=False)
        object.__setattr__(self, "seed_q", q)
        hit = _first_hit(self.chain, q[None, :], self.guarded_meshes)
        if hit is not None:
            raise SceneCollisionError(f"scene {self.name!r}: seed configuration hits {hit}")

    @cached_property
    def obstacle_meshes(self) -> List[TriangleMesh]:
        return [o.mesh() for o in self.obstacles]

    @cached_property
    def guarded_meshes(self) -> List[Tuple[str, TriangleMesh]]:
        return [(o.name, o.mesh(self.guard)) for o in self.obstacles]

    def in_collision(self, q, inflate: float = 0.0) -> bool:
        meshes = [(o.name, o.mesh(inflate)) for o in self.obstacles] if inflate else \
            list(zip((o.name for o in self.obstacles), self.obstacle_meshes))
        return _first_hit(self.chain, np.atleast_2d(q), meshes) is not None


def _first_hit(chain: KinematicChain, Q: np.ndarray,
               obstacles: Sequence[Tuple[str, TriangleMesh]]) -> Optional[str]:
    """Name of the first obstacle touched by any link at any configuration row of Q."""
    if not obstacles or not len(Q):
        return None
    rots, trans = forward_kinematics_batch(chain, Q)
    boxes = [m.bounds() for _, m in obstacles]
    for i, mesh in enumerate(chain.link_meshes):
        lo_l, hi_l = mesh.bounds()
        corners = np.array([[x, y, z] for x in (lo_l[0], hi_l[0]) for y in (lo_l[1], hi_l[1])
                            for z in (lo_l[2], hi_l[2])])
        world = np.einsum("kij,cj->kci", rots[:, i], corners) + trans[:, i, None, :]
        lo, hi = world.min(axis=1), world.max(axis=1)
        for (name, obstacle), (olo, ohi) in zip(obstacles, boxes):
            overlap = np.all((lo <= ohi) & (hi >= olo), axis=1)
            for k in np.flatnonzero(overlap):
                posed = TriangleMesh(mesh.vertices @ rots[k, i].T + trans[k, i], mesh.faces)
                if meshes_intersect(posed, obstacle):
                    return name
    return None


def _box(name, size, xyz, rpy=(0.0, 0.0, 0.0)) -> ObstacleSpec:
    return ObstacleSpec("box", tuple(size), RigidTransform.from_xyz_rpy(xyz, rpy), name)


def _cylinder(name, radius, height, xyz) -> ObstacleSpec:
    return ObstacleSpec("cylinder", (radius, height), RigidTransform.from_xyz_rpy(xyz), name)


def _box_cell_obstacles() -> List[ObstacleSpec]:
    return [
        _box("cart", (0.5, 0.4, 0.3), (0.55, 0.0, 0.15)),
        _box("ramp", (0.4, 0.3, 0.04), (-0.5, 0.3, 0.25), (0.0, 0.3, 0.0)),
        _box("side_left", (0.3, 0.3, 0.5), (0.0, 0.6, 0.25)),
        _box("side_right", (0.3, 0.3, 0.5), (0.0, -0.6, 0.25)),
        _box("crate", (0.2, 0.2, 0.2), (0.45, 0.45, 0.1)),
        _box("bin", (0.2, 0.2, 0.25), (-0.45, -0.45, 0.125)),
    ]


def synth_scene(name: str, tool: Optional[str] = None) -> Scene:
    """Build one of the bundled scenes; `tool` swaps the exploration tool on arm scenes."""
    if name == "planar3":
        chain = make_planar_chain(3, 0.5, 0.12)
        obstacles = [
            _box("block_a", (0.3, 0.3, 0.4), (1.0, 0.8, 0.0)),
            _box("block_b", (0.4, 0.2, 0.4), (-0.9, -0.6, 0.0)),
            _cylinder("post", 0.15, 0.4, (0.2, -1.1, 0.0)),
        ]
        scene = Scene(name, chain, tuple(obstacles), np.zeros(3), step=0.08, guard=0.01)
    elif name == "wall":
        chain = make_planar_chain(3, 0.5, 0.12)
        wall = _box("wall", (1.05, 0.1, 0.2), (0.975, 0.0, 0.0))
        scene = Scene(name, chain, (wall,), np.array([math.pi / 2.0, 0.0, 0.0]), step=0.08, guard=0.01)
    elif name == "open":
        scene = Scene(name, make_planar_chain(3, 0.5, 0.12), (), np.zeros(3), step=0.08, guard=0.01)
    elif name in ("box-cell", "cube-tool"):
        chain = attach_tool(make_arm_chain(), make_tool(tool or "cube"))
        obstacles = _box_cell_obstacles()
        if name == "cube-tool":
            obstacles = [o for o in obstacles if o.name in ("cart", "side_left", "side_right")]
        scene = Scene(name, chain, tuple(obstacles), np.zeros(6), step=0.03, guard=0.02)
    else:
        raise HarnessError(f"unknown scene {name!r}; choose from {SCENES}")
    if tool is not None and name not in ("box-cell", "cube-tool"):
        log.warning("Scene %s has no flange tool; ignoring tool=%s", name, tool)
    return scene


def sample_obstacles(scene: Scene, n_samples: int, seed: int = 0) -> np.ndarray:
    """Points inside every obstacle, split evenly between obstacles."""
    if not scene.obstacles:
        return np.zeros((0, 3))
    rng = np.random.default_rng(seed)
    per = max(1, n_samples // len(scene.obstacles))
    return np.vstack([o.sample_interior(per, rng) for o in scene.obstacles])


def write_scene_fixture(scene: Scene, out_dir: Union[str, Path]) -> Path:
    """Write chain.json (+ meshes), obstacle OBJs and scene.json; returns scene.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    chain_path = save_chain(scene.chain, out_dir / "chain.json")
    obstacles = []
    for o, mesh in zip(scene.obstacles, scene.obstacle_meshes):
        rel = f"obstacles/{o.name}.obj"
        save_mesh(mesh, out_dir / rel)
        obstacles.append({**o.to_dict(), "mesh": rel})
    doc = {
        "name": scene.name,
        "chain": chain_path.name,
        "seed_q": scene.seed_q.tolist(),
        "step": scene.step,
        "guard": scene.guard,
        "obstacles": obstacles,
    }
    path = out_dir / "scene.json"
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    log.info("Wrote scene fixture %s to %s", scene.name, out_dir)
    return path


# =============================================================================
# Exploration
# =============================================================================

@dataclass
class ExplorationResult:
    trajectory: JointTrajectory
    attempts: int
    accepted: int
    rejected_contact: int
    rejected_limits: int
    seconds: float

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.attempts if self.attempts else 1.0


def _segment_free(scene: Scene, q0: np.ndarray, q1: np.ndarray, guard: float) -> bool:
    """Check poses along q0 -> q1 no further apart than `guard` against guarded obstacles."""
    if not scene.obstacles:
        return True
    n = max(1, int(math.ceil(displacement_bound(scene.chain, q0, q1) / guard)))
    frac = np.arange(1, n + 1) / n
    Q = q0 + (q1 - q0) * frac[:, None]
    return _first_hit(scene.chain, Q, scene.guarded_meshes) is None


def explore(scene: Scene, seed: int = 0, n_samples: int = 1000, step: Optional[float] = None,
            rate_hz: Optional[float] = None, momentum: float = _MOMENTUM) -> ExplorationResult:
    """Random walk with momentum that reverses direction on contact or at a joint limit.

    `momentum` in [0, 1) blends the previous step into the next proposal;
    0 gives a plain Gaussian random walk.

    Each accepted segment is checked at displacement-bound resolution
    `scene.guard` against obstacles inflated by the same guard, so every
    pose in between is collision-free too.
    """
    if n_samples < 1:
        raise HarnessError("n_samples must be >= 1")
    if not 0.0 <= momentum < 1.0:
        raise HarnessError(f"momentum must be in [0, 1), got {momentum}")
    t0 = time.perf_counter()
    step = scene.step if step is None else float(step)
    rate = config.EXPLORATION_RATE_HZ if rate_hz is None else float(rate_hz)
    chain = scene.chain
    lo = np.array([l.joint.limits[0] for l in chain.links])
    hi = np.array([l.joint.limits[1] for l in chain.links])
    rng = np.random.default_rng(seed)

    q = scene.seed_q.copy()
    v = rng.normal(size=chain.n_links) * step
    samples = [q]
    attempts = accepted = rejected_contact = rejected_limits = 0
    while len(samples) < n_samples:
        attempts += 1
        if attempts >= _MIN_ATTEMPTS and accepted / attempts < _MIN_ACCEPTANCE:
            raise ExplorationStalledError(
                f"scene {scene.name!r}: acceptance rate {accepted}/{attempts} below "
                f"{_MIN_ACCEPTANCE:.0%}; reduce the step size")
        proposal = momentum * v + math.sqrt(1.0 - momentum ** 2) * rng.normal(size=chain.n_links) * step
        q_new = q + proposal
        if np.any(q_new < lo) or np.any(q_new > hi):
            rejected_limits += 1
            v = -proposal
            continue
        if not _segment_free(scene, q, q_new, scene.guard):
            rejected_contact += 1
            v = -proposal
            continue
        samples.append(q_new)
        q, v = q_new, proposal
        accepted += 1

    Q = np.vstack(samples)
    traj = JointTrajectory(np.arange(len(Q)) / rate, Q)
    result = ExplorationResult(traj, attempts, accepted, rejected_contact, rejected_limits,
                               time.perf_counter() - t0)
    log.info("[EXPLORATION_RESULT] scene=%s seed=%d samples=%d attempts=%d contact_rejects=%d "
             "limit_rejects=%d duration=%.2fs elapsed=%.2fs", scene.name, seed, len(Q), attempts,
             rejected_contact, rejected_limits, traj.duration, result.seconds)
    return result


def generate_exploration(scene: Scene, seed: int = 0, n_samples: int = 1000,
                         step: Optional[float] = None, rate_hz: Optional[float] = None,
                         momentum: float = _MOMENTUM) -> JointTrajectory:
    return explore(scene, seed, n_samples, step, rate_hz, momentum).trajectory


def verify_exploration(scene: Scene, traj: JointTrajectory, resolution: Optional[float] = None) -> bool:
    """Recheck every sample and interpolated sub-step against the true obstacles."""
    resolution = scene.guard if resolution is None else resolution
    named = list(zip((o.name for o in scene.obstacles), scene.obstacle_meshes))
    Q = traj.positions
    if _first_hit(scene.chain, Q, named) is not None:
        return False
    for a, b in zip(Q[:-1], Q[1:]):
        n = max(1, int(math.ceil(displacement_bound(scene.chain, a, b) / resolution)))
        frac = np.arange(1, n) / n
        if len(frac) and _first_hit(scene.chain, a + (b - a) * frac[:, None], named) is not None:
            return False
    return True


def write_exploration(scene: Scene, out: Union[str, Path], seed: int = 0, n_samples: int = 1000,
                      step: Optional[float] = None) -> Path:
    return save_trajectory(generate_exploration(scene, seed, n_samples, step), out)


# =============================================================================
# Monte Carlo oracle
# =============================================================================

@dataclass
class OracleResult:
    n_samples: int
    inside: int
    fraction: float
    volume: float
    stderr: float
    aabb: Tuple[List[float], List[float]]
    per_mesh: List[int] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "n_samples": self.n_samples, "inside": self.inside, "fraction": self.fraction,
            "volume": self.volume, "stderr": self.stderr,
            "aabb": {"lo": self.aabb[0], "hi": self.aabb[1]}, "per_mesh": list(self.per_mesh),
        }


def brute_force_winding(mesh: TriangleMesh, points: np.ndarray) -> np.ndarray:
    """Winding number summed over every triangle (no acceleration)."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    w = np.zeros(len(p))
    if mesh.is_empty or not len(p):
        return w
    tris = mesh.triangles()
    block = max(1, _ORACLE_POINT_BLOCK * 64 // max(1, len(tris)))
    for s in range(0, len(p), block):
        a = tris[None, :, 0, :] - p[s:s + block, None, :]
        b = tris[None, :, 1, :] - p[s:s + block, None, :]
        c = tris[None, :, 2, :] - p[s:s + block, None, :]
        la = np.sqrt((a * a).sum(-1))
        lb = np.sqrt((b * b).sum(-1))
        lc = np.sqrt((c * c).sum(-1))
        det = (a * np.cross(b, c)).sum(-1)
        den = (la * lb * lc + (a * b).sum(-1) * lc + (b * c).sum(-1) * la + (c * a).sum(-1) * lb)
        w[s:s + block] = (2.0 * np.arctan2(det, den)).sum(axis=1) / (4.0 * math.pi)
    return w


def classify_points(meshes: Sequence[TriangleMesh], points: np.ndarray) -> np.ndarray:
    """(n_meshes, n_points) inside flags by brute-force winding number."""
    return np.array([brute_force_winding(m, points) >= 0.5 for m in meshes]).reshape(len(meshes), -1)


def _oracle_chunk(meshes, lo, hi, n, seq) -> Tuple[int, np.ndarray]:
    rng = np.random.default_rng(seq)
    pts = lo + rng.random((n, 3)) * (hi - lo)
    inside = classify_points(meshes, pts) if meshes else np.zeros((0, n), dtype=bool)
    union = inside.any(axis=0) if len(inside) else np.zeros(n, dtype=bool)
    return int(union.sum()), inside.sum(axis=1)


def monte_carlo_oracle(target: Union[Scene, TriangleMesh, Sequence[TriangleMesh]], n_samples: int = 100_000,
                       seed: int = 0, aabb: Optional[Tuple[Sequence[float], Sequence[float]]] = None,
                       workers: Optional[int] = None) -> OracleResult:
    """Volume of the union of closed meshes from uniform samples over `aabb`.

    Sample chunks use independent streams spawned from `seed`, so the
    result does not depend on the worker count.
    """
    if isinstance(target, Scene):
        meshes = list(target.obstacle_meshes)
    elif isinstance(target, TriangleMesh):
        meshes = [target]
    else:
        meshes = list(target)
    meshes = [m for m in meshes if not m.is_empty]
    if aabb is None:
        if not meshes:
            raise HarnessError("an AABB is required when there are no meshes")
        lo = np.min([m.bounds()[0] for m in meshes], axis=0)
        hi = np.max([m.bounds()[1] for m in meshes], axis=0)
    else:
        lo, hi = (np.asarray(x, dtype=np.float64) for x in aabb)
    box_volume = float(np.prod(hi - lo))

    sizes = [min(_ORACLE_CHUNK, n_samples - s) for s in range(0, n_samples, _ORACLE_CHUNK)]
    seqs = np.random.SeedSequence(seed).spawn(len(sizes))
    n_workers = min(config.effective_workers(workers), max(1, len(sizes)))
    if n_workers <= 1:
        parts = [_oracle_chunk(meshes, lo, hi, n, s) for n, s in zip(sizes, seqs)]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(lambda a: _oracle_chunk(meshes, lo, hi, *a), zip(sizes, seqs)))

    inside = sum(p[0] for p in parts)
    per_mesh = np.sum([p[1] for p in parts], axis=0) if parts and meshes else np.zeros(len(meshes))
    fraction = inside / n_samples if n_samples else 0.0
    stderr = box_volume * math.sqrt(fraction * (1.0 - fraction) / n_samples) if n_samples else 0.0
    return OracleResult(n_samples, inside, fraction, fraction * box_volume, stderr,
                        (lo.tolist(), hi.tolist()), [int(x) for x in per_mesh])
