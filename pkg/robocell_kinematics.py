"""Serial kinematic chains, forward kinematics and joint trajectories.

Chain files are JSON (validated with pydantic), trajectories are CSV with a
`t,q1,...,qL` header. Chains and trajectories are immutable after load.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy.spatial.transform import Rotation

import robocell_config as config
from robocell_errors import (
    ChainSchemaError,
    DimensionMismatchError,
    KinematicsError,
    MeshError,
    TrajectoryError,
)
from robocell_geometry import (
    RigidTransform,
    TriangleMesh,
    concatenate,
    load_mesh,
    save_mesh,
    transform_mesh,
)

log = logging.getLogger("robocell.kinematics")

REVOLUTE = "revolute"
PRISMATIC = "prismatic"
AXIS_TOLERANCE = 1e-9
AXIS_AUTONORMALIZE = 1e-3


# =============================================================================
# Chain types
# =============================================================================

@dataclass(frozen=True, eq=False)
class Joint:
    type: str
    axis: np.ndarray
    origin: RigidTransform = field(default_factory=RigidTransform.identity)
    limits: Tuple[float, float] = (-math.pi, math.pi)

    def __post_init__(self):
        if self.type not in (REVOLUTE, PRISMATIC):
            raise KinematicsError(f"unknown joint type {self.type!r}")
        axis = np.array(self.axis, dtype=np.float64).reshape(3)
        norm = float(np.linalg.norm(axis))
        if abs(norm - 1.0) > AXIS_TOLERANCE:
            if abs(norm - 1.0) > AXIS_AUTONORMALIZE:
                raise KinematicsError(f"non-unit axis {axis.tolist()} (norm {norm:.6g})")
            log.warning("Normalizing joint axis %s (norm %.9f)", axis.tolist(), norm)
            axis = axis / norm
        axis.setflags(write=False)
        lo, hi = (float(x) for x in self.limits)
        if lo > hi:
            raise KinematicsError(f"joint limits out of order: [{lo}, {hi}]")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "limits", (lo, hi))

    @property
    def max_travel(self) -> float:
        return max(abs(self.limits[0]), abs(self.limits[1]))

    def motion(self, q: float) -> RigidTransform:
        if self.type == REVOLUTE:
            return RigidTransform(Rotation.from_rotvec(self.axis * q).as_matrix())
        return RigidTransform(np.eye(3), self.axis * q)


@dataclass(frozen=True, eq=False)
class Link:
    name: str
    mesh: TriangleMesh
    joint: Joint

    @cached_property
    def reach_radius(self) -> float:
        """Max vertex distance from the link frame origin."""
        return _reach(self.mesh)


@dataclass(frozen=True, eq=False)
class ToolAttachment:
    """Rigid body on the flange; `origin` maps tool frame to flange frame."""
    mesh: TriangleMesh
    origin: RigidTransform = field(default_factory=RigidTransform.identity)
    name: str = "tool"


@dataclass(frozen=True, eq=False)
class KinematicChain:
    name: str
    base_mesh: TriangleMesh
    links: Tuple[Link, ...]
    tool: Optional[ToolAttachment] = None
    flange: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        if not self.links:
            raise KinematicsError("a chain needs at least one link")
        for link in self.links:
            if not link.mesh.closed:
                raise KinematicsError(f"link {link.name!r} mesh is not closed")
        if self.tool is not None and not self.tool.mesh.closed:
            raise KinematicsError("tool mesh is not closed")

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def link_names(self) -> List[str]:
        return [link.name for link in self.links]

    @cached_property
    def link_meshes(self) -> Tuple[TriangleMesh, ...]:
        """Link-frame meshes; the tool is merged into the last one."""
        meshes = [link.mesh for link in self.links]
        if self.tool is not None and not self.tool.mesh.is_empty:
            placed = transform_mesh(self.tool.mesh, self.flange @ self.tool.origin)
            meshes[-1] = concatenate([meshes[-1], placed])
        return tuple(meshes)

    @cached_property
    def reach_radii(self) -> Tuple[float, ...]:
        return tuple(_reach(m) for m in self.link_meshes)

    @cached_property
    def lever_arms(self) -> np.ndarray:
        """Per-joint bound on the distance from the joint origin to any
        distal material point (1 for prismatic joints)."""
        n = self.n_links
        arms = np.ones(n)
        offsets = [float(np.linalg.norm(link.joint.origin.translation)) for link in self.links]
        for j in range(n):
            if self.links[j].joint.type == PRISMATIC:
                continue
            best = 0.0
            run = 0.0
            for i in range(j, n):
                if i > j:
                    run += offsets[i]
                    if self.links[i].joint.type == PRISMATIC:
                        run += self.links[i].joint.max_travel
                best = max(best, run + self.reach_radii[i])
            arms[j] = best
        return arms


def _reach(mesh: TriangleMesh) -> float:
    if mesh.n_vertices == 0:
        return 0.0
    return float(np.linalg.norm(mesh.vertices, axis=1).max())


def attach_tool(chain: KinematicChain, tool: ToolAttachment) -> KinematicChain:
    """Return a chain with `tool` on the flange (replaces any previous tool)."""
    if tool.mesh.is_empty:
        return chain
    return replace(chain, tool=tool)


def detach_tool(chain: KinematicChain) -> KinematicChain:
    return chain if chain.tool is None else replace(chain, tool=None)


# =============================================================================
# Forward kinematics
# =============================================================================

def _as_config(chain: KinematicChain, q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if q.shape[0] != chain.n_links:
        raise DimensionMismatchError(f"expected {chain.n_links} joint values, got {q.shape[0]}")
    return q


def forward_kinematics(chain: KinematicChain, q) -> List[RigidTransform]:
    """World pose of every link frame: T_i = prod_{j<=i} origin_j * motion_j(q_j)."""
    q = _as_config(chain, q)
    poses: List[RigidTransform] = []
    T = RigidTransform.identity()
    for link, qi in zip(chain.links, q):
        T = T @ link.joint.origin @ link.joint.motion(float(qi))
        poses.append(T)
    return poses


def forward_kinematics_batch(chain: KinematicChain, Q) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized FK for K configurations: rotations (K, L, 3, 3), translations (K, L, 3)."""
    Q = np.asarray(Q, dtype=np.float64)
    if Q.ndim != 2 or Q.shape[1] != chain.n_links:
        raise DimensionMismatchError(f"expected (K, {chain.n_links}) configurations, got {Q.shape}")
    k = Q.shape[0]
    R = np.broadcast_to(np.eye(3), (k, 3, 3)).copy()
    t = np.zeros((k, 3))
    rots = np.empty((k, chain.n_links, 3, 3))
    trans = np.empty((k, chain.n_links, 3))
    for i, link in enumerate(chain.links):
        o = link.joint.origin
        t = t + R @ o.translation
        R = R @ o.rotation
        if link.joint.type == REVOLUTE:
            M = Rotation.from_rotvec(Q[:, i:i + 1] * link.joint.axis).as_matrix().reshape(k, 3, 3)
            R = R @ M
        else:
            t = t + np.einsum("kij,kj->ki", R, Q[:, i:i + 1] * link.joint.axis)
        rots[:, i] = R
        trans[:, i] = t
    return rots, trans


def flange_pose(chain: KinematicChain, q) -> RigidTransform:
    return forward_kinematics(chain, q)[-1] @ chain.flange


def posed_link_meshes(chain: KinematicChain, q) -> List[TriangleMesh]:
    """World-frame link meshes at configuration q (tool merged into the last link)."""
    return [transform_mesh(m, T) for m, T in zip(chain.link_meshes, forward_kinematics(chain, q))]


def displacement_bound(chain: KinematicChain, q_a, q_b) -> float:
    """Upper bound on how far any material point of any link moves along
    the straight joint-space segment q_a -> q_b."""
    qa = _as_config(chain, q_a)
    qb = _as_config(chain, q_b)
    return float(np.abs(qb - qa) @ _arms_for(chain, np.vstack([qa, qb])))


def displacement_bounds(chain: KinematicChain, Q) -> np.ndarray:
    """displacement_bound for every consecutive pair of rows of Q."""
    Q = np.asarray(Q, dtype=np.float64)
    if Q.ndim != 2 or Q.shape[1] != chain.n_links:
        raise DimensionMismatchError(f"expected (K, {chain.n_links}) configurations, got {Q.shape}")
    if len(Q) < 2:
        return np.zeros(0)
    return np.abs(np.diff(Q, axis=0)) @ _arms_for(chain, Q)


def _arms_for(chain: KinematicChain, Q: np.ndarray) -> np.ndarray:
    """Lever arms, widened when prismatic values leave their limits."""
    arms = chain.lever_arms
    prismatic = [i for i, l in enumerate(chain.links) if l.joint.type == PRISMATIC]
    if not prismatic or not len(Q):
        return arms
    excess = {i: max(0.0, float(np.abs(Q[:, i]).max()) - chain.links[i].joint.max_travel) for i in prismatic}
    if not any(excess.values()):
        return arms
    arms = arms.copy()
    for j in range(chain.n_links):
        if chain.links[j].joint.type == REVOLUTE:
            arms[j] += sum(v for i, v in excess.items() if i > j)
    return arms


# =============================================================================
# Trajectories
# =============================================================================

@dataclass(frozen=True, eq=False)
class JointTrajectory:
    """Timestamped joint samples; `flagged` marks samples clamped into limits."""
    times: np.ndarray
    positions: np.ndarray
    flagged: Optional[np.ndarray] = None

    def __post_init__(self):
        t = np.array(self.times, dtype=np.float64).reshape(-1)
        q = np.array(self.positions, dtype=np.float64)
        if q.ndim == 1:
            q = q.reshape(len(t), -1) if len(t) else q.reshape(0, 0)
        if len(t) != len(q):
            raise TrajectoryError(f"{len(t)} timestamps for {len(q)} configurations")
        if len(t) > 1 and np.any(np.diff(t) <= 0.0):
            bad = int(np.argmax(np.diff(t) <= 0.0)) + 1
            raise TrajectoryError(f"timestamps not strictly increasing at sample {bad}")
        flagged = np.zeros(len(t), dtype=bool) if self.flagged is None else np.array(self.flagged, dtype=bool)
        for a in (t, q, flagged):
            a.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", q)
        object.__setattr__(self, "flagged", flagged)

    def __len__(self) -> int:
        return int(len(self.times))

    @property
    def n_joints(self) -> int:
        return int(self.positions.shape[1]) if self.positions.ndim == 2 else 0

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0]) if len(self) else 0.0

    @property
    def samples(self) -> List[Tuple[float, np.ndarray]]:
        return list(zip(self.times.tolist(), self.positions))

    def concatenated(self, other: "JointTrajectory", gap: float = 1.0) -> "JointTrajectory":
        """Append another trajectory, shifting its clock to start after this one."""
        if not len(other):
            return self
        if not len(self):
            return other
        shift = self.times[-1] + gap - other.times[0]
        return JointTrajectory(np.concatenate([self.times, other.times + shift]),
                               np.vstack([self.positions, other.positions]),
                               np.concatenate([self.flagged, other.flagged]))


def check_limits(chain: KinematicChain, traj: JointTrajectory, mode: Optional[str] = None) -> JointTrajectory:
    """Reject (default) or clamp samples outside joint limits."""
    mode = (mode or config.OUT_OF_LIMITS).lower()
    if not len(traj):
        return traj
    lo = np.array([l.joint.limits[0] for l in chain.links])
    hi = np.array([l.joint.limits[1] for l in chain.links])
    out = np.any((traj.positions < lo) | (traj.positions > hi), axis=1)
    if not out.any():
        return traj
    first = int(np.argmax(out))
    if mode == "clamp":
        log.warning("Clamping %d out-of-limit samples (first at index %d)", int(out.sum()), first)
        return JointTrajectory(traj.times, np.clip(traj.positions, lo, hi), traj.flagged | out)
    if mode != "reject":
        raise TrajectoryError(f"unknown out-of-limits mode {mode!r}")
    raise TrajectoryError(f"sample {first} (t={traj.times[first]:g}) is outside joint limits; "
                          f"{int(out.sum())} samples affected")


def load_trajectory(path: Union[str, Path], chain: KinematicChain,
                    out_of_limits: Optional[str] = None) -> JointTrajectory:
    """Read a `t,q1,...,qL` CSV for `chain`."""
    path = Path(path)
    n = chain.n_links
    times: List[float] = []
    rows: List[List[float]] = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise TrajectoryError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if len(header) != n + 1:
            raise TrajectoryError(f"{path}: expected {n + 1} columns (t,q1..q{n}), found {len(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != n + 1:
                raise TrajectoryError(f"{path}: line {lineno}: expected {n + 1} columns, found {len(row)}")
            try:
                values = [float(c) for c in row]
            except ValueError as e:
                raise TrajectoryError(f"{path}: line {lineno}: {e}")
            if not all(math.isfinite(v) for v in values):
                raise TrajectoryError(f"{path}: line {lineno}: non-finite value")
            times.append(values[0])
            rows.append(values[1:])
    try:
        traj = JointTrajectory(np.array(times), np.array(rows, dtype=np.float64).reshape(-1, n))
    except TrajectoryError as e:
        raise TrajectoryError(f"{path}: {e}")
    return check_limits(chain, traj, out_of_limits)


def save_trajectory(traj: JointTrajectory, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["t"] + [f"q{i + 1}" for i in range(traj.n_joints)])
        for t, q in zip(traj.times.tolist(), traj.positions.tolist()):
            writer.writerow([repr(t)] + [repr(x) for x in q])
    return path


def resample_for_sweep(traj: JointTrajectory, chain: KinematicChain, max_disp: float) -> JointTrajectory:
    """Insert joint-space linear interpolants so that every consecutive pair
    moves no material point more than `max_disp`. Original samples are kept."""
    if max_disp <= 0.0:
        raise TrajectoryError("max_disp must be positive")
    if traj.n_joints and traj.n_joints != chain.n_links:
        raise DimensionMismatchError(f"trajectory has {traj.n_joints} joints, chain has {chain.n_links}")
    if len(traj) < 2:
        return traj
    bounds = displacement_bounds(chain, traj.positions)
    pieces = np.maximum(1, np.ceil(bounds / max_disp).astype(np.int64))
    if np.all(pieces == 1):
        return traj
    total = int(pieces.sum()) + 1
    seg = np.repeat(np.arange(len(pieces)), pieces)
    local = np.arange(total - 1) - np.repeat(np.cumsum(pieces) - pieces, pieces)
    frac = local / pieces[seg]
    t0, t1 = traj.times[seg], traj.times[seg + 1]
    q0, q1 = traj.positions[seg], traj.positions[seg + 1]
    times = np.append(t0 + (t1 - t0) * frac, traj.times[-1])
    positions = np.vstack([q0 + (q1 - q0) * frac[:, None], traj.positions[-1:]])
    # originals are exact at frac == 0
    flagged = np.append(traj.flagged[seg] & (local == 0), traj.flagged[-1])
    log.debug("Resampled trajectory %d -> %d samples (max_disp=%.4g)", len(traj), total, max_disp)
    return JointTrajectory(times, positions, flagged)


def max_step_bound(chain: KinematicChain, traj: JointTrajectory) -> float:
    b = displacement_bounds(chain, traj.positions)
    return float(b.max()) if b.size else 0.0


# =============================================================================
# Chain files
# =============================================================================

Vec3 = Annotated[List[float], Field(min_length=3, max_length=3)]


class OriginModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    xyz: Vec3 = [0.0, 0.0, 0.0]
    rpy: Vec3 = [0.0, 0.0, 0.0]

    def to_transform(self) -> RigidTransform:
        return RigidTransform.from_xyz_rpy(self.xyz, self.rpy)

    @classmethod
    def from_transform(cls, T: RigidTransform) -> "OriginModel":
        xyz, rpy = T.xyz_rpy()
        return cls(xyz=xyz, rpy=rpy)


class JointModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    type: Literal["revolute", "prismatic"]
    axis: Vec3
    origin: OriginModel = OriginModel()
    limits: Annotated[List[float], Field(min_length=2, max_length=2)]

    @model_validator(mode="after")
    def _limits_ordered(self):
        if self.limits[0] > self.limits[1]:
            raise ValueError("limits must satisfy lo <= hi")
        return self


class LinkModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    name: str
    mesh: str
    joint: JointModel


class ToolModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    mesh: str
    origin: OriginModel = OriginModel()
    name: str = "tool"


class ChainModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    name: str
    base_mesh: Optional[str] = None
    links: List[LinkModel] = Field(min_length=1)
    tool: Optional[ToolModel] = None
    flange: Optional[OriginModel] = None


def validation_field_path(err: ValidationError) -> Tuple[str, str]:
    """Dotted field path and message of the first pydantic error."""
    first = err.errors()[0]
    return ".".join(str(p) for p in first.get("loc", ())), first.get("msg", str(err))


def _load_part(base_dir: Path, rel: str, field_path: str, require_closed: bool = True) -> TriangleMesh:
    p = (base_dir / rel)
    if not p.exists():
        raise ChainSchemaError(field_path, f"mesh file not found: {p}")
    try:
        mesh = load_mesh(p)
    except MeshError as e:
        raise ChainSchemaError(field_path, str(e))
    if require_closed and not mesh.closed:
        raise ChainSchemaError(field_path, f"mesh is not closed: {p}")
    return mesh


def _checked_axis(axis: Sequence[float], field_path: str) -> np.ndarray:
    a = np.asarray(axis, dtype=np.float64)
    norm = float(np.linalg.norm(a))
    if abs(norm - 1.0) > AXIS_AUTONORMALIZE:
        raise ChainSchemaError(field_path, f"non-unit axis {list(axis)} (norm {norm:.6g})")
    return a


def load_chain(path: Union[str, Path]) -> KinematicChain:
    """Load and fully resolve a chain file; meshes are relative to it."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ChainSchemaError("", f"chain file not found: {path}")
    except json.JSONDecodeError as e:
        raise ChainSchemaError("", f"{path}: invalid JSON at line {e.lineno}: {e.msg}")
    try:
        model = ChainModel.model_validate(raw)
    except ValidationError as e:
        field_path, msg = validation_field_path(e)
        raise ChainSchemaError(field_path, msg)

    base_dir = path.parent
    base = (_load_part(base_dir, model.base_mesh, "base_mesh", require_closed=False)
            if model.base_mesh else TriangleMesh.empty())
    links = []
    for i, lm in enumerate(model.links):
        axis = _checked_axis(lm.joint.axis, f"links.{i}.joint.axis")
        mesh = _load_part(base_dir, lm.mesh, f"links.{i}.mesh")
        joint = Joint(lm.joint.type, axis, lm.joint.origin.to_transform(), tuple(lm.joint.limits))
        links.append(Link(lm.name, mesh, joint))
    tool = None
    if model.tool is not None:
        tool = ToolAttachment(_load_part(base_dir, model.tool.mesh, "tool.mesh"),
                              model.tool.origin.to_transform(), model.tool.name)
    flange = model.flange.to_transform() if model.flange else RigidTransform.identity()
    chain = KinematicChain(model.name, base, tuple(links), tool, flange)
    log.info("Loaded chain %r: %d links, tool=%s, reach=%s", chain.name, chain.n_links,
             "yes" if chain.tool else "no", ", ".join(f"{r:.3f}" for r in chain.reach_radii))
    return chain


def save_chain(chain: KinematicChain, path: Union[str, Path]) -> Path:
    """Write the chain JSON plus OBJ meshes next to it."""
    path = Path(path)
    out_dir = path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = path.stem
    doc = {"name": chain.name}
    if not chain.base_mesh.is_empty:
        save_mesh(chain.base_mesh, out_dir / f"{stem}_base.obj")
        doc["base_mesh"] = f"{stem}_base.obj"
    links = []
    for i, link in enumerate(chain.links):
        mesh_name = f"{stem}_link_{i + 1}.obj"
        save_mesh(link.mesh, out_dir / mesh_name)
        links.append({
            "name": link.name,
            "mesh": mesh_name,
            "joint": {
                "type": link.joint.type,
                "axis": [float(x) for x in link.joint.axis],
                "origin": OriginModel.from_transform(link.joint.origin).model_dump(),
                "limits": list(link.joint.limits),
            },
        })
    doc["links"] = links
    if chain.tool is not None:
        save_mesh(chain.tool.mesh, out_dir / f"{stem}_tool.obj")
        doc["tool"] = {"name": chain.tool.name, "mesh": f"{stem}_tool.obj",
                       "origin": OriginModel.from_transform(chain.tool.origin).model_dump()}
    doc["flange"] = OriginModel.from_transform(chain.flange).model_dump()
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path
