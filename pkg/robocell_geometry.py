"""Triangle meshes, rigid transforms and spatial queries.

Everything in this module works on immutable values: a `TriangleMesh` never
changes after construction and a `Bvh` is built once and then only read, so
both can be shared between worker threads and processes.

Conventions:
  - lengths in meters, outward faces wound counter-clockwise
  - signed distance is negative inside a closed mesh, positive outside
  - inside/outside comes from the generalized winding number (>= 0.5 inside)
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import trimesh
from scipy.spatial.transform import Rotation

import robocell_config as config
from robocell_errors import MeshError, MeshNotClosedError, MeshParseError

log = logging.getLogger("robocell.geometry")

Array = np.ndarray

_FOUR_PI = 4.0 * math.pi
# Query chunk for batched BVH traversal; bounds the size of the frontier.
_QUERY_CHUNK = 4096
# Exact winding evaluation chunk (points x triangles elements).
_EXACT_CHUNK = 2_000_000
_STL_RECORD = np.dtype([
    ("normal", "<f4", (3,)),
    ("vertices", "<f4", (3, 3)),
    ("attr", "<u2"),
])


def _readonly(a: Array) -> Array:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


# =============================================================================
# Core types
# =============================================================================

@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle surface.

    `vertices` is (n, 3) float64, `faces` is (m, 3) int64. Both are copied and
    frozen on construction.
    """
    vertices: Array
    faces: Array

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                raise MeshError(f"face index out of range (vertex count {len(v)})")
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise MeshError("face repeats a vertex index")
        object.__setattr__(self, "vertices", _readonly(v))
        object.__setattr__(self, "faces", _readonly(f))

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    @property
    def n_vertices(self) -> int:
        return int(len(self.vertices))

    @property
    def n_faces(self) -> int:
        return int(len(self.faces))

    @property
    def is_empty(self) -> bool:
        return self.n_faces == 0

    def triangles(self) -> Array:
        """(m, 3, 3) array of triangle corner coordinates."""
        return self.vertices[self.faces]

    def bounds(self) -> Tuple[Array, Array]:
        """Axis-aligned bounds (lo, hi) of the referenced vertices."""
        if self.is_empty:
            return np.zeros(3), np.zeros(3)
        used = self.vertices[np.unique(self.faces)]
        return used.min(axis=0), used.max(axis=0)

    def face_normals(self, unit: bool = True) -> Array:
        t = self.triangles()
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        if not unit:
            return n
        length = np.linalg.norm(n, axis=1, keepdims=True)
        length[length == 0.0] = 1.0
        return n / length

    def face_areas(self) -> Array:
        return 0.5 * np.linalg.norm(self.face_normals(unit=False), axis=1)

    def surface_area(self) -> float:
        return float(self.face_areas().sum())

    def vertex_normals(self) -> Array:
        """Area-weighted unit vertex normals (zero for unreferenced vertices)."""
        fn = self.face_normals(unit=False)
        vn = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(vn, self.faces[:, k], fn)
        length = np.linalg.norm(vn, axis=1, keepdims=True)
        length[length == 0.0] = 1.0
        return vn / length

    def directed_edges(self) -> Array:
        return self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)

    def unique_edges(self) -> Array:
        e = np.sort(self.directed_edges(), axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def closed(self) -> bool:
        """Watertight and consistently oriented: each directed edge appears
        once and its reverse appears once."""
        if self.is_empty:
            return True
        e = self.directed_edges()
        n = np.int64(self.n_vertices)
        key = e[:, 0] * n + e[:, 1]
        rkey = e[:, 1] * n + e[:, 0]
        uniq, counts = np.unique(key, return_counts=True)
        if np.any(counts != 1):
            return False
        return bool(np.all(np.isin(rkey, uniq, assume_unique=False)))

    def is_closed(self) -> bool:
        return self.closed

    @cached_property
    def bvh(self) -> "Bvh":
        return build_bvh(self)

    def __repr__(self) -> str:
        return f"TriangleMesh(vertices={self.n_vertices}, faces={self.n_faces})"


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Proper rigid motion x -> R x + t."""
    rotation: Array = field(default_factory=lambda: np.eye(3))
    translation: Array = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9) or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise MeshError("rotation is not orthonormal with determinant +1")
        object.__setattr__(self, "rotation", _readonly(r))
        object.__setattr__(self, "translation", _readonly(t))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_xyz_rpy(cls, xyz: Sequence[float] = (0.0, 0.0, 0.0),
                     rpy: Sequence[float] = (0.0, 0.0, 0.0)) -> "RigidTransform":
        """Translation plus intrinsic roll-pitch-yaw (radians)."""
        r = Rotation.from_euler("XYZ", np.asarray(rpy, dtype=np.float64)).as_matrix()
        return cls(r, xyz)

    @classmethod
    def from_rotvec(cls, rotvec: Sequence[float], translation: Sequence[float] = (0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)).as_matrix(), translation)

    @classmethod
    def from_matrix(cls, m: Array) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> Array:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, points: Array) -> Array:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def apply_inverse(self, points: Array) -> Array:
        p = np.asarray(points, dtype=np.float64)
        return (p - self.translation) @ self.rotation

    def xyz_rpy(self) -> Tuple[List[float], List[float]]:
        rpy = Rotation.from_matrix(self.rotation).as_euler("XYZ")
        return [float(x) for x in self.translation], [float(x) for x in rpy]


# =============================================================================
# Construction helpers
# =============================================================================

def from_trimesh(tm: "trimesh.Trimesh") -> TriangleMesh:
    return TriangleMesh(np.asarray(tm.vertices, dtype=np.float64),
                        np.asarray(tm.faces, dtype=np.int64))


def box_mesh(extents: Sequence[float], center: Sequence[float] = (0.0, 0.0, 0.0),
             transform: Optional[RigidTransform] = None) -> TriangleMesh:
    """Axis-aligned box (8 vertices, 12 faces), optionally posed."""
    mesh = from_trimesh(trimesh.creation.box(extents=np.asarray(extents, dtype=np.float64)))
    mesh = TriangleMesh(mesh.vertices + np.asarray(center, dtype=np.float64), mesh.faces)
    return transform_mesh(mesh, transform) if transform is not None else mesh


def aabb_mesh(lo: Sequence[float], hi: Sequence[float]) -> TriangleMesh:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    return box_mesh(hi - lo, center=(lo + hi) / 2.0)


def icosphere_mesh(subdivisions: int = 3, radius: float = 1.0,
                   center: Sequence[float] = (0.0, 0.0, 0.0)) -> TriangleMesh:
    mesh = from_trimesh(trimesh.creation.icosphere(subdivisions=subdivisions, radius=radius))
    return TriangleMesh(mesh.vertices + np.asarray(center, dtype=np.float64), mesh.faces)


def cylinder_mesh(radius: float, height: float, sections: int = 24,
                  center: Sequence[float] = (0.0, 0.0, 0.0),
                  transform: Optional[RigidTransform] = None) -> TriangleMesh:
    """Closed cylinder along z centered at `center`."""
    mesh = from_trimesh(trimesh.creation.cylinder(radius=radius, height=height, sections=sections))
    mesh = TriangleMesh(mesh.vertices + np.asarray(center, dtype=np.float64), mesh.faces)
    return transform_mesh(mesh, transform) if transform is not None else mesh


def subdivide(mesh: TriangleMesh, iterations: int = 1) -> TriangleMesh:
    """Midpoint subdivision; each pass multiplies the face count by 4."""
    v, f = mesh.vertices, mesh.faces
    for _ in range(iterations):
        v, f = trimesh.remesh.subdivide(v, f)
    return TriangleMesh(v, f)


def concatenate(meshes: Iterable[TriangleMesh]) -> TriangleMesh:
    verts, faces = [], []
    offset = 0
    for m in meshes:
        if m.n_vertices == 0:
            continue
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        offset += m.n_vertices
    if not verts:
        return TriangleMesh.empty()
    return TriangleMesh(np.vstack(verts), np.vstack(faces))


def clean_mesh(vertices: Array, faces: Array, weld: bool = False,
               source: str = "mesh") -> TriangleMesh:
    """Optionally weld identical vertices, then drop degenerate faces."""
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if weld and len(v):
        v, inverse = np.unique(v, axis=0, return_inverse=True)
        f = inverse.reshape(-1)[f]
    if len(f):
        repeated = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        t = v[f]
        area2 = np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)
        degenerate = repeated | (area2 == 0.0)
        if degenerate.any():
            log.warning("Dropping %d degenerate faces from %s", int(degenerate.sum()), source)
            f = f[~degenerate]
    return TriangleMesh(v, f)


def compact(vertices: Array, faces: Array) -> TriangleMesh:
    """Drop unreferenced vertices (order of first use is kept by index)."""
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if not len(f):
        return TriangleMesh.empty()
    used = np.unique(f)
    remap = np.full(len(vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriangleMesh(np.asarray(vertices)[used], remap[f])


# =============================================================================
# Rigid motion and volume
# =============================================================================

def transform_mesh(mesh: TriangleMesh, T: RigidTransform) -> TriangleMesh:
    """Map every vertex v -> R v + t; faces and winding are unchanged."""
    return TriangleMesh(T.apply(mesh.vertices), mesh.faces)


def mesh_volume(mesh: TriangleMesh) -> float:
    """Enclosed volume by the divergence theorem, V = 1/6 sum det[v0 v1 v2]."""
    if not mesh.closed:
        raise MeshNotClosedError("mesh_volume requires a closed mesh")
    if mesh.is_empty:
        return 0.0
    t = mesh.triangles()
    return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)


def sample_surface(mesh: TriangleMesh, count: Optional[int] = None,
                   density: Optional[float] = None, seed: int = 0,
                   include_vertices: bool = True) -> Array:
    """Vertices plus area-uniform face samples (deterministic for a seed).

    Give either `count` face samples or a `density` in samples per m^2.
    """
    if mesh.is_empty:
        return np.zeros((0, 3))
    areas = mesh.face_areas()
    total = float(areas.sum())
    if count is None:
        count = int(math.ceil(total * density)) if density else 0
    parts = [mesh.vertices[np.unique(mesh.faces)]] if include_vertices else []
    if count > 0 and total > 0.0:
        rng = np.random.default_rng(seed)
        face = rng.choice(mesh.n_faces, size=count, p=areas / total)
        r1 = np.sqrt(rng.random(count))
        r2 = rng.random(count)
        t = mesh.triangles()[face]
        pts = ((1.0 - r1)[:, None] * t[:, 0]
               + (r1 * (1.0 - r2))[:, None] * t[:, 1]
               + (r1 * r2)[:, None] * t[:, 2])
        parts.append(pts)
    return np.vstack(parts) if parts else np.zeros((0, 3))


# =============================================================================
# Bounding volume hierarchy
# =============================================================================

@dataclass(frozen=True, eq=False)
class Bvh:
    """Axis-aligned box tree over a mesh's triangles.

    Every node covers a contiguous range `[start, start + size)` of
    `order`; leaves have `left == -1`. Triangles are stored in tree order in
    `tris` so a leaf range indexes them directly.
    """
    mesh: TriangleMesh
    leaf_size: int
    lo: Array
    hi: Array
    left: Array
    right: Array
    start: Array
    size: Array
    order: Array
    tris: Array
    # far-field winding data
    centroid: Array
    radius: Array
    area_vector: Array

    @property
    def n_nodes(self) -> int:
        return int(len(self.left))

    def is_leaf(self, nodes: Array) -> Array:
        return self.left[nodes] < 0


def build_bvh(mesh: TriangleMesh, leaf_size: Optional[int] = None) -> Bvh:
    """Median-split BVH (longest centroid axis); depth is logarithmic."""
    leaf_size = max(1, int(leaf_size or config.BVH_LEAF_SIZE))
    tris_all = mesh.triangles()
    n = mesh.n_faces
    cent = tris_all.mean(axis=1) if n else np.zeros((0, 3))
    order = np.arange(n, dtype=np.int64)
    tri_lo = tris_all.min(axis=1) if n else np.zeros((0, 3))
    tri_hi = tris_all.max(axis=1) if n else np.zeros((0, 3))

    lo: List[Array] = []
    hi: List[Array] = []
    left: List[int] = []
    right: List[int] = []
    start: List[int] = []
    size: List[int] = []

    def new_node(s: int, e: int) -> int:
        idx = order[s:e]
        if e > s:
            lo.append(tri_lo[idx].min(axis=0))
            hi.append(tri_hi[idx].max(axis=0))
        else:
            lo.append(np.zeros(3))
            hi.append(np.zeros(3))
        left.append(-1)
        right.append(-1)
        start.append(s)
        size.append(e - s)
        return len(left) - 1

    root = new_node(0, n)
    stack = [root]
    while stack:
        node = stack.pop()
        s, c = start[node], size[node]
        if c <= leaf_size:
            continue
        idx = order[s:s + c]
        extent = cent[idx].max(axis=0) - cent[idx].min(axis=0)
        axis = int(np.argmax(extent))
        mid = c // 2
        part = np.argpartition(cent[idx, axis], mid, kind="introselect")
        order[s:s + c] = idx[part]
        l_node = new_node(s, s + mid)
        r_node = new_node(s + mid, s + c)
        left[node] = l_node
        right[node] = r_node
        stack.append(r_node)
        stack.append(l_node)

    tris = tris_all[order]
    lo_a = np.array(lo).reshape(-1, 3)
    hi_a = np.array(hi).reshape(-1, 3)
    start_a = np.array(start, dtype=np.int64)
    size_a = np.array(size, dtype=np.int64)

    # Node aggregates from prefix sums over tree-ordered triangles.
    if n:
        avec = 0.5 * np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
        area = np.linalg.norm(avec, axis=1)
        wc = area[:, None] * tris.mean(axis=1)
    else:
        avec = np.zeros((0, 3))
        area = np.zeros(0)
        wc = np.zeros((0, 3))
    pre_avec = np.vstack([np.zeros((1, 3)), np.cumsum(avec, axis=0)])
    pre_area = np.concatenate([[0.0], np.cumsum(area)])
    pre_wc = np.vstack([np.zeros((1, 3)), np.cumsum(wc, axis=0)])
    end_a = start_a + size_a
    node_avec = pre_avec[end_a] - pre_avec[start_a]
    node_area = pre_area[end_a] - pre_area[start_a]
    node_wc = pre_wc[end_a] - pre_wc[start_a]
    box_center = 0.5 * (lo_a + hi_a)
    safe = node_area > 0.0
    centroid = np.where(safe[:, None], node_wc / np.where(safe, node_area, 1.0)[:, None], box_center)
    corner_far = np.maximum(np.abs(centroid - lo_a), np.abs(hi_a - centroid))
    radius = np.linalg.norm(corner_far, axis=1)

    return Bvh(
        mesh=mesh, leaf_size=leaf_size,
        lo=_readonly(lo_a), hi=_readonly(hi_a),
        left=_readonly(np.array(left, dtype=np.int64)),
        right=_readonly(np.array(right, dtype=np.int64)),
        start=_readonly(start_a), size=_readonly(size_a),
        order=_readonly(order), tris=_readonly(tris),
        centroid=_readonly(centroid), radius=_readonly(radius),
        area_vector=_readonly(node_avec),
    )


def _as_bvh(target: Union[TriangleMesh, Bvh]) -> Bvh:
    return target if isinstance(target, Bvh) else target.bvh


def _expand_leaf_pairs(bvh: Bvh, q: Array, nodes: Array) -> Tuple[Array, Array]:
    """Expand (query, leaf node) pairs into (query, triangle) pairs."""
    sizes = bvh.size[nodes]
    total = int(sizes.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    qq = np.repeat(q, sizes)
    offsets = np.repeat(np.cumsum(sizes) - sizes, sizes)
    tt = np.repeat(bvh.start[nodes], sizes) + (np.arange(total) - offsets)
    return qq, tt


# =============================================================================
# Point queries
# =============================================================================

def _dot(a: Array, b: Array) -> Array:
    return np.einsum("ij,ij->i", a, b)


def point_triangle_sqdist(p: Array, a: Array, b: Array, c: Array) -> Array:
    """Squared distance from points to triangles, row-wise (Voronoi regions)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = _dot(ab, ap)
    d2 = _dot(ac, ap)
    bp = p - b
    d3 = _dot(ab, bp)
    d4 = _dot(ac, bp)
    cp = p - c
    d5 = _dot(ab, cp)
    d6 = _dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        denom = np.where(denom == 0.0, 1.0, denom)
        v = vb / denom
        w = vc / denom
        closest = a + ab * v[:, None] + ac * w[:, None]

        # edge BC
        e43 = d4 - d3
        e56 = d5 - d6
        m = (va <= 0.0) & (e43 >= 0.0) & (e56 >= 0.0)
        den = np.where(e43 + e56 == 0.0, 1.0, e43 + e56)
        closest = np.where(m[:, None], b + (c - b) * (e43 / den)[:, None], closest)
        # edge AC
        m = (vb <= 0.0) & (d2 >= 0.0) & (d6 <= 0.0)
        den = np.where(d2 - d6 == 0.0, 1.0, d2 - d6)
        closest = np.where(m[:, None], a + ac * (d2 / den)[:, None], closest)
        # vertex C
        m = (d6 >= 0.0) & (d5 <= d6)
        closest = np.where(m[:, None], c, closest)
        # edge AB
        m = (vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0)
        den = np.where(d1 - d3 == 0.0, 1.0, d1 - d3)
        closest = np.where(m[:, None], a + ab * (d1 / den)[:, None], closest)
        # vertex B
        m = (d3 >= 0.0) & (d4 <= d3)
        closest = np.where(m[:, None], b, closest)
        # vertex A
        m = (d1 <= 0.0) & (d2 <= 0.0)
        closest = np.where(m[:, None], a, closest)

    diff = p - closest
    return _dot(diff, diff)


def triangle_solid_angles(p: Array, a: Array, b: Array, c: Array) -> Array:
    """Signed solid angle of each triangle seen from each point, row-wise."""
    ra = a - p
    rb = b - p
    rc = c - p
    la = np.linalg.norm(ra, axis=1)
    lb = np.linalg.norm(rb, axis=1)
    lc = np.linalg.norm(rc, axis=1)
    num = _dot(ra, np.cross(rb, rc))
    den = la * lb * lc + _dot(ra, rb) * lc + _dot(rb, rc) * la + _dot(rc, ra) * lb
    return 2.0 * np.arctan2(num, den)


def _as_points(points) -> Tuple[Array, bool]:
    p = np.asarray(points, dtype=np.float64)
    single = p.ndim == 1
    return p.reshape(-1, 3), single


def unsigned_distance(target: Union[TriangleMesh, Bvh], points,
                      upper: Optional[float] = None) -> Union[float, Array]:
    """Exact Euclidean distance from points to the mesh surface.

    With `upper`, results are min(distance, upper); far points prune early.
    """
    bvh = _as_bvh(target)
    p, single = _as_points(points)
    cap = np.inf if upper is None else float(upper)
    out = np.full(len(p), cap)
    if bvh.mesh.n_faces and len(p):
        for s in range(0, len(p), _QUERY_CHUNK):
            out[s:s + _QUERY_CHUNK] = _unsigned_distance_chunk(bvh, p[s:s + _QUERY_CHUNK], cap)
    return float(out[0]) if single else out


def _unsigned_distance_chunk(bvh: Bvh, p: Array, cap: float = np.inf) -> Array:
    n = len(p)
    best = np.full(n, cap * cap)
    q = np.arange(n, dtype=np.int64)
    nodes = np.zeros(n, dtype=np.int64)
    while q.size:
        pq = p[q]
        lo = bvh.lo[nodes]
        hi = bvh.hi[nodes]
        gap = np.maximum(np.maximum(lo - pq, 0.0), pq - hi)
        box_d2 = _dot(gap, gap)
        keep = box_d2 < best[q]
        q, nodes, pq, lo, hi = q[keep], nodes[keep], pq[keep], lo[keep], hi[keep]
        if not q.size:
            break
        # Any triangle inside a box is no farther than the box's far corner.
        far = np.maximum(np.abs(pq - lo), np.abs(hi - pq))
        np.minimum.at(best, q, _dot(far, far))

        leaf = bvh.left[nodes] < 0
        if leaf.any():
            qq, tt = _expand_leaf_pairs(bvh, q[leaf], nodes[leaf])
            if qq.size:
                t = bvh.tris[tt]
                d2 = point_triangle_sqdist(p[qq], t[:, 0], t[:, 1], t[:, 2])
                np.minimum.at(best, qq, d2)
        inner = ~leaf
        qi = q[inner]
        ni = nodes[inner]
        q = np.concatenate([qi, qi])
        nodes = np.concatenate([bvh.left[ni], bvh.right[ni]])
    return np.sqrt(best)


def exact_winding_number(mesh: TriangleMesh, points) -> Array:
    """Generalized winding number summed over every triangle."""
    p, _ = _as_points(points)
    w = np.zeros(len(p))
    if mesh.is_empty or not len(p):
        return w
    t = mesh.triangles()
    step = max(1, _EXACT_CHUNK // mesh.n_faces)
    for s in range(0, len(p), step):
        pc = p[s:s + step]
        k = len(pc)
        pp = np.repeat(pc, mesh.n_faces, axis=0)
        tt = np.tile(t, (k, 1, 1))
        omega = triangle_solid_angles(pp, tt[:, 0], tt[:, 1], tt[:, 2])
        w[s:s + k] = omega.reshape(k, mesh.n_faces).sum(axis=1) / _FOUR_PI
    return w


def winding_number(target: Union[TriangleMesh, Bvh], points, beta: Optional[float] = None) -> Union[float, Array]:
    """Fast generalized winding number.

    Nodes farther than `beta` times their radius contribute a dipole term;
    near nodes are summed exactly. Values within 0.25 of the 0.5 threshold
    are re-evaluated exactly over all triangles.
    """
    bvh = _as_bvh(target)
    beta = config.WINDING_BETA if beta is None else beta
    p, single = _as_points(points)
    w = np.zeros(len(p))
    if bvh.mesh.n_faces and len(p):
        for s in range(0, len(p), _QUERY_CHUNK):
            w[s:s + _QUERY_CHUNK] = _winding_chunk(bvh, p[s:s + _QUERY_CHUNK], beta)
        ambiguous = np.abs(w - 0.5) < 0.25
        if ambiguous.any():
            w[ambiguous] = exact_winding_number(bvh.mesh, p[ambiguous])
    return float(w[0]) if single else w


def _winding_chunk(bvh: Bvh, p: Array, beta: float) -> Array:
    n = len(p)
    w = np.zeros(n)
    q = np.arange(n, dtype=np.int64)
    nodes = np.zeros(n, dtype=np.int64)
    while q.size:
        rel = bvh.centroid[nodes] - p[q]
        dist = np.linalg.norm(rel, axis=1)
        far = dist > beta * bvh.radius[nodes]
        if far.any():
            d = dist[far]
            contrib = _dot(rel[far], bvh.area_vector[nodes[far]]) / (d * d * d)
            w += np.bincount(q[far], weights=contrib, minlength=n) / _FOUR_PI
        near = ~far
        leaf = near & (bvh.left[nodes] < 0)
        if leaf.any():
            qq, tt = _expand_leaf_pairs(bvh, q[leaf], nodes[leaf])
            if qq.size:
                t = bvh.tris[tt]
                omega = triangle_solid_angles(p[qq], t[:, 0], t[:, 1], t[:, 2])
                w += np.bincount(qq, weights=omega, minlength=n) / _FOUR_PI
        inner = near & (bvh.left[nodes] >= 0)
        qi = q[inner]
        ni = nodes[inner]
        q = np.concatenate([qi, qi])
        nodes = np.concatenate([bvh.left[ni], bvh.right[ni]])
    return w


def contains(target: Union[TriangleMesh, Bvh], points) -> Union[bool, Array]:
    """Point-in-mesh by winding number (>= 0.5 inside)."""
    w = winding_number(target, points)
    return (w >= 0.5) if isinstance(w, np.ndarray) else bool(w >= 0.5)


def signed_distance(target: Union[TriangleMesh, Bvh], points,
                    upper: Optional[float] = None) -> Union[float, Array]:
    """Signed distance to a closed mesh: negative inside, positive outside.

    With `upper`, magnitudes are capped at `upper` (the sign stays exact).
    """
    bvh = _as_bvh(target)
    if not bvh.mesh.closed:
        raise MeshNotClosedError("signed_distance requires a closed mesh")
    p, single = _as_points(points)
    if bvh.mesh.is_empty:
        out = np.full(len(p), np.inf if upper is None else float(upper))
    else:
        d = unsigned_distance(bvh, p, upper=upper)
        inside = winding_number(bvh, p) >= 0.5
        out = np.where(inside, -d, d)
    return float(out[0]) if single else out


# =============================================================================
# Intersection
# =============================================================================

_TOL = 1e-12


def _segments_hit_triangles(p0: Array, p1: Array, a: Array, b: Array, c: Array) -> Array:
    """Closed segment vs closed triangle, skipping segments parallel to the plane."""
    d = p1 - p0
    e1 = b - a
    e2 = c - a
    h = np.cross(d, e2)
    det = _dot(e1, h)
    scale = (np.linalg.norm(d, axis=1) * np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1))
    ok = np.abs(det) > 1e-12 * np.maximum(scale, 1e-300)
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = p0 - a
    u = inv * _dot(s, h)
    qv = np.cross(s, e1)
    v = inv * _dot(d, qv)
    t = inv * _dot(e2, qv)
    tol = 1e-9
    return ok & (u >= -tol) & (v >= -tol) & (u + v <= 1.0 + tol) & (t >= -tol) & (t <= 1.0 + tol)


def _coplanar_overlap(t1: Array, t2: Array) -> Array:
    """2D overlap test for coplanar triangle pairs (projected on the dominant plane)."""
    n = np.cross(t1[:, 1] - t1[:, 0], t1[:, 2] - t1[:, 0])
    drop = np.argmax(np.abs(n), axis=1)
    keep_axes = np.array([[1, 2], [0, 2], [0, 1]])[drop]
    a2 = np.take_along_axis(t1, keep_axes[:, None, :].repeat(3, axis=1), axis=2)
    b2 = np.take_along_axis(t2, keep_axes[:, None, :].repeat(3, axis=1), axis=2)

    def cross2(o, p, r):
        return (p[..., 0] - o[..., 0]) * (r[..., 1] - o[..., 1]) - (p[..., 1] - o[..., 1]) * (r[..., 0] - o[..., 0])

    def point_in(tri, pt):
        s0 = cross2(tri[:, 0], tri[:, 1], pt)
        s1 = cross2(tri[:, 1], tri[:, 2], pt)
        s2 = cross2(tri[:, 2], tri[:, 0], pt)
        scale = np.abs(cross2(tri[:, 0], tri[:, 1], tri[:, 2])) * 1e-9
        pos = (s0 >= -scale) & (s1 >= -scale) & (s2 >= -scale)
        neg = (s0 <= scale) & (s1 <= scale) & (s2 <= scale)
        return pos | neg

    hit = np.zeros(len(t1), dtype=bool)
    for k in range(3):
        hit |= point_in(a2, b2[:, k])
        hit |= point_in(b2, a2[:, k])
    for i in range(3):
        p, r = a2[:, i], a2[:, (i + 1) % 3]
        for j in range(3):
            s, u = b2[:, j], b2[:, (j + 1) % 3]
            d1 = cross2(s, u, p)
            d2 = cross2(s, u, r)
            d3 = cross2(p, r, s)
            d4 = cross2(p, r, u)
            hit |= (d1 * d2 <= 0.0) & (d3 * d4 <= 0.0) & ~((d1 == 0) & (d2 == 0) & (d3 == 0) & (d4 == 0))
    return hit


def triangles_intersect(t1: Array, t2: Array) -> Array:
    """Row-wise closed triangle-triangle intersection for (k, 3, 3) arrays."""
    t1 = np.asarray(t1, dtype=np.float64).reshape(-1, 3, 3)
    t2 = np.asarray(t2, dtype=np.float64).reshape(-1, 3, 3)
    hit = np.zeros(len(t1), dtype=bool)
    if not len(t1):
        return hit
    for i in range(3):
        j = (i + 1) % 3
        hit |= _segments_hit_triangles(t1[:, i], t1[:, j], t2[:, 0], t2[:, 1], t2[:, 2])
        hit |= _segments_hit_triangles(t2[:, i], t2[:, j], t1[:, 0], t1[:, 1], t1[:, 2])

    # coplanar pairs are invisible to the segment test
    n1 = np.cross(t1[:, 1] - t1[:, 0], t1[:, 2] - t1[:, 0])
    n1_len = np.linalg.norm(n1, axis=1)
    size = np.maximum(np.abs(t1).max(axis=(1, 2)), np.abs(t2).max(axis=(1, 2)))
    dist = np.abs(np.einsum("ikj,ij->ik", t2 - t1[:, 0:1], n1)) / np.maximum(n1_len, 1e-300)[:, None]
    coplanar = ~hit & (n1_len > 0.0) & np.all(dist <= 1e-12 * np.maximum(size, 1.0)[:, None], axis=1)
    if coplanar.any():
        hit[coplanar] = _coplanar_overlap(t1[coplanar], t2[coplanar])
    return hit


def _boxes_overlap(lo1: Array, hi1: Array, lo2: Array, hi2: Array, tol: float = 1e-12) -> Array:
    return np.all((lo1 <= hi2 + tol) & (lo2 <= hi1 + tol), axis=-1)


def triangle_pairs_intersect(a: TriangleMesh, b: TriangleMesh) -> bool:
    """Brute-force all-pairs surface intersection (reference path)."""
    if a.is_empty or b.is_empty:
        return False
    ta = a.triangles()
    tb = b.triangles()
    ia, ib = np.meshgrid(np.arange(a.n_faces), np.arange(b.n_faces), indexing="ij")
    ia = ia.ravel()
    ib = ib.ravel()
    for s in range(0, len(ia), 200_000):
        if triangles_intersect(ta[ia[s:s + 200_000]], tb[ib[s:s + 200_000]]).any():
            return True
    return False


def surfaces_intersect(a: Union[TriangleMesh, Bvh], b: Union[TriangleMesh, Bvh]) -> bool:
    """BVH-accelerated test: does any triangle of a touch any triangle of b?"""
    ba = _as_bvh(a)
    bb = _as_bvh(b)
    if ba.mesh.is_empty or bb.mesh.is_empty:
        return False
    na = np.zeros(1, dtype=np.int64)
    nb = np.zeros(1, dtype=np.int64)
    while na.size:
        ov = _boxes_overlap(ba.lo[na], ba.hi[na], bb.lo[nb], bb.hi[nb])
        na, nb = na[ov], nb[ov]
        if not na.size:
            return False
        leaf_a = ba.left[na] < 0
        leaf_b = bb.left[nb] < 0
        both = leaf_a & leaf_b
        if both.any():
            if _leaf_pairs_intersect(ba, bb, na[both], nb[both]):
                return True
        ext_a = np.linalg.norm(ba.hi[na] - ba.lo[na], axis=1)
        ext_b = np.linalg.norm(bb.hi[nb] - bb.lo[nb], axis=1)
        split_a = ~both & ~leaf_a & (leaf_b | (ext_a >= ext_b))
        split_b = ~both & ~split_a
        na = np.concatenate([ba.left[na[split_a]], ba.right[na[split_a]], na[split_b], na[split_b]])
        nb = np.concatenate([nb[split_a], nb[split_a], bb.left[nb[split_b]], bb.right[nb[split_b]]])
    return False


def _leaf_pairs_intersect(ba: Bvh, bb: Bvh, na: Array, nb: Array) -> bool:
    sa = ba.size[na]
    sb = bb.size[nb]
    per = sa * sb
    total = int(per.sum())
    if total == 0:
        return False
    pair = np.repeat(np.arange(len(na)), per)
    local = np.arange(total) - np.repeat(np.cumsum(per) - per, per)
    ia = ba.start[na][pair] + local // sb[pair]
    ib = bb.start[nb][pair] + local % sb[pair]
    t1 = ba.tris[ia]
    t2 = bb.tris[ib]
    ov = _boxes_overlap(t1.min(axis=1), t1.max(axis=1), t2.min(axis=1), t2.max(axis=1))
    if not ov.any():
        return False
    return bool(triangles_intersect(t1[ov], t2[ov]).any())


def meshes_intersect(a: Union[TriangleMesh, Bvh], b: Union[TriangleMesh, Bvh]) -> bool:
    """True iff the surfaces touch or one closed mesh contains the other."""
    ba = _as_bvh(a)
    bb = _as_bvh(b)
    ma, mb = ba.mesh, bb.mesh
    if ma.is_empty or mb.is_empty:
        return False
    lo_a, hi_a = ma.bounds()
    lo_b, hi_b = mb.bounds()
    if not _boxes_overlap(lo_a, hi_a, lo_b, hi_b):
        return False
    if surfaces_intersect(ba, bb):
        return True
    # No surface contact: either disjoint or nested; one vertex per mesh decides.
    if mb.closed and contains(bb, ma.vertices[ma.faces[0, 0]]):
        return True
    if ma.closed and contains(ba, mb.vertices[mb.faces[0, 0]]):
        return True
    return False


# =============================================================================
# File I/O
# =============================================================================

def load_mesh(path: Union[str, Path]) -> TriangleMesh:
    """Load ASCII OBJ or ASCII/binary STL (format from the extension)."""
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".obj":
        return _load_obj(path)
    if ext == ".stl":
        return _load_stl(path)
    raise MeshError(f"unsupported mesh format: {path}")


def save_mesh(mesh: TriangleMesh, path: Union[str, Path]) -> Path:
    """Write ASCII OBJ (9 significant digits) or binary STL."""
    path = Path(path)
    ext = path.suffix.lower()
    path.parent.mkdir(parents=True, exist_ok=True)
    if ext == ".obj":
        lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices.tolist()]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("\n".join(lines))
            f.write("\n")
        return path
    if ext == ".stl":
        records = np.zeros(mesh.n_faces, dtype=_STL_RECORD)
        records["normal"] = mesh.face_normals().astype(np.float32)
        records["vertices"] = mesh.triangles().astype(np.float32)
        with open(path, "wb") as f:
            f.write(b"robocell binary STL".ljust(80, b" "))
            f.write(struct.pack("<I", mesh.n_faces))
            f.write(records.tobytes())
        return path
    raise MeshError(f"unsupported mesh format: {path}")


def _load_obj(path: Path) -> TriangleMesh:
    verts: List[Tuple[float, float, float]] = []
    faces: List[Tuple[int, int, int]] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            tag = tokens[0]
            if tag == "v":
                if len(tokens) < 4:
                    raise MeshParseError(path, f"line {lineno}", "vertex needs 3 coordinates")
                try:
                    verts.append((float(tokens[1]), float(tokens[2]), float(tokens[3])))
                except ValueError as e:
                    raise MeshParseError(path, f"line {lineno}", f"bad vertex coordinate: {e}")
            elif tag == "f":
                if len(tokens) < 4:
                    raise MeshParseError(path, f"line {lineno}", "face needs at least 3 vertices")
                idx = []
                for tok in tokens[1:]:
                    try:
                        i = int(tok.split("/", 1)[0])
                    except ValueError:
                        raise MeshParseError(path, f"line {lineno}", f"bad face index {tok!r}")
                    i = i - 1 if i > 0 else len(verts) + i
                    if i < 0 or i >= len(verts):
                        raise MeshParseError(path, f"line {lineno}", f"face index {tok} out of range")
                    idx.append(i)
                # fan triangulation
                for k in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[k], idx[k + 1]))
    return clean_mesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                      np.array(faces, dtype=np.int64).reshape(-1, 3), source=str(path))


def _load_stl(path: Path) -> TriangleMesh:
    data = path.read_bytes()
    if len(data) < 84:
        if data[:5].lower() == b"solid":
            return _load_ascii_stl(path, data)
        raise MeshParseError(path, f"byte {len(data)}", "truncated STL header")
    (count,) = struct.unpack_from("<I", data, 80)
    expected = 84 + 50 * count
    if len(data) != expected:
        if data[:5].lower() == b"solid":
            return _load_ascii_stl(path, data)
        raise MeshParseError(path, f"byte {min(len(data), expected)}",
                             f"expected {expected} bytes for {count} triangles, found {len(data)}")
    records = np.frombuffer(data, dtype=_STL_RECORD, count=count, offset=84)
    tri = records["vertices"].astype(np.float64).reshape(-1, 3)
    faces = np.arange(len(tri), dtype=np.int64).reshape(-1, 3)
    return clean_mesh(tri, faces, weld=True, source=str(path))


def _load_ascii_stl(path: Path, data: bytes) -> TriangleMesh:
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as e:
        raise MeshParseError(path, f"byte {e.start}", "non-ASCII data in ASCII STL")
    corners: List[Tuple[float, float, float]] = []
    facet: Optional[List[Tuple[float, float, float]]] = None
    facet_line = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split()
        if not tokens:
            continue
        tag = tokens[0].lower()
        if tag == "facet":
            if facet is not None:
                raise MeshParseError(path, f"line {lineno}", f"facet opened on line {facet_line} is not closed")
            facet, facet_line = [], lineno
        elif tag == "vertex":
            if facet is None:
                raise MeshParseError(path, f"line {lineno}", "vertex outside a facet")
            if len(tokens) != 4:
                raise MeshParseError(path, f"line {lineno}", "vertex needs 3 coordinates")
            try:
                facet.append((float(tokens[1]), float(tokens[2]), float(tokens[3])))
            except ValueError as e:
                raise MeshParseError(path, f"line {lineno}", f"bad vertex coordinate: {e}")
        elif tag == "endfacet":
            if facet is None or len(facet) != 3:
                found = 0 if facet is None else len(facet)
                raise MeshParseError(path, f"line {lineno}", f"facet needs 3 vertices, found {found}")
            corners.extend(facet)
            facet = None
        elif tag not in ("solid", "outer", "endloop", "endsolid"):
            raise MeshParseError(path, f"line {lineno}", f"unexpected keyword {tokens[0]!r}")
    if facet is not None:
        raise MeshParseError(path, f"line {facet_line}", "facet is not closed")
    tri = np.array(corners, dtype=np.float64).reshape(-1, 3)
    faces = np.arange(len(tri), dtype=np.int64).reshape(-1, 3)
    return clean_mesh(tri, faces, weld=True, source=str(path))
