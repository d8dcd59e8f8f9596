"""Swept volumes by SDF stamping on a regular grid.

For every stamped pose of a link the link's signed distance is sampled on
the grid cells near that pose and folded in with a pointwise minimum. The
minimum field is extracted with marching cubes below zero, which keeps the
result inside the true swept volume.

All grids are anchored on the global lattice `k * spacing`.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from skimage import measure

import robocell_config as config
from robocell_errors import (
    ConfigError,
    DimensionMismatchError,
    EmptyTrajectoryError,
    LinkError,
    NotResampledError,
    SurfaceClippedError,
    SweepError,
)
from robocell_geometry import TriangleMesh, mesh_volume, point_triangle_sqdist, save_mesh, signed_distance
from robocell_kinematics import (
    JointTrajectory,
    KinematicChain,
    displacement_bounds,
    forward_kinematics_batch,
)

log = logging.getLogger("robocell.sweep")

SQRT3_2 = math.sqrt(3.0) / 2.0
# Points per batched signed-distance query while stamping.
_STAMP_BATCH = 200_000
# (cell, triangle) pairs per chunk in grid sampling.
_SCATTER_CHUNK = 4_000_000
# Column jitter (fraction of spacing) so rays never graze mesh edges that lie on lattice lines.
_JITTER = (3.1415926e-6, 2.7182818e-6)


@dataclass(frozen=True)
class GridSpec:
    """Grid discretization; `iso_offset=None` means derive it from the trajectory."""
    spacing: float = config.GRID_SPACING
    padding: float = config.GRID_PADDING
    iso_offset: Optional[float] = None

    def __post_init__(self):
        if not self.spacing > 0.0:
            raise ConfigError(f"grid spacing must be positive, got {self.spacing}")
        if self.padding < 2.0 * self.spacing - 1e-12:
            raise ConfigError(f"grid padding {self.padding} must be at least 2 x spacing ({2.0 * self.spacing})")
        if self.iso_offset is not None and self.iso_offset < 0.0:
            raise ConfigError(f"iso_offset must be >= 0, got {self.iso_offset}")

    @property
    def half_diagonal(self) -> float:
        return self.spacing * SQRT3_2


@dataclass(frozen=True, eq=False)
class SdfGrid:
    """Signed distance samples at lattice points `(index_origin + ijk) * spacing`."""
    index_origin: np.ndarray
    spacing: float
    values: np.ndarray
    margin_budget: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "index_origin", np.asarray(self.index_origin, dtype=np.int64).reshape(3))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if self.values.ndim != 3:
            raise SweepError("grid values must be a 3-D array")

    @property
    def origin(self) -> np.ndarray:
        return self.index_origin * self.spacing

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(d) for d in self.values.shape)

    @property
    def n_cells(self) -> int:
        return int(self.values.size)

    def axes(self) -> List[np.ndarray]:
        return [(self.index_origin[a] + np.arange(self.values.shape[a])) * self.spacing for a in range(3)]

    def points(self) -> np.ndarray:
        xs, ys, zs = self.axes()
        g = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1)
        return g.reshape(-1, 3)

    def boundary_values(self) -> np.ndarray:
        v = self.values
        return np.concatenate([
            v[0].ravel(), v[-1].ravel(), v[:, 0].ravel(), v[:, -1].ravel(),
            v[:, :, 0].ravel(), v[:, :, -1].ravel(),
        ])


def lattice_grid(lo: Sequence[float], hi: Sequence[float], spacing: float,
                 padding: float) -> Tuple[np.ndarray, Tuple[int, int, int]]:
    """Lattice-anchored grid covering [lo - padding, hi + padding]."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    i0 = np.floor((lo - padding) / spacing).astype(np.int64)
    i1 = np.ceil((hi + padding) / spacing).astype(np.int64)
    dims = tuple(int(d) for d in (i1 - i0 + 1))
    return i0, dims


def resolve_iso_offset(spec: GridSpec, max_step: float) -> float:
    """Erosion: explicit value, or half a cell diagonal plus the largest step bound."""
    if spec.iso_offset is not None:
        return float(spec.iso_offset)
    return spec.half_diagonal + max_step


def _box_corners(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])


# =============================================================================
# Stamping
# =============================================================================

def compute_link_swept_sdf(chain: KinematicChain, traj: JointTrajectory, link_index: int,
                           spec: GridSpec, iso_offset: Optional[float] = None) -> SdfGrid:
    """Minimum over stamped poses of the link's signed distance.

    `link_index` is 0-based. The trajectory must already be resampled so that
    no step moves any material point more than half a grid spacing.
    Values are exact within `iso_offset + 2 * spacing` of the surface and
    capped beyond it (the sign is always exact).
    """
    if not len(traj):
        raise EmptyTrajectoryError("cannot sweep an empty trajectory")
    if traj.n_joints != chain.n_links:
        raise DimensionMismatchError(f"trajectory has {traj.n_joints} joints, chain has {chain.n_links}")
    if not 0 <= link_index < chain.n_links:
        raise SweepError(f"link index {link_index} out of range for {chain.n_links} links")

    h = spec.spacing
    steps = displacement_bounds(chain, traj.positions)
    max_step = float(steps.max()) if steps.size else 0.0
    if max_step > 0.5 * h * (1.0 + 1e-9):
        worst = int(np.argmax(steps))
        raise NotResampledError(
            f"step {worst} moves up to {max_step:.5f} m, more than half the grid spacing ({0.5 * h:.5f} m); "
            "resample the trajectory first")
    iso = resolve_iso_offset(spec, max_step) if iso_offset is None else float(iso_offset)

    mesh = chain.link_meshes[link_index]
    bvh = mesh.bvh

    # Link i only depends on joints 0..i; duplicates stamp the same pose.
    distal = link_index + 1
    configs = np.unique(traj.positions[:, :distal], axis=0)
    Q = np.zeros((len(configs), chain.n_links))
    Q[:, :distal] = configs
    rots, trans = forward_kinematics_batch(chain, Q)
    R = rots[:, link_index]
    t = trans[:, link_index]

    lo_l, hi_l = mesh.bounds()
    corners = _box_corners(lo_l, hi_l)
    world = np.einsum("kij,cj->kci", R, corners) + t[:, None, :]
    pose_lo = world.min(axis=1)
    pose_hi = world.max(axis=1)

    index_origin, dims = lattice_grid(pose_lo.min(axis=0), pose_hi.max(axis=0), h, spec.padding)
    cap = iso + 2.0 * h
    values = np.full(int(np.prod(dims)), np.inf)
    dims_a = np.array(dims)

    w0 = np.clip(np.ceil((pose_lo - 2.0 * h) / h).astype(np.int64) - index_origin, 0, dims_a - 1)
    w1 = np.clip(np.floor((pose_hi + 2.0 * h) / h).astype(np.int64) - index_origin, 0, dims_a - 1)

    batch_idx: List[np.ndarray] = []
    batch_pts: List[np.ndarray] = []
    batch_size = 0

    def flush():
        nonlocal batch_idx, batch_pts, batch_size
        if not batch_size:
            return
        idx = np.concatenate(batch_idx)
        pts = np.vstack(batch_pts)
        sd = signed_distance(bvh, pts, upper=cap)
        np.minimum.at(values, idx, sd)
        batch_idx, batch_pts, batch_size = [], [], 0

    for k in range(len(configs)):
        ranges = [np.arange(w0[k, a], w1[k, a] + 1) for a in range(3)]
        ii, jj, kk = np.meshgrid(*ranges, indexing="ij")
        flat = np.ravel_multi_index((ii.ravel(), jj.ravel(), kk.ravel()), dims)
        cells = (np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1) + index_origin) * h
        # world -> link frame: R^T (p - t)
        batch_pts.append((cells - t[k]) @ R[k])
        batch_idx.append(flat)
        batch_size += len(flat)
        if batch_size >= _STAMP_BATCH:
            flush()
    flush()

    values[np.isinf(values)] = max(spec.padding, cap)
    return SdfGrid(index_origin, h, values.reshape(dims), margin_budget=iso + spec.half_diagonal + max_step)


# =============================================================================
# Surface extraction
# =============================================================================

def extract_surface(grid: SdfGrid, iso: float = 0.0) -> TriangleMesh:
    """Closed, outward-oriented mesh of the level set {value = iso}."""
    vals = grid.values
    if vals.size == 0 or float(vals.min()) >= iso:
        return TriangleMesh.empty()
    if np.any(grid.boundary_values() <= iso):
        raise SurfaceClippedError(
            f"iso-surface at {iso:g} touches the grid boundary; increase the grid padding")
    v = vals.copy()
    # grid points exactly on the level set create zero-length edges
    v[v == iso] = np.nextafter(iso, np.inf)
    verts, faces, _normals, _values = measure.marching_cubes(
        v, level=iso, spacing=(grid.spacing,) * 3, allow_degenerate=False)
    verts = verts.astype(np.float64) + grid.origin
    mesh = _weld(verts, faces.astype(np.int64))
    if mesh.is_empty:
        return mesh
    if not mesh.closed:
        raise SweepError("extracted surface is not closed")
    if mesh_volume(mesh) < 0.0:
        mesh = TriangleMesh(mesh.vertices, mesh.faces[:, ::-1])
    return mesh


def _weld(verts: np.ndarray, faces: np.ndarray) -> TriangleMesh:
    """Merge vertices with identical coordinates and drop collapsed faces."""
    if not len(faces):
        return TriangleMesh.empty()
    uniq, inverse = np.unique(verts, axis=0, return_inverse=True)
    f = inverse.reshape(-1)[faces]
    keep = (f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2])
    f = f[keep]
    if not len(f):
        return TriangleMesh.empty()
    used = np.unique(f)
    remap = np.full(len(uniq), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriangleMesh(uniq[used], remap[f])


# =============================================================================
# Whole-grid sampling of a closed mesh
# =============================================================================

def mesh_to_sdf_grid(mesh: TriangleMesh, index_origin: Sequence[int], dims: Sequence[int],
                     spacing: float, band: float) -> np.ndarray:
    """Signed distance of a closed mesh on a lattice grid, clamped to +/-band.

    Distances are exact wherever |d| < band: every triangle scatters exact
    point-triangle distances into the cells of its box grown by `band`. The
    sign comes from signed crossing counts along +z rays through each column.
    Cost grows with the face count, not the cell count.
    """
    index_origin = np.asarray(index_origin, dtype=np.int64)
    dims = tuple(int(d) for d in dims)
    n_cells = int(np.prod(dims))
    if mesh.is_empty:
        return np.full(dims, band, dtype=np.float64)
    d2 = np.full(n_cells, band * band)
    _scatter_distances(mesh, index_origin, dims, spacing, band, d2)
    # on a closed oriented surface the signed crossings above a point sum to its winding number
    inside = _ray_winding(mesh, index_origin, dims, spacing) > 0
    d = np.sqrt(d2).reshape(dims)
    return np.where(inside, -d, d)


def _expand_boxes(i0: np.ndarray, i1: np.ndarray):
    """Yield (owner, ijk) chunks enumerating the integer boxes [i0, i1]."""
    ext = np.maximum(i1 - i0 + 1, 0)
    sizes = np.prod(ext, axis=1)
    order = np.flatnonzero(sizes > 0)
    start = 0
    while start < len(order):
        acc = np.cumsum(sizes[order[start:]])
        stop = start + max(1, int(np.searchsorted(acc, _SCATTER_CHUNK, side="right")))
        owners = order[start:stop]
        s = sizes[owners]
        total = int(s.sum())
        owner = np.repeat(owners, s)
        local = np.arange(total) - np.repeat(np.cumsum(s) - s, s)
        e = ext[owner]
        iz = local % e[:, 2]
        rest = local // e[:, 2]
        iy = rest % e[:, 1]
        ix = rest // e[:, 1]
        ijk = i0[owner] + np.stack([ix, iy, iz], axis=1)
        yield owner, ijk
        start = stop


def _scatter_distances(mesh, index_origin, dims, h, band, d2):
    tris = mesh.triangles()
    dims_a = np.array(dims)
    i0 = np.ceil((tris.min(axis=1) - band) / h).astype(np.int64) - index_origin
    i1 = np.floor((tris.max(axis=1) + band) / h).astype(np.int64) - index_origin
    i0 = np.maximum(i0, 0)
    i1 = np.minimum(i1, dims_a - 1)
    for owner, ijk in _expand_boxes(i0, i1):
        p = (ijk + index_origin) * h
        t = tris[owner]
        dist2 = point_triangle_sqdist(p, t[:, 0], t[:, 1], t[:, 2])
        flat = np.ravel_multi_index((ijk[:, 0], ijk[:, 1], ijk[:, 2]), dims)
        np.minimum.at(d2, flat, dist2)


def _ray_winding(mesh, index_origin, dims, h) -> np.ndarray:
    """Integer winding number of every cell from +z ray crossings."""
    nx, ny, nz = dims
    jx, jy = _JITTER[0] * h, _JITTER[1] * h
    zs = (index_origin[2] + np.arange(nz)) * h
    tris = mesh.triangles()
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    area2 = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    use = np.flatnonzero(area2 != 0.0)
    crossings = np.zeros((nx, ny, nz + 1), dtype=np.int32)
    if not use.size:
        return np.zeros(dims, dtype=np.int32)
    lo = tris[use].min(axis=1)
    hi = tris[use].max(axis=1)
    c0 = np.maximum(np.ceil((lo[:, :2] - (jx, jy)) / h).astype(np.int64) - index_origin[:2], 0)
    c1 = np.minimum(np.floor((hi[:, :2] - (jx, jy)) / h).astype(np.int64) - index_origin[:2],
                    np.array([nx - 1, ny - 1]))
    # reuse the 3-D box enumerator with a unit z extent
    zero = np.zeros((len(use), 1), dtype=np.int64)
    for owner_local, ij in _expand_boxes(np.hstack([c0, zero]), np.hstack([c1, zero])):
        owner = use[owner_local]
        px = (ij[:, 0] + index_origin[0]) * h + jx
        py = (ij[:, 1] + index_origin[1]) * h + jy
        ta, tb, tc = a[owner], b[owner], c[owner]
        d = area2[owner]
        e0 = (tb[:, 0] - ta[:, 0]) * (py - ta[:, 1]) - (tb[:, 1] - ta[:, 1]) * (px - ta[:, 0])
        e1 = (tc[:, 0] - tb[:, 0]) * (py - tb[:, 1]) - (tc[:, 1] - tb[:, 1]) * (px - tb[:, 0])
        e2 = (ta[:, 0] - tc[:, 0]) * (py - tc[:, 1]) - (ta[:, 1] - tc[:, 1]) * (px - tc[:, 0])
        pos = d > 0.0
        hit = np.where(pos, (e0 > 0) & (e1 > 0) & (e2 > 0), (e0 < 0) & (e1 < 0) & (e2 < 0))
        if not hit.any():
            continue
        ta, tb, tc, d = ta[hit], tb[hit], tc[hit], d[hit]
        e0, e1, e2 = e0[hit], e1[hit], e2[hit]
        z = (e1 * ta[:, 2] + e2 * tb[:, 2] + e0 * tc[:, 2]) / d
        bucket = np.searchsorted(zs, z, side="left")
        sigma = np.where(d > 0.0, 1, -1).astype(np.int32)
        np.add.at(crossings, (ij[hit, 0], ij[hit, 1], bucket), sigma)
    suffix = np.cumsum(crossings[:, :, ::-1], axis=2)[:, :, ::-1]
    return suffix[:, :, 1:]


# =============================================================================
# Per-link driver
# =============================================================================

@dataclass
class LinkSweepStats:
    link: str
    index: int
    poses: int
    cells: int
    dims: Tuple[int, int, int]
    vertices: int
    faces: int
    volume: float
    margin_budget: float
    seconds: float


@dataclass
class SweepResult:
    meshes: List[TriangleMesh]
    stats: List[LinkSweepStats]
    iso_offset: float
    margin_budget: float
    base: Optional[TriangleMesh] = None
    seconds: float = 0.0

    def stats_dict(self) -> Dict:
        return {
            "iso_offset": self.iso_offset,
            "margin_budget": self.margin_budget,
            "seconds": self.seconds,
            "links": [asdict(s) for s in self.stats],
        }


def _sweep_link(chain: KinematicChain, traj: JointTrajectory, index: int, spec: GridSpec,
                iso_offset: float) -> Tuple[TriangleMesh, LinkSweepStats]:
    t0 = time.perf_counter()
    grid = compute_link_swept_sdf(chain, traj, index, spec, iso_offset=iso_offset)
    mesh = extract_surface(grid, iso=-iso_offset)
    elapsed = time.perf_counter() - t0
    n_poses = len(np.unique(traj.positions[:, :index + 1], axis=0))
    stats = LinkSweepStats(
        link=chain.links[index].name, index=index, poses=n_poses, cells=grid.n_cells,
        dims=grid.dims, vertices=mesh.n_vertices, faces=mesh.n_faces,
        volume=mesh_volume(mesh), margin_budget=grid.margin_budget, seconds=elapsed,
    )
    return mesh, stats


def compute_swept_volumes(chain: KinematicChain, traj: JointTrajectory, spec: GridSpec,
                          workers: Optional[int] = None, include_base: bool = False) -> SweepResult:
    """Swept volume mesh of every link, extracted at iso = -iso_offset.

    Links run in parallel worker processes; results keep link order.
    """
    if not len(traj):
        raise EmptyTrajectoryError("cannot sweep an empty trajectory")
    t0 = time.perf_counter()
    steps = displacement_bounds(chain, traj.positions) if traj.n_joints == chain.n_links else np.zeros(0)
    iso = resolve_iso_offset(spec, float(steps.max()) if steps.size else 0.0)
    n = chain.n_links
    n_workers = min(config.effective_workers(workers), n)

    results: List[Optional[Tuple[TriangleMesh, LinkSweepStats]]] = [None] * n
    if n_workers <= 1:
        for i in range(n):
            try:
                results[i] = _sweep_link(chain, traj, i, spec, iso)
            except Exception as e:
                raise LinkError(chain.links[i].name, e) from e
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            futures = [pool.submit(_sweep_link, chain, traj, i, spec, iso) for i in range(n)]
            for i, fut in enumerate(futures):
                try:
                    results[i] = fut.result()
                except Exception as e:
                    raise LinkError(chain.links[i].name, e) from e

    meshes = [r[0] for r in results]
    stats = [r[1] for r in results]
    for s in stats:
        log.info("[SWEEP_LINK] link=%s poses=%d cells=%d vertices=%d faces=%d volume=%.6f elapsed=%.2fs",
                 s.link, s.poses, s.cells, s.vertices, s.faces, s.volume, s.seconds)
    base = chain.base_mesh if include_base and not chain.base_mesh.is_empty else None
    margin = max(s.margin_budget for s in stats)
    return SweepResult(meshes, stats, iso, margin, base, time.perf_counter() - t0)


def save_swept_volumes(result: SweepResult, out_dir: Union[str, Path], prefix: str = "sv") -> List[Path]:
    """Write `<prefix>_link_<i>.obj` (1-based) for every link."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [save_mesh(m, out_dir / f"{prefix}_link_{i + 1}.obj") for i, m in enumerate(result.meshes)]
