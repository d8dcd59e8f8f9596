"""Conservative mesh decimation.

Quadric-error edge collapses reduce the face count; afterwards the result is
pulled inward along its vertex normals until sampled surface points all lie
inside the original, so a decimated swept volume never claims more free
space than the original did.
"""

from __future__ import annotations

import heapq
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

import robocell_config as config
from robocell_errors import ConfigError, MeshNotClosedError, TopologyError
from robocell_geometry import TriangleMesh, compact, sample_surface, signed_distance

log = logging.getLogger("robocell.decimate")

_PULL_ITERATIONS = 6
_PULL_OVERSHOOT = 1.5
_VERIFY_SEED = 10_007
CONTAINMENT_TOLERANCE = 1e-6


@dataclass(frozen=True)
class DecimationParams:
    target_reduction: float = config.DECIMATE_TARGET
    max_error: float = config.DECIMATE_MAX_ERROR
    preserve_topology: bool = True
    check_samples: int = config.DECIMATE_CHECK_SAMPLES
    max_retries: int = config.DECIMATE_MAX_RETRIES

    def __post_init__(self):
        if not 0.0 < self.target_reduction < 1.0:
            raise ConfigError(f"target_reduction must be in (0, 1), got {self.target_reduction}")
        if not self.max_error > 0.0:
            raise ConfigError(f"max_error must be positive, got {self.max_error}")


@dataclass
class DecimationResult:
    mesh: TriangleMesh
    input_faces: int
    output_faces: int
    input_vertices: int
    output_vertices: int
    target_reduction: float
    achieved_reduction: float
    max_error_used: float
    retries: int
    pull_distance: float
    containment_margin: float
    passed_through: bool
    seconds: float

    def stats_dict(self) -> Dict:
        d = asdict(self)
        d.pop("mesh")
        d["achieved_reduction_pct"] = round(100.0 * self.achieved_reduction, 4)
        return d


# =============================================================================
# Quadric edge collapse
# =============================================================================

def _face_quadrics(verts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Per-vertex sum of the plane quadrics of incident faces, (n, 4, 4)."""
    t = verts[faces]
    n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
    length = np.linalg.norm(n, axis=1)
    ok = length > 0.0
    n[ok] /= length[ok, None]
    n[~ok] = 0.0
    d = -np.einsum("ij,ij->i", n, t[:, 0])
    p = np.hstack([n, d[:, None]])
    K = p[:, :, None] * p[:, None, :]
    Q = np.zeros((len(verts), 4, 4))
    for k in range(3):
        np.add.at(Q, faces[:, k], K)
    return Q


def _quadric_cost(Q: np.ndarray, x: np.ndarray) -> float:
    h = np.append(x, 1.0)
    return max(0.0, float(h @ Q @ h))


def _optimal_position(Q: np.ndarray, pu: np.ndarray, pv: np.ndarray) -> Tuple[float, np.ndarray]:
    mid = 0.5 * (pu + pv)
    A = Q[:3, :3]
    b = Q[:3, 3]
    if np.linalg.cond(A) < 1e8:
        x = np.linalg.solve(A, -b)
        if np.linalg.norm(x - mid) <= 2.0 * np.linalg.norm(pu - pv):
            return _quadric_cost(Q, x), x
    best = min(((_quadric_cost(Q, c), i) for i, c in enumerate((pu, pv, mid))))
    return best[0], (pu, pv, mid)[best[1]]


def _components(n_vertices: int, faces: np.ndarray) -> np.ndarray:
    e = faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    g = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n_vertices, n_vertices))
    _, labels = connected_components(g, directed=False)
    return labels


class _Collapser:
    """Mutable collapse state for one decimation attempt."""

    def __init__(self, mesh: TriangleMesh, max_error: float, preserve_topology: bool):
        self.V = mesh.vertices.copy()
        self.F = mesh.faces.copy()
        n = len(self.V)
        self.face_alive = np.ones(len(self.F), dtype=bool)
        self.vert_alive = np.zeros(n, dtype=bool)
        self.vert_alive[np.unique(self.F)] = True
        self.vf: List[Set[int]] = [set() for _ in range(n)]
        for fi, (a, b, c) in enumerate(self.F.tolist()):
            self.vf[a].add(fi)
            self.vf[b].add(fi)
            self.vf[c].add(fi)
        self.Q = _face_quadrics(self.V, self.F)
        self.version = np.zeros(n, dtype=np.int64)
        self.comp = _components(n, self.F)
        self.comp_size = np.bincount(self.comp[self.vert_alive], minlength=int(self.comp.max()) + 1)
        self.max_error = max_error
        self.n_faces = len(self.F)
        self.heap: List[Tuple] = []
        if not preserve_topology:
            self._drop_small_components()

    def _drop_small_components(self) -> None:
        """Remove whole components that fit inside the error tolerance."""
        for label in np.unique(self.comp[self.vert_alive]):
            members = np.flatnonzero((self.comp == label) & self.vert_alive)
            span = np.linalg.norm(self.V[members].max(axis=0) - self.V[members].min(axis=0))
            if span > 2.0 * self.max_error:
                continue
            faces = set().union(*(self.vf[v] for v in members))
            for f in faces:
                self.face_alive[f] = False
            for v in members:
                self.vf[v].clear()
                self.vert_alive[v] = False
            self.comp_size[label] = 0
            self.n_faces -= len(faces)

    def neighbors(self, u: int) -> Set[int]:
        out: Set[int] = set()
        for f in self.vf[u]:
            out.update(self.F[f].tolist())
        out.discard(u)
        return out

    def push(self, u: int, v: int) -> None:
        if u > v:
            u, v = v, u
        cost, pos = _optimal_position(self.Q[u] + self.Q[v], self.V[u], self.V[v])
        heapq.heappush(self.heap, (cost, u, v, int(self.version[u]), int(self.version[v]), tuple(pos)))

    def seed(self) -> None:
        alive = self.F[self.face_alive]
        if not len(alive):
            return
        e = np.sort(alive[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        for u, v in np.unique(e, axis=0).tolist():
            self.push(u, v)

    def _folds(self, u: int, v: int, pos: np.ndarray, keep: Set[int]) -> bool:
        for f in keep:
            tri = self.F[f]
            old = self.V[tri]
            new = old.copy()
            new[(tri == u) | (tri == v)] = pos
            n_old = np.cross(old[1] - old[0], old[2] - old[0])
            n_new = np.cross(new[1] - new[0], new[2] - new[0])
            len_new = np.linalg.norm(n_new)
            if len_new <= 1e-14 * max(1.0, np.linalg.norm(n_old)):
                return True
            if float(n_old @ n_new) <= 0.0:
                return True
        return False

    def try_collapse(self, u: int, v: int, pos: np.ndarray) -> bool:
        shared = self.vf[u] & self.vf[v]
        if len(shared) != 2:
            return False
        if self.comp_size[self.comp[u]] <= 4:
            return False
        # link condition: common neighbors are exactly the two opposite vertices
        opposite = set()
        for f in shared:
            opposite.update(self.F[f].tolist())
        opposite -= {u, v}
        if self.neighbors(u) & self.neighbors(v) != opposite:
            return False
        keep = (self.vf[u] | self.vf[v]) - shared
        if self._folds(u, v, pos, keep):
            return False

        self.V[u] = pos
        for f in self.vf[v] - shared:
            tri = self.F[f]
            tri[tri == v] = u
            self.vf[u].add(f)
        for f in shared:
            self.face_alive[f] = False
            for w in self.F[f].tolist():
                self.vf[w].discard(f)
        self.vf[v].clear()
        self.vert_alive[v] = False
        self.Q[u] = self.Q[u] + self.Q[v]
        self.version[u] += 1
        self.version[v] += 1
        self.comp_size[self.comp[u]] -= 1
        self.n_faces -= 2
        for w in sorted(self.neighbors(u)):
            self.push(u, w)
        return True

    def run(self, target_faces: int) -> TriangleMesh:
        self.seed()
        while self.heap and self.n_faces > target_faces:
            cost, u, v, vu, vv, pos = heapq.heappop(self.heap)
            if self.version[u] != vu or self.version[v] != vv:
                continue
            if not (self.vert_alive[u] and self.vert_alive[v]):
                continue
            if math.sqrt(cost) > self.max_error:
                break
            self.try_collapse(u, v, np.array(pos))
        return compact(self.V, self.F[self.face_alive])


# =============================================================================
# Containment
# =============================================================================

def containment_margin(inner: TriangleMesh, outer: TriangleMesh,
                       n_samples: int = config.DECIMATE_CHECK_SAMPLES, seed: int = 0) -> float:
    """Deepest sampled point of `inner`'s surface lying outside `outer` (0 when contained)."""
    if inner.is_empty:
        return 0.0
    if outer.is_empty:
        return math.inf
    pts = sample_surface(inner, count=n_samples, seed=seed)
    sd = signed_distance(outer, pts)
    return max(0.0, float(sd.max()))


def _violation(mesh: TriangleMesh, original: TriangleMesh, n_samples: int, seed: int) -> float:
    """containment_margin over surface samples plus every vertex and edge midpoint."""
    edges = mesh.unique_edges()
    pts = np.concatenate([
        sample_surface(mesh, count=n_samples, seed=seed),
        mesh.vertices,
        0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]]),
    ])
    return max(0.0, float(signed_distance(original, pts).max()))


def _pull_inward(mesh: TriangleMesh, original: TriangleMesh, n_samples: int) -> Tuple[TriangleMesh, float]:
    """Offset vertices inward until sampled points sit inside `original`."""
    normals = mesh.vertex_normals()
    before = mesh.face_normals(unit=False)
    verts = mesh.vertices.copy()
    total = 0.0
    current = mesh
    for it in range(_PULL_ITERATIONS):
        violation = _violation(current, original, n_samples, seed=it)
        if violation <= 0.0:
            break
        step = _PULL_OVERSHOOT * violation + 1e-9
        verts = verts - normals * step
        total += step
        current = TriangleMesh(verts, mesh.faces)
    else:
        if _violation(current, original, n_samples, seed=_PULL_ITERATIONS) > 0.0:
            raise TopologyError("inward pull did not reach containment")
    after = current.face_normals(unit=False)
    if np.any(np.einsum("ij,ij->i", before, after) <= 0.0):
        raise TopologyError("inward pull flipped face orientation")
    return current, total


# =============================================================================
# Public entry points
# =============================================================================

def decimate(mesh: TriangleMesh, params: Optional[DecimationParams] = None, name: str = "mesh") -> DecimationResult:
    """Reduce `mesh` by quadric edge collapses while staying inside it."""
    params = params or DecimationParams()
    if not mesh.closed:
        raise MeshNotClosedError(f"{name}: decimation requires a closed mesh")
    t0 = time.perf_counter()
    m = mesh.n_faces
    target_faces = int(math.floor(m * (1.0 - params.target_reduction) + 1e-9))
    max_error = params.max_error

    for attempt in range(params.max_retries + 1):
        if mesh.is_empty:
            break
        try:
            reduced = _Collapser(mesh, max_error, params.preserve_topology).run(target_faces)
            if not reduced.closed:
                raise TopologyError("collapse sequence opened the surface")
            pulled, pull = _pull_inward(reduced, mesh, params.check_samples)
            margin = containment_margin(pulled, mesh, params.check_samples, seed=_VERIFY_SEED)
            if margin > CONTAINMENT_TOLERANCE:
                raise TopologyError(f"decimated surface leaves the original by {margin:.2e} m")
        except TopologyError as e:
            log.warning("%s: decimation attempt %d failed (%s); retrying with max_error=%.3g",
                        name, attempt + 1, e, max_error / 2.0)
            max_error /= 2.0
            continue
        result = DecimationResult(
            mesh=pulled, input_faces=m, output_faces=pulled.n_faces,
            input_vertices=mesh.n_vertices, output_vertices=pulled.n_vertices,
            target_reduction=params.target_reduction,
            achieved_reduction=1.0 - pulled.n_faces / m if m else 0.0,
            max_error_used=max_error, retries=attempt, pull_distance=pull,
            containment_margin=margin, passed_through=False,
            seconds=time.perf_counter() - t0,
        )
        _log_result(name, result)
        return result

    if not mesh.is_empty:
        log.warning("%s: decimation gave up after %d retries; passing the original through",
                    name, params.max_retries)
    result = DecimationResult(
        mesh=mesh, input_faces=m, output_faces=m, input_vertices=mesh.n_vertices,
        output_vertices=mesh.n_vertices, target_reduction=params.target_reduction,
        achieved_reduction=0.0, max_error_used=max_error, retries=params.max_retries if m else 0,
        pull_distance=0.0, containment_margin=0.0, passed_through=True,
        seconds=time.perf_counter() - t0,
    )
    _log_result(name, result)
    return result


def _log_result(name: str, r: DecimationResult) -> None:
    log.info("[DECIMATE_RESULT] mesh=%s faces=%d->%d reduction=%.2f%% target=%.2f%% retries=%d "
             "pull=%.6f margin=%.2e passthrough=%s elapsed=%.2fs",
             name, r.input_faces, r.output_faces, 100.0 * r.achieved_reduction,
             100.0 * r.target_reduction, r.retries, r.pull_distance, r.containment_margin,
             r.passed_through, r.seconds)


def decimate_many(meshes: Sequence[TriangleMesh], params: Optional[DecimationParams] = None,
                  names: Optional[Sequence[str]] = None, workers: Optional[int] = None) -> List[DecimationResult]:
    """Decimate meshes in parallel processes; results keep input order."""
    params = params or DecimationParams()
    names = list(names) if names is not None else [f"mesh_{i + 1}" for i in range(len(meshes))]
    n_workers = min(config.effective_workers(workers), max(1, len(meshes)))
    if n_workers <= 1:
        return [decimate(m, params, n) for m, n in zip(meshes, names)]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        futures = [pool.submit(decimate, m, params, n) for m, n in zip(meshes, names)]
        return [f.result() for f in futures]
