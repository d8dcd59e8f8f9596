"""Obstacle representation by grid CSG.

V_O is the bounding volume minus every swept volume. All meshes are sampled
as signed distance fields on one shared lattice grid; the difference chain
becomes a single pointwise max/min, which is then extracted with marching
cubes. The subtracted side is shifted so discretization error only ever
grows V_O; the bounding side is used as is, so V_O stays inside V_BV.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ValidationError

import robocell_config as config
from robocell_errors import CarveError, ConfigError, MeshNotClosedError
from robocell_geometry import (
    TriangleMesh,
    box_mesh,
    icosphere_mesh,
    load_mesh,
    mesh_volume,
    save_mesh,
)
from robocell_kinematics import PRISMATIC, KinematicChain, validation_field_path
from robocell_sweep import SQRT3_2, GridSpec, SdfGrid, extract_surface, lattice_grid, mesh_to_sdf_grid

log = logging.getLogger("robocell.carve")

BOUNDING_KINDS = ("cube", "sphere")
_SPHERE_SUBDIVISIONS = 3


@dataclass
class ObstacleModel:
    """V_O with the bounding volume it was carved from and its slack."""
    mesh: TriangleMesh
    bounding_volume: TriangleMesh
    margin_budget: float
    provenance: List[str] = field(default_factory=list)
    spacing: float = 0.0
    index_origin: Tuple[int, int, int] = (0, 0, 0)
    dims: Tuple[int, int, int] = (0, 0, 0)
    volume: float = 0.0
    bounding_volume_volume: float = 0.0
    timings: Dict[str, float] = field(default_factory=dict)

    def metadata(self) -> Dict:
        return {
            "margin_budget": self.margin_budget,
            "provenance": list(self.provenance),
            "spacing": self.spacing,
            "index_origin": list(self.index_origin),
            "dims": list(self.dims),
            "volume": self.volume,
            "bounding_volume_volume": self.bounding_volume_volume,
            "vertices": self.mesh.n_vertices,
            "faces": self.mesh.n_faces,
            "timings": dict(self.timings),
        }


# =============================================================================
# Bounding volume
# =============================================================================

def workspace_radius(chain: KinematicChain) -> float:
    """Upper bound on the distance of any robot point from the base origin."""
    radius = 0.0
    run = 0.0
    for link, reach in zip(chain.links, chain.reach_radii):
        run += float(np.linalg.norm(link.joint.origin.translation))
        if link.joint.type == PRISMATIC:
            run += link.joint.max_travel
        radius = max(radius, run + reach)
    if not chain.base_mesh.is_empty:
        radius = max(radius, float(np.linalg.norm(chain.base_mesh.vertices, axis=1).max()))
    return radius


def make_bounding_volume(chain: KinematicChain, kind: Optional[str] = None,
                         scale: Optional[float] = None) -> TriangleMesh:
    """Cube or icosphere around the base frame that contains every reachable point.

    The cube's half-extent (or the sphere's inscribed radius) is
    `scale * workspace_radius(chain)`.
    """
    kind = (kind or config.BOUNDING_KIND).lower()
    scale = config.BOUNDING_SCALE if scale is None else float(scale)
    if kind not in BOUNDING_KINDS:
        raise ConfigError(f"bounding kind must be one of {BOUNDING_KINDS}, got {kind!r}")
    if scale < 1.0:
        raise ConfigError(f"bounding scale must be >= 1, got {scale}")
    r = scale * workspace_radius(chain)
    if kind == "cube":
        return box_mesh((2.0 * r,) * 3)
    unit = icosphere_mesh(_SPHERE_SUBDIVISIONS, 1.0)
    # faces of a unit icosphere sit slightly inside the unit sphere
    t = unit.triangles()
    inradius = float(np.abs(np.einsum("ij,ij->i", unit.face_normals(), t[:, 0])).min())
    return icosphere_mesh(_SPHERE_SUBDIVISIONS, r / inradius)


# =============================================================================
# Grid CSG
# =============================================================================

def _require_closed(meshes: Sequence[TriangleMesh], what: str) -> None:
    for i, m in enumerate(meshes):
        if not m.closed:
            raise MeshNotClosedError(f"{what} {i + 1} is not closed")


def _min_field(meshes: Sequence[TriangleMesh], index_origin, dims, h: float, band: float,
               workers: Optional[int]) -> np.ndarray:
    """Pointwise minimum of the meshes' signed distances (band-clamped)."""
    out = np.full(dims, band)
    live = [m for m in meshes if not m.is_empty]
    if not live:
        return out
    n_workers = min(config.effective_workers(workers), len(live))
    if n_workers <= 1:
        for m in live:
            np.minimum(out, mesh_to_sdf_grid(m, index_origin, dims, h, band), out=out)
        return out
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        for f in pool.map(lambda m: mesh_to_sdf_grid(m, index_origin, dims, h, band), live):
            np.minimum(out, f, out=out)
    return out


def boolean_difference(a: TriangleMesh, b: TriangleMesh, spec: GridSpec) -> TriangleMesh:
    """A minus B on a grid covering A; B is eroded by `spec.iso_offset` (0 when unset)."""
    _require_closed([a, b], "boolean operand")
    if a.is_empty:
        return TriangleMesh.empty()
    h = spec.spacing
    shift = spec.iso_offset or 0.0
    band = shift + (config.BAND_CELLS + 1) * h
    lo, hi = a.bounds()
    i0, dims = lattice_grid(lo, hi, h, spec.padding)
    sd_a = mesh_to_sdf_grid(a, i0, dims, h, band)
    sd_b = mesh_to_sdf_grid(b, i0, dims, h, band)
    d = np.maximum(sd_a, -sd_b - shift)
    return extract_surface(SdfGrid(i0, h, d), iso=0.0)


def obstacle_field(bv: TriangleMesh, svs: Sequence[TriangleMesh], spec: GridSpec,
                   workers: Optional[int] = None) -> Tuple[SdfGrid, float]:
    """Combined field max(sd_BV, -min_i sd_i - shift) and the shift used.

    sd_BV is convex for a convex V_BV, so interpolated zero crossings of the
    max never leave V_BV.
    """
    _require_closed([bv], "bounding volume")
    _require_closed(svs, "swept volume")
    if bv.is_empty:
        raise CarveError("bounding volume is empty")
    h = spec.spacing
    half_diag = h * SQRT3_2
    shift = (spec.iso_offset or 0.0) + half_diag
    band = shift + half_diag + config.BAND_CELLS * h
    lo, hi = bv.bounds()
    i0, dims = lattice_grid(lo, hi, h, spec.padding)
    sd_bv = mesh_to_sdf_grid(bv, i0, dims, h, band)
    sd_sv = _min_field(svs, i0, dims, h, band, workers)
    d = np.maximum(sd_bv, -sd_sv - shift)
    return SdfGrid(i0, h, d), shift


def obstacle_representation(bv: TriangleMesh, svs: Sequence[TriangleMesh], spec: GridSpec,
                            margins: float = 0.0, provenance: Optional[Sequence[str]] = None,
                            base: Optional[TriangleMesh] = None,
                            workers: Optional[int] = None) -> ObstacleModel:
    """V_O = V_BV minus the union of all swept volumes (and the base, when given).

    `margins` is the slack inherited from earlier steps; the carve shift is
    added to it to form the model's margin budget.
    """
    t0 = time.perf_counter()
    svs = list(svs)
    names = list(provenance) if provenance is not None else [f"sv_{i + 1}" for i in range(len(svs))]
    if base is not None and not base.is_empty:
        if base.closed:
            svs.append(base)
            names.append("base")
        else:
            log.warning("Base mesh is not closed; it is not subtracted")
    if len(names) != len(svs):
        raise CarveError(f"{len(names)} provenance entries for {len(svs)} meshes")

    if not any(not m.is_empty for m in svs):
        _require_closed([bv], "bounding volume")
        log.warning("No swept volumes to subtract; V_O is the whole bounding volume")
        vol = mesh_volume(bv)
        model = ObstacleModel(bv, bv, float(margins), names, spec.spacing,
                              volume=vol, bounding_volume_volume=vol,
                              timings={"sampling": 0.0, "extraction": 0.0,
                                       "total": time.perf_counter() - t0})
        _log_result(model)
        return model

    grid, shift = obstacle_field(bv, svs, spec, workers)
    t1 = time.perf_counter()
    mesh = extract_surface(grid, iso=0.0)
    t2 = time.perf_counter()
    model = ObstacleModel(
        mesh=mesh, bounding_volume=bv, margin_budget=float(margins) + shift,
        provenance=names, spacing=spec.spacing,
        index_origin=tuple(int(i) for i in grid.index_origin), dims=grid.dims,
        volume=mesh_volume(mesh), bounding_volume_volume=mesh_volume(bv),
        timings={"sampling": t1 - t0, "extraction": t2 - t1, "total": t2 - t0},
    )
    _log_result(model)
    return model


def _log_result(model: ObstacleModel) -> None:
    log.info("[CARVE_RESULT] svs=%d dims=%s vertices=%d faces=%d volume=%.6f bv_volume=%.6f "
             "margin=%.4f elapsed=%.2fs",
             len(model.provenance), "x".join(str(d) for d in model.dims), model.mesh.n_vertices,
             model.mesh.n_faces, model.volume, model.bounding_volume_volume, model.margin_budget,
             model.timings.get("total", 0.0))


# =============================================================================
# Model files
# =============================================================================

class ModelFile(BaseModel):
    mesh: str
    bounding_volume: str
    margin_budget: float
    provenance: List[str] = []
    spacing: float = 0.0
    index_origin: List[int] = [0, 0, 0]
    dims: List[int] = [0, 0, 0]
    volume: float = 0.0
    bounding_volume_volume: float = 0.0
    vertices: int = 0
    faces: int = 0
    timings: Dict[str, float] = {}


def save_model(model: ObstacleModel, path: Union[str, Path],
               mesh_path: Optional[Union[str, Path]] = None,
               bv_path: Optional[Union[str, Path]] = None) -> Path:
    """Write the model JSON plus its meshes (default `<stem>.obj` and `v_bv.obj` alongside)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mesh_path = Path(mesh_path) if mesh_path else path.with_suffix(".obj")
    bv_path = Path(bv_path) if bv_path else path.parent / "v_bv.obj"
    save_mesh(model.mesh, mesh_path)
    save_mesh(model.bounding_volume, bv_path)
    doc = model.metadata()
    doc["mesh"] = _relative(mesh_path, path.parent)
    doc["bounding_volume"] = _relative(bv_path, path.parent)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
    log.info("Wrote obstacle model to %s", path)
    return path


def _relative(p: Path, base: Path) -> str:
    try:
        return str(p.resolve().relative_to(base.resolve()))
    except ValueError:
        return str(p.resolve())


def load_model(path: Union[str, Path]) -> ObstacleModel:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = ModelFile.model_validate(json.load(f))
    except FileNotFoundError:
        raise ConfigError(f"model file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    except ValidationError as e:
        field_path, message = validation_field_path(e)
        raise ConfigError(f"{path}: {field_path}: {message}") from e
    try:
        mesh = load_mesh(path.parent / doc.mesh)
        bv = load_mesh(path.parent / doc.bounding_volume)
    except FileNotFoundError as e:
        raise ConfigError(f"{path}: mesh file not found: {e.filename}") from e
    return ObstacleModel(
        mesh=mesh, bounding_volume=bv, margin_budget=doc.margin_budget,
        provenance=doc.provenance, spacing=doc.spacing,
        index_origin=tuple(doc.index_origin), dims=tuple(doc.dims),
        volume=doc.volume, bounding_volume_volume=doc.bounding_volume_volume,
        timings=doc.timings,
    )


def spec_for_carve(spacing: float, padding: Optional[float] = None) -> GridSpec:
    """Carve grid with the default padding rule (at least two cells)."""
    pad = max(config.GRID_PADDING, 2.0 * spacing) if padding is None else padding
    return GridSpec(spacing=spacing, padding=max(pad, 2.0 * spacing), iso_offset=None)
