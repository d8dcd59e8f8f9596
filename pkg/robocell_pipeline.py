"""Four-step pipeline: exploration ingest, swept volumes, decimation, carving.

Configured by a JSON file (see `PipelineConfig`); every relative path in it
is resolved against the config file's directory.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

import robocell_config as config
from robocell_carve import ObstacleModel, make_bounding_volume, obstacle_representation, save_model
from robocell_decimate import DecimationParams, DecimationResult, decimate_many
from robocell_errors import ConfigError, DimensionMismatchError, MeshNotClosedError, PipelineStepError
from robocell_export import export_decimate_stats_json, export_mesh_stats_csv, export_run_report_json, export_sweep_stats_json
from robocell_geometry import TriangleMesh, mesh_volume, save_mesh
from robocell_html import generate_html_report
from robocell_kinematics import (
    KinematicChain,
    detach_tool,
    load_chain,
    load_trajectory,
    resample_for_sweep,
    validation_field_path,
)
from robocell_sweep import GridSpec, SweepResult, compute_swept_volumes

log = logging.getLogger("robocell.pipeline")

STEPS = ("exploration", "swept_volume", "decimation", "obstacle_representation")


# =============================================================================
# Configuration
# =============================================================================

class GridConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    spacing: float = Field(default_factory=lambda: config.GRID_SPACING, gt=0.0)
    padding: Optional[float] = Field(default=None, gt=0.0)
    iso_offset: Union[Literal["auto"], float] = "auto"
    carve_spacing: Optional[float] = Field(default=None, gt=0.0)

    def sweep_spec(self) -> GridSpec:
        pad = self.padding if self.padding is not None else max(config.GRID_PADDING, 2.0 * self.spacing)
        iso = None if self.iso_offset == "auto" else float(self.iso_offset)
        return GridSpec(spacing=self.spacing, padding=pad, iso_offset=iso)

    def carve_spec(self) -> GridSpec:
        h = self.carve_spacing or self.spacing
        pad = self.padding if self.padding is not None else config.GRID_PADDING
        return GridSpec(spacing=h, padding=max(pad, 2.0 * h), iso_offset=None)


class DecimationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    target: float = Field(default_factory=lambda: config.DECIMATE_TARGET, gt=0.0, lt=1.0)
    max_error: float = Field(default_factory=lambda: config.DECIMATE_MAX_ERROR, gt=0.0)
    preserve_topology: bool = True

    def params(self) -> DecimationParams:
        return DecimationParams(self.target, self.max_error, self.preserve_topology)


class BoundingConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["cube", "sphere"] = Field(default_factory=lambda: config.BOUNDING_KIND)
    scale: float = Field(default_factory=lambda: config.BOUNDING_SCALE, ge=1.0)


class PipelineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    chain: str
    sessions: List[str] = Field(min_length=1)
    grid: GridConfig = Field(default_factory=GridConfig)
    decimation: Union[Literal["skip"], DecimationConfig] = Field(default_factory=DecimationConfig)
    bounding: BoundingConfig = Field(default_factory=BoundingConfig)
    output_dir: str = "out"
    repetitions: int = Field(default=1, ge=1)
    workers: Optional[int] = Field(default=None, ge=0)
    subtract_base: bool = True
    include_tool: bool = True
    html_report: bool = True
    out_of_limits: Optional[Literal["reject", "clamp"]] = None

    def resolved(self, base_dir: Union[str, Path]) -> "PipelineConfig":
        """Copy with chain, sessions and output_dir made absolute against `base_dir`."""
        base = Path(base_dir)

        def fix(p: str) -> str:
            path = Path(p)
            return str(path if path.is_absolute() else (base / path).resolve())

        return self.model_copy(update={
            "chain": fix(self.chain),
            "sessions": [fix(s) for s in self.sessions],
            "output_dir": fix(self.output_dir),
        })


def load_pipeline_config(path: Union[str, Path]) -> PipelineConfig:
    """Parse and validate a pipeline config file; paths come back absolute."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}")
    try:
        cfg = PipelineConfig.model_validate(raw)
    except ValidationError as e:
        field_path, msg = validation_field_path(e)
        raise ConfigError(f"{path}: {field_path}: {msg}")
    cfg = cfg.resolved(path.parent)
    for i, p in enumerate([cfg.chain] + cfg.sessions):
        if not Path(p).exists():
            where = "chain" if i == 0 else f"sessions.{i - 1}"
            raise ConfigError(f"{path}: {where}: file not found: {p}")
    return cfg


# =============================================================================
# Report
# =============================================================================

@dataclass
class MeshStats:
    name: str
    kind: str
    session: Optional[int]
    vertices: int
    faces: int
    volume: float
    seconds: float = 0.0


@dataclass
class RunReport:
    step_seconds: Dict[str, float]
    total_seconds: float
    repetitions: int
    meshes: List[MeshStats] = field(default_factory=list)
    margins: Dict[str, float] = field(default_factory=dict)
    sessions: List[Dict] = field(default_factory=list)
    decimation: Optional[List[Dict]] = None
    config: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        d = asdict(self)
        d["meshes"] = [asdict(m) for m in self.meshes]
        return d


@dataclass
class PipelineResult:
    model: ObstacleModel
    report: RunReport
    output_dir: Path


def merge_sessions(sessions: Sequence[Sequence[TriangleMesh]]) -> List[TriangleMesh]:
    """Flatten per-session link SVs; every session must cover the same links."""
    if not sessions:
        return []
    n = len(sessions[0])
    for k, s in enumerate(sessions):
        if len(s) != n:
            raise DimensionMismatchError(f"session {k + 1} has {len(s)} link meshes, expected {n}")
        for i, m in enumerate(s):
            if not m.closed:
                raise MeshNotClosedError(f"session {k + 1} link {i + 1} mesh is not closed")
    return [m for s in sessions for m in s]


# =============================================================================
# Run
# =============================================================================

class _Timer:
    """Collects per-step durations over repetitions and wraps failures."""

    def __init__(self, output_dir: Path):
        self.output_dir = output_dir
        self.samples: Dict[str, List[float]] = {s: [] for s in STEPS}
        self.totals: List[float] = []
        self.rep = 0

    def run(self, step: str, fn: Callable):
        t0 = time.perf_counter()
        try:
            result = fn()
        except Exception as e:
            log.error("[PIPELINE_STEP] step=%s rep=%d status=failed error=%s", step, self.rep + 1, e)
            raise PipelineStepError(step, e, str(self.output_dir)) from e
        elapsed = time.perf_counter() - t0
        self.samples[step].append(elapsed)
        log.info("[PIPELINE_STEP] step=%s rep=%d status=ok elapsed=%.2fs", step, self.rep + 1, elapsed)
        return result

    def means(self) -> Dict[str, float]:
        return {s: (sum(v) / len(v) if v else 0.0) for s, v in self.samples.items()}


def _ingest(cfg: PipelineConfig, spec: GridSpec) -> Tuple[KinematicChain, list]:
    chain = load_chain(cfg.chain)
    if not cfg.include_tool:
        chain = detach_tool(chain)
    trajs = []
    for p in cfg.sessions:
        traj = load_trajectory(p, chain, cfg.out_of_limits)
        trajs.append(resample_for_sweep(traj, chain, 0.5 * spec.spacing))
    return chain, trajs


def _session_dir(out: Path, sub: str, k: int, n_sessions: int) -> Path:
    return out / sub if n_sessions == 1 else out / sub / f"session_{k + 1}"


def run_pipeline(cfg: PipelineConfig, workers: Optional[int] = None) -> PipelineResult:
    """Run all steps `cfg.repetitions` times; artifacts are written on the first pass."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    workers = workers if workers is not None else cfg.workers
    sweep_spec = cfg.grid.sweep_spec()
    carve_spec = cfg.grid.carve_spec()
    params = None if cfg.decimation == "skip" else cfg.decimation.params()
    timer = _Timer(out)
    log.info("Pipeline start: chain=%s sessions=%d output=%s repetitions=%d",
             cfg.chain, len(cfg.sessions), out, cfg.repetitions)

    model: Optional[ObstacleModel] = None
    sweeps: List[SweepResult] = []
    decimated: Optional[List[DecimationResult]] = None
    for rep in range(cfg.repetitions):
        timer.rep = rep
        write = rep == 0
        t_rep = time.perf_counter()

        chain, trajs = timer.run("exploration", lambda: _ingest(cfg, sweep_spec))

        def sweep_all():
            results = [compute_swept_volumes(chain, t, sweep_spec, workers) for t in trajs]
            if write:
                for k, r in enumerate(results):
                    d = _session_dir(out, "sv", k, len(results))
                    for i, m in enumerate(r.meshes):
                        save_mesh(m, d / f"sv_link_{i + 1}.obj")
                    export_sweep_stats_json(r, d)
            return results

        sweeps = timer.run("swept_volume", sweep_all)
        svs = merge_sessions([r.meshes for r in sweeps])
        names = [f"session_{k + 1}/{name}" for k in range(len(sweeps)) for name in chain.link_names]

        def decimate_all():
            if params is None:
                return None
            results = decimate_many(svs, params, names=names, workers=workers)
            if write:
                per = chain.n_links
                for j, r in enumerate(results):
                    k, i = divmod(j, per)
                    d = _session_dir(out, "svd", k, len(sweeps))
                    save_mesh(r.mesh, d / f"svd_link_{i + 1}.obj")
                export_decimate_stats_json(results, names, out / "svd")
            return results

        decimated = timer.run("decimation", decimate_all)
        carve_inputs = [r.mesh for r in decimated] if decimated is not None else svs
        margins = _margins(sweeps, decimated)

        def carve():
            bv = make_bounding_volume(chain, cfg.bounding.kind, cfg.bounding.scale)
            m = obstacle_representation(
                bv, carve_inputs, carve_spec, margins=margins["sweep"] + margins["decimation"],
                provenance=names, base=chain.base_mesh if cfg.subtract_base else None, workers=workers)
            if write:
                save_model(m, out / "v_o.json", out / "v_o.obj", out / "v_bv.obj")
            return m

        model = timer.run("obstacle_representation", carve)
        timer.totals.append(time.perf_counter() - t_rep)

    margins = _margins(sweeps, decimated)
    margins["carve"] = model.margin_budget - margins["sweep"] - margins["decimation"]
    margins["total"] = model.margin_budget
    report = RunReport(
        step_seconds=timer.means(),
        total_seconds=sum(timer.totals) / len(timer.totals),
        repetitions=cfg.repetitions,
        meshes=_mesh_stats(sweeps, decimated, model, chain),
        margins=margins,
        sessions=[r.stats_dict() for r in sweeps],
        decimation=[r.stats_dict() for r in decimated] if decimated is not None else None,
        config=cfg.model_dump(),
    )
    export_run_report_json(report.to_dict(), out)
    export_mesh_stats_csv([asdict(m) for m in report.meshes], out)
    if cfg.html_report:
        generate_html_report(report.to_dict(), out)
    log.info("Pipeline finished: V_O faces=%d volume=%.4f margin=%.4f total=%.2fs",
             model.mesh.n_faces, model.volume, model.margin_budget, report.total_seconds)
    return PipelineResult(model, report, out)


def _margins(sweeps: Sequence[SweepResult], decimated: Optional[Sequence[DecimationResult]]) -> Dict[str, float]:
    sweep_margin = max((r.margin_budget for r in sweeps), default=0.0)
    # a decimated mesh lies inside its original, at most max_error + pull away from it
    reduced = [r for r in decimated or [] if not r.passed_through]
    dec_margin = max((r.pull_distance + r.max_error_used for r in reduced), default=0.0)
    return {"sweep": sweep_margin, "decimation": dec_margin}


def _mesh_stats(sweeps, decimated, model: ObstacleModel, chain: KinematicChain) -> List[MeshStats]:
    rows: List[MeshStats] = []
    for k, r in enumerate(sweeps):
        for s, m in zip(r.stats, r.meshes):
            rows.append(MeshStats(f"sv_link_{s.index + 1}", "sv", k + 1, m.n_vertices, m.n_faces,
                                  mesh_volume(m), s.seconds))
    if decimated is not None:
        per = chain.n_links
        for j, r in enumerate(decimated):
            k, i = divmod(j, per)
            rows.append(MeshStats(f"svd_link_{i + 1}", "svd", k + 1, r.mesh.n_vertices, r.mesh.n_faces,
                                  mesh_volume(r.mesh), r.seconds))
    rows.append(MeshStats("v_o", "v_o", None, model.mesh.n_vertices, model.mesh.n_faces, model.volume,
                          model.timings.get("total", 0.0)))
    rows.append(MeshStats("v_bv", "v_bv", None, model.bounding_volume.n_vertices,
                          model.bounding_volume.n_faces, model.bounding_volume_volume))
    return rows
