"""Sensor-free robot cell modeling.

Turns recorded joint trajectories of a robot into a conservative model of the
cell it moved through: per-link swept volumes, optional decimation, and the
obstacle representation V_O (bounding volume minus everything the robot swept).
The model then answers collision queries for new configurations and plans.

Run:
  python robocell.py pipeline --config run.json
  python robocell.py check --chain chain.json --model out/v_o.json --traj plan.csv
  python robocell.py harness gen --scene box-cell --seed 7 --n 4009 --out traj.csv
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
import time
from pathlib import Path
from typing import List, Optional

import robocell_config as config
from robocell_errors import RobocellError

log = logging.getLogger("robocell")


def configure_logging(level: Optional[str] = None, log_file: Optional[str] = None) -> None:
    """UTC timestamps to stderr and, unless LOG_FILE is empty, to a log file."""
    level = level or config.LOG_LEVEL
    log_file = config.LOG_FILE if log_file is None else log_file
    logging.Formatter.converter = time.gmtime
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s UTC %(levelname)s %(message)s",
        handlers=handlers,
        force=True,
    )


def _iso_offset(value: str) -> Optional[float]:
    if value.lower() == "auto":
        return None
    try:
        return float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'auto' or a length in meters, got {value!r}")


def _allowance(value: str):
    if value.lower() == "margin":
        return "margin"
    try:
        return float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'margin' or a depth in meters, got {value!r}")


def _floats(value: str) -> List[float]:
    try:
        return [float(x) for x in value.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {value!r}")


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command-line arguments.

    Defaults come from the environment (see robocell_config); CLI flags
    override them.
    """
    parser = argparse.ArgumentParser(
        description="Robot cell modeling from joint trajectories"
    )
    parser.add_argument('--log-level', default=config.LOG_LEVEL, help='Log level (env LOG_LEVEL)')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('sweep', help='Swept volume mesh per link')
    p.add_argument('--chain', required=True, help='Chain JSON')
    p.add_argument('--traj', required=True, help='Trajectory CSV (t,q1..qL)')
    p.add_argument('--spacing', type=float, default=config.GRID_SPACING,
                   help=f'Grid spacing in m (default: {config.GRID_SPACING}, env GRID_SPACING)')
    p.add_argument('--padding', type=float, default=None,
                   help='Grid padding in m (default: max(GRID_PADDING, 2 x spacing))')
    p.add_argument('--iso-offset', type=_iso_offset, default=None, metavar='auto|M',
                   help='Erosion of the extracted surface (default: auto)')
    p.add_argument('--out-dir', default='sv', help='Output directory (default: sv)')
    p.add_argument('--workers', type=int, default=None, help='Worker processes (env WORKERS)')
    p.add_argument('--out-of-limits', choices=['reject', 'clamp'], default=config.OUT_OF_LIMITS,
                   help='Handling of samples outside joint limits (env OUT_OF_LIMITS)')

    p = sub.add_parser('decimate', help='Conservative decimation of a directory of meshes')
    p.add_argument('--in', dest='in_dir', required=True, help='Directory of .obj meshes')
    p.add_argument('--out', dest='out_dir', required=True, help='Output directory')
    p.add_argument('--target', type=float, default=config.DECIMATE_TARGET,
                   help=f'Fraction of faces to remove (default: {config.DECIMATE_TARGET})')
    p.add_argument('--max-error', type=float, default=config.DECIMATE_MAX_ERROR,
                   help=f'Max geometric error in m (default: {config.DECIMATE_MAX_ERROR})')
    p.add_argument('--no-preserve-topology', action='store_true',
                   help='Allow small components to collapse away')
    p.add_argument('--workers', type=int, default=None)

    p = sub.add_parser('carve', help='Obstacle representation V_O')
    p.add_argument('--bv', default=f'auto-{config.BOUNDING_KIND}',
                   help='auto-cube, auto-sphere, or a mesh file (default: auto-%s)' % config.BOUNDING_KIND)
    p.add_argument('--scale', type=float, default=config.BOUNDING_SCALE, help='Bounding volume scale (>= 1)')
    p.add_argument('--svs', required=True, help='Directory of swept volume meshes')
    p.add_argument('--chain', default=None, help='Chain JSON (required for auto bounding volumes)')
    p.add_argument('--spacing', type=float, default=config.GRID_SPACING)
    p.add_argument('--padding', type=float, default=None)
    p.add_argument('--margin', type=float, default=None,
                   help='Slack inherited from the sweep (default: read sweep_stats.json, else 0)')
    p.add_argument('--no-subtract-base', action='store_true', help='Keep the robot base in V_O')
    p.add_argument('--out', default='v_o.obj', help='V_O mesh path (default: v_o.obj)')
    p.add_argument('--model', default='v_o.json', help='Model JSON path (default: v_o.json)')
    p.add_argument('--workers', type=int, default=None)

    p = sub.add_parser('check', help='Collision check of a configuration or trajectory')
    p.add_argument('--chain', required=True)
    p.add_argument('--model', required=True, help='Model JSON written by carve/pipeline')
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument('--traj', help='Trajectory CSV')
    group.add_argument('--q', type=_floats, help='Single configuration, comma-separated')
    p.add_argument('--clearance', type=float, default=0.0, help='Required clearance in m (default: 0)')
    p.add_argument('--allow-penetration', type=_allowance, default=0.0, metavar='margin|M',
                   help="Tolerated depth inside V_O; 'margin' uses the model's margin budget (default: 0)")
    p.add_argument('--report', default=None, help='Write the JSON report here (default: stdout)')
    p.add_argument('--workers', type=int, default=None)

    p = sub.add_parser('pipeline', help='Run all four steps from a config file')
    p.add_argument('--config', required=True, help='Pipeline config JSON')
    p.add_argument('--workers', type=int, default=None, help='Override the config worker count')

    p = sub.add_parser('harness', help='Synthetic scenes and the Monte Carlo oracle')
    hsub = p.add_subparsers(dest='harness_command', required=True)
    h = hsub.add_parser('gen', help='Simulated exploration trajectory')
    h.add_argument('--scene', required=True)
    h.add_argument('--tool', default=None, help='cube, cylinder or prism (arm scenes)')
    h.add_argument('--seed', type=int, default=0)
    h.add_argument('--n', type=int, default=1000)
    h.add_argument('--step', type=float, default=None, help='Joint-space step size (default: per scene)')
    h.add_argument('--out', required=True)
    h = hsub.add_parser('oracle', help='Monte Carlo volume of meshes')
    h.add_argument('--mesh', required=True, action='append', help='Mesh file (repeatable)')
    h.add_argument('--aabb', default='auto', help='auto or x0,y0,z0,x1,y1,z1')
    h.add_argument('--n', type=int, default=1_000_000)
    h.add_argument('--seed', type=int, default=0)
    h.add_argument('--workers', type=int, default=None)
    h = hsub.add_parser('chain', help='Write a scene fixture (chain, obstacles, scene.json)')
    h.add_argument('--scene', required=True)
    h.add_argument('--tool', default=None)
    h.add_argument('--out', required=True, help='Output directory')

    p = sub.add_parser('serve', help='Collision query server')
    p.add_argument('--model', default=config.MODEL_PATH)
    p.add_argument('--chain', default=config.CHAIN_PATH)
    p.add_argument('--host', default='127.0.0.1')
    p.add_argument('--port', type=int, default=8000)

    return parser.parse_args(argv)


# =============================================================================
# Commands
# =============================================================================

def cmd_sweep(args) -> int:
    from robocell_export import export_sweep_stats_json
    from robocell_kinematics import load_chain, load_trajectory, resample_for_sweep
    from robocell_sweep import GridSpec, compute_swept_volumes, save_swept_volumes

    padding = args.padding if args.padding is not None else max(config.GRID_PADDING, 2.0 * args.spacing)
    spec = GridSpec(args.spacing, padding, args.iso_offset)
    chain = load_chain(args.chain)
    traj = load_trajectory(args.traj, chain, args.out_of_limits)
    traj = resample_for_sweep(traj, chain, 0.5 * spec.spacing)
    result = compute_swept_volumes(chain, traj, spec, args.workers)
    paths = save_swept_volumes(result, args.out_dir)
    export_sweep_stats_json(result, Path(args.out_dir))
    log.info("Wrote %d swept volume meshes to %s (iso_offset=%.4f, %.2fs)",
             len(paths), args.out_dir, result.iso_offset, result.seconds)
    return 0


def _mesh_files(directory: str) -> List[Path]:
    """Mesh files of a directory, link meshes in numeric order."""
    d = Path(directory)
    files = [p for p in d.iterdir() if p.suffix.lower() in (".obj", ".stl")] if d.is_dir() else []
    if not files:
        raise RobocellError(f"no .obj/.stl meshes in {directory}")

    def key(p: Path):
        m = re.search(r"(\d+)$", p.stem)
        return (re.sub(r"\d+$", "", p.stem), int(m.group(1)) if m else -1)

    return sorted(files, key=key)


def cmd_decimate(args) -> int:
    from robocell_decimate import DecimationParams, decimate_many
    from robocell_export import export_decimate_stats_json
    from robocell_geometry import load_mesh, save_mesh

    params = DecimationParams(args.target, args.max_error, not args.no_preserve_topology)
    files = _mesh_files(args.in_dir)
    meshes = [load_mesh(p) for p in files]
    results = decimate_many(meshes, params, names=[p.stem for p in files], workers=args.workers)
    out = Path(args.out_dir)
    for p, r in zip(files, results):
        stem = "svd" + p.stem[2:] if p.stem.startswith("sv_") else f"svd_{p.stem}"
        save_mesh(r.mesh, out / f"{stem}.obj")
    export_decimate_stats_json(results, [p.stem for p in files], out)
    return 0


def cmd_carve(args) -> int:
    from robocell_carve import make_bounding_volume, obstacle_representation, save_model, spec_for_carve
    from robocell_geometry import load_mesh
    from robocell_kinematics import load_chain

    chain = load_chain(args.chain) if args.chain else None
    if args.bv.startswith("auto-"):
        if chain is None:
            raise RobocellError("--chain is required for an automatic bounding volume")
        bv = make_bounding_volume(chain, args.bv[len("auto-"):], args.scale)
    else:
        bv = load_mesh(args.bv)
    files = _mesh_files(args.svs)
    svs = [load_mesh(p) for p in files]
    margin = args.margin
    if margin is None:
        stats = Path(args.svs) / "sweep_stats.json"
        margin = json.loads(stats.read_text(encoding="utf-8")).get("margin_budget", 0.0) if stats.exists() else 0.0
    base = chain.base_mesh if chain is not None and not args.no_subtract_base else None
    model = obstacle_representation(bv, svs, spec_for_carve(args.spacing, args.padding), margins=margin,
                                    provenance=[p.stem for p in files], base=base, workers=args.workers)
    save_model(model, args.model, mesh_path=args.out, bv_path=Path(args.out).with_name("v_bv.obj"))
    return 0


def cmd_check(args) -> int:
    from robocell_carve import load_model
    from robocell_collide import config_in_collision, trajectory_collision_free
    from robocell_export import export_check_report_json
    from robocell_kinematics import load_chain, load_trajectory, resample_for_sweep

    chain = load_chain(args.chain)
    model = load_model(args.model)
    allowed = model.margin_budget if args.allow_penetration == "margin" else args.allow_penetration
    if args.traj:
        traj = load_trajectory(args.traj, chain)
        if args.clearance > 0.0:
            traj = resample_for_sweep(traj, chain, args.clearance)
        report = trajectory_collision_free(chain, traj, model, args.clearance, args.workers,
                                           allowed_penetration=allowed)
        doc, collision = report.to_dict(), not report.free
    else:
        report = config_in_collision(chain, args.q, model, args.clearance, allowed_penetration=allowed)
        doc, collision = report.to_dict(), report.collision
    if args.report:
        export_check_report_json(doc, Path(args.report))
    else:
        print(json.dumps(doc, indent=2))
    if collision:
        log.warning("Collision found (clearance=%.4f)", args.clearance)
        return 2
    log.info("No collision (clearance=%.4f)", args.clearance)
    return 0


def cmd_pipeline(args) -> int:
    from robocell_pipeline import load_pipeline_config, run_pipeline

    result = run_pipeline(load_pipeline_config(args.config), workers=args.workers)
    print(f"V_O: {result.output_dir / 'v_o.obj'}  faces={result.model.mesh.n_faces} "
          f"margin={result.model.margin_budget:.4f} m  total={result.report.total_seconds:.2f}s")
    return 0


def _parse_aabb(value: str):
    if value == "auto":
        return None
    v = _floats(value)
    if len(v) != 6:
        raise RobocellError(f"--aabb needs 6 numbers, got {len(v)}")
    return v[:3], v[3:]


def cmd_harness(args) -> int:
    import robocell_harness as harness

    if args.harness_command == "gen":
        scene = harness.synth_scene(args.scene, args.tool)
        path = harness.write_exploration(scene, args.out, args.seed, args.n, args.step)
        log.info("Wrote exploration trajectory to %s", path)
    elif args.harness_command == "chain":
        scene = harness.synth_scene(args.scene, args.tool)
        harness.write_scene_fixture(scene, args.out)
    elif args.harness_command == "oracle":
        from robocell_geometry import load_mesh

        meshes = [load_mesh(p) for p in args.mesh]
        result = harness.monte_carlo_oracle(meshes, args.n, args.seed, _parse_aabb(args.aabb), args.workers)
        print(json.dumps(result.to_dict(), indent=2))
    return 0


def cmd_serve(args) -> int:
    from robocell_server import serve

    print(f"Starting collision server at http://{args.host}:{args.port}")
    print("Press Ctrl+C to stop...")
    serve(args.model, args.chain, args.host, args.port)
    return 0


COMMANDS = {
    "sweep": cmd_sweep,
    "decimate": cmd_decimate,
    "carve": cmd_carve,
    "check": cmd_check,
    "pipeline": cmd_pipeline,
    "harness": cmd_harness,
    "serve": cmd_serve,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Dispatch a subcommand; returns the process exit code."""
    args = parse_args(argv)
    configure_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except RobocellError as e:
        log.error("%s failed: %s", args.command, e)
        return 1


def run() -> int:
    return main(sys.argv[1:])


if __name__ == "__main__":
    raise SystemExit(run())
