"""CSV and JSON export functionality for robocell."""

import csv
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Sequence

MESH_STATS_HEADERS = ['name', 'kind', 'session', 'vertices', 'faces', 'volume_m3', 'seconds']


def write_json(doc: Dict, path: Path) -> Path:
    """Write a JSON document with stable key order.

    Args:
        doc: JSON-serializable dict
        path: Target file path (parent directories are created)

    Returns:
        Path to the written file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
    return path


def export_sweep_stats_json(result, output_dir: Path) -> Path:
    """Export per-link swept volume stats (sweep_stats.json).

    Args:
        result: SweepResult from compute_swept_volumes
        output_dir: Directory holding the sv_link_<i>.obj files

    Returns:
        Path to the created JSON file
    """
    return write_json(result.stats_dict(), Path(output_dir) / "sweep_stats.json")


def export_decimate_stats_json(results: Sequence, names: Sequence[str], output_dir: Path) -> Path:
    """Export decimation stats (decimate_stats.json).

    Each entry carries input/output faces and vertices, the achieved
    reduction in percent, retries, pull distance, containment margin and
    wall time.

    Args:
        results: DecimationResult list, in mesh order
        names: Mesh identifiers matching results
        output_dir: Directory to write the JSON file

    Returns:
        Path to the created JSON file
    """
    meshes = []
    for name, r in zip(names, results):
        entry = {"mesh": name}
        entry.update(r.stats_dict())
        meshes.append(entry)
    total_in = sum(r.input_faces for r in results)
    total_out = sum(r.output_faces for r in results)
    doc = {
        "meshes": meshes,
        "totals": {
            "input_faces": total_in,
            "output_faces": total_out,
            "reduction_pct": round(100.0 * (1.0 - total_out / total_in), 4) if total_in else 0.0,
            "seconds": sum(r.seconds for r in results),
        },
    }
    return write_json(doc, Path(output_dir) / "decimate_stats.json")


def export_mesh_stats_csv(rows: List[Dict], output_dir: Path) -> Path:
    """Export the mesh details table (mesh_stats.csv).

    One row per mesh: swept volumes per session and link, decimated
    swept volumes, V_O and V_BV.

    Args:
        rows: Dicts with name, kind, session, vertices, faces, volume, seconds
        output_dir: Output directory path

    Returns:
        Path to created mesh_stats.csv
    """
    csv_path = Path(output_dir) / 'mesh_stats.csv'
    with open(csv_path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(MESH_STATS_HEADERS)
        for row in rows:
            writer.writerow([
                row['name'],
                row['kind'],
                row['session'] if row.get('session') is not None else '',
                row['vertices'],
                row['faces'],
                round(row['volume'], 9),
                round(row.get('seconds', 0.0), 4),
            ])
    return csv_path


def export_run_report_json(report: Dict, output_dir: Path) -> Path:
    """Export the run report (report.json) with a generation timestamp.

    Args:
        report: RunReport.to_dict() output
        output_dir: Directory to write the JSON file

    Returns:
        Path to the created JSON file
    """
    doc = {"generated": datetime.now(timezone.utc).isoformat(timespec="seconds")}
    doc.update(report)
    return write_json(doc, Path(output_dir) / "report.json")


def export_check_report_json(report: Dict, path: Path) -> Path:
    """Export a collision check report to `path`."""
    return write_json(report, path)
