"""HTML report generation for robocell pipeline runs."""

from datetime import datetime, timezone
from pathlib import Path
from typing import Dict

STEP_LABELS = {
    "exploration": "Exploration ingest",
    "swept_volume": "Swept volume",
    "decimation": "Decimation",
    "obstacle_representation": "Obstacle representation",
}


def generate_html_report(report: Dict, output_dir: Path) -> Path:
    """Generate a static HTML report of a pipeline run.

    Creates a single report.html file with inline CSS, no external dependencies.
    Simple tables only, no JavaScript: mesh details per swept volume, mean
    step timings and the margin budget.

    Args:
        report: RunReport.to_dict() output
        output_dir: Directory to write the HTML file

    Returns:
        Path to the created HTML file
    """
    generated = report.get("generated") or datetime.now(timezone.utc).strftime("%Y-%m-%d %H:%M:%S UTC")
    repetitions = report.get("repetitions", 1)
    steps = report.get("step_seconds", {})
    margins = report.get("margins", {})
    meshes = report.get("meshes", [])
    chain = report.get("config", {}).get("chain", "")

    mesh_rows = []
    for m in meshes:
        session = m.get("session")
        mesh_rows.append(f"""
            <tr>
                <td>{_escape(m['name'])}</td>
                <td>{_escape(m['kind'])}</td>
                <td class="right">{session if session is not None else ''}</td>
                <td class="right">{m['vertices']:,}</td>
                <td class="right">{m['faces']:,}</td>
                <td class="right">{m['volume']:.4f}</td>
                <td class="right">{m.get('seconds', 0.0):.2f}</td>
            </tr>""")

    step_rows = []
    for key, label in STEP_LABELS.items():
        step_rows.append(f"""
            <tr>
                <td>{label}</td>
                <td class="right">{steps.get(key, 0.0):.2f}</td>
            </tr>""")
    step_rows.append(f"""
            <tr>
                <td><strong>Total</strong></td>
                <td class="right"><strong>{report.get('total_seconds', 0.0):.2f}</strong></td>
            </tr>""")

    margin_rows = []
    for key in ("sweep", "decimation", "carve", "total"):
        if key in margins:
            margin_rows.append(f"""
            <tr>
                <td>{key}</td>
                <td class="right">{margins[key] * 1000.0:.2f}</td>
            </tr>""")

    dec = report.get("decimation")
    if dec:
        faces_in = sum(d["input_faces"] for d in dec)
        faces_out = sum(d["output_faces"] for d in dec)
        pct = 100.0 * (1.0 - faces_out / faces_in) if faces_in else 0.0
        decimation_line = f"{faces_in:,} &rarr; {faces_out:,} faces ({pct:.2f}% reduction)"
    else:
        decimation_line = "skipped"

    html = f"""<!DOCTYPE html>
<html>
<head>
    <meta charset="UTF-8">
    <title>Robot Cell Model Report</title>
    <style>
        body {{
            font-family: Arial, sans-serif;
            margin: 20px;
            background: #f5f5f5;
        }}
        h1 {{
            color: #333;
        }}
        .summary {{
            margin: 20px 0;
            background: white;
            padding: 15px;
            border: 1px solid #ccc;
        }}
        table {{
            border-collapse: collapse;
            width: 100%;
            margin: 20px 0;
            background: white;
        }}
        th, td {{
            border: 1px solid #ccc;
            padding: 8px;
            text-align: left;
        }}
        th {{
            background: #f0f0f0;
        }}
        .right {{
            text-align: right;
        }}
    </style>
</head>
<body>
    <h1>Robot Cell Model Report</h1>

    <div class="summary">
        <p><strong>Chain:</strong> {_escape(chain)}</p>
        <p><strong>Generated:</strong> {_escape(generated)}</p>
        <p><strong>Sessions:</strong> {len(report.get('sessions', []))}</p>
        <p><strong>Decimation:</strong> {decimation_line}</p>
    </div>

    <h2>Mesh Details</h2>
    <table>
        <tr>
            <th>Mesh</th>
            <th>Kind</th>
            <th>Session</th>
            <th>Vertices</th>
            <th>Faces</th>
            <th>Volume (m&sup3;)</th>
            <th>Time (s)</th>
        </tr>
        {''.join(mesh_rows)}
    </table>

    <h2>Step Timings (mean of {repetitions} run{'s' if repetitions != 1 else ''})</h2>
    <table>
        <tr>
            <th>Step</th>
            <th>Time (s)</th>
        </tr>
        {''.join(step_rows)}
    </table>

    <h2>Margin Budget</h2>
    <table>
        <tr>
            <th>Source</th>
            <th>Margin (mm)</th>
        </tr>
        {''.join(margin_rows)}
    </table>
</body>
</html>"""

    html_path = Path(output_dir) / "report.html"
    with open(html_path, 'w', encoding='utf-8') as f:
        f.write(html)

    return html_path


def _escape(text: str) -> str:
    """HTML-escape a string."""
    return (
        str(text)
        .replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
        .replace('"', "&quot;")
        .replace("'", "&#39;")
    )
