"""Overlay several runs and tabulate calibration drift between them.

Sources are always ordered chronologically (start timestamp, then resolved
path), so the output does not depend on the order of the arguments.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from html import escape
from pathlib import Path

from qcal.report import svg
from qcal.report.html import Section, collect_sections, fmt, load_run, page, write_files


@dataclass
class Source:
    label: str
    path: Path
    meta: dict
    calibration: dict
    sections: dict[tuple[str, int], Section]
    color: str


def load_sources(dirs) -> list[Source]:
    if len(dirs) < 2:
        raise ValueError("compare needs at least two run directories")
    loaded = []
    for d in dirs:
        path = Path(d).resolve()
        meta, calibration = load_run(path)
        sections = {(s.record["action"], s.record["qubit"]): s for s in collect_sections(path, meta)}
        loaded.append((meta.get("timestamp", ""), str(path), meta, calibration or {}, sections))
    loaded.sort(key=lambda t: (t[0], t[1]))
    out = []
    for k, (ts, path, meta, cal, sections) in enumerate(loaded):
        label = f"{chr(ord('A') + k) if k < 26 else k}"
        out.append(Source(label, Path(path), meta, cal, sections, svg.PALETTE[k % len(svg.PALETTE)]))
    return out


def drift_rows(sources: list[Source]) -> list[tuple[str, str, list]]:
    """(qubit, field, [value per source]) for every calibration field seen anywhere."""
    qubits = sorted({q for s in sources for q in s.calibration}, key=int)
    rows = []
    for q in qubits:
        fields: list[str] = []
        for s in sources:
            fields += [f for f in s.calibration.get(q, {}) if f not in fields]
        for f in fields:
            rows.append((q, f, [s.calibration.get(q, {}).get(f) for s in sources]))
    return rows


def overlay(key, sources: list[Source]) -> svg.Figure:
    merged = None
    for src in sources:
        sec = src.sections.get(key)
        if sec is None or sec.ds is None:
            continue
        fig = sec.figure()
        if merged is None:
            merged = svg.Figure(f"{key[0]} - qubit {key[1]}", fig.xlabel, fig.ylabel, xscale=fig.xscale)
        for series in fig.series:
            merged.add(f"{src.label}: {series.label}", series.x, series.y, kind=series.kind, color=src.color)
    return merged


def _sources_table(sources: list[Source]) -> list[str]:
    keys = ("timestamp", "platform", "seed", "version", "policy")
    html = ['<h2 id="sources">Sources</h2>', "<table>",
            "<tr><th>source</th><th>directory</th>" + "".join(f"<th>{k}</th>" for k in keys) + "</tr>"]
    for s in sources:
        cells = "".join(f"<td>{fmt(s.meta.get(k))}</td>" for k in keys)
        html.append(f'<tr><td style="color:{s.color}">{s.label}</td><td>{escape(str(s.path))}</td>{cells}</tr>')
    html.append("</table>")
    return html


def _drift_table(sources: list[Source]) -> list[str]:
    head = "".join(f"<th>{s.label}<br>{escape(str(s.meta.get('timestamp', '')))}</th>" for s in sources)
    html = ['<h2 id="drift">Parameter drift</h2>', "<table>", f"<tr><th>qubit</th><th>field</th>{head}</tr>"]
    for q, f, values in drift_rows(sources):
        cells = "".join(f"<td>{'-' if v is None else fmt(v)}</td>" for v in values)
        html.append(f'<tr data-qubit="{escape(q)}" data-field="{escape(f)}"><td>{escape(q)}</td><td>{escape(f)}</td>{cells}</tr>')
    html.append("</table>")
    return html


def render_comparison(dirs) -> dict[str, bytes]:
    sources = load_sources(dirs)
    keys = {}
    for s in sources:
        for key, sec in s.sections.items():
            keys.setdefault(key, sec.record["index"])
    ordered = sorted(keys, key=lambda k: (keys[k], k[0], k[1]))
    files: dict[str, bytes] = {}
    body = ["<h1>Calibration comparison</h1>"] + _sources_table(sources) + _drift_table(sources)
    for key in ordered:
        present = [s for s in sources if key in s.sections]
        sid = f"{key[0]}-q{key[1]}"
        body.append(f'<section id="{sid}">')
        body.append(f"<h2>{escape(key[0])} - qubit {key[1]}</h2>")
        if len(present) == 1:
            body.append(f'<p class="note single-source">only in source {present[0].label}</p>')
        body.append("<table><tr><th>source</th><th>status</th><th>parameters</th></tr>")
        for s in present:
            sec = s.sections[key]
            params = ", ".join(f"{k}={fmt(float(v))}" for k, (v, _) in sec.fit.params.items()) if sec.fit else ""
            status = sec.record["status"] + (f": {sec.record['error']}" if sec.record.get("error") else "")
            body.append(f'<tr><td style="color:{s.color}">{s.label}</td><td>{escape(status)}</td>'
                        f"<td>{escape(params)}</td></tr>")
        body.append("</table>")
        fig = overlay(key, present)
        if fig is not None:
            files[f"plots/{sid}.svg"] = svg.render(fig).encode()
            body.append(f'<img src="plots/{sid}.svg" alt="{escape(sid)}">')
        body.append("</section>")
    data = json.dumps(_drift_json(sources)).replace("</", "<\\/")
    body.append(f'<script type="application/json" id="drift-data">{data}</script>')
    files["index.html"] = page("qcal comparison", body)
    return files


def _drift_json(sources: list[Source]) -> dict:
    return {
        "sources": [{"label": s.label, "timestamp": s.meta.get("timestamp"), "path": str(s.path)} for s in sources],
        "rows": [{"qubit": q, "field": f, "values": v} for q, f, v in drift_rows(sources)],
    }


def compare_reports(dirs, output) -> Path:
    files = render_comparison(dirs)
    write_files(files, output)
    return Path(output) / "index.html"
