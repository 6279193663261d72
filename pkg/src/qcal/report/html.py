"""Static html report for one run directory.

The page is a single ``index.html`` plus one SVG per section under
``plots/``. Every section carries a stable element id ``<NN>-<action>-q<qubit>``
so reports can be scraped. Rendering is a pure function of the files in the
run directory, which is what lets the live view converge to the static
report byte for byte.
"""

from __future__ import annotations

import json
from html import escape
from pathlib import Path

from qcal.dataset import DataSet, read_dataset, write_text_atomic
from qcal.errors import FormatError, LayoutError, QcalError
from qcal.executor import action_dir
from qcal.fitting import FitResult
from qcal.protocols import REGISTRY
from qcal.report import svg

CSS = """
body { font-family: sans-serif; margin: 2em; max-width: 72em; color: #222; }
table { border-collapse: collapse; margin: 0.5em 0; }
th, td { border: 1px solid #bbb; padding: 2px 8px; text-align: left; font-size: 90%; }
section { border-top: 2px solid #ddd; margin-top: 1.5em; padding-top: 0.5em; }
.failed { color: #b00; }
.note { color: #666; }
pre { background: #f6f6f6; padding: 0.5em; overflow-x: auto; }
""".strip()


def fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return escape(str(v))


def section_id(record: dict) -> str:
    return f"{action_dir(record['index'], record['action'])}-q{record['qubit']}"


def load_run(output_dir) -> tuple[dict, dict | None]:
    out = Path(output_dir)
    try:
        meta = json.loads((out / "meta.json").read_text())
    except FileNotFoundError:
        raise LayoutError(f"missing {out / 'meta.json'}") from None
    except ValueError as exc:
        raise LayoutError(f"unreadable {out / 'meta.json'}: {exc}") from None
    if not (out / "data").is_dir() or not any((out / "data").iterdir()):
        raise LayoutError(f"missing or empty {out / 'data'}")
    cal_path = out / "calibration.json"
    calibration = json.loads(cal_path.read_text()) if cal_path.exists() else None
    return meta, calibration


class Section:
    """Everything needed to draw one (action, qubit) block."""

    def __init__(self, record: dict, ds: DataSet | None, fit: FitResult | None,
                 updates: dict, provisional: bool = False, note: str = ""):
        self.record = record
        self.ds = ds
        self.fit = fit
        self.updates = updates
        self.provisional = provisional
        self.note = note
        self.id = section_id(record)

    @property
    def protocol(self):
        return REGISTRY[self.record["action"]]

    def figure(self) -> svg.Figure | None:
        if self.ds is None:
            return None
        fig = self.protocol.figure(self.ds, self.fit, self.record["parameters"])
        if self.provisional:
            fig.note = "provisional fit"
        return fig


def collect_sections(output_dir, meta: dict, live: bool = False) -> list[Section]:
    out = Path(output_dir)
    sections = []
    for rec in meta["actions"]:
        status = rec["status"]
        if status == "skipped" or (status == "pending" and not live):
            continue
        if status in ("pending", "running"):
            sections.append(_partial_section(out, rec, live))
            continue
        ds = _read(out / rec["dataset"], required=status == "succeeded")
        fit_path = out / rec["fit"]
        if not fit_path.exists():
            raise LayoutError(f"missing {fit_path}")
        doc = json.loads(fit_path.read_text())
        fit = FitResult.from_dict(doc["fit"]) if doc.get("fit") else None
        sections.append(Section(rec, ds, fit, doc.get("updates", {})))
    return sections


def _read(path: Path, required: bool) -> DataSet | None:
    if not path.exists():
        if required:
            raise LayoutError(f"missing {path}")
        return None
    try:
        return read_dataset(path)
    except FormatError as exc:
        if required:
            raise LayoutError(str(exc)) from None
        return None


def _partial_section(out: Path, rec: dict, live: bool) -> Section:
    ds = _read(out / rec["dataset"], required=False) if rec["status"] == "running" else None
    if ds is None or len(ds) == 0:
        return Section(rec, None, None, {}, note="awaiting data")
    protocol = REGISTRY[rec["action"]]
    if len(ds) < protocol.min_points:
        return Section(rec, ds, None, {}, note=f"{len(ds)} points acquired, fit needs {protocol.min_points}")
    try:
        fit = protocol.analyze(ds, rec["parameters"])
    except (QcalError, ValueError) as exc:
        return Section(rec, ds, None, {}, note=f"provisional fit failed: {exc}")
    return Section(rec, ds, fit, {}, provisional=True, note=f"{len(ds)} points acquired")


def _header(meta: dict, calibration: dict | None) -> list[str]:
    deps = ", ".join(f"{k} {v}" for k, v in sorted(meta.get("dependencies", {}).items()))
    state = "complete" if meta.get("finished") else "in progress"
    rows = [
        ("platform", meta.get("platform")),
        ("qubits", ", ".join(map(str, meta.get("qubits", [])))),
        ("seed", meta.get("seed")),
        ("started", meta.get("timestamp")),
        ("tool version", meta.get("version")),
        ("dependencies", deps),
        ("policy", meta.get("policy")),
        ("run", state),
    ]
    html = ['<header id="metadata">', "<h1>Calibration report</h1>", "<table>"]
    html += [f"<tr><th>{escape(k)}</th><td>{fmt(v)}</td></tr>" for k, v in rows]
    html += ["</table>", "<details><summary>runcard</summary>",
             f"<pre>{escape(meta.get('runcard', ''))}</pre></details>", "</header>"]
    html += _calibration_table(calibration)
    html += _status_table(meta)
    return html


def _calibration_table(calibration: dict | None) -> list[str]:
    if not calibration:
        return ['<h2 id="calibration">Calibration</h2>', '<p class="note">not yet available</p>']
    qubits = list(calibration)
    fields = []
    for q in qubits:
        fields += [f for f in calibration[q] if f not in fields]
    html = ['<h2 id="calibration">Calibration</h2>', "<table>",
            "<tr><th>field</th>" + "".join(f"<th>qubit {escape(q)}</th>" for q in qubits) + "</tr>"]
    for f in fields:
        cells = "".join(f"<td>{fmt(calibration[q].get(f))}</td>" for q in qubits)
        html.append(f"<tr><th>{escape(f)}</th>{cells}</tr>")
    html.append("</table>")
    return html


def _status_table(meta: dict) -> list[str]:
    html = ['<h2 id="actions">Actions</h2>', "<table>", "<tr><th>#</th><th>action</th><th>qubit</th><th>status</th></tr>"]
    for r in meta["actions"]:
        html.append(f"<tr><td>{r['index']}</td><td>{escape(r['action'])}</td><td>{r['qubit']}</td>"
                    f"<td>{escape(r['status'])}</td></tr>")
    html.append("</table>")
    return html


def _fit_table(fit: FitResult, provisional: bool) -> list[str]:
    title = "provisional fit" if provisional else "fit"
    html = [f"<h3>{title}: {escape(fit.model)}</h3>", "<table>", "<tr><th>parameter</th><th>value</th><th>1&sigma;</th></tr>"]
    for k, (v, e) in list(fit.params.items()) + list(fit.derived.items()):
        html.append(f"<tr><td>{escape(k)}</td><td>{fmt(float(v))}</td><td>{fmt(float(e))}</td></tr>")
    html.append("</table>")
    html.append(f'<p class="note">rss {fmt(float(fit.rss))}, {fit.iterations} iterations, '
                f'{"converged" if fit.converged else "not converged"}</p>')
    if fit.diagnostics:
        html.append("<ul>" + "".join(f"<li>{escape(d)}</li>" for d in fit.diagnostics) + "</ul>")
    return html


def _section_html(s: Section, plot: str | None) -> list[str]:
    rec = s.record
    html = [f'<section id="{s.id}">',
            f"<h2>{rec['index']:02d} {escape(rec['action'])} - qubit {rec['qubit']}</h2>",
            f'<p>status: <span class="status">{escape(rec["status"])}</span></p>']
    if rec.get("error"):
        html.append(f'<p class="failed error">{escape(rec["error"])}</p>')
    if s.note:
        html.append(f'<p class="note">{escape(s.note)}</p>')
    if s.ds is not None:
        partial = " (last row incomplete)" if s.ds.partial else ""
        html.append(f"<p>dataset <code>{escape(rec['dataset'])}</code>: {len(s.ds)} rows, columns "
                    f"{escape(', '.join(s.ds.columns))}{partial}</p>")
    if s.fit is not None:
        html += _fit_table(s.fit, s.provisional)
    if s.updates:
        html.append("<h3>calibration updates</h3><table>")
        html += [f"<tr><td>{escape(k)}</td><td>{fmt(v)}</td></tr>" for k, v in s.updates.items()]
        html.append("</table>")
    if plot:
        html.append(f'<img src="{plot}" alt="{escape(rec["action"])} qubit {rec["qubit"]}">')
    html.append("</section>")
    return html


def page(title: str, body: list[str]) -> bytes:
    doc = ["<!DOCTYPE html>", '<html lang="en">', "<head>", '<meta charset="utf-8">',
           f"<title>{escape(title)}</title>", f"<style>{CSS}</style>", "</head>", "<body>", *body,
           "</body>", "</html>"]
    return ("\n".join(doc) + "\n").encode()


def render_report(output_dir, live: bool = False) -> dict[str, bytes]:
    """Return the report as ``{relative path: content}`` without touching disk."""
    meta, calibration = load_run(output_dir)
    files: dict[str, bytes] = {}
    body = _header(meta, calibration)
    for s in collect_sections(output_dir, meta, live):
        fig = s.figure()
        plot = None
        if fig is not None:
            plot = f"plots/{s.id}.svg"
            files[plot] = svg.render(fig).encode()
        body += _section_html(s, plot)
    files["index.html"] = page(f"qcal report - {meta.get('platform', '')}", body)
    return files


def write_files(files: dict[str, bytes], dest) -> None:
    dest = Path(dest)
    for rel, content in files.items():
        path = dest / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        write_text_atomic(path, content.decode())


def generate_report(output_dir) -> Path:
    """Write ``index.html`` and ``plots/`` into the run directory."""
    files = render_report(output_dir)
    write_files(files, output_dir)
    return Path(output_dir) / "index.html"
