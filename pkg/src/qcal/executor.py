"""Sequential execution of a validated plan with feed-forward of fitted parameters.

Output layout (stable paths, read by the report and live modules)::

    <output>/meta.json                run metadata and one record per (action, qubit)
    <output>/calibration.json         final calibration snapshot
    <output>/runcard.yml              verbatim copy of the runcard
    <output>/data/<NN>-<action>/<qubit>/data.csv (+ data.meta.json) | data.json
    <output>/data/<NN>-<action>/<qubit>/fit.json

csv datasets are appended and flushed row by row while acquiring; json
datasets are written atomically once the action's acquisition completes.
``meta.json`` is rewritten atomically after every state change.
"""

from __future__ import annotations

import json
import logging
import platform as pyplatform
import shutil
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

from qcal.dataset import CsvAppender, DataSet, concat, write_dataset, write_text_atomic
from qcal.errors import FitError, InvariantViolation, QcalError
from qcal.platform import Platform, load_platform
from qcal.protocols import REGISTRY
from qcal.runcard import ValidatedPlan, parse_runcard, serialize_runcard, validate_plan

log = logging.getLogger(__name__)

POLICIES = ("halt", "continue")


def tool_version() -> str:
    try:
        return metadata.version("qcal")
    except metadata.PackageNotFoundError:
        return "unknown"


def dependency_versions() -> dict[str, str]:
    out = {"python": pyplatform.python_version()}
    for dist in ("numpy", "pyyaml"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = "unknown"
    return out


def action_dir(index: int, name: str) -> str:
    return f"{index:02d}-{name}"


@dataclass
class ActionRecord:
    index: int
    action: str
    qubit: int
    status: str  # pending | running | succeeded | failed | skipped
    dataset: str
    fit: str
    parameters: dict
    error: str | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class RunOutput:
    output_dir: Path
    records: list[ActionRecord]
    calibration: dict
    meta: dict = field(default_factory=dict)

    @property
    def succeeded(self) -> bool:
        return all(r.status == "succeeded" for r in self.records)


def load_plan(text: str, parameter_file=None, seed: int = 0,
              noiseless: bool = False) -> tuple[ValidatedPlan, Platform]:
    """Parse and validate runcard ``text`` against a freshly loaded platform."""
    runcard = parse_runcard(text)
    platform = load_platform(runcard.platform, parameter_file, seed=seed, noiseless=noiseless)
    return validate_plan(runcard, REGISTRY, platform), platform


class OutputExists(FileExistsError):
    pass


def prepare_output(output_dir, force: bool = False) -> Path:
    out = Path(output_dir)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise OutputExists(f"output directory {out} is not empty (use --force)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_plan(
    plan: ValidatedPlan,
    platform,
    output_dir,
    policy: str = "halt",
    *,
    force: bool = False,
    runcard_text: str | None = None,
    row_delay: float = 0.0,
) -> RunOutput:
    """Run ``plan`` on ``platform`` and persist everything under ``output_dir``.

    After each successful analysis the protocol's updates are applied to the
    platform before the next action is acquired. With ``policy="halt"`` the
    first failure marks every later action ``skipped``.
    """
    if policy not in POLICIES:
        raise ValueError(f"policy must be one of {POLICIES}")
    out = prepare_output(output_dir, force)
    fmt = plan.format
    data_name = "data.csv" if fmt == "csv" else "data.json"
    runcard_text = runcard_text if runcard_text is not None else serialize_runcard(plan.runcard)
    (out / "runcard.yml").write_text(runcard_text)

    records = []
    for step in plan.steps:
        for q in plan.qubits:
            base = f"data/{action_dir(step.index, step.name)}/{q}"
            records.append(ActionRecord(step.index, step.name, q, "pending", f"{base}/{data_name}",
                                        f"{base}/fit.json", _jsonable(step.parameters)))
    meta = {
        "tool": "qcal",
        "version": tool_version(),
        "dependencies": dependency_versions(),
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "platform": platform.name,
        "seed": platform.seed,
        "qubits": plan.qubits,
        "format": fmt,
        "policy": policy,
        "runcard": runcard_text,
        "finished": False,
        "actions": [],
    }

    def flush_meta():
        meta["actions"] = [r.to_dict() for r in records]
        write_text_atomic(out / "meta.json", json.dumps(meta, indent=2))

    flush_meta()
    halted = False
    for step in plan.steps:
        mine = [r for r in records if r.index == step.index]
        if halted:
            for r in mine:
                r.status = "skipped"
            flush_meta()
            continue
        for r in mine:
            r.status = "running"
            (out / r.dataset).parent.mkdir(parents=True, exist_ok=True)
        flush_meta()
        log.info("action %d: %s on qubits %s", step.index, step.name, plan.qubits)

        try:
            datasets = _acquire(step, plan, platform, out, mine, fmt, row_delay)
        except (QcalError, ValueError) as exc:
            for r in mine:
                r.status, r.error = "failed", f"{type(exc).__name__}: {exc}"
                write_text_atomic(out / r.fit, json.dumps({"status": "failed", "error": r.error}, indent=2))
            datasets = {}
        for r in mine:
            if r.status == "failed":
                continue
            ds = datasets.get(r.qubit)
            try:
                if ds is None:
                    raise FitError("no data acquired")
                fit = step.protocol.analyze(ds, step.parameters)
                updates = step.protocol.update(fit, ds)
                stray = set(updates) - step.protocol.owns
                if stray:
                    raise InvariantViolation(f"{step.name} tried to update fields it does not own: {sorted(stray)}")
                platform.update_calibration(r.qubit, updates)
            except (QcalError, ValueError) as exc:
                r.status, r.error = "failed", f"{type(exc).__name__}: {exc}"
                write_text_atomic(out / r.fit, json.dumps({"status": "failed", "error": r.error}, indent=2))
                log.info("action %s qubit %d failed: %s", step.name, r.qubit, r.error)
                continue
            r.status = "succeeded"
            doc = {"status": "succeeded", "fit": fit.to_dict(), "updates": _jsonable(updates)}
            write_text_atomic(out / r.fit, json.dumps(doc, indent=2))
        if policy == "halt" and any(r.status == "failed" for r in mine):
            halted = True
        flush_meta()

    calibration = {str(q): platform.calibration(q).to_dict() for q in plan.qubits}
    write_text_atomic(out / "calibration.json", json.dumps(calibration, indent=2))
    meta["finished"] = True
    flush_meta()
    return RunOutput(out, records, calibration, meta)


def _acquire(step, plan, platform, out: Path, records, fmt, row_delay) -> dict[int, DataSet]:
    by_qubit = {r.qubit: r for r in records}
    collected: dict[int, list[DataSet]] = {q: [] for q in by_qubit}
    writers: dict[int, CsvAppender] = {}

    def pause():
        if row_delay:
            time.sleep(row_delay)

    try:
        for spec in step.protocol.acquire(plan.qubits, step.parameters):
            for ds in platform.execute(spec):
                ds.protocol = step.name
                collected[ds.qubit].append(ds)
                if fmt == "csv":
                    if ds.qubit not in writers:
                        writers[ds.qubit] = CsvAppender(out / by_qubit[ds.qubit].dataset, step.name, ds.qubit, ds.meta)
                    writers[ds.qubit].append(ds, on_row=pause)
    finally:
        for w in writers.values():
            w.close()
    merged = {q: concat(v) for q, v in collected.items() if v}
    if fmt == "json":
        for q, ds in merged.items():
            write_dataset(ds, "json", out / by_qubit[q].dataset)
    return merged


def _jsonable(obj):
    return json.loads(json.dumps(obj))


def load_meta(output_dir) -> dict:
    return json.loads((Path(output_dir) / "meta.json").read_text())
