import json
import os
import signal
import subprocess
import sys
import textwrap
import threading
import time
from pathlib import Path

import pytest

from conftest import NARROW, execute
from qcal import default_runcard
from qcal.dataset import read_dataset
from qcal.executor import OutputExists, load_meta, load_plan, run_plan

ACTIONS = ["resonator_spectroscopy", "qubit_spectroscopy", "rabi_amplitude", "t1", "ramsey",
           "single_shot_classification", "standard_rb"]

# the three sweep actions only: enough rows to interleave with a reader
SHORT = default_runcard().split("  t1:")[0]


def files_under(root: Path, names=("data.csv", "data.meta.json", "data.json", "fit.json")):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.name in names}


def test_default_pipeline_records(default_run):
    recs = default_run.records
    assert [r.action for r in recs] == ACTIONS
    assert all(r.status == "succeeded" for r in recs)
    assert default_run.succeeded


def test_layout(default_run):
    out = default_run.output_dir
    for name in ("meta.json", "calibration.json", "runcard.yml"):
        assert (out / name).is_file()
    for r in default_run.records:
        assert (out / r.dataset).is_file()
        assert (out / r.fit).is_file()
        assert r.dataset.startswith(f"data/{r.index:02d}-{r.action}/0/")
    assert not list(out.rglob("*.tmp"))


def test_meta(default_run):
    meta = load_meta(default_run.output_dir)
    assert meta["finished"] is True
    assert meta["platform"] == "sim_1q" and meta["seed"] == 1
    assert {"python", "numpy", "pyyaml"} <= set(meta["dependencies"])
    assert meta["runcard"] == default_runcard()
    assert (default_run.output_dir / "runcard.yml").read_text() == default_runcard()
    assert [a["status"] for a in meta["actions"]] == ["succeeded"] * 7


def test_calibration_snapshot(default_run):
    cal = json.loads((default_run.output_dir / "calibration.json").read_text())["0"]
    assert abs(cal["readout_frequency"] - 7.0e9) < 1e5
    assert abs(cal["drive_frequency"] - 5.0e9) < 5e4
    assert cal["t1"] == pytest.approx(50e-6, rel=0.05)
    assert cal["gate_fidelity"] == pytest.approx(0.995, abs=0.003)


def test_fit_files(default_run):
    doc = json.loads((default_run.output_dir / default_run.records[0].fit).read_text())
    assert doc["status"] == "succeeded"
    assert set(doc["updates"]) == {"readout_frequency"}
    assert doc["updates"]["readout_frequency"] == doc["fit"]["params"]["center"]["value"]


def test_feed_forward_is_observable(default_run):
    out = default_run.output_dir

    def fitted(action):
        r = next(r for r in default_run.records if r.action == action)
        return json.loads((out / r.fit).read_text())["updates"]

    def used(action):
        r = next(r for r in default_run.records if r.action == action)
        return read_dataset(out / r.dataset).meta["calibration"]

    # the starting guess is detuned by 3 MHz; every later action uses the fitted value
    assert used("resonator_spectroscopy")["readout_frequency"] == 7.0e9 + 3e6
    center = fitted("resonator_spectroscopy")["readout_frequency"]
    for action in ACTIONS[1:]:
        assert used(action)["readout_frequency"] == center
    assert used("rabi_amplitude")["drive_frequency"] == fitted("qubit_spectroscopy")["drive_frequency"]
    assert used("t1")["pi_pulse_amplitude"] == fitted("rabi_amplitude")["pi_pulse_amplitude"]
    assert used("single_shot_classification")["drive_frequency"] == fitted("ramsey")["drive_frequency"]


def test_halt_policy(halted_run):
    statuses = [r.status for r in halted_run.records]
    assert statuses == ["failed"] + ["skipped"] * 6
    assert "NoFeature" in halted_run.records[0].error
    fit = json.loads((halted_run.output_dir / halted_run.records[0].fit).read_text())
    assert fit["status"] == "failed" and "NoFeature" in fit["error"]
    # skipped actions leave no files behind
    assert not (halted_run.output_dir / halted_run.records[1].dataset).exists()


def test_continue_policy(tmp_path):
    res = execute(NARROW, tmp_path / "run", policy="continue")
    statuses = [r.status for r in res.records]
    assert statuses[0] == "failed"
    assert "skipped" not in statuses
    assert all(s in ("failed", "succeeded") for s in statuses)
    assert "succeeded" in statuses


def test_determinism(tmp_path):
    a = execute(default_runcard(), tmp_path / "a", seed=5)
    b = execute(default_runcard(), tmp_path / "b", seed=5)
    fa, fb = files_under(a.output_dir), files_under(b.output_dir)
    assert len(fa) == 7 * 3
    assert fa == fb
    assert (a.output_dir / "calibration.json").read_bytes() == (b.output_dir / "calibration.json").read_bytes()
    ma, mb = load_meta(a.output_dir), load_meta(b.output_dir)
    ma.pop("timestamp"), mb.pop("timestamp")
    assert ma == mb


def test_different_seed_changes_data(tmp_path):
    a = execute(default_runcard(), tmp_path / "a", seed=5)
    b = execute(default_runcard(), tmp_path / "b", seed=6)
    assert files_under(a.output_dir) != files_under(b.output_dir)


def test_json_format(tmp_path):
    text = default_runcard().replace("format: csv", "format: json")
    res = execute(text, tmp_path / "run")
    assert res.succeeded
    ds = read_dataset(res.output_dir / res.records[0].dataset)
    assert res.records[0].dataset.endswith("data.json")
    assert len(ds) == 101


def test_refuses_non_empty_output(tmp_path, default_run):
    out = tmp_path / "run"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    plan, platform = load_plan(default_runcard(), seed=1)
    with pytest.raises(OutputExists):
        run_plan(plan, platform, out)
    assert (out / "keep.txt").read_text() == "x"


def test_force_replaces_output(tmp_path):
    out = tmp_path / "run"
    out.mkdir()
    (out / "stale.txt").write_text("x")
    res = execute(NARROW, out, force=True)
    assert not (out / "stale.txt").exists()
    assert (out / "meta.json").exists()
    assert res.records[0].status == "failed"


def test_unknown_policy(tmp_path):
    plan, platform = load_plan(default_runcard())
    with pytest.raises(ValueError):
        run_plan(plan, platform, tmp_path / "run", "retry")


def test_multiplexed_records(tmp_path):
    res = execute(default_runcard("sim_5q"), tmp_path / "run")
    assert len(res.records) == 7 * 5
    assert [(r.action, r.qubit) for r in res.records[:5]] == [("resonator_spectroscopy", q) for q in range(5)]
    assert res.succeeded


def test_concurrent_reads_see_prefixes(tmp_path):
    """A reader polling while the pipeline writes only ever sees prefixes of the final files."""
    out = tmp_path / "run"
    done = threading.Event()

    def writer():
        try:
            execute(SHORT, out, row_delay=0.001)
        finally:
            done.set()

    thread = threading.Thread(target=writer)
    thread.start()
    snapshots = []
    while not done.is_set():
        for path in out.glob("data/*/0/data.csv"):
            try:
                snapshots.append((path.relative_to(out), read_dataset(path)))
            except Exception as exc:  # noqa: BLE001 - any failure is a contract violation
                snapshots.append((path.relative_to(out), exc))
        time.sleep(0.002)
    thread.join()
    assert len(snapshots) > 20
    for rel, ds in snapshots:
        assert not isinstance(ds, Exception), f"{rel}: {ds}"
        final = read_dataset(out / rel)
        assert ds.head(len(ds)).equals(final.head(len(ds)))


@pytest.mark.skipif(not hasattr(signal, "SIGKILL"), reason="needs SIGKILL")
def test_killed_run_leaves_readable_rows(tmp_path, default_run):
    out = tmp_path / "run"
    script = textwrap.dedent(f"""
        from qcal import default_runcard
        from qcal.executor import load_plan, run_plan
        plan, platform = load_plan(default_runcard(), seed=1)
        run_plan(plan, platform, {str(out)!r}, row_delay=0.002)
    """)
    proc = subprocess.Popen([sys.executable, "-c", script])
    deadline = time.time() + 30
    while time.time() < deadline and not list(out.glob("data/02-*/0/data.csv")):
        time.sleep(0.01)
    time.sleep(0.05)
    os.kill(proc.pid, signal.SIGKILL)
    proc.wait()
    files = list(out.glob("data/*/0/data.csv"))
    assert files
    rows = 0
    for path in files:
        ds = read_dataset(path)
        final = read_dataset(default_run.output_dir / path.relative_to(out))
        assert ds.equals(final.head(len(ds))) or ds.partial
        assert ds.head(len(ds)).equals(final.head(len(ds)))
        rows += len(ds)
    assert rows > 0
    assert load_meta(out)["finished"] is False
