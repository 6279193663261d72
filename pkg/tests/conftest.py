import pytest

from qcal import default_runcard
from qcal.executor import load_plan, run_plan

NARROW = default_runcard().replace("freq_width: 20.0e6\n    freq_step: 0.2e6", "freq_width: 1.0e6\n    freq_step: 0.1e6")


def execute(text, out, seed=1, policy="halt", parameter_file=None, **kw):
    plan, platform = load_plan(text, parameter_file, seed=seed)
    return run_plan(plan, platform, out, policy, runcard_text=text, **kw)


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """One completed default sim_1q run (seed 1), shared read-only across tests."""
    out = tmp_path_factory.mktemp("default") / "run"
    return execute(default_runcard(), out)


@pytest.fixture(scope="session")
def halted_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("halted") / "run"
    return execute(NARROW, out)


# ---------------------------------------------------------------- acceptance summary

_criteria: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "ran": False})
    if report.when == "call":
        entry["ran"] = True
    if report.failed:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "PASS" if entry["ok"] and entry["ran"] else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {entry['title']}")
