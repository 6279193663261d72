"""Run the default sim_1q chain over many seeds and tabulate errors against the hidden truth."""

import argparse
import json
import math
import tempfile
from pathlib import Path

from qcal import default_runcard
from qcal.executor import load_plan, run_plan
from qcal.platform import load_platform

TOLERANCES = {
    "readout_frequency": 1e5,
    "drive_frequency": 5e4,
    "pi_pulse_amplitude": 0.02,
    "t1": 0.05,
    "t2": 0.15,
}


def errors(cal: dict, truth) -> dict[str, float]:
    return {
        "readout_frequency": abs(cal["readout_frequency"] - truth.resonator_frequency),
        "drive_frequency": abs(cal["drive_frequency"] - truth.qubit_frequency),
        "pi_pulse_amplitude": abs(cal["pi_pulse_amplitude"] / truth.pi_amplitude - 1),
        "t1": abs(cal["t1"] / truth.t1 - 1),
        "t2": abs(cal["t2"] / truth.t2 - 1),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--platform", default="sim_1q")
    args = ap.parse_args()

    text = default_runcard(args.platform)
    truth = load_platform(args.platform).truth
    worst = {k: 0.0 for k in TOLERANCES}
    passed = 0
    with tempfile.TemporaryDirectory() as tmp:
        for seed in range(1, args.seeds + 1):
            plan, platform = load_plan(text, seed=seed)
            res = run_plan(plan, platform, Path(tmp) / str(seed), runcard_text=text)
            if not res.succeeded:
                print(f"seed {seed:3d}  pipeline failed: {[r.error for r in res.records if r.error][0]}")
                continue
            cal = json.loads((res.output_dir / "calibration.json").read_text())
            ok = True
            for q, t in truth.items():
                err = errors(cal[str(q)], t)
                for k, v in err.items():
                    worst[k] = max(worst[k], v)
                    ok &= v <= TOLERANCES[k]
            passed += ok
            print(f"seed {seed:3d}  {'ok' if ok else 'MISS'}  "
                  + "  ".join(f"{k}={v:.3g}" for k, v in err.items()))
    print(f"\n{passed}/{args.seeds} seeds within tolerance")
    for k, v in worst.items():
        print(f"  worst {k:20s} {v:.3g}  (tolerance {TOLERANCES[k]:g}, margin {TOLERANCES[k] / max(v, math.ulp(0)):.1f}x)")


if __name__ == "__main__":
    main()
