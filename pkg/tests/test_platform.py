import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import ks_2samp

from qcal.errors import InvalidSpec, InvariantViolation, ParameterFileError, UnknownPlatform
from qcal.platform import (
    GateSequence,
    Platform,
    QubitDriveSweep,
    RabiAmplitude,
    Ramsey,
    ResonatorSweep,
    SingleShot,
    T1Delay,
    TrueQubit,
    load_platform,
)


def calibrated(platform, qubit=0):
    """Point the platform's calibration at the hidden truth."""
    t = platform.truth[qubit]
    platform.update_calibration(qubit, {
        "readout_frequency": t.resonator_frequency,
        "drive_frequency": t.qubit_frequency,
        "pi_pulse_amplitude": t.pi_amplitude,
    })
    return platform


def test_load_sim_1q():
    p = load_platform("sim_1q", seed=1234)
    assert p.qubits == [0]
    assert p.seed == 1234


def test_load_sim_5q_has_independent_truths():
    p = load_platform("sim_5q", seed=7)
    assert p.qubits == [0, 1, 2, 3, 4]
    freqs = {p.truth[q].qubit_frequency for q in p.qubits}
    assert len(freqs) == 5


def test_sim_5q_qubit0_is_sim_1q():
    assert load_platform("sim_5q").truth[0] == load_platform("sim_1q").truth[0]


def test_unknown_platform():
    with pytest.raises(UnknownPlatform):
        load_platform("bogus")


def test_initial_guesses_are_detuned():
    p = load_platform("sim_1q")
    cal, t = p.calibration(0), p.truth[0]
    assert cal.readout_frequency - t.resonator_frequency == pytest.approx(3e6)
    assert cal.drive_frequency - t.qubit_frequency == pytest.approx(-5e6)
    assert cal.pi_pulse_amplitude == 0.25
    assert cal.calibrated == set()


def test_parameter_file(tmp_path):
    path = tmp_path / "params.json"
    path.write_text(json.dumps({"qubits": {"0": {"t1": 45e-6, "iq_ground": [0.1, 0.2]}}}))
    p = load_platform("sim_1q", path)
    assert p.truth[0].t1 == 45e-6
    assert p.truth[0].iq_ground == (0.1, 0.2)


@pytest.mark.parametrize("doc", [
    {"qubits": {"0": {"t_one": 1e-6}}},
    {"qubit": {}},
    {"qubits": {"3": {"t1": 1e-6}}},
    {"qubits": {"0": {"t2": 200e-6}}},  # T2 > 2 T1
])
def test_parameter_file_rejections(tmp_path, doc):
    path = tmp_path / "params.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ParameterFileError):
        load_platform("sim_1q", path)


def test_parameter_file_unreadable(tmp_path):
    path = tmp_path / "params.json"
    path.write_text("{not json")
    with pytest.raises(ParameterFileError):
        load_platform("sim_1q", path)


# --------------------------------------------------------- physics checks

def test_resonator_center_is_deepest_point():
    p = load_platform("sim_1q", noiseless=True)
    t = p.truth[0]
    offset = t.resonator_frequency - p.calibration(0).readout_frequency
    (ds,) = p.execute(ResonatorSweep((0,), (offset - 1e6, offset, offset + 1e6)))
    assert ds["msr"][1] == pytest.approx(t.transmission_baseline - t.transmission_depth)
    assert ds["msr"][1] < min(ds["msr"][0], ds["msr"][2])


def test_resonator_converges_to_model_with_many_shots():
    p = load_platform("sim_1q", seed=2)
    t = p.truth[0]
    offset = t.resonator_frequency - p.calibration(0).readout_frequency
    (ds,) = p.execute(ResonatorSweep((0,), (offset,), nshots=10**8))
    assert ds["msr"][0] == pytest.approx(t.transmission_baseline - t.transmission_depth, abs=2e-4)


def test_dispersive_shift_moves_dip():
    p = load_platform("sim_1q", noiseless=True)
    t = p.truth[0]
    base = t.resonator_frequency - p.calibration(0).readout_frequency
    offsets = tuple(base + np.linspace(-2e6, 2e6, 401))
    (g,) = p.execute(ResonatorSweep((0,), offsets, prepared_state=0))
    (e,) = p.execute(ResonatorSweep((0,), offsets, prepared_state=1))
    shift = g["freq"][np.argmin(e["msr"])] - g["freq"][np.argmin(g["msr"])]
    assert shift == pytest.approx(t.dispersive_shift, abs=1e4)


def test_rabi_pi_amplitude_gives_full_excitation():
    p = load_platform("sim_1q", noiseless=True)
    (ds,) = p.execute(RabiAmplitude((0,), (0.0, 0.2, 0.4)))
    assert ds["prob"][0] == 0.0
    assert ds["prob"][1] == pytest.approx(0.5)
    assert ds["prob"][2] == pytest.approx(1.0)


def test_t1_half_life():
    p = calibrated(load_platform("sim_1q", noiseless=True))
    t1 = p.truth[0].t1
    (ds,) = p.execute(T1Delay((0,), (0.0, t1 * math.log(2))))
    assert ds["prob"][0] == pytest.approx(1.0)
    assert ds["prob"][1] == pytest.approx(0.5)


def test_qubit_spectroscopy_peak():
    p = load_platform("sim_1q", noiseless=True)
    t = p.truth[0]
    off = t.qubit_frequency - p.calibration(0).drive_frequency
    (ds,) = p.execute(QubitDriveSweep((0,), (off - 1e6, off, off + 1e6)))
    assert ds["prob"][1] == pytest.approx(0.5)
    assert ds["prob"][1] > ds["prob"][0]


def test_zero_drive_is_flat():
    p = load_platform("sim_1q", noiseless=True)
    (ds,) = p.execute(QubitDriveSweep((0,), tuple(np.linspace(-1e7, 1e7, 50)), drive_amplitude=0.0))
    assert np.all(ds["prob"] == 0)


def test_ramsey_fringe_frequency():
    p = calibrated(load_platform("sim_1q", noiseless=True))
    p.update_calibration(0, {"drive_frequency": p.truth[0].qubit_frequency - 0.1e6})
    delays = tuple(np.arange(0, 20e-6, 0.05e-6))
    (ds,) = p.execute(Ramsey((0,), delays, detuning=0.5e6))
    spectrum = np.abs(np.fft.rfft(ds["prob"] - ds["prob"].mean(), n=1 << 16))
    freq = np.argmax(spectrum) / ((1 << 16) * 0.05e-6)
    assert freq == pytest.approx(0.6e6, rel=0.01)


def test_gate_sequence_identity_survives_without_noise():
    t = TrueQubit(depolarizing=1.0)
    p = Platform("x", [t], noiseless=True)
    x = np.array([[0, 1], [1, 0]])
    (ds,) = p.execute(GateSequence((0,), (np.eye(2), x), ((1, 1), (1,)), (2, 1), nshots=100))
    assert list(ds["survival"]) == [1.0, 0.0]
    assert list(ds["count0"]) == [100, 0]


def test_depolarizing_survival():
    p = Platform("x", [TrueQubit(depolarizing=0.9)], noiseless=True)
    (ds,) = p.execute(GateSequence((0,), (np.eye(2),), ((0, 0, 0),), (3,), nshots=10))
    assert ds["survival"][0] == pytest.approx(0.5 + 0.5 * 0.9**3)


# --------------------------------------------------------- readout

def test_single_shot_blob_separation():
    p = calibrated(load_platform("sim_1q", seed=3))
    t = p.truth[0]
    n = 20000
    (ds,) = p.execute(SingleShot((0,), n))
    g = np.column_stack([ds["i"], ds["q"]])[ds["state"] == 0]
    e = np.column_stack([ds["i"], ds["q"]])[ds["state"] == 1]
    sep = np.linalg.norm(e.mean(axis=0) - g.mean(axis=0))
    # flips pull both means towards each other by 2 eps
    expected = np.linalg.norm(np.subtract(t.iq_excited, t.iq_ground)) * (1 - 2 * t.readout_flip)
    assert abs(sep - expected) < 3 * t.iq_sigma * math.sqrt(2 / n) + 3 * expected * math.sqrt(t.readout_flip / n)


def test_readout_miscalibration_shrinks_separation():
    p = load_platform("sim_1q")
    t = p.truth[0]
    factor = p.readout_separation_factor(p.calibration(0), t)
    assert factor == pytest.approx(1 / math.sqrt(1 + 36))
    calibrated(p)
    assert p.readout_separation_factor(p.calibration(0), t) == 1.0


# --------------------------------------------------------- calibration store

def test_update_flags_calibrated_and_feeds_forward():
    p = load_platform("sim_1q")
    p.update_calibration(0, {"readout_frequency": 7.0e9})
    assert "readout_frequency" in p.calibration(0).calibrated
    (ds,) = p.execute(SingleShot((0,), 100))
    assert ds.meta["calibration"]["readout_frequency"] == 7.0e9


@pytest.mark.parametrize("updates", [
    {"pi_pulse_amplitude": 0.0},
    {"pi_pulse_amplitude": 1.5},
    {"t1": 10e-6, "t2": 30e-6},
    {"assignment_fidelity": 1.2},
    {"nonsense": 1.0},
])
def test_invalid_updates(updates):
    p = load_platform("sim_1q")
    with pytest.raises(InvariantViolation):
        p.update_calibration(0, updates)
    assert p.calibration(0).calibrated == set()


def test_calibration_copy_is_isolated():
    p = load_platform("sim_1q")
    cal = p.calibration(0)
    cal.calibrated.add("t1")
    assert p.calibration(0).calibrated == set()


# --------------------------------------------------------- spec validation

@pytest.mark.parametrize("spec", [
    ResonatorSweep((0,), ()),
    ResonatorSweep((0,), (2.0, 1.0)),
    ResonatorSweep((0,), (1.0,), prepared_state=2),
    RabiAmplitude((0,), (0.0, 1.5)),
    T1Delay((0,), (-1e-6, 0.0)),
    SingleShot((0,), nshots=0),
    SingleShot((0, 0), nshots=10),
    SingleShot((3,), nshots=10),
    GateSequence((0,), (np.eye(2),), ((1,),), (1,)),
])
def test_invalid_specs(spec):
    with pytest.raises(InvalidSpec):
        load_platform("sim_1q").execute(spec)


# --------------------------------------------------------- determinism and noise

def _run(seed):
    p = load_platform("sim_5q", seed=seed)
    out = []
    out += p.execute(RabiAmplitude((0, 1, 2), tuple(np.linspace(0, 1, 21))))
    out += p.execute(SingleShot((3, 4), 200))
    return out


def test_same_seed_same_bytes():
    a, b = _run(9), _run(9)
    assert all(x.equals(y) for x, y in zip(a, b))
    c = _run(10)
    assert not all(x.equals(y) for x, y in zip(a, c))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**63 - 1), others=st.sets(st.integers(1, 4), max_size=4))
def test_qubit_stream_independent_of_neighbours(seed, others):
    alone = load_platform("sim_5q", seed=seed).execute(T1Delay((0,), (0.0, 1e-5, 2e-5), nshots=50))[0]
    targets = (0, *sorted(others))
    together = load_platform("sim_5q", seed=seed).execute(T1Delay(targets, (0.0, 1e-5, 2e-5), nshots=50))[0]
    assert alone.equals(together)


def test_shot_noise_scaling():
    p = calibrated(load_platform("sim_1q", seed=4))
    t1 = p.truth[0].t1
    stds = {}
    for n in (64, 256, 1024):
        samples = [p.execute(T1Delay((0,), (0.0, t1 * math.log(2)), nshots=n))[0]["prob"][1] for _ in range(300)]
        stds[n] = np.std(samples, ddof=1)
    for n in (64, 256, 1024):
        expected = math.sqrt(0.25 / n)
        assert expected / 2 < stds[n] < expected * 2


def test_multiplexed_marginals_match_single_qubit_runs():
    plex = load_platform("sim_5q", seed=21)
    for q in plex.qubits:
        calibrated(plex, q)
    together = plex.execute(SingleShot(tuple(plex.qubits), 2000))
    for q, ds in zip(plex.qubits, together):
        solo = calibrated(Platform("solo", [plex.truth[q]], seed=1000 + q))
        (ref,) = solo.execute(SingleShot((0,), 2000))
        for col in ("i", "q"):
            assert ks_2samp(ds[col], ref[col]).pvalue > 0.01
