"""Device abstraction and the simulated transmon platforms.

Protocols talk to a :class:`Platform` only through :class:`ExperimentSpec`
requests and read back one :class:`~qcal.dataset.DataSet` per target qubit.
The simulator keeps the hidden device parameters in ``Platform.truth``; the
calibration routines never read them.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from qcal.dataset import DataSet
from qcal.errors import InvalidSpec, InvariantViolation, ParameterFileError, UnknownPlatform


@dataclass
class TrueQubit:
    """Hidden ground truth for one simulated qubit (SI units)."""

    resonator_frequency: float = 7.0e9
    resonator_linewidth: float = 1.0e6
    dispersive_shift: float = 0.5e6  # 2 chi
    qubit_frequency: float = 5.0e9
    pi_amplitude: float = 0.4
    pi_duration: float = 40e-9
    t1: float = 50e-6
    t2: float = 30e-6
    iq_ground: tuple[float, float] = (0.30, -0.10)
    iq_excited: tuple[float, float] = (0.46, 0.02)
    iq_sigma: float = 0.05
    depolarizing: float = 0.99
    readout_flip: float = 0.01
    transmission_baseline: float = 1.0
    transmission_depth: float = 0.6
    transmission_noise: float = 0.5  # per shot, per quadrature

    def validate(self) -> None:
        if self.resonator_linewidth <= 0 or self.iq_sigma <= 0:
            raise InvariantViolation("linewidth and IQ spread must be positive")
        if self.t2 > 2 * self.t1:
            raise InvariantViolation("T2 must not exceed 2*T1")
        if not 0 < self.depolarizing <= 1:
            raise InvariantViolation("depolarizing parameter must lie in (0, 1]")
        if tuple(self.iq_ground) == tuple(self.iq_excited):
            raise InvariantViolation("IQ blob centers must differ")
        if not 0 <= self.readout_flip < 0.5:
            raise InvariantViolation("readout flip probability must lie in [0, 0.5)")
        if min(self.resonator_frequency, self.qubit_frequency, self.pi_amplitude, self.pi_duration) <= 0:
            raise InvariantViolation("frequencies, amplitude and duration must be positive")

    @property
    def rabi_rate(self) -> float:
        """Rabi frequency in Hz per unit drive amplitude."""
        return 1 / (2 * self.pi_duration * self.pi_amplitude)


CALIBRATION_FIELDS = (
    "readout_frequency",
    "drive_frequency",
    "pi_pulse_amplitude",
    "pi_pulse_duration",
    "t1",
    "t2",
    "iq_angle",
    "threshold",
    "assignment_fidelity",
    "gate_fidelity",
)


@dataclass
class QubitCalibration:
    readout_frequency: float
    drive_frequency: float
    pi_pulse_amplitude: float
    pi_pulse_duration: float
    t1: float | None = None
    t2: float | None = None
    iq_angle: float = 0.0
    threshold: float = 0.0
    assignment_fidelity: float | None = None
    gate_fidelity: float | None = None
    calibrated: set[str] = field(default_factory=set)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in CALIBRATION_FIELDS}
        d["calibrated"] = sorted(self.calibrated)
        return d

    def updated(self, updates: dict) -> "QubitCalibration":
        unknown = set(updates) - set(CALIBRATION_FIELDS)
        if unknown:
            raise InvariantViolation(f"unknown calibration fields {sorted(unknown)}")
        new = replace(self, calibrated=set(self.calibrated) | set(updates), **updates)
        new.validate()
        return new

    def validate(self) -> None:
        for name in ("readout_frequency", "drive_frequency", "pi_pulse_duration"):
            if not getattr(self, name) > 0:
                raise InvariantViolation(f"{name} must be positive")
        if not 0 < self.pi_pulse_amplitude <= 1:
            raise InvariantViolation("pi_pulse_amplitude must lie in (0, 1]")
        for name in ("t1", "t2"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise InvariantViolation(f"{name} must be positive")
        for name in ("assignment_fidelity", "gate_fidelity"):
            v = getattr(self, name)
            if v is not None and not 0 <= v <= 1:
                raise InvariantViolation(f"{name} must lie in [0, 1]")
        if {"t1", "t2"} <= self.calibrated and self.t2 > 2 * self.t1:
            raise InvariantViolation(f"t2={self.t2:.3g} exceeds 2*t1={2 * self.t1:.3g}")


# ----------------------------------------------------------- experiments

@dataclass(frozen=True)
class ExperimentSpec:
    qubits: tuple[int, ...]


@dataclass(frozen=True)
class ResonatorSweep(ExperimentSpec):
    """Transmission sweep; ``offsets`` are relative to each qubit's readout frequency."""

    offsets: tuple[float, ...] = ()
    nshots: int = 1024
    prepared_state: int = 0


@dataclass(frozen=True)
class QubitDriveSweep(ExperimentSpec):
    """Drive sweep; ``offsets`` are relative to each qubit's drive frequency."""

    offsets: tuple[float, ...] = ()
    drive_amplitude: float = 0.02
    drive_duration: float = 2e-6
    nshots: int = 1024


@dataclass(frozen=True)
class RabiAmplitude(ExperimentSpec):
    amplitudes: tuple[float, ...] = ()
    duration: float | None = None
    nshots: int = 1024


@dataclass(frozen=True)
class T1Delay(ExperimentSpec):
    delays: tuple[float, ...] = ()
    nshots: int = 1024


@dataclass(frozen=True)
class Ramsey(ExperimentSpec):
    delays: tuple[float, ...] = ()
    detuning: float = 0.0
    nshots: int = 1024


@dataclass(frozen=True)
class SingleShot(ExperimentSpec):
    nshots: int = 1024
    states: tuple[int, ...] = (0, 1)


@dataclass(frozen=True)
class GateSequence(ExperimentSpec):
    """Circuits of gate indices into ``gates``; each gate is followed by depolarizing noise."""

    gates: tuple = ()
    circuits: tuple[tuple[int, ...], ...] = ()
    depths: tuple[int, ...] = ()
    nshots: int = 256


def _increasing(name, values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise InvalidSpec(f"{name} must be non-empty")
    if np.any(np.diff(v) <= 0):
        raise InvalidSpec(f"{name} must be strictly increasing")
    if not np.all(np.isfinite(v)):
        raise InvalidSpec(f"{name} must be finite")
    return v


# ----------------------------------------------------------- platforms

_DETUNE_READOUT = 3e6
_DETUNE_DRIVE = -5e6
_PI_GUESS = 0.25


def _sim_5q_truth() -> list[TrueQubit]:
    table = [
        # f_r, f_q, a_pi, T1, T2, p_dep
        (7.00e9, 5.00e9, 0.40, 50e-6, 30e-6, 0.990),
        (7.12e9, 5.15e9, 0.45, 40e-6, 25e-6, 0.985),
        (7.24e9, 4.85e9, 0.35, 60e-6, 40e-6, 0.992),
        (7.36e9, 5.30e9, 0.50, 45e-6, 35e-6, 0.990),
        (7.48e9, 4.70e9, 0.42, 55e-6, 20e-6, 0.995),
    ]
    out = [TrueQubit()]  # qubit 0 is the sim_1q device
    for q, (fr, fq, api, t1, t2, p) in enumerate(table[1:], start=1):
        angle = 0.6 + 0.9 * q
        g = (0.3 - 0.05 * q, -0.1 + 0.04 * q)
        e = (g[0] + 0.2 * math.cos(angle), g[1] + 0.2 * math.sin(angle))
        out.append(TrueQubit(resonator_frequency=fr, qubit_frequency=fq, pi_amplitude=api,
                             t1=t1, t2=t2, depolarizing=p, iq_ground=g, iq_excited=e))
    return out


PLATFORMS = {
    "sim_1q": lambda: [TrueQubit()],
    "sim_5q": _sim_5q_truth,
}


def initial_guess(truth: TrueQubit) -> QubitCalibration:
    return QubitCalibration(
        readout_frequency=truth.resonator_frequency + _DETUNE_READOUT,
        drive_frequency=truth.qubit_frequency + _DETUNE_DRIVE,
        pi_pulse_amplitude=_PI_GUESS,
        pi_pulse_duration=truth.pi_duration,
    )


class Platform:
    """Simulated multi-qubit transmon device.

    Randomness for qubit ``q`` on its ``k``-th acquisition comes from a Philox
    stream keyed by ``(seed, q, k)``, so a qubit's data does not depend on
    which other qubits share the acquisition.
    """

    def __init__(self, name: str, truth: Sequence[TrueQubit], seed: int = 0, noiseless: bool = False):
        self.name = name
        self.seed = int(seed)
        self.noiseless = noiseless
        self.truth = {q: t for q, t in enumerate(truth)}
        for t in self.truth.values():
            t.validate()
        self._calibration = {q: initial_guess(t) for q, t in self.truth.items()}
        self._calls = {q: 0 for q in self.truth}

    @property
    def qubits(self) -> list[int]:
        return list(self.truth)

    def calibration(self, qubit: int) -> QubitCalibration:
        cal = self._calibration[qubit]
        return replace(cal, calibrated=set(cal.calibrated))

    def calibrations(self) -> dict[int, QubitCalibration]:
        return {q: self.calibration(q) for q in self.qubits}

    def update_calibration(self, qubit: int, updates: dict) -> None:
        if qubit not in self._calibration:
            raise InvalidSpec(f"qubit {qubit} not on platform {self.name}")
        self._calibration[qubit] = self._calibration[qubit].updated(dict(updates))

    def _rng(self, qubit: int) -> np.random.Generator:
        k = self._calls[qubit]
        self._calls[qubit] += 1
        return np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, qubit, k])))

    # --------------------------------------------------------------- execute

    def execute(self, spec: ExperimentSpec) -> list[DataSet]:
        qubits = tuple(spec.qubits)
        if not qubits or len(set(qubits)) != len(qubits):
            raise InvalidSpec("target qubits must be non-empty and unique")
        for q in qubits:
            if q not in self.truth:
                raise InvalidSpec(f"qubit {q} not on platform {self.name}")
        nshots = getattr(spec, "nshots", 1)
        if not isinstance(nshots, (int, np.integer)) or nshots < 1:
            raise InvalidSpec("nshots must be an integer >= 1")
        handler = {
            ResonatorSweep: self._resonator,
            QubitDriveSweep: self._qubit_drive,
            RabiAmplitude: self._rabi,
            T1Delay: self._t1,
            Ramsey: self._ramsey,
            SingleShot: self._single_shot,
            GateSequence: self._gates,
        }.get(type(spec))
        if handler is None:
            raise InvalidSpec(f"unsupported experiment {type(spec).__name__}")
        self._validate(spec)
        out = []
        for q in qubits:
            cal = self._calibration[q]
            columns = handler(spec, self.truth[q], cal, self._rng(q))
            meta = {"calibration": cal.to_dict(), "experiment": type(spec).__name__,
                    "platform": self.name, "nshots": int(nshots)}
            out.append(DataSet(type(spec).__name__, q, columns, meta))
        return out

    def _validate(self, spec) -> None:
        if isinstance(spec, (ResonatorSweep, QubitDriveSweep)):
            _increasing("offsets", spec.offsets)
        if isinstance(spec, ResonatorSweep) and spec.prepared_state not in (0, 1):
            raise InvalidSpec("prepared_state must be 0 or 1")
        if isinstance(spec, QubitDriveSweep) and not 0 <= spec.drive_amplitude <= 1:
            raise InvalidSpec("drive_amplitude must lie in [0, 1]")
        if isinstance(spec, RabiAmplitude):
            a = _increasing("amplitudes", spec.amplitudes)
            if a[0] < 0 or a[-1] > 1:
                raise InvalidSpec("amplitudes must lie in [0, 1]")
        if isinstance(spec, (T1Delay, Ramsey)):
            if _increasing("delays", spec.delays)[0] < 0:
                raise InvalidSpec("delays must be non-negative")
        if isinstance(spec, SingleShot) and (not spec.states or set(spec.states) - {0, 1}):
            raise InvalidSpec("states must be drawn from {0, 1}")
        if isinstance(spec, GateSequence):
            if not spec.circuits or len(spec.depths) != len(spec.circuits):
                raise InvalidSpec("circuits and depths must be non-empty and aligned")
            n = len(spec.gates)
            if any(g < 0 or g >= n for c in spec.circuits for g in c):
                raise InvalidSpec("gate index out of range")

    def _bernoulli(self, p, nshots, rng):
        p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
        if self.noiseless:
            return p
        return rng.binomial(nshots, p) / nshots

    def _resonator(self, spec: ResonatorSweep, t: TrueQubit, cal, rng):
        freqs = cal.readout_frequency + np.asarray(spec.offsets, dtype=float)
        f_state = t.resonator_frequency + spec.prepared_state * t.dispersive_shift
        half = t.resonator_linewidth / 2
        mag = t.transmission_baseline - t.transmission_depth * half**2 / ((freqs - f_state) ** 2 + half**2)
        phase = np.arctan2(2 * (freqs - f_state), t.resonator_linewidth)
        signal = mag * np.exp(1j * phase)
        if not self.noiseless:
            sigma = t.transmission_noise / math.sqrt(spec.nshots)
            signal = signal + sigma * (rng.standard_normal(freqs.size) + 1j * rng.standard_normal(freqs.size))
        return {"freq": freqs, "msr": np.abs(signal), "phase": np.angle(signal),
                "i": signal.real, "q": signal.imag}

    def _qubit_drive(self, spec: QubitDriveSweep, t: TrueQubit, cal, rng):
        freqs = cal.drive_frequency + np.asarray(spec.offsets, dtype=float)
        omega = spec.drive_amplitude * t.rabi_rate
        if omega == 0:
            p = np.zeros_like(freqs)
        else:
            p = 0.5 * omega**2 / (omega**2 + (freqs - t.qubit_frequency) ** 2)
        return {"freq": freqs, "prob": self._bernoulli(p, spec.nshots, rng)}

    def _rotation(self, amplitude, duration, t: TrueQubit):
        """Rotation angle of a resonant pulse."""
        return np.pi * np.asarray(amplitude) / t.pi_amplitude * (duration / t.pi_duration)

    def _rabi(self, spec: RabiAmplitude, t: TrueQubit, cal, rng):
        amps = np.asarray(spec.amplitudes, dtype=float)
        duration = spec.duration if spec.duration is not None else cal.pi_pulse_duration
        p = np.sin(self._rotation(amps, duration, t) / 2) ** 2
        return {"amplitude": amps, "prob": self._bernoulli(p, spec.nshots, rng)}

    def _excited_population(self, cal, t: TrueQubit) -> float:
        theta = self._rotation(cal.pi_pulse_amplitude, cal.pi_pulse_duration, t)
        return float(np.sin(theta / 2) ** 2)

    def _t1(self, spec: T1Delay, t: TrueQubit, cal, rng):
        delays = np.asarray(spec.delays, dtype=float)
        p = self._excited_population(cal, t) * np.exp(-delays / t.t1)
        return {"delay": delays, "prob": self._bernoulli(p, spec.nshots, rng)}

    def _ramsey(self, spec: Ramsey, t: TrueQubit, cal, rng):
        delays = np.asarray(spec.delays, dtype=float)
        detuning = spec.detuning + (t.qubit_frequency - cal.drive_frequency)
        half = self._rotation(cal.pi_pulse_amplitude / 2, cal.pi_pulse_duration, t)
        contrast = np.sin(half) ** 2
        p = 0.5 * contrast * (1 + np.cos(2 * np.pi * detuning * delays) * np.exp(-delays / t.t2))
        return {"delay": delays, "detuning": np.full(delays.size, float(spec.detuning)),
                "prob": self._bernoulli(p, spec.nshots, rng)}

    def readout_separation_factor(self, cal, t: TrueQubit) -> float:
        """Fraction of the IQ blob separation kept when reading out off resonance."""
        detuning = cal.readout_frequency - t.resonator_frequency
        return 1 / math.sqrt(1 + (2 * detuning / t.resonator_linewidth) ** 2)

    def _single_shot(self, spec: SingleShot, t: TrueQubit, cal, rng):
        n = spec.nshots
        mu0, mu1 = np.asarray(t.iq_ground), np.asarray(t.iq_excited)
        mid = 0.5 * (mu0 + mu1)
        scale = self.readout_separation_factor(cal, t)
        centers = np.stack([mid + scale * (mu0 - mid), mid + scale * (mu1 - mid)])
        p_exc = self._excited_population(cal, t)
        prepared, i_col, q_col = [], [], []
        for state in spec.states:
            actual = np.zeros(n, dtype=int) if state == 0 else (rng.random(n) < p_exc).astype(int)
            flips = rng.random(n) < t.readout_flip
            actual ^= flips
            iq = centers[actual] + t.iq_sigma * rng.standard_normal((n, 2))
            prepared.append(np.full(n, state))
            i_col.append(iq[:, 0])
            q_col.append(iq[:, 1])
        return {"state": np.concatenate(prepared), "i": np.concatenate(i_col), "q": np.concatenate(q_col)}

    def _gates(self, spec: GateSequence, t: TrueQubit, cal, rng):
        gates = [np.asarray(g, dtype=complex) for g in spec.gates]
        p = t.depolarizing
        survival = np.empty(len(spec.circuits))
        for k, circuit in enumerate(spec.circuits):
            rho = np.array([[1, 0], [0, 0]], dtype=complex)
            for idx in circuit:
                u = gates[idx]
                rho = u @ rho @ u.conj().T
                rho = p * rho + (1 - p) * 0.5 * np.trace(rho) * np.eye(2)
            survival[k] = min(max(rho[0, 0].real, 0.0), 1.0)
        if self.noiseless:
            counts = np.rint(survival * spec.nshots).astype(int)
            measured = survival
        else:
            counts = rng.binomial(spec.nshots, survival)
            measured = counts / spec.nshots
        return {
            "circuit": np.arange(len(spec.circuits)),
            "depth": np.asarray(spec.depths, dtype=int),
            "gates": [" ".join(map(str, c)) for c in spec.circuits],
            "nshots": np.full(len(spec.circuits), spec.nshots),
            "count0": counts,
            "survival": measured,
        }


# ----------------------------------------------------------- loading

TRUTH_FIELDS = {f.name for f in fields(TrueQubit)}


def load_platform(name: str, parameter_file=None, seed: int = 0, noiseless: bool = False) -> Platform:
    """Build a registered simulated platform, optionally overriding its truth.

    The parameter file is JSON ``{"qubits": {"<id>": {field: value, ...}}}``;
    fields are those of :class:`TrueQubit`, unknown keys are rejected.
    """
    if name not in PLATFORMS:
        raise UnknownPlatform(f"unknown platform {name!r}; known: {sorted(PLATFORMS)}")
    truth = PLATFORMS[name]()
    if parameter_file is not None:
        truth = apply_parameter_file(truth, parameter_file)
    try:
        return Platform(name, truth, seed=seed, noiseless=noiseless)
    except InvariantViolation as exc:
        raise ParameterFileError(str(exc)) from exc


def apply_parameter_file(truth: list[TrueQubit], path) -> list[TrueQubit]:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ParameterFileError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or set(doc) - {"qubits"}:
        raise ParameterFileError(f"{path}: top level must be {{'qubits': ...}}")
    truth = list(truth)
    for key, values in doc.get("qubits", {}).items():
        try:
            q = int(key)
        except ValueError:
            raise ParameterFileError(f"{path}: qubit key {key!r} is not an integer") from None
        if not 0 <= q < len(truth):
            raise ParameterFileError(f"{path}: qubit {q} not on platform")
        if not isinstance(values, dict):
            raise ParameterFileError(f"{path}: qubit {q} entry must be an object")
        unknown = set(values) - TRUTH_FIELDS
        if unknown:
            raise ParameterFileError(f"{path}: unknown keys {sorted(unknown)} for qubit {q}")
        conv = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
        truth[q] = replace(truth[q], **conv)
    return truth


def truth_dict(t: TrueQubit) -> dict:
    return asdict(t)
