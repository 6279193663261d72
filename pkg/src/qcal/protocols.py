"""Calibration routines: acquisition spec, analysis and calibration update.

Each protocol is a stateless descriptor. The executor calls, in order,
``acquire`` (build experiment requests), ``analyze`` (fit one qubit's data)
and ``update`` (the calibration fields the fit determines). ``owns`` lists the
only fields ``update`` may emit.
"""

from __future__ import annotations

import math

import numpy as np

from qcal import fitting, gateset
from qcal.dataset import DataSet, concat
from qcal.errors import FitError, NoDecay, PreconditionError
from qcal.fitting import FitResult
from qcal.platform import (
    GateSequence,
    QubitDriveSweep,
    RabiAmplitude,
    Ramsey,
    ResonatorSweep,
    SingleShot,
    T1Delay,
)
from qcal.report.svg import Figure
from qcal.runcard import Param, check_parameters

GRID_POINTS = 200
RAMSEY_CONFIRM_STEP = 0.2e6
RB_DEPTHS = [1, 2, 5, 10, 20, 50, 100, 200]


def sweep(lo: float, hi: float, step: float) -> tuple[float, ...]:
    n = int(round((hi - lo) / step)) + 1
    return tuple(float(v) for v in np.linspace(lo, hi, n))


def centered(width: float, step: float) -> tuple[float, ...]:
    return sweep(-width / 2, width / 2, step)


def _grid(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.linspace(x.min(), x.max(), GRID_POINTS)


def _count(lo, hi, step) -> int:
    return int(round((hi - lo) / step)) + 1


def _nshots(default=1024, minimum=1):
    return Param("nshots", "int", default, minimum=minimum, doc="shots per point")


class Protocol:
    name: str = ""
    schema: tuple[Param, ...] = ()
    owns: frozenset[str] = frozenset()
    min_points: int = 1
    description: str = ""

    def check(self, params: dict) -> dict[str, str]:
        """Cross-field checks beyond the per-parameter schema."""
        return {}

    def acquire(self, qubits, params: dict) -> list:
        raise NotImplementedError

    def analyze(self, ds: DataSet, params: dict) -> FitResult:
        raise NotImplementedError

    def update(self, fit: FitResult, ds: DataSet) -> dict:
        return {}

    def figure(self, ds: DataSet, fit: FitResult | None, params: dict) -> Figure:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"<protocol {self.name}>"


class _Sweep(Protocol):
    """Protocols whose points are one swept value and one measured value."""

    x_column = ""
    y_column = "prob"
    xlabel = ""
    ylabel = "excited-state probability"
    xscale = 1.0

    def curve(self, fit: FitResult, x) -> np.ndarray:
        raise NotImplementedError

    def figure(self, ds, fit, params):
        fig = Figure(f"{self.name} - qubit {ds.qubit}", self.xlabel, self.ylabel, xscale=self.xscale)
        fig.add("data", ds[self.x_column], ds[self.y_column])
        if fit is not None and len(ds):
            grid = _grid(ds[self.x_column])
            fig.add("fit", grid, self.curve(fit, grid), kind="line")
        return fig


def _range_check(params, lo, hi, step, minimum) -> dict[str, str]:
    if not params[hi] > params[lo]:
        return {hi: f"must exceed {lo}"}
    n = _count(params[lo], params[hi], params[step])
    if n < minimum:
        return {step: f"sweep has {n} points, need at least {minimum}"}
    return {}


class ResonatorSpectroscopy(_Sweep):
    name = "resonator_spectroscopy"
    description = "Sweep the readout frequency and locate the resonator transmission dip."
    schema = (
        Param("freq_width", "float", 20e6, minimum=0, exclusive_min=True, doc="sweep width (Hz)"),
        Param("freq_step", "float", 0.2e6, minimum=0, exclusive_min=True, doc="sweep step (Hz)"),
        _nshots(),
    )
    owns = frozenset({"readout_frequency"})
    min_points = 8
    x_column, y_column = "freq", "msr"
    xlabel, ylabel, xscale = "readout frequency (GHz)", "transmission magnitude (a.u.)", 1e-9

    def check(self, params):
        if _count(0, params["freq_width"], params["freq_step"]) < self.min_points:
            return {"freq_step": f"sweep needs at least {self.min_points} points"}
        return {}

    def acquire(self, qubits, params):
        return [ResonatorSweep(tuple(qubits), centered(params["freq_width"], params["freq_step"]), params["nshots"])]

    def analyze(self, ds, params):
        return fitting.fit_lorentzian(ds["freq"], ds["msr"], "dip")

    def update(self, fit, ds):
        return {"readout_frequency": fit["center"]}

    def curve(self, fit, x):
        return fitting.lorentzian(x, *(fit[k] for k in ("center", "fwhm", "amplitude", "offset")))


class QubitSpectroscopy(ResonatorSpectroscopy):
    name = "qubit_spectroscopy"
    description = "Sweep the drive frequency at weak drive and locate the qubit transition."
    schema = (
        Param("freq_width", "float", 20e6, minimum=0, exclusive_min=True, doc="sweep width (Hz)"),
        Param("freq_step", "float", 0.1e6, minimum=0, exclusive_min=True, doc="sweep step (Hz)"),
        Param("drive_amplitude", "float", 0.02, minimum=0, maximum=1, doc="drive amplitude"),
        Param("drive_duration", "float", 2e-6, minimum=0, exclusive_min=True, doc="drive pulse length (s)"),
        _nshots(),
    )
    owns = frozenset({"drive_frequency"})
    x_column, y_column = "freq", "prob"
    xlabel, ylabel = "drive frequency (GHz)", "excited-state probability"

    def acquire(self, qubits, params):
        return [QubitDriveSweep(tuple(qubits), centered(params["freq_width"], params["freq_step"]),
                                params["drive_amplitude"], params["drive_duration"], params["nshots"])]

    def analyze(self, ds, params):
        return fitting.fit_lorentzian(ds["freq"], ds["prob"], "peak")

    def update(self, fit, ds):
        return {"drive_frequency": fit["center"]}


class RabiAmplitudeProtocol(_Sweep):
    name = "rabi_amplitude"
    description = "Sweep the drive amplitude at fixed duration; the first maximum is the pi pulse."
    schema = (
        Param("amplitude_min", "float", 0.0, minimum=0, maximum=1),
        Param("amplitude_max", "float", 1.0, minimum=0, maximum=1),
        Param("amplitude_step", "float", 0.02, minimum=0, exclusive_min=True),
        _nshots(),
    )
    owns = frozenset({"pi_pulse_amplitude", "pi_pulse_duration"})
    min_points = 10
    x_column = "amplitude"
    xlabel = "drive amplitude"

    def check(self, params):
        return _range_check(params, "amplitude_min", "amplitude_max", "amplitude_step", self.min_points)

    def acquire(self, qubits, params):
        amps = sweep(params["amplitude_min"], params["amplitude_max"], params["amplitude_step"])
        return [RabiAmplitude(tuple(qubits), amps, None, params["nshots"])]

    def analyze(self, ds, params):
        fit = fitting.fit_oscillation(ds["amplitude"], ds["prob"], damped=False)
        f, fe = fit.params["frequency"]
        amp = 1 / (2 * f)
        if not 0 < amp <= 1:
            raise FitError(f"pi-pulse amplitude {amp:.3g} outside (0, 1]")
        fit.derived["pi_pulse_amplitude"] = (amp, fe / (2 * f * f))
        fit.derived["pi_pulse_duration"] = (ds.meta["calibration"]["pi_pulse_duration"], 0.0)
        return fit

    def update(self, fit, ds):
        return {"pi_pulse_amplitude": fit["pi_pulse_amplitude"], "pi_pulse_duration": fit["pi_pulse_duration"]}

    def curve(self, fit, x):
        return fitting.oscillation(x, *(fit[k] for k in ("frequency", "phase", "amplitude", "offset")))


class T1Protocol(_Sweep):
    name = "t1"
    description = "Pi pulse, variable wait, readout: energy relaxation time."
    schema = (
        Param("delay_min", "float", 0.0, minimum=0),
        Param("delay_max", "float", 200e-6, minimum=0, exclusive_min=True),
        Param("delay_step", "float", 4e-6, minimum=0, exclusive_min=True),
        _nshots(),
    )
    owns = frozenset({"t1"})
    min_points = 6
    x_column = "delay"
    xlabel, xscale = "delay (us)", 1e6

    def check(self, params):
        return _range_check(params, "delay_min", "delay_max", "delay_step", self.min_points)

    def acquire(self, qubits, params):
        return [T1Delay(tuple(qubits), sweep(params["delay_min"], params["delay_max"], params["delay_step"]),
                        params["nshots"])]

    def analyze(self, ds, params):
        fit = fitting.fit_exp_decay(ds["delay"], ds["prob"])
        t, te = fit.params["t_decay"]
        if te > 0.5 * t:
            raise NoDecay(f"T1 uncertainty {te / t:.0%} exceeds 50%")
        return fit

    def update(self, fit, ds):
        return {"t1": fit["t_decay"]}

    def curve(self, fit, x):
        return fitting.exp_decay(x, *(fit[k] for k in ("t_decay", "amplitude", "offset")))


class RamseyProtocol(_Sweep):
    name = "ramsey"
    description = ("Two pi/2 pulses around a variable wait with a programmed detuning; "
                   "a second acquisition at a larger detuning fixes the sign of the frequency error.")
    schema = (
        Param("delay_min", "float", 0.0, minimum=0),
        Param("delay_max", "float", 60e-6, minimum=0, exclusive_min=True),
        Param("delay_step", "float", 0.2e-6, minimum=0, exclusive_min=True),
        Param("detuning", "float", 0.5e6, minimum=0, exclusive_min=True, doc="programmed detuning (Hz)"),
        _nshots(),
    )
    owns = frozenset({"t2", "drive_frequency"})
    min_points = 10
    x_column = "delay"
    xlabel, xscale = "delay (us)", 1e6

    def check(self, params):
        problems = _range_check(params, "delay_min", "delay_max", "delay_step", self.min_points)
        nyquist = 1 / (2 * params["delay_step"])
        if params["detuning"] + RAMSEY_CONFIRM_STEP >= 0.8 * nyquist:
            problems["delay_step"] = "too coarse for the programmed detuning"
        return problems

    def acquire(self, qubits, params):
        delays = sweep(params["delay_min"], params["delay_max"], params["delay_step"])
        d = params["detuning"]
        return [Ramsey(tuple(qubits), delays, d, params["nshots"]),
                Ramsey(tuple(qubits), delays, d + RAMSEY_CONFIRM_STEP, params["nshots"])]

    def analyze(self, ds, params):
        d = params["detuning"]
        main = ds.select(ds["detuning"] == d)
        fit = fitting.fit_oscillation(main["delay"], main["prob"], damped=True)
        f1 = fit["frequency"]
        confirm = ds.select(ds["detuning"] != d)
        if len(confirm) >= self.min_points:
            f2 = fitting.fit_oscillation(confirm["delay"], confirm["prob"], damped=True)["frequency"]
            d2 = float(confirm["detuning"][0])
            candidates = (f1 - d, -f1 - d)
            residual = min(candidates, key=lambda r: abs(abs(d2 + r) - f2))
            fit.derived["confirm_frequency"] = (f2, 0.0)
        else:
            # prefix of a live acquisition: assume the programmed detuning dominates
            residual = f1 - d
            fit.diagnostics.append("sign not confirmed")
        drive = ds.meta["calibration"]["drive_frequency"]
        fe = fit.error("frequency")
        fit.derived["frequency_correction"] = (residual, fe)
        fit.derived["drive_frequency"] = (drive + residual, fe)
        fit.derived["t2"] = fit.params["decay_time"]
        return fit

    def update(self, fit, ds):
        return {"t2": fit["t2"], "drive_frequency": fit["drive_frequency"]}

    def curve(self, fit, x):
        keys = ("frequency", "phase", "amplitude", "offset", "decay_time")
        return fitting.damped_oscillation(x, *(fit[k] for k in keys))

    def figure(self, ds, fit, params):
        d = params["detuning"]
        main = ds.select(ds["detuning"] == d)
        confirm = ds.select(ds["detuning"] != d)
        fig = Figure(f"{self.name} - qubit {ds.qubit}", self.xlabel, self.ylabel, xscale=self.xscale)
        fig.add(f"detuning {d / 1e6:g} MHz", main["delay"], main["prob"])
        if len(confirm):
            fig.add("confirmation", confirm["delay"], confirm["prob"])
        if fit is not None and len(main):
            grid = np.linspace(main["delay"].min(), main["delay"].max(), 4 * GRID_POINTS)
            fig.add("fit", grid, self.curve(fit, grid), kind="line")
        return fig


class SingleShotClassification(Protocol):
    name = "single_shot_classification"
    description = "Prepare |0> and |1> repeatedly, then train a rotation-plus-threshold classifier in the IQ plane."
    schema = (_nshots(5000, minimum=100),)
    owns = frozenset({"iq_angle", "threshold", "assignment_fidelity"})
    min_points = 200
    plot_shots = 400

    def acquire(self, qubits, params):
        return [SingleShot(tuple(qubits), params["nshots"])]

    def analyze(self, ds, params):
        ground = np.column_stack([ds["i"], ds["q"]])[ds["state"] == 0]
        excited = np.column_stack([ds["i"], ds["q"]])[ds["state"] == 1]
        if len(ground) < 100 or len(excited) < 100:
            raise PreconditionError("need at least 100 shots per state")
        clf = fitting.train_classifier(ground, excited)
        n = min(len(ground), len(excited))
        f = clf.assignment_fidelity
        return FitResult(
            "iq_classifier",
            {"iq_angle": (clf.iq_angle, 0.0), "threshold": (clf.threshold, 0.0),
             "assignment_fidelity": (f, math.sqrt(max(f * (1 - f), 0.0) / (2 * n)))},
            rss=0.0, converged=True, iterations=0,
            diagnostics=["angle and threshold uncertainties not estimated"],
        )

    def update(self, fit, ds):
        return {k: fit[k] for k in ("iq_angle", "threshold", "assignment_fidelity")}

    def figure(self, ds, fit, params):
        fig = Figure(f"{self.name} - qubit {ds.qubit}", "I (a.u.)", "Q (a.u.)")
        for state in (0, 1):
            sel = ds.select(ds["state"] == state).head(self.plot_shots)
            fig.add(f"prepared |{state}>", sel["i"], sel["q"])
        if fit is not None and len(ds):
            # decision boundary: points whose rotated I equals the threshold
            a, t = fit["iq_angle"], fit["threshold"]
            c, s = math.cos(a), math.sin(a)
            q = np.asarray(ds["q"], dtype=float)
            span = np.linspace(q.min(), q.max(), GRID_POINTS)
            if abs(c) > 1e-12:
                fig.add("threshold", (t + span * s) / c, span, kind="line")
        return fig


class StandardRB(Protocol):
    name = "standard_rb"
    description = "Randomized benchmarking over the single-qubit Clifford group with an inverting final gate."
    gateset_name = "clifford"
    append_inverse = True
    schema = (
        Param("depths", "int_list", RB_DEPTHS, minimum=0, doc="sequence lengths"),
        Param("ncircuits", "int", 30, minimum=1, doc="random circuits per depth"),
        Param("nshots", "int", 256, minimum=1, doc="shots per circuit"),
        Param("seed", "int", 0, minimum=0, doc="circuit sampling seed"),
    )
    owns = frozenset({"gate_fidelity"})
    min_points = 4

    def check(self, params):
        depths = params["depths"]
        if any(b <= a for a, b in zip(depths, depths[1:])):
            return {"depths": "must be strictly increasing"}
        if len(depths) < 4:
            return {"depths": "need at least 4 distinct depths"}
        return {}

    def gateset(self, params) -> gateset.GateSet:
        return gateset.get_gateset(self.gateset_name)

    def ensemble(self, params) -> gateset.CircuitEnsembleSpec:
        return gateset.CircuitEnsembleSpec(self.gateset(params), params["depths"], params["ncircuits"],
                                           params["nshots"], self.append_inverse, params["seed"])

    def acquire(self, qubits, params):
        spec = self.ensemble(params)
        circuits = gateset.sample_circuits(spec)
        return [GateSequence(tuple(qubits), tuple(spec.gateset.elements), tuple(c.gates for c in circuits),
                             tuple(c.depth for c in circuits), spec.shots_per_circuit)]

    @staticmethod
    def circuits(ds: DataSet) -> list[gateset.Circuit]:
        return [gateset.Circuit(int(d), int(i), gateset.Circuit.decode(g))
                for i, d, g in zip(ds["circuit"], ds["depth"], ds["gates"])]

    def analyze(self, ds, params):
        if np.unique(ds["depth"]).size < 4:
            raise PreconditionError("need data at 4 or more depths")
        return gateset.standard_rb_pipeline().run(self.circuits(ds), ds["survival"])

    def update(self, fit, ds):
        return {"gate_fidelity": fit["avg_gate_fidelity"]}

    def figure(self, ds, fit, params):
        fig = Figure(f"{self.name} - qubit {ds.qubit}", "sequence depth", "survival probability")
        fig.add("circuits", ds["depth"], ds["survival"], color="#9ecae1")
        depths, means = gateset.mean_by_depth(_group(ds["depth"], ds["survival"]))
        fig.add("mean", depths, means)
        if fit is not None and len(ds):
            grid = _grid(ds["depth"])
            fig.add("fit", grid, fitting.rb_decay(grid, fit["A"], fit["p"], fit["B"]), kind="line")
        return fig


def _group(depths, values) -> dict[int, list[float]]:
    groups: dict[int, list[float]] = {}
    for d, v in zip(depths, values):
        groups.setdefault(int(d), []).append(float(v))
    return groups


class FilteredRB(StandardRB):
    name = "filtered_rb"
    description = ("Filtered randomized benchmarking on a small abelian gate set: no inverting gate, "
                   "outcomes projected onto each irreducible representation.")
    append_inverse = False
    schema = (Param("gateset", "str", "xid", choices=("xid", "pauli")),) + StandardRB.schema
    owns = frozenset()

    def gateset(self, params):
        return gateset.get_gateset(params["gateset"])

    def analyze_irreps(self, ds, params) -> gateset.FilteredRBResult:
        if np.unique(ds["depth"]).size < 4:
            raise PreconditionError("need data at 4 or more depths")
        return gateset.analyze_filtered(self.gateset(params), self.circuits(ds), ds["survival"])

    def analyze(self, ds, params):
        result = self.analyze_irreps(ds, params)
        if not result.fits:
            raise FitError("no irrep could be fitted: " + "; ".join(result.failed.values()))
        return result.as_fit()

    def update(self, fit, ds):
        return {}

    def figure(self, ds, fit, params):
        gs = self.gateset(params)
        circuits = self.circuits(ds)
        fig = Figure(f"{self.name} [{gs.name}] - qubit {ds.qubit}", "sequence depth", "filtered signal")
        for irrep in gateset.characters(gs):
            records = [gateset.filter_record(gs, irrep, c, s) for c, s in zip(circuits, ds["survival"])]
            depths, means = gateset.mean_by_depth(_group(ds["depth"], records))
            fig.add(f"irrep {irrep.label}", depths, means)
            key = f"p[{irrep.label}]"
            if fit is not None and key in fit.params and len(ds):
                grid = _grid(ds["depth"])
                fig.add(f"fit {irrep.label}", grid,
                        fitting.power_decay(grid, fit[f"A[{irrep.label}]"], fit[key]), kind="line")
        return fig


REGISTRY: dict[str, Protocol] = {
    p.name: p
    for p in (
        ResonatorSpectroscopy(),
        QubitSpectroscopy(),
        RabiAmplitudeProtocol(),
        T1Protocol(),
        RamseyProtocol(),
        SingleShotClassification(),
        StandardRB(),
        FilteredRB(),
    )
}


def resolve(protocol: Protocol | str, **overrides) -> dict:
    """Schema defaults for ``protocol`` with ``overrides`` applied and validated."""
    if isinstance(protocol, str):
        protocol = REGISTRY[protocol]
    return check_parameters(protocol, protocol.name, overrides)


def measure(protocol: Protocol, platform, qubits, params: dict) -> dict[int, DataSet]:
    """Run every acquisition of ``protocol`` and merge the results per qubit."""
    collected: dict[int, list[DataSet]] = {}
    for spec in protocol.acquire(list(qubits), params):
        for ds in platform.execute(spec):
            ds.protocol = protocol.name
            collected.setdefault(ds.qubit, []).append(ds)
    return {q: concat(v) for q, v in collected.items()}
