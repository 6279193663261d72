"""Single-qubit gate sets and the randomized-benchmarking protocols built on them.

A gate-set characterization run is: sample an ensemble of circuits, execute
them, reduce each circuit's shots to a scalar record, aggregate the records by
depth, then fit. :class:`PostProcessingPipeline` holds the last three steps.
"""

from __future__ import annotations

import cmath
import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from qcal.errors import FitDiverged, PreconditionError
from qcal.fitting import FitResult, fit_power_decay, fit_rb_decay

PHASE_TOL = 1e-9

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
S = np.array([[1, 0], [0, 1j]], dtype=complex)


def same_up_to_phase(u, v) -> bool:
    return abs(abs(np.trace(u.conj().T @ v)) - 2) < PHASE_TOL


@dataclass
class GateSet:
    """A finite group of 2x2 unitaries, identified modulo global phase.

    ``compose[i, j]`` is the index of the gate equal to applying ``i`` first
    and then ``j`` (matrix ``U_j @ U_i``).
    """

    name: str
    elements: list[np.ndarray]
    compose: np.ndarray
    inverse: np.ndarray
    weights: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.elements)

    def index_of(self, u) -> int:
        for i, g in enumerate(self.elements):
            if same_up_to_phase(g, u):
                return i
        raise KeyError("unitary not in gate set")

    def product(self, indices: Sequence[int]) -> int:
        total = 0
        for i in indices:
            total = int(self.compose[total, i])
        return total

    @property
    def is_abelian(self) -> bool:
        return bool(np.array_equal(self.compose, self.compose.T))

    def probabilities(self) -> np.ndarray:
        if self.weights is None:
            return np.full(len(self), 1 / len(self))
        w = np.asarray(self.weights, dtype=float)
        return w / w.sum()


def _tables(elements):
    n = len(elements)
    compose = np.empty((n, n), dtype=int)
    lookup = GateSet("", elements, np.zeros((1, 1), int), np.zeros(1, int))
    for i, j in itertools.product(range(n), repeat=2):
        compose[i, j] = lookup.index_of(elements[j] @ elements[i])
    inverse = np.array([int(np.nonzero(compose[i] == 0)[0][0]) for i in range(n)])
    return compose, inverse


def from_generators(name: str, generators: Sequence[np.ndarray]) -> GateSet:
    """Closure of ``generators`` under multiplication, identity first."""
    elements = [I2]
    frontier = [I2]
    while frontier:
        new = []
        for g in frontier:
            for h in generators:
                u = h @ g
                if not any(same_up_to_phase(u, e) for e in elements):
                    elements.append(u)
                    new.append(u)
        frontier = new
    compose, inverse = _tables(elements)
    return GateSet(name, elements, compose, inverse)


def from_elements(name: str, elements: Sequence[np.ndarray]) -> GateSet:
    elements = [np.asarray(e, dtype=complex) for e in elements]
    compose, inverse = _tables(elements)
    return GateSet(name, elements, compose, inverse)


def clifford_group() -> GateSet:
    return from_generators("clifford", [H, S])


def pauli_gateset() -> GateSet:
    return from_elements("pauli", [I2, X, Y, Z])


def xid_gateset() -> GateSet:
    return from_elements("xid", [I2, X])


GATESETS: dict[str, Callable[[], GateSet]] = {
    "clifford": clifford_group,
    "pauli": pauli_gateset,
    "xid": xid_gateset,
}


def get_gateset(name: str) -> GateSet:
    try:
        return GATESETS[name]()
    except KeyError:
        raise KeyError(f"unknown gate set {name!r}; known: {sorted(GATESETS)}") from None


# ---------------------------------------------------------------- characters

@dataclass(frozen=True)
class Irrep:
    label: str
    character: tuple[complex, ...]

    @property
    def trivial(self) -> bool:
        return all(abs(c - 1) < 1e-12 for c in self.character)


def _character_label(chars) -> str:
    out = []
    for c in chars:
        if abs(c - 1) < 1e-9:
            out.append("+")
        elif abs(c + 1) < 1e-9:
            out.append("-")
        else:
            out.append(f"({cmath.phase(c) / np.pi:.3g}pi)")
    return "".join(out)


def characters(gs: GateSet) -> list[Irrep]:
    """All one-dimensional irreps of an abelian gate set, by brute force."""
    if not gs.is_abelian:
        raise ValueError(f"gate set {gs.name!r} is not abelian")
    n = len(gs)
    roots = [cmath.exp(2j * cmath.pi * k / n) for k in range(n)]
    irreps = []
    for values in itertools.product(roots, repeat=n - 1):
        chi = (1.0 + 0j,) + values
        if all(abs(chi[gs.compose[i, j]] - chi[i] * chi[j]) < 1e-9 for i in range(n) for j in range(n)):
            irreps.append(Irrep(_character_label(chi), chi))
    irreps.sort(key=lambda r: (not r.trivial, r.label))
    return irreps


def visible_in_z(gs: GateSet, irrep: Irrep) -> bool:
    """Whether ``irrep`` contributes to a Z measurement after preparing |0>.

    The group average of chi(g) <Z>_g vanishes for irreps that carry no
    weight on the Z component; their filtered signal is identically zero in
    expectation and is reported rather than fitted.
    """
    zexp = [float(np.real((g @ np.diag([1, 0]) @ g.conj().T)[0, 0] * 2 - 1)) for g in gs.elements]
    weight = np.mean([np.conj(c) * z for c, z in zip(irrep.character, zexp)])
    return abs(weight) > 1e-9


# ---------------------------------------------------------------- circuits

@dataclass
class CircuitEnsembleSpec:
    gateset: GateSet
    depths: Sequence[int]
    circuits_per_depth: int
    shots_per_circuit: int
    append_inverse: bool = True
    seed: int = 0

    def __post_init__(self):
        depths = list(self.depths)
        if not depths or any(b <= a for a, b in zip(depths, depths[1:])):
            raise ValueError("depths must be non-empty and strictly increasing")
        if any(d < 0 for d in depths):
            raise ValueError("depths must be non-negative")
        if self.circuits_per_depth < 1 or self.shots_per_circuit < 1:
            raise ValueError("circuit and shot counts must be >= 1")


@dataclass(frozen=True)
class Circuit:
    depth: int
    replicate: int
    gates: tuple[int, ...]

    def encode(self) -> str:
        return " ".join(map(str, self.gates))

    @staticmethod
    def decode(text: str) -> tuple[int, ...]:
        return tuple(int(t) for t in text.split())


def sample_circuits(spec: CircuitEnsembleSpec) -> list[Circuit]:
    rng = np.random.default_rng(spec.seed)
    gs = spec.gateset
    probs = gs.probabilities()
    out = []
    for depth in spec.depths:
        for rep in range(spec.circuits_per_depth):
            gates = [int(g) for g in rng.choice(len(gs), size=depth, p=probs)]
            if spec.append_inverse:
                gates.append(int(gs.inverse[gs.product(gates)]))
            out.append(Circuit(int(depth), rep, tuple(gates)))
    return out


# ---------------------------------------------------------- post-processing

@dataclass
class PostProcessingPipeline:
    per_circuit: Callable[[Circuit, float], float]
    aggregate: Callable[[dict[int, list[float]]], tuple[np.ndarray, np.ndarray]]
    estimate: Callable[[np.ndarray, np.ndarray], FitResult]

    def run(self, circuits: Sequence[Circuit], survival: Sequence[float]) -> FitResult:
        groups: dict[int, list[float]] = {}
        for c, s in zip(circuits, survival):
            groups.setdefault(c.depth, []).append(self.per_circuit(c, s))
        depths, values = self.aggregate(groups)
        return self.estimate(depths, values)


def mean_by_depth(groups: dict[int, list[float]]):
    depths = np.array(sorted(groups), dtype=float)
    # sorted() makes the mean independent of circuit order
    values = np.array([np.mean(sorted(groups[d])) for d in sorted(groups)])
    return depths, values


def standard_rb_pipeline() -> PostProcessingPipeline:
    return PostProcessingPipeline(
        per_circuit=lambda circuit, survival: float(survival),
        aggregate=mean_by_depth,
        estimate=fit_rb_decay,
    )


def filter_record(gs: GateSet, irrep: Irrep, circuit: Circuit, survival: float) -> float:
    """Shot-averaged chi(g_total) * 2 (delta_{b,0} - 1/2) for one circuit."""
    chi = irrep.character[gs.product(circuit.gates)]
    return float(np.real(chi) * (2 * survival - 1))


def filtered_rb_pipeline(gs: GateSet, irrep: Irrep) -> PostProcessingPipeline:
    return PostProcessingPipeline(
        per_circuit=lambda circuit, survival: filter_record(gs, irrep, circuit, survival),
        aggregate=mean_by_depth,
        estimate=fit_power_decay,
    )


@dataclass
class FilteredRBResult:
    gateset: str
    fits: dict[str, FitResult] = field(default_factory=dict)
    flat: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    failed: dict[str, str] = field(default_factory=dict)

    def as_fit(self) -> FitResult:
        params = {}
        for label, fit in self.fits.items():
            params[f"A[{label}]"] = fit.params["A"]
            params[f"p[{label}]"] = fit.params["p"]
        diags = [f"irrep {k}: flat (not fitted)" for k in self.flat]
        diags += [f"irrep {k}: {msg}" for k, msg in self.failed.items()]
        return FitResult(
            model=f"filtered_rb[{self.gateset}]",
            params=params,
            rss=float(sum(f.rss for f in self.fits.values())),
            converged=all(f.converged for f in self.fits.values()),
            iterations=max((f.iterations for f in self.fits.values()), default=0),
            diagnostics=diags,
        )


def analyze_filtered(gs: GateSet, circuits: Sequence[Circuit], survival: Sequence[float]) -> FilteredRBResult:
    result = FilteredRBResult(gs.name)
    for irrep in characters(gs):
        pipe = filtered_rb_pipeline(gs, irrep)
        if irrep.trivial or not visible_in_z(gs, irrep):
            groups: dict[int, list[float]] = {}
            for c, s in zip(circuits, survival):
                groups.setdefault(c.depth, []).append(pipe.per_circuit(c, s))
            result.flat[irrep.label] = mean_by_depth(groups)
            continue
        try:
            result.fits[irrep.label] = pipe.run(circuits, survival)
        except FitDiverged as exc:
            result.failed[irrep.label] = str(exc)
    return result


# ---------------------------------------------------------- platform drivers

def _execute(platform, qubit, spec: CircuitEnsembleSpec):
    from qcal.platform import GateSequence

    circuits = sample_circuits(spec)
    seq = GateSequence(
        qubits=(qubit,),
        gates=tuple(spec.gateset.elements),
        circuits=tuple(c.gates for c in circuits),
        depths=tuple(c.depth for c in circuits),
        nshots=spec.shots_per_circuit,
    )
    (ds,) = platform.execute(seq)
    return circuits, ds["survival"]


def run_standard_rb(platform, qubit: int, spec: CircuitEnsembleSpec) -> FitResult:
    if len(set(spec.depths)) < 4:
        raise PreconditionError("standard RB needs at least 4 distinct depths")
    if not spec.append_inverse:
        raise ValueError("standard RB requires append_inverse=True")
    circuits, survival = _execute(platform, qubit, spec)
    return standard_rb_pipeline().run(circuits, survival)


def run_filtered_rb(platform, qubit: int, spec: CircuitEnsembleSpec) -> FilteredRBResult:
    if len(set(spec.depths)) < 4:
        raise PreconditionError("filtered RB needs at least 4 distinct depths")
    if spec.append_inverse:
        raise ValueError("filtered RB runs circuits without the inverting gate")
    characters(spec.gateset)  # rejects non-abelian sets early
    circuits, survival = _execute(platform, qubit, spec)
    return analyze_filtered(spec.gateset, circuits, survival)
