import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from qcal import gateset as gsm
from qcal.errors import PreconditionError
from qcal.fitting import fit_rb_decay, rb_decay
from qcal.gateset import (
    Circuit,
    CircuitEnsembleSpec,
    H,
    I2,
    S,
    X,
    Y,
    Z,
    characters,
    clifford_group,
    pauli_gateset,
    same_up_to_phase,
    sample_circuits,
    xid_gateset,
)
from qcal.platform import Platform, TrueQubit

CLIFFORD = clifford_group()


def brute_force_closure(generators):
    # independent enumeration: breadth-first products, phase-normalised by the first non-zero entry
    def key(u):
        flat = u.flatten()
        k = next(i for i, v in enumerate(flat) if abs(v) > 1e-9)
        v = flat / (flat[k] / abs(flat[k]))
        return tuple(np.round(v, 9).tolist())

    seen = {key(I2): I2}
    frontier = [I2]
    while frontier:
        nxt = []
        for u in frontier:
            for g in generators:
                w = g @ u
                if key(w) not in seen:
                    seen[key(w)] = w
                    nxt.append(w)
        frontier = nxt
    return seen


def test_clifford_order_matches_independent_enumeration():
    assert len(CLIFFORD) == 24
    assert len(brute_force_closure([H, S])) == 24


def test_clifford_identity_first():
    assert same_up_to_phase(CLIFFORD.elements[0], I2)


def test_clifford_tables_exhaustive():
    n = len(CLIFFORD)
    checks = 0
    for i, j in itertools.product(range(n), repeat=2):
        expected = CLIFFORD.elements[j] @ CLIFFORD.elements[i]
        assert same_up_to_phase(CLIFFORD.elements[CLIFFORD.compose[i, j]], expected)
        checks += 1
    assert checks == 576
    for g in range(n):
        assert CLIFFORD.compose[g, CLIFFORD.inverse[g]] == 0
        assert CLIFFORD.compose[CLIFFORD.inverse[g], g] == 0
        assert CLIFFORD.compose[0, g] == g == CLIFFORD.compose[g, 0]


def test_clifford_elements_distinct():
    for a, b in itertools.combinations(CLIFFORD.elements, 2):
        assert not same_up_to_phase(a, b)


def test_clifford_associativity_spot_check():
    rng = np.random.default_rng(0)
    c = CLIFFORD.compose
    for a, b, d in rng.integers(0, 24, size=(1000, 3)):
        assert c[c[a, b], d] == c[a, c[b, d]]


def test_clifford_normalises_paulis():
    for g in CLIFFORD.elements:
        for p in (X, Y, Z):
            conj = g @ p @ g.conj().T
            assert any(same_up_to_phase(conj, q) for q in (X, Y, Z))


def test_xid():
    gs = xid_gateset()
    assert len(gs) == 2
    assert same_up_to_phase(gs.elements[1] @ gs.elements[1], I2)
    assert gs.compose[1, 1] == 0


def test_pauli_self_inverse():
    gs = pauli_gateset()
    assert len(gs) == 4
    assert all(gs.inverse[g] == g for g in range(4))


@pytest.mark.parametrize("gs", [xid_gateset(), pauli_gateset(), CLIFFORD], ids=lambda g: g.name)
def test_closed(gs):
    for a, b in itertools.product(gs.elements, repeat=2):
        gs.index_of(b @ a)


def test_get_gateset():
    assert len(gsm.get_gateset("clifford")) == 24
    with pytest.raises(KeyError):
        gsm.get_gateset("nope")


# ---------------------------------------------------------------- characters

def test_pauli_characters():
    irreps = characters(pauli_gateset())
    assert len(irreps) == 4
    assert irreps[0].trivial
    visible = [r for r in irreps if gsm.visible_in_z(pauli_gateset(), r)]
    # only the irrep that flips on X and Y (but not Z) shows up in a Z measurement
    assert len(visible) == 1


def test_xid_characters():
    irreps = characters(xid_gateset())
    assert [r.label for r in irreps] == ["++", "+-"]


def test_characters_are_homomorphisms():
    gs = pauli_gateset()
    for r in characters(gs):
        for i, j in itertools.product(range(4), repeat=2):
            assert r.character[gs.compose[i, j]] == pytest.approx(r.character[i] * r.character[j])


def test_non_abelian_has_no_character_table():
    with pytest.raises(ValueError):
        characters(CLIFFORD)


# ---------------------------------------------------------------- sampling

def test_depth_zero_inverse_is_identity():
    (c,) = sample_circuits(CircuitEnsembleSpec(CLIFFORD, [0], 1, 1))
    assert c.gates == (0,)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), depth=st.integers(0, 40))
def test_inverse_appended_circuits_compose_to_identity(seed, depth):
    for c in sample_circuits(CircuitEnsembleSpec(CLIFFORD, [depth], 3, 1, seed=seed)):
        u = I2
        for g in c.gates:
            u = CLIFFORD.elements[g] @ u
        assert same_up_to_phase(u, I2)
        assert len(c.gates) == depth + 1


def test_sampling_deterministic():
    spec = CircuitEnsembleSpec(CLIFFORD, [1, 5, 9], 4, 1, seed=3)
    assert sample_circuits(spec) == sample_circuits(spec)


def test_sampling_uniform():
    spec = CircuitEnsembleSpec(CLIFFORD, [10_000], 1, 1, append_inverse=False, seed=1)
    (c,) = sample_circuits(spec)
    counts = np.bincount(c.gates, minlength=24)
    assert chisquare(counts).pvalue > 0.001
    expected = 10_000 / 24
    sigma = np.sqrt(10_000 * (1 / 24) * (23 / 24))
    assert np.all(np.abs(counts - expected) < 4 * sigma)


@pytest.mark.parametrize("depths", [[], [3, 3], [5, 2], [-1, 2]])
def test_ensemble_spec_validation(depths):
    with pytest.raises(ValueError):
        CircuitEnsembleSpec(CLIFFORD, depths, 1, 1)


def test_circuit_encoding_round_trip():
    c = Circuit(3, 0, (4, 0, 17, 2))
    assert Circuit.decode(c.encode()) == c.gates


# ---------------------------------------------------------------- pipelines

def test_pipeline_equals_direct_fit_on_synthetic_data():
    depths = [1, 2, 5, 10, 20, 50]
    circuits = [Circuit(d, r, ()) for d in depths for r in range(3)]
    rng = np.random.default_rng(0)
    survival = [rb_decay(c.depth, 0.45, 0.97, 0.5) + rng.normal(0, 0.002) for c in circuits]
    via_pipe = gsm.standard_rb_pipeline().run(circuits, survival)
    m = np.array([c.depth for c in circuits])
    means = [np.mean(sorted(np.array(survival)[m == d])) for d in depths]
    direct = fit_rb_decay(depths, means)
    assert via_pipe.values == direct.values


@settings(max_examples=30, deadline=None)
@given(st.randoms(use_true_random=False))
def test_aggregation_permutation_invariant(rnd):
    depths = [1, 3, 7, 15, 31]
    circuits = [Circuit(d, r, ()) for d in depths for r in range(4)]
    survival = [0.5 + 0.5 * 0.95 ** c.depth + 0.01 * ((7 * i) % 5 - 2) for i, c in enumerate(circuits)]
    order = list(range(len(circuits)))
    rnd.shuffle(order)
    a = gsm.standard_rb_pipeline().run(circuits, survival)
    b = gsm.standard_rb_pipeline().run([circuits[i] for i in order], [survival[i] for i in order])
    assert a.values == b.values


def test_noiseless_standard_rb_has_unit_fidelity():
    p = Platform("x", [TrueQubit(depolarizing=1.0)], seed=0)
    fit = gsm.run_standard_rb(p, 0, CircuitEnsembleSpec(CLIFFORD, [1, 2, 5, 10, 20], 5, 64))
    assert fit["avg_gate_fidelity"] == pytest.approx(1.0, abs=1e-6)


def test_standard_rb_depolarizing():
    p = Platform("x", [TrueQubit(depolarizing=0.99)], seed=1)
    spec = CircuitEnsembleSpec(CLIFFORD, [1, 2, 5, 10, 20, 50, 100, 200], 30, 256, seed=2)
    fit = gsm.run_standard_rb(p, 0, spec)
    assert fit["avg_gate_fidelity"] == pytest.approx(0.995, abs=0.002)


def test_standard_rb_needs_four_depths():
    p = Platform("x", [TrueQubit()], seed=0)
    with pytest.raises(PreconditionError):
        gsm.run_standard_rb(p, 0, CircuitEnsembleSpec(CLIFFORD, [10], 5, 64))


def test_noiseless_filtered_rb_xid():
    p = Platform("x", [TrueQubit(depolarizing=1.0)], seed=0, noiseless=True)
    spec = CircuitEnsembleSpec(xid_gateset(), [1, 2, 4, 8, 16], 10, 100, append_inverse=False)
    res = gsm.run_filtered_rb(p, 0, spec)
    assert res.fits["+-"]["p"] == pytest.approx(1.0, abs=1e-9)
    assert "++" in res.flat
    depths, values = res.flat["++"]
    assert len(depths) == 5


def test_filtered_rb_reports_invisible_irreps_flat():
    p = Platform("x", [TrueQubit(depolarizing=0.98)], seed=0)
    spec = CircuitEnsembleSpec(pauli_gateset(), [1, 2, 4, 8, 16, 32], 20, 200, append_inverse=False)
    res = gsm.run_filtered_rb(p, 0, spec)
    assert len(res.fits) == 1
    assert len(res.flat) == 3
    fit = res.as_fit()
    (label,) = res.fits
    assert f"p[{label}]" in fit.params


def test_filtered_rb_rejects_inverse_and_non_abelian():
    p = Platform("x", [TrueQubit()], seed=0)
    with pytest.raises(ValueError):
        gsm.run_filtered_rb(p, 0, CircuitEnsembleSpec(xid_gateset(), [1, 2, 3, 4], 2, 2))
    with pytest.raises(ValueError):
        gsm.run_filtered_rb(p, 0, CircuitEnsembleSpec(CLIFFORD, [1, 2, 3, 4], 2, 2, append_inverse=False))
