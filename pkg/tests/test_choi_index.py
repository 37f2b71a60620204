from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import X, Z, haar, kron, shift_unitary
from qcalab.chain_algebra import Automorphism, Boundary, ChainSpec
from qcalab.choi_index import (
    Entropy,
    WindowRow,
    choi_state,
    cut_spread,
    entropy_of,
    index_entropy_diff,
    index_mi,
    local_choi,
    mi_continuity_experiment,
    mutual_information,
    plateau_onset,
    schmidt_probabilities,
    window_sweep,
    windows,
)
from qcalab.errors import WindowTooLarge
from qcalab.qca import circuit_qca, compose, identity_qca, random_circuit, shift_qca

LOG2 = math.log(2)


def reduced_density(psi: np.ndarray, dims: list[int], keep: list[int]) -> np.ndarray:
    """Partial trace of a pure state by explicit index contraction."""
    n = len(dims)
    t = psi.reshape(dims)
    rest = [i for i in range(n) if i not in keep]
    m = t.transpose(keep + rest).reshape(math.prod(dims[i] for i in keep), -1)
    return m @ m.conj().T


def vn(rho: np.ndarray) -> float:
    ev = np.linalg.eigvalsh(rho)
    ev = ev[ev > 1e-14]
    return float(-np.sum(ev * np.log(ev)))


def mi_oracle(psi, dims, a, b):
    return vn(reduced_density(psi, dims, a)) + vn(reduced_density(psi, dims, b)) - vn(reduced_density(psi, dims, sorted(a + b)))


def test_choi_of_identity_is_bell_pair():
    c = ChainSpec.uniform(1, 2, Boundary.OPEN)
    s = choi_state(Automorphism.identity(c))
    assert np.allclose(s.vector, np.array([1, 0, 0, 1]) / math.sqrt(2))
    s = choi_state(Automorphism.from_unitary(c, X))
    assert np.allclose(s.vector, np.kron(X, np.eye(2)) @ np.array([1, 0, 0, 1]) / math.sqrt(2))
    assert mutual_information(s, [0], [1]) == pytest.approx(2 * LOG2)


def test_choi_state_is_normalized_and_pure(rng):
    c = ChainSpec.uniform(3, 2, Boundary.OPEN)
    s = choi_state(Automorphism.from_unitary(c, haar(8, rng)))
    assert np.linalg.norm(s.vector) == pytest.approx(1.0)
    # complementary regions of a pure state carry equal entropy
    for labels in ([0], [0, 4], [1, 2, 3]):
        rest = [x for x in range(6) if x not in labels]
        for kind in Entropy:
            p = schmidt_probabilities(s, labels)
            q = schmidt_probabilities(s, rest)
            assert entropy_of(p, kind) == pytest.approx(entropy_of(q, kind), abs=1e-10)


def test_shift_choi_marginals_are_bell_pairs():
    n = 4
    c = ChainSpec.uniform(n, 2)
    s = choi_state(shift_qca(c, 1).auto)
    psi = (shift_unitary(n, 2, 1) / math.sqrt(16)).reshape(-1)
    dims = [2] * (2 * n)
    for k in range(n):
        partner = n + (k - 1) % n  # x_k is moved onto site k - 1
        assert mi_oracle(psi, dims, [k], [partner]) == pytest.approx(2 * LOG2)
        assert mutual_information(s, [k], [partner]) == pytest.approx(2 * LOG2)
        assert mutual_information(s, [k], [n + k]) == pytest.approx(0.0, abs=1e-12)


def test_local_choi_marginals_match_global(rng):
    c = ChainSpec.uniform(6, 2)
    q = random_circuit(c, rng)
    full = choi_state(q.auto)
    loc = local_choi(q.auto, [2, 3])
    for a, b in (([2], [6 + 3]), ([2, 3], [6 + 1, 6 + 2]), ([3], [6 + 4, 6 + 5])):
        assert mutual_information(loc, a, b) == pytest.approx(mutual_information(full, a, b), abs=1e-10)


def test_mutual_information_of_shift_windows():
    c = ChainSpec.uniform(8, 2)
    s = local_choi(shift_qca(c, 1).auto, [6, 7, 0, 1])
    left, right = windows(c, 0, 2)
    assert left == [6, 7] and right == [0, 1]
    # L' = primed copies of the left window, R = right window
    assert mutual_information(s, [8 + x for x in left], right) == pytest.approx(2 * LOG2)
    assert mutual_information(s, left, [8 + x for x in right]) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("entropy", list(Entropy))
def test_index_mi_values(entropy, rng):
    c = ChainSpec.uniform(8, 2)
    assert index_mi(shift_qca(c, 1).auto, 0, 2, entropy).raw == pytest.approx(LOG2, abs=1e-10)
    assert index_mi(shift_qca(c, -1).auto, 3, 2, entropy).raw == pytest.approx(-LOG2, abs=1e-10)
    assert index_mi(identity_qca(c).auto, 0, 2, entropy).raw == pytest.approx(0.0, abs=1e-12)
    assert index_mi(random_circuit(c, rng).auto, 1, 2, entropy).raw == pytest.approx(0.0, abs=1e-8)


def test_index_mi_qutrit_shift():
    c = ChainSpec.uniform(8, 3)
    v = index_mi(shift_qca(c, 1).auto, 0, 2)
    assert v.raw == pytest.approx(math.log(3), abs=1e-10)
    assert v.lattice == ((3, 1),)


def test_entropy_difference_values(rng):
    c = ChainSpec.uniform(8, 2)
    assert index_entropy_diff(shift_qca(c, 1).auto) == pytest.approx(LOG2, abs=1e-10)
    assert index_entropy_diff(identity_qca(c).auto) == pytest.approx(0.0, abs=1e-12)
    for _ in range(3):
        assert index_entropy_diff(random_circuit(c, rng).auto, 2, 2) == pytest.approx(0.0, abs=1e-8)


def test_windows_respect_chain():
    ring = ChainSpec.uniform(8, 2)
    assert windows(ring, 1, 3) == ([6, 7, 0], [1, 2, 3])
    with pytest.raises(WindowTooLarge):
        windows(ring, 0, 5)
    line = ChainSpec.uniform(6, 2, Boundary.OPEN)
    assert windows(line, 3, 3) == ([0, 1, 2], [3, 4, 5])
    with pytest.raises(WindowTooLarge):
        windows(line, 2, 3)


def test_open_chain_index_vanishes(rng):
    line = ChainSpec.uniform(6, 2, Boundary.OPEN)
    q = random_circuit(line, rng)
    assert index_mi(q.auto, 3, 2).raw == pytest.approx(0.0, abs=1e-9)


def test_window_sweep_and_plateau(rng):
    c = ChainSpec.uniform(8, 2)
    rows = window_sweep(shift_qca(c, 1).auto)
    assert [r.window for r in rows] == [1, 2, 3]
    assert all(r.raw_vn == pytest.approx(LOG2) and r.raw_renyi2 == pytest.approx(LOG2) for r in rows)
    assert plateau_onset(rows) == 1
    assert cut_spread(shift_qca(c, 1).auto, 2) == pytest.approx(0.0, abs=1e-12)


def test_plateau_onset_rules():
    def row(w, raw, rounded):
        return WindowRow(w, raw, raw, rounded)

    rows = [row(1, 0.3, 0.0), row(2, 0.01, 0.0), row(3, 0.005, 0.0)]
    assert plateau_onset(rows) == 2
    rows = [row(1, 0.5, LOG2), row(2, 0.2, 0.0), row(3, 0.0, 0.0)]
    assert plateau_onset(rows, flat=0.1) == 3
    assert plateau_onset([row(1, 0.0, 0.0), row(2, 0.5, LOG2)]) == 2
    assert plateau_onset([]) is None


def test_continuity_equal_maps():
    c = ChainSpec.uniform(8, 2)
    a = shift_qca(c, 1).auto
    rep = mi_continuity_experiment(a, a, 2, restarts=4)
    assert rep.eps_upper == pytest.approx(0.0, abs=1e-12)
    assert rep.trace_distance == pytest.approx(0.0, abs=1e-12)
    assert rep.delta_index == 0 and rep.holds


def test_continuity_small_phase_on_shift():
    c = ChainSpec.uniform(8, 2)
    g = sla.expm(0.01j * np.kron(Z, Z))
    pert = circuit_qca(c, [[((0, 1), g)]])
    a1 = shift_qca(c, 1).auto
    a2 = compose(shift_qca(c, 1), pert).auto
    rep = mi_continuity_experiment(a1, a2, 2, restarts=10)
    assert rep.holds
    assert rep.delta_index <= rep.bound


def test_continuity_bound_shrinks_linearly_with_eps():
    # identity against e^{i eps K}, K = X (x) X across the cut between sites 7 and 0
    c = ChainSpec.uniform(8, 2)
    ident = identity_qca(c).auto
    k = kron(X, *[np.eye(2)] * 6, X)
    reps = []
    for eps in (0.02, 0.01, 0.005):
        rep = mi_continuity_experiment(ident, Automorphism.from_unitary(c, sla.expm(1j * eps * k)), 2, restarts=4)
        assert rep.holds
        # an index-zero gate inside the windows leaves the raw index at zero
        assert rep.delta_index == pytest.approx(0.0, abs=1e-10)
        # [x, cos(eps) + i sin(eps) XX] = i sin(eps) [x, XX] and sup ||[x, XX]|| = 2
        assert rep.eps_upper == pytest.approx(2 * np.sin(eps), rel=1e-6)
        reps.append(rep)
    assert reps[0].bound > reps[1].bound > reps[2].bound
    assert reps[1].trace_distance / reps[0].trace_distance == pytest.approx(0.5, rel=0.05)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 7))
def test_mi_index_is_cut_independent_for_circuits(seed, cut):
    rng = np.random.default_rng(seed)
    c = ChainSpec.uniform(8, 2)
    q = compose(shift_qca(c, 1), random_circuit(c, rng, layers=1))
    assert index_mi(q.auto, cut, 3).raw == pytest.approx(LOG2, abs=1e-8)
