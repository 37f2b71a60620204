from __future__ import annotations

import itertools

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import I2, X, Y, Z, haar
from qcalab.algebra_struct import (
    OperatorAlgebra,
    algebra_closure,
    fix_phase,
    inner_unitary_of_automorphism,
    matrix_unit_residual,
    near_inclusion_eps,
    wedderburn,
)
from qcalab.chain_algebra import Boundary, ChainOperator, ChainSpec, Region
from qcalab.errors import NotAnAutomorphism


def closure_oracle(gens: list[np.ndarray]) -> int:
    """Dimension of the generated unital *-algebra by saturating products of a spanning set."""
    n = gens[0].shape[0]
    span = [np.eye(n, dtype=complex)] + [g for g in gens] + [g.conj().T for g in gens]

    def rank(ms):
        return np.linalg.matrix_rank(np.array([m.ravel() for m in ms]), tol=1e-9)

    while True:
        r = rank(span)
        span = span + [a @ b for a, b in itertools.product(span, repeat=2)]
        _, _, vh = np.linalg.svd(np.array([m.ravel() for m in span]), full_matrices=False)
        span = [v.reshape(n, n) for v in vh[: rank(span)]]
        if len(span) == r:
            return r


@pytest.fixture
def one_qubit():
    return ChainSpec.uniform(1, 2, Boundary.OPEN)


@pytest.fixture
def two_qubits():
    return ChainSpec.uniform(2, 2, Boundary.OPEN)


def test_closure_examples(one_qubit, two_qubits):
    assert algebra_closure([ChainOperator.identity(one_qubit, [0])]).dim == 1
    pauli = algebra_closure([ChainOperator.on(one_qubit, [0], X), ChainOperator.on(one_qubit, [0], Z)])
    assert pauli.dim == 4 == closure_oracle([X, Z])
    xx = ChainOperator.on(two_qubits, [0, 1], np.kron(X, X))
    zz = ChainOperator.on(two_qubits, [0, 1], np.kron(Z, Z))
    alg = algebra_closure([xx, zz])
    assert alg.dim == 4 == closure_oracle([np.kron(X, X), np.kron(Z, Z)])
    assert alg.contains_residual(np.kron(Y, Y)) < 1e-10
    assert alg.contains_residual(np.kron(X, I2)) > 0.5


def test_closure_of_random_pair_is_full(two_qubits, rng):
    gens = [ChainOperator.on(two_qubits, [0, 1], haar(4, rng)) for _ in range(2)]
    assert algebra_closure(gens, seed=3).dim == 16


def test_wedderburn_examples(one_qubit):
    m2 = OperatorAlgebra.region(one_qubit, [0])
    s = wedderburn(m2)
    assert (s.factor_sizes, s.multiplicities) == ([2], [1])
    diag = algebra_closure([ChainOperator.on(one_qubit, [0], Z)])
    s = wedderburn(diag)
    assert sorted(s.factor_sizes) == [1, 1]


def test_wedderburn_direct_sum_with_multiplicity(two_qubits, rng):
    # a (+) a inside M_4, conjugated by a random unitary to hide the structure
    v = haar(4, rng)
    mats = [v.conj().T @ np.kron(I2, p) @ v for p in (I2, X, Y, Z)]
    alg = OperatorAlgebra.from_span(two_qubits, Region.of(0, 1), np.array(mats))
    s = wedderburn(alg, seed=1)
    assert (s.factor_sizes, s.multiplicities) == ([2], [2])
    # commutant dimension fixes the multiplicity independently
    comm = sla.null_space(np.array([np.kron(m, np.eye(4)) - np.kron(np.eye(4), m.T) for m in mats]).reshape(-1, 16))
    assert comm.shape[1] == 4
    assert matrix_unit_residual(s) < 1e-10


def test_wedderburn_mixed_blocks(rng):
    # M_2 (+) C (+) C on a qutrit-qubit pair, dim 4 + 1 + 1 = 6
    c = ChainSpec(2, (3, 2), "open")
    v = haar(6, rng)
    mats = []
    for i in range(2):
        for j in range(2):
            e = np.zeros((6, 6), dtype=complex)
            e[i, j] = 1
            mats.append(e)
    mats.append(np.diag([0, 0, 1, 1, 0, 0]).astype(complex))
    mats.append(np.diag([0, 0, 0, 0, 1, 1]).astype(complex))
    alg = OperatorAlgebra.from_span(c, Region.of(0, 1), np.array([v.conj().T @ m @ v for m in mats]))
    s = wedderburn(alg, seed=2)
    assert sorted(zip(s.factor_sizes, s.multiplicities)) == [(1, 2), (1, 2), (2, 1)]
    assert sum(k * k for k in s.factor_sizes) == alg.dim == 6
    assert matrix_unit_residual(s) < 1e-10


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_wedderburn_of_random_closure_satisfies_dimension_count(seed):
    rng = np.random.default_rng(seed)
    c = ChainSpec.uniform(2, 2, Boundary.OPEN)
    h = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    h = h + h.conj().T
    # one Hermitian generator gives an abelian algebra with one block per distinct eigenvalue
    alg = algebra_closure([ChainOperator.on(c, [0, 1], h)], seed=seed % 1000)
    s = wedderburn(alg, seed=seed % 1000)
    assert sum(k * k for k in s.factor_sizes) == alg.dim == 4
    assert matrix_unit_residual(s) < 1e-9


def test_region_algebra_structure_is_exact():
    c = ChainSpec(3, (2, 3, 2), "open")
    alg = OperatorAlgebra.region(c, [1], ambient=[0, 1, 2])
    s = alg.structure
    assert (s.factor_sizes, s.multiplicities) == ([3], [4])
    assert matrix_unit_residual(s) < 1e-14
    a = np.diag([1.0, 2.0, 3.0]).astype(complex)
    assert alg.contains_residual(np.kron(np.kron(I2, a), I2)) < 1e-12


def test_near_inclusion_examples(two_qubits):
    a0 = OperatorAlgebra.region(two_qubits, [0], ambient=[0, 1])
    assert near_inclusion_eps(a0, Region.of(0, 1)) == pytest.approx(0.0, abs=1e-14)
    a1 = OperatorAlgebra.region(two_qubits, [1], ambient=[0, 1])
    assert near_inclusion_eps(a1, Region.of(0)) == pytest.approx(1.0, abs=1e-12)
    eps = 0.01
    k = np.kron(X, X)
    w = sla.expm(1j * eps * k)
    rotated = a0.conjugated(w.conj().T)  # e^{i eps K} A e^{-i eps K}
    assert rotated.contains_residual(w @ np.kron(Z, I2) @ w.conj().T) < 1e-12
    value = near_inclusion_eps(rotated, Region.of(0))
    bound = 2 * np.linalg.norm(w - np.eye(4), 2)
    assert 0 < value <= bound
    assert bound == pytest.approx(2 * abs(np.exp(1j * eps) - 1))


def test_inner_unitary_examples(one_qubit):
    m2 = OperatorAlgebra.region(one_qubit, [0])
    u = inner_unitary_of_automorphism(m2, lambda a: a).matrix
    assert np.allclose(u, np.eye(2))
    u = inner_unitary_of_automorphism(m2, lambda a: X @ a @ X).matrix
    assert abs(np.trace(u.conj().T @ X)) / 2 == pytest.approx(1.0)


def test_inner_unitary_recovers_random_conjugation(two_qubits, rng):
    m4 = OperatorAlgebra.region(two_qubits, [0, 1])
    for _ in range(5):
        u0 = haar(4, rng)
        u = inner_unitary_of_automorphism(m4, lambda a: u0.conj().T @ a @ u0, seed=7).matrix
        assert abs(np.trace(u.conj().T @ u0)) / 4 > 1 - 1e-9


def test_inner_unitary_on_embedded_factor(two_qubits, rng):
    # theta acts on M_2 (x) 1 by a unitary of the first factor only
    alg = OperatorAlgebra.region(two_qubits, [0], ambient=[0, 1])
    g = haar(2, rng)
    u0 = np.kron(g, I2)
    u = inner_unitary_of_automorphism(alg, lambda a: u0.conj().T @ a @ u0).matrix
    for p in (X, Y, Z):
        a = np.kron(p, I2)
        assert np.allclose(u.conj().T @ a @ u, u0.conj().T @ a @ u0, atol=1e-10)


def test_inner_unitary_rejects_non_multiplicative_map(one_qubit):
    m2 = OperatorAlgebra.region(one_qubit, [0])
    with pytest.raises(NotAnAutomorphism):
        inner_unitary_of_automorphism(m2, lambda a: a.T)  # anti-multiplicative
    with pytest.raises(NotAnAutomorphism):
        inner_unitary_of_automorphism(m2, lambda a: 2 * a)


def test_fix_phase_makes_trace_positive(rng):
    u = haar(3, rng)
    v = fix_phase(u)
    t = np.trace(v)
    assert abs(t.imag) < 1e-12 and t.real > 0
    assert np.allclose(v / u, (v / u)[0, 0])
