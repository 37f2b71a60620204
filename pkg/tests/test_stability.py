from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import I2, X, Z, haar, kron
from qcalab.algebra_struct import OperatorAlgebra, near_inclusion_eps
from qcalab.chain_algebra import Automorphism, Boundary, ChainSpec, Region
from qcalab.errors import EpsilonTooLarge
from qcalab.stability import (
    NearHomomorphism,
    commutator_lemma_suite,
    conjugation_distance,
    homomorphism_local_error_check,
    inner_bound,
    inner_twirl,
    inner_twirl_naive,
    intertwining_residual,
    make_inner,
    make_inner_suite,
    restricted_distance_bounds,
    rotate_into,
    rotate_into_suite,
    rotation_probe_check,
    simultaneous_inclusion_suite,
    smallest_enclosing_circle,
)


def conj(w):
    return lambda a: w.conj().T @ a @ w


@pytest.fixture
def two_qubits():
    return ChainSpec.uniform(2, 2, Boundary.OPEN)


@pytest.fixture
def three_qubits():
    return ChainSpec.uniform(3, 2, Boundary.OPEN)


def test_inner_bound_is_monotone_and_small_eps_linear():
    assert inner_bound(0.0) == 0.0
    vals = [inner_bound(e) for e in np.linspace(0, 0.99, 50)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    assert inner_bound(1e-4) == pytest.approx(1e-4, rel=1e-6)
    assert inner_bound(1.0) == pytest.approx(math.sqrt(2))


def test_make_inner_identity(two_qubits):
    alg = OperatorAlgebra.region(two_qubits, [0], [0, 1])
    h = NearHomomorphism.build([alg], [lambda a: a])
    u = make_inner(h).matrix
    assert h.eps == 0
    assert abs(abs(np.trace(u)) / 4 - 1) < 1e-12


def test_make_inner_single_conjugation(two_qubits):
    w = sla.expm(1j * 0.05 * np.kron(X, I2))
    alg = OperatorAlgebra.region(two_qubits, [0], [0, 1])
    h = NearHomomorphism.build([alg], [conj(w)])
    u = make_inner(h).matrix
    assert intertwining_residual(h, u) < 1e-9
    # the deviation of Ad(w) on M_2 is |1 - e^{0.1 i}| for the rotation by 0.05 X
    assert h.eps <= abs(1 - np.exp(0.1j)) + 1e-12
    assert np.linalg.norm(np.eye(4) - u, 2) <= inner_bound(h.eps) + 1e-12


def test_make_inner_two_commuting_sources(two_qubits, rng):
    w0 = sla.expm(1j * 0.03 * np.kron(Z, I2))
    w1 = sla.expm(1j * 0.04 * np.kron(I2, X))
    a0 = OperatorAlgebra.region(two_qubits, [0], [0, 1])
    a1 = OperatorAlgebra.region(two_qubits, [1], [0, 1])
    h = NearHomomorphism.build([a0, a1], [conj(w0), conj(w1)])
    u = make_inner(h).matrix
    for p in (X, Z):
        assert np.allclose(u.conj().T @ np.kron(p, I2) @ u, w0.conj().T @ np.kron(p, I2) @ w0, atol=1e-10)
        assert np.allclose(u.conj().T @ np.kron(I2, p) @ u, w1.conj().T @ np.kron(I2, p) @ w1, atol=1e-10)
    assert np.linalg.norm(np.eye(4) - u, 2) <= inner_bound(h.eps) + 1e-12


def test_make_inner_refuses_large_eps(two_qubits):
    alg = OperatorAlgebra.region(two_qubits, [0], [0, 1])
    h = NearHomomorphism.build([alg], [conj(np.kron(X, I2))])
    assert h.eps > 1
    with pytest.raises(EpsilonTooLarge):
        make_inner(h)


def test_fast_twirl_matches_naive_sum(three_qubits, rng):
    alg = OperatorAlgebra.region(three_qubits, [0, 1], [0, 1, 2])
    w = sla.expm(1j * 0.1 * (lambda k: (k + k.conj().T) / 2)(rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))))
    y = haar(8, rng)
    assert np.allclose(inner_twirl(y, alg, conj(w)), inner_twirl_naive(y, alg, conj(w)), atol=1e-12)


def test_make_inner_suite_small():
    s = make_inner_suite(instances=15, seed=4)
    assert s["violations"] == 0
    assert s["max_residual"] < 1e-9


def test_rotate_into_already_inside(three_qubits):
    a = OperatorAlgebra.region(three_qubits, [0], [0, 1, 2])
    res = rotate_into(a, Region.of(0, 1))
    assert res.eps_in == 0
    assert np.allclose(res.unitary.matrix, np.eye(8))


def test_rotate_into_xx_rotation(three_qubits, rng):
    eps = 0.004
    k = kron(X, X, I2)
    w = sla.expm(1j * eps * k)
    base = OperatorAlgebra.region(three_qubits, [0], [0, 1, 2])
    a = base.conjugated(w.conj().T)  # w A w^dag
    # the rotation stays inside sites {0, 1}: exact inclusion there
    assert near_inclusion_eps(a, Region.of(0, 1)) < 1e-12
    res = rotate_into(a, Region.of(0))
    assert res.eps_in > 0
    assert res.inclusion_residual < 1e-8
    assert res.deviation <= 12 * res.eps_in
    u = res.unitary.matrix
    inside = OperatorAlgebra.region(three_qubits, [0], [0, 1, 2])
    for p in (X, Z):
        moved = u.conj().T @ (w @ kron(p, I2, I2) @ w.conj().T) @ u
        assert inside.contains_residual(moved) < 1e-8
    probe = rotation_probe_check(res, a, Region.of(0), kron(I2, I2, Z), rng)
    assert probe["delta_comm"] < 1e-12
    assert probe["moved"] < 1e-8


def test_rotate_into_refuses_large_eps(three_qubits):
    a = OperatorAlgebra.region(three_qubits, [1], [0, 1, 2])
    with pytest.raises(EpsilonTooLarge):
        rotate_into(a, Region.of(0))


def test_rotate_into_suite_small():
    s = rotate_into_suite(instances=10, seed=5)
    assert s["violations"] == 0
    assert s["max_residual"] < 1e-8


def test_conjugation_distance_examples():
    u = np.eye(2)
    assert conjugation_distance(u, u) == pytest.approx(0.0, abs=1e-14)
    assert conjugation_distance(u, np.diag([1, -1])) == pytest.approx(2.0)
    assert conjugation_distance(u, np.diag([1, np.exp(0.2j)])) == pytest.approx(abs(1 - np.exp(0.2j)), rel=1e-12)
    assert abs(1 - np.exp(0.2j)) == pytest.approx(0.19966683, rel=1e-7)


def test_conjugation_distance_against_probe_search(rng):
    # sup over the unit ball is attained on unitaries; sample them and refine on rank-one partial isometries
    for _ in range(5):
        u, v = haar(2, rng), haar(2, rng)
        exact = conjugation_distance(u, v)
        best = 0.0
        for _ in range(3000):
            x = haar(2, rng)
            best = max(best, np.linalg.norm(u.conj().T @ x @ u - v.conj().T @ x @ v, 2))
        w = v @ u.conj().T
        _, vecs = np.linalg.eig(w)
        e = np.outer(vecs[:, 0], vecs[:, 1].conj())
        best = max(best, np.linalg.norm(u.conj().T @ e @ u - v.conj().T @ e @ v, 2))
        assert best <= exact + 1e-12
        assert best >= exact - 1e-2


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3.1, 3.1), min_size=1, max_size=6))
def test_enclosing_circle_contains_points(angles):
    pts = [complex(np.exp(1j * a)) for a in angles]
    c, r = smallest_enclosing_circle(pts)
    assert all(abs(p - c) <= r + 1e-9 for p in pts)
    diam = max(abs(p - q) for p in pts for q in pts)
    assert diam / 2 - 1e-9 <= r <= diam / math.sqrt(3) + 1e-9


def test_restricted_distance_of_product_is_exact(rng):
    g0, g1 = haar(2, rng), haar(2, rng)
    u2 = np.kron(g0, g1)
    lo, up = restricted_distance_bounds(np.eye(4), u2, [2, 2], [0], rng)
    assert lo == pytest.approx(up)
    assert up == pytest.approx(conjugation_distance(np.eye(2), g0))


def test_restricted_distance_bounds_bracket(rng):
    w = sla.expm(1j * 0.1 * kron(X, X, Z))
    lo, up = restricted_distance_bounds(np.eye(8), w, [2, 2, 2], [0], rng, restarts=60)
    assert 0 < lo <= up + 1e-12
    # w = cos(0.1) + i sin(0.1) XXZ, so [x, w] = i sin(0.1) [x, X] (x) XZ and sup ||[x, X]|| = 2
    assert lo == pytest.approx(2 * math.sin(0.1), rel=1e-6)
    assert up == pytest.approx(2 * math.sin(0.1), rel=1e-6)


def test_local_error_identity(three_qubits):
    ident = Automorphism.identity(three_qubits)
    rep = homomorphism_local_error_check(ident, ident, [Region.of(0), Region.of(1), Region.of(2)], restarts=10)
    assert rep.eps == pytest.approx(0.0, abs=1e-12)
    assert rep.global_exact == pytest.approx(0.0, abs=1e-12)


def test_local_error_phase_gates(three_qubits):
    eps, n = 0.09, 3
    g = sla.expm(1j * (eps / n) * Z)
    u = kron(g, g, g)
    rep = homomorphism_local_error_check(
        Automorphism.identity(three_qubits),
        Automorphism.from_unitary(three_qubits, u),
        [Region.of(0), Region.of(1), Region.of(2)],
        restarts=20,
    )
    for v in rep.block_upper:
        assert v == pytest.approx(2 * math.sin(eps / n), rel=1e-9)
    # spectrum of u spans phases -eps..eps
    assert rep.global_exact == pytest.approx(2 * math.sin(eps), rel=1e-9)
    assert rep.global_lower <= rep.bound
    assert rep.global_exact >= 0.5 * rep.eps


def test_local_error_single_block_perturbation(three_qubits, rng):
    g = sla.expm(1j * 0.07 * X)
    u = kron(I2, g, I2)
    rep = homomorphism_local_error_check(
        Automorphism.identity(three_qubits),
        Automorphism.from_unitary(three_qubits, u),
        [Region.of(0), Region.of(1), Region.of(2)],
        restarts=20,
    )
    assert rep.block_upper[0] == pytest.approx(0.0, abs=1e-12)
    assert rep.global_exact == pytest.approx(rep.block_upper[1], rel=1e-9)


def test_commutator_lemmas_small_run():
    s = commutator_lemma_suite(draws=200, seed=3)
    assert s["powers"]["violations"] == 0
    assert s["polar"]["violations"] == 0


def test_commutator_power_lemma_spot_values(rng):
    # y = diag(1, 0.9), s = 1/2: direct functional-calculus check
    y = np.diag([1.0, 0.9])
    ys = np.diag([1.0, math.sqrt(0.9)])
    x = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    x = x + x.conj().T
    eps = 0.1
    lhs = np.linalg.norm(x @ ys - ys @ x, 2)
    rhs = 0.5 / (1 - eps) ** 0.5 * np.linalg.norm(x @ y - y @ x, 2)
    assert lhs <= rhs
    # polar part of a unitary is itself
    y = sla.expm(0.05j * X)
    up, _ = sla.polar(y)
    assert np.allclose(up, y)
    lhs = np.linalg.norm(Z @ up - up @ Z, 2)
    assert lhs <= 3 * np.linalg.norm(Z @ y - y @ Z, 2) + 2 * np.linalg.norm(Z @ y.conj().T - y.conj().T @ Z, 2)


def test_simultaneous_inclusion_small_run():
    s = simultaneous_inclusion_suite(instances=5, seed=2)
    assert s["violations"] == 0
