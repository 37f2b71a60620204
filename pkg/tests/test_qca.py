from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import I2, X, Z, haar, shift_unitary, site_op
from qcalab.chain_algebra import Boundary, ChainOperator, ChainSpec, random_hermitian
from qcalab.errors import (
    FactorizationFailure,
    IndexMismatch,
    NonzeroIndex,
    OpenChainUnsupported,
    OverlapInLayer,
    SpecMismatch,
)
from qcalab.qca import (
    ROBUST_EPS,
    WITNESS_CONSTANT,
    blend,
    block,
    brickwork_layers,
    circuit_qca,
    compose,
    decompose_index_zero,
    find_offset,
    identity_qca,
    index_dimension,
    random_circuit,
    robustness_experiment,
    round_index,
    shift_qca,
    single_site_residual,
    support_algebras,
    tensor,
    verify_radius,
)

SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)
LOG2, LOG3 = math.log(2), math.log(3)


def same_up_to_phase(a: np.ndarray, b: np.ndarray, tol: float = 1e-10) -> bool:
    return abs(abs(np.trace(a.conj().T @ b)) / a.shape[0] - 1) < tol


@pytest.fixture
def ring8():
    return ChainSpec.uniform(8, 2)


def test_round_index_lattice():
    v = round_index(0.69, (2,))
    assert v.lattice == ((2, 1),) and v.rounded == pytest.approx(LOG2)
    v = round_index(LOG2 - LOG3 + 1e-3, (2, 3))
    assert dict(v.lattice) == {2: 1, 3: -1}
    assert v.residual == pytest.approx(1e-3)
    assert round_index(1e-12, (2, 3)).rounded == 0


def test_shift_matches_permutation_oracle(ring8):
    q = shift_qca(ring8, 1)
    z3 = ChainOperator.on(ring8, [3], Z)
    img = q.apply(z3)
    assert np.allclose(img.embed([2, 3]).matrix, np.kron(Z, I2))
    small = ChainSpec.uniform(4, 2)
    assert np.allclose(shift_qca(small, 1).auto.unitary, shift_unitary(4, 2, 1))


def test_shift_power_and_inverse(ring8):
    q1, q2 = shift_qca(ring8, 1), shift_qca(ring8, 2)
    assert same_up_to_phase(compose(q1, q1).auto.unitary, q2.auto.unitary)
    assert same_up_to_phase(compose(q1, shift_qca(ring8, -1)).auto.unitary, np.eye(256))
    assert shift_qca(ring8, 0).radius == 0


def test_shift_preconditions():
    with pytest.raises(OpenChainUnsupported):
        shift_qca(ChainSpec.uniform(8, 2, Boundary.OPEN), 1)
    with pytest.raises(SpecMismatch):
        shift_qca(ChainSpec.uniform(8, 2), 4)


def test_circuit_radius_examples(ring8, rng):
    singles = [[((s,), haar(2, rng)) for s in range(8)]]
    assert circuit_qca(ring8, singles).radius == 0
    swap_layer = [[((2 * n, 2 * n + 1), SWAP) for n in range(4)]]
    q = circuit_qca(ring8, swap_layer)
    assert q.radius == 1
    q = random_circuit(ring8, rng, layers=2)
    assert q.radius <= 2
    assert verify_radius(q, q.radius)[0]
    with pytest.raises(OverlapInLayer):
        circuit_qca(ring8, [[((0, 1), SWAP), ((1, 2), SWAP)]])


def test_circuit_apply_matches_dense_product(rng):
    c = ChainSpec.uniform(4, 2, Boundary.OPEN)
    g1, g2, g3 = haar(4, rng), haar(4, rng), haar(4, rng)
    q = circuit_qca(c, [[((0, 1), g1), ((2, 3), g2)], [((1, 2), g3)]])
    u = np.kron(np.kron(I2, g3), I2) @ np.kron(g1, g2)  # later layers act on the left
    x = site_op(X, 0, 4, 2)
    got = q.apply(ChainOperator.on(c, [0], X)).embed([0, 1, 2, 3]).matrix
    assert np.allclose(got, u.conj().T @ x @ u)


def test_verify_radius_examples(ring8):
    ok, res = verify_radius(identity_qca(ring8), 0)
    assert ok and res == 0
    ok, res = verify_radius(shift_qca(ring8, 1), 0)
    assert not ok and res == pytest.approx(1.0)
    assert verify_radius(shift_qca(ring8, 1), 1)[0]


def test_support_algebra_examples(ring8, rng):
    sa = support_algebras(identity_qca(ring8), 1)
    assert sa.L.dim == 4 and sa.R.dim == 4
    assert sa.L.contains_residual(np.kron(X, I2)) > 0.5  # C_1 = (1, 2); L_1 sits on site 2
    assert sa.L.contains_residual(np.kron(I2, X)) < 1e-10
    sa = support_algebras(shift_qca(ring8, 1), 1)
    assert sa.L.dim == 16 and sa.R.dim == 1
    layer = [[((2 * n, 2 * n + 1), haar(4, rng)) for n in range(4)]]
    sa = support_algebras(circuit_qca(ring8, layer), 2)
    assert sa.L.dim * sa.R.dim == 16


def test_support_algebras_need_nearest_neighbour(ring8):
    with pytest.raises(FactorizationFailure):
        support_algebras(shift_qca(ring8, 2), 0)
    with pytest.raises(FactorizationFailure):
        support_algebras(identity_qca(ChainSpec.uniform(6, 2)), 0)


@pytest.mark.parametrize("k,expected", [(1, LOG2), (-1, -LOG2), (0, 0.0)])
def test_index_of_qubit_shifts(ring8, k, expected):
    v = index_dimension(shift_qca(ring8, k))
    assert v.raw == pytest.approx(expected, abs=1e-9)
    assert v.rounded == pytest.approx(expected, abs=1e-12)


def test_index_of_qutrit_shift():
    v = index_dimension(shift_qca(ChainSpec.uniform(8, 3), 1))
    assert v.raw == pytest.approx(LOG3, abs=1e-9)
    assert v.lattice == ((3, 1),)


def test_index_of_random_circuits_is_zero(ring8, rng):
    for _ in range(3):
        assert index_dimension(random_circuit(ring8, rng)).raw == pytest.approx(0.0, abs=1e-9)


def test_index_is_blocking_invariant(ring8):
    big = ChainSpec.uniform(16, 2)
    q = shift_qca(big, 1)
    assert index_dimension(block(q, 2)).raw == pytest.approx(index_dimension(q).raw, abs=1e-9)


def test_index_tensor_and_compose(ring8, rng):
    t = tensor(shift_qca(ring8, 1), shift_qca(ChainSpec.uniform(8, 3), -1))
    v = index_dimension(t)
    assert v.raw == pytest.approx(LOG2 - LOG3, abs=1e-9)
    assert dict(v.lattice) == {2: 1, 3: -1}
    q = compose(shift_qca(ring8, 1), random_circuit(ring8, rng, layers=1))
    assert index_dimension(q).raw == pytest.approx(LOG2, abs=1e-9)


def test_open_chain_index_is_zero(rng):
    line = ChainSpec.uniform(8, 2, Boundary.OPEN)
    assert index_dimension(random_circuit(line, rng)).rounded == 0


def test_brickwork_layers_alternate_offsets(ring8, rng):
    layers = brickwork_layers(ring8, [SWAP, None, SWAP], rng=rng)
    assert [sites for sites, _ in layers[0]] == [(0, 1), (2, 3), (4, 5), (6, 7)]
    assert [sites for sites, _ in layers[1]][-1] == (0, 7)
    # wrap-around gate is stored with its factors in site order
    assert np.allclose(layers[2][-1][1], SWAP)


def test_decompose_identity_and_swaps(ring8):
    d = decompose_index_zero(identity_qca(ring8))
    for _, g in d.v_gates + d.u_gates:
        assert same_up_to_phase(g, np.eye(4))
    q = circuit_qca(ring8, brickwork_layers(ring8, [SWAP, SWAP]))
    d = decompose_index_zero(q)
    assert d.residual <= 1e-7
    assert single_site_residual(q.auto, d.as_qca().auto) <= 1e-7


def test_decompose_random_round_trip(ring8, rng):
    for _ in range(3):
        q = random_circuit(ring8, rng)
        d = decompose_index_zero(q, seed=int(rng.integers(1000)))
        rebuilt = d.as_qca(certify=True)
        assert rebuilt.radius <= 2
        assert single_site_residual(q.auto, rebuilt.auto) <= 1e-7


def test_decompose_near_identity_has_small_gates(ring8, rng):
    eps = 0.003
    gates = [sla.expm(1j * eps * random_hermitian(4, rng) / 2) for _ in range(2)]
    q = circuit_qca(ring8, brickwork_layers(ring8, gates))
    d = decompose_index_zero(q)
    assert d.residual <= 1e-7
    assert max(d.u_norms + d.v_norms) < 10 * eps


def test_decompose_refuses_shift(ring8):
    with pytest.raises(NonzeroIndex) as err:
        decompose_index_zero(shift_qca(ring8, 1))
    assert err.value.index == pytest.approx(LOG2)


def test_blend_examples(rng):
    # on 8 sites the four collar blocks would cover the whole ring
    ring16 = ChainSpec.uniform(16, 2)
    s = shift_qca(ring16, 1)
    res = blend(s, s, cut=3)
    assert max(res.left_residual, res.right_residual) <= 1e-8
    assert single_site_residual(res.auto, s.auto) <= 1e-8
    other = compose(s, random_circuit(ring16, rng, layers=1))
    res = blend(s, other, cut=2)
    assert res.left_residual <= 1e-8 and res.right_residual <= 1e-8
    with pytest.raises(IndexMismatch):
        blend(s, identity_qca(ring16), cut=0)


def test_robustness_examples(ring8):
    s = shift_qca(ring8, 1)
    rows = robustness_experiment(s, [0.0, 0.004], seed=1, target="error")
    assert rows[0].unchanged and rows[0].local_error == 0
    r = rows[1]
    assert r.local_error == pytest.approx(0.004, rel=1e-6)
    assert r.in_regime and r.unchanged
    assert r.witness_norm is not None and r.witness_norm <= WITNESS_CONSTANT * r.local_error
    assert ROBUST_EPS == pytest.approx(1 / 192)


def test_robustness_large_strength_is_reported_not_raised(ring8):
    rows = robustness_experiment(shift_qca(ring8, 1), [0.3], seed=2)
    assert not rows[0].in_regime
    assert rows[0].status


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([-1, 0, 1]))
def test_index_additivity_under_compose(seed, k):
    rng = np.random.default_rng(seed)
    ring = ChainSpec.uniform(8, 2)
    q = compose(random_circuit(ring, rng, layers=1), shift_qca(ring, k))
    assert find_offset(q) in (0, 1)
    assert index_dimension(q).raw == pytest.approx(k * LOG2, abs=1e-8)
