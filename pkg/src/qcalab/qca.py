"""Quantum cellular automata on rings: constructors, support algebras and the index.

A chain is read in pairs.  With offset ``o`` the two pairings are
``B_n = (2n+o, 2n+1+o)`` and ``C_n = (2n-1+o, 2n+o)``.  A map is handled as
nearest neighbour when ``alpha(B_n)`` lies in ``C_n (x) C_{n+1}`` for all
``n``; then ``alpha(B_n)`` factors as ``L_n (x) R_n`` with ``L_n`` inside
``C_n`` and ``R_n`` inside ``C_{n+1}``, and the index is
``(log dim L_n - log dim A_{2n}) / 2`` with linear dimensions.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg as sla

from .algebra_struct import (
    Block,
    OperatorAlgebra,
    closure_of_span,
    fix_phase,
    inner_unitary_of_automorphism,
    near_inclusion_eps,
    reorder_isometry,
)
from .chain_algebra import (
    Automorphism,
    ChainOperator,
    ChainSpec,
    BlockedModel,
    CircuitModel,
    GlobalModel,
    Locality,
    Region,
    ShiftModel,
    TensorModel,
    check_dim,
    conditional_expectation,
    dist_to_region,
    embed_matrix,
    hermitian_basis,
    matrix_norm,
    permute_operator,
    random_hermitian,
    random_unitary,
    unitarity_defect,
)
from .errors import (
    FactorizationFailure,
    IndexMismatch,
    NonzeroIndex,
    NumericalFailure,
    OpenChainUnsupported,
    OverlapInLayer,
    SpecMismatch,
)
from .stability import ROTATE_MAX_EPS, conjugation_distance, rotate_into

LATTICE_RANGE = 4


# ---------------------------------------------------------------------------
# index values


@dataclass(frozen=True)
class IndexValue:
    raw: float
    lattice: tuple[tuple[int, int], ...]
    rounded: float
    residual: float

    def as_dict(self) -> dict[str, object]:
        return {
            "raw": self.raw,
            "rounded": self.rounded,
            "residual": self.residual,
            "lattice": [{"prime": p, "k": k} for p, k in self.lattice],
        }


def round_index(raw: float, primes: Sequence[int], max_k: int = LATTICE_RANGE) -> IndexValue:
    """Nearest value of ``sum_i k_i log p_i`` with ``|k_i| <= max_k``.

    Ties go to the smaller ``sum |k_i|``."""
    primes = tuple(primes) or (2,)
    logs = [math.log(p) for p in primes]
    best: tuple[float, int, tuple[int, ...]] | None = None
    for ks in itertools.product(range(-max_k, max_k + 1), repeat=len(primes)):
        val = sum(k * l for k, l in zip(ks, logs))
        key = (round(abs(raw - val), 12), sum(abs(k) for k in ks), ks)
        if best is None or key[:2] < best[:2]:
            best = key
    assert best is not None
    ks = best[2]
    rounded = sum(k * l for k, l in zip(ks, logs))
    return IndexValue(float(raw), tuple(zip(primes, ks)), float(rounded), float(abs(raw - rounded)))


# ---------------------------------------------------------------------------
# QCA values and constructors


@dataclass
class Qca:
    auto: Automorphism
    radius: int
    blocking: int = 1
    certificate: dict[str, object] = field(default_factory=dict)

    @property
    def chain(self) -> ChainSpec:
        return self.auto.chain

    def apply(self, op: ChainOperator) -> ChainOperator:
        return self.auto.apply(op)


def shift_qca(spec: ChainSpec, k: int) -> Qca:
    """Translation with ``alpha(x_s) = x_{s-k}``."""
    if k == 0:
        return Qca(Automorphism(spec, ShiftModel(spec, 0), Locality.exact(0)), 0)
    if not spec.periodic:
        raise OpenChainUnsupported("nonzero shifts need a periodic chain")
    if spec.uniform_dim is None:
        raise SpecMismatch("shifts need a uniform local dimension")
    if 2 * abs(k) >= spec.num_sites:
        raise SpecMismatch("|k| must be below half the ring size")
    return Qca(Automorphism(spec, ShiftModel(spec, k), Locality.exact(abs(k))), abs(k))


def _gate_span(chain: ChainSpec, sites: Sequence[int]) -> int:
    """Largest distance between two sites of a gate."""
    return max((chain.distance(a, b) for a in sites for b in sites), default=0)


def circuit_qca(chain: ChainSpec, layers: Sequence[Sequence[tuple[Region | Sequence[int], np.ndarray]]], certify: bool = True) -> Qca:
    """QCA from layers of gates; the first layer is applied first in time."""
    clean = []
    bound = 0
    for layer in layers:
        used: set[int] = set()
        gates = []
        span = 0
        for reg, mat in layer:
            sites = tuple(sorted(reg.sites if isinstance(reg, Region) else reg))
            if used & set(sites):
                raise OverlapInLayer(f"gate on {sites} overlaps another gate in its layer")
            used |= set(sites)
            m = np.asarray(mat, dtype=complex)
            if m.shape != (chain.dim_of(sites),) * 2 or unitarity_defect(m) > 1e-10:
                raise SpecMismatch(f"gate on {sites} is not a unitary of the right size")
            gates.append((sites, m))
            span = max(span, _gate_span(chain, sites))
        bound += span
        clean.append(tuple(gates))
    auto = Automorphism(chain, CircuitModel(chain, tuple(clean)), Locality.exact(bound))
    radius = bound
    cert: dict[str, object] = {"bound": bound}
    if certify:
        for r in range(bound, -1, -1):
            ok, res = verify_radius(auto, r)
            if not ok:
                break
            radius = r
            cert = {"bound": bound, "radius": r, "residual": res}
    auto.locality = Locality.exact(radius)
    return Qca(auto, radius, 1, cert)


def brickwork_layers(chain: ChainSpec, gates: Sequence[np.ndarray | None], offsets: Sequence[int] | None = None, rng: np.random.Generator | None = None) -> list[list[tuple[tuple[int, ...], np.ndarray]]]:
    """Layers of two-site gates on pairs ``(2n + o, 2n + 1 + o)``.

    ``gates[i]`` is used on every pair of layer ``i``; ``None`` draws a fresh
    Haar-random gate per pair from ``rng``.  Offsets alternate 0, 1 by default."""
    n = chain.num_sites
    offs = list(offsets) if offsets is not None else [i % 2 for i in range(len(gates))]
    layers = []
    for g, o in zip(gates, offs):
        layer = []
        for s in range(o, n, 2):
            if s + 1 >= n and not chain.periodic:
                break
            if chain.periodic and s + 1 >= n and n % 2:
                break
            sites = (s, (s + 1) % n)
            d = chain.dim_of(sites)
            if g is None:
                if rng is None:
                    raise ValueError("random gates need a generator")
                mat = random_unitary(d, rng)
            else:
                mat = np.asarray(g, dtype=complex)
            if sites[1] < sites[0]:
                # the gate acts on (s, s+1) in chain order; reorder to sorted sites
                dims = chain.dims_of(sites)
                mat = permute_operator(mat, dims, [1, 0])
            layer.append((tuple(sorted(sites)), mat))
        layers.append(layer)
    return layers


def random_circuit(chain: ChainSpec, rng: np.random.Generator, layers: int = 2) -> Qca:
    """Staggered layers of Haar-random two-site gates."""
    return circuit_qca(chain, brickwork_layers(chain, [None] * layers, rng=rng))


def identity_qca(chain: ChainSpec) -> Qca:
    return Qca(Automorphism.identity(chain), 0)


def verify_radius(q: Automorphism | Qca, r: int, max_len: int | None = None, tol: float = 1e-9) -> tuple[bool, float]:
    """Check ``alpha(A_X)`` inside ``A_{B(X,r)}`` over a sweep of intervals.

    The images of single-site generators are tested against every interval
    containing the site; since ``alpha`` is multiplicative this certifies the
    whole interval algebras."""
    a = q.auto if isinstance(q, Qca) else q
    chain = a.chain
    n = chain.num_sites
    max_len = max_len or max(1, min(n // 2, 4))
    images: dict[int, list[ChainOperator]] = {}
    for s in range(n):
        ims = []
        for h in hermitian_basis(chain.local_dims[s])[1:]:
            ims.append(a.apply(ChainOperator.on(chain, [s], h)))
        images[s] = ims
    worst = 0.0
    starts = range(n) if chain.periodic else range(n)
    for length in range(1, max_len + 1):
        for start in starts:
            if not chain.periodic and start + length > n:
                continue
            x = chain.interval(start, length)
            ball = chain.ball(x, r)
            for s in x:
                for im in images[s]:
                    worst = max(worst, dist_to_region(im, ball)[1])
    return worst <= tol, worst


def compose(q1: Qca, q2: Qca) -> Qca:
    """``q1 o q2`` (apply ``q2`` first)."""
    if q1.chain != q2.chain:
        raise SpecMismatch("compose needs equal chains")
    auto = q1.auto.after(q2.auto)
    return Qca(auto, q1.radius + q2.radius, q1.blocking)


def tensor(q1: Qca, q2: Qca) -> Qca:
    """Sitewise tensor product; local dimensions multiply."""
    c1, c2 = q1.chain, q2.chain
    if c1.num_sites != c2.num_sites or c1.boundary != c2.boundary:
        raise SpecMismatch("tensor needs chains of equal length and boundary")
    chain = ChainSpec(c1.num_sites, tuple(a * b for a, b in zip(c1.local_dims, c2.local_dims)), c1.boundary)
    r = max(q1.radius, q2.radius)
    auto = Automorphism(chain, TensorModel(chain, q1.auto, q2.auto), Locality.exact(r))
    return Qca(auto, r, q1.blocking)


def block(q: Qca, g: int) -> Qca:
    chain = q.chain.block(g)
    r = -(-q.radius // g)
    auto = Automorphism(chain, BlockedModel(chain, q.auto, g), Locality.exact(r))
    return Qca(auto, r, q.blocking * g)


# ---------------------------------------------------------------------------
# support algebras


def pair_sites(chain: ChainSpec, n: int, kind: str, offset: int = 0) -> tuple[int, ...]:
    m = chain.num_sites
    start = 2 * n + offset if kind == "B" else 2 * n - 1 + offset
    if chain.periodic:
        return (start % m, (start + 1) % m)
    if start < 0 or start + 1 >= m:
        raise OpenChainUnsupported(f"pair {kind}_{n} leaves the open chain")
    return (start, start + 1)


def _split_positions(sites: Sequence[int], first: Sequence[int]) -> list[int]:
    pos = {s: i for i, s in enumerate(sites)}
    return [pos[s] for s in first] + [pos[s] for s in sites if s not in set(first)]


def pair_map(a: Automorphism, src: Sequence[int], dst: Sequence[int], window: Sequence[int]) -> tuple[np.ndarray, float]:
    """Matrix of ``b -> E_dst(alpha(b))`` for ``b`` on ``src`` and its locality defect.

    Returns ``T`` of shape ``(d_dst^2, d_src^2)`` acting on row-major vectorized
    operators (``src``/``dst`` in the given order), plus the largest relative
    distance of ``alpha(b)`` from ``A_window`` over two random ``b``."""
    chain = a.chain
    ys, v = a.light_cone(src)
    window = sorted(window)
    ys_all = tuple(sorted(set(ys) | set(window) | set(dst)))
    v = embed_matrix(v, ys, ys_all, chain)
    dims = chain.dims_of(ys_all)
    d_src, d_dst = chain.dim_of(src), chain.dim_of(dst)
    # rows of V: (src, rest); columns: (dst, rest)
    n_all = v.shape[0]
    idx_r = np.arange(n_all).reshape(dims).transpose(_split_positions(ys_all, src)).ravel()
    idx_c = np.arange(n_all).reshape(dims).transpose(_split_positions(ys_all, dst)).ravel()
    w = v[np.ix_(idx_r, idx_c)].reshape(d_src, -1, d_dst, n_all // d_dst)
    d_rest = w.shape[3]
    t = np.tensordot(w.conj(), w, axes=([1, 3], [1, 3]))  # (b, c, b', c')
    t = t.transpose(1, 3, 0, 2).reshape(d_dst * d_dst, d_src * d_src) / d_rest
    defect = 0.0
    if not set(ys) <= set(window):
        rng = np.random.default_rng(11)
        for _ in range(2):
            b = rng.normal(size=(d_src, d_src)) + 1j * rng.normal(size=(d_src, d_src))
            img = a.apply(ChainOperator.on(chain, sorted(src), _reorder_local(b, chain, src)))
            defect = max(defect, dist_to_region(img, Region(tuple(window)))[1])
    return t, defect


def _reorder_local(mat: np.ndarray, chain: ChainSpec, sites: Sequence[int]) -> np.ndarray:
    """Matrix given in the order of ``sites`` rewritten in sorted order."""
    order = list(sites)
    srt = sorted(order)
    if order == srt:
        return mat
    return permute_operator(mat, chain.dims_of(order), [order.index(s) for s in srt])


@dataclass
class SupportAlgebras:
    n: int
    L: OperatorAlgebra
    R: OperatorAlgebra
    offset: int = 0
    locality_defect: float = 0.0


def _range_algebra(t: np.ndarray, d: int, chain: ChainSpec, sites: tuple[int, ...], seed: int) -> OperatorAlgebra:
    """Algebra generated by the range of ``T`` (operators on ``sites`` in the given order)."""
    # column-pivoted QR reveals the rank at a fraction of the cost of an SVD
    u, tri, _ = sla.qr(t, mode="economic", pivoting=True)
    diag = np.abs(np.diag(tri))
    r = int(np.sum(diag > 1e-9 * diag[0]))
    srt = tuple(sorted(sites))
    if r == d * d:
        return OperatorAlgebra.region(chain, srt)
    if r == 1:
        return OperatorAlgebra(chain, Region(srt), np.eye(d, dtype=complex)[None])
    mats = (u[:, :r].T * math.sqrt(d)).reshape(r, d, d)
    mats = np.array([_reorder_local(m, chain, sites) for m in mats])
    closed = closure_of_span(mats, np.random.default_rng(seed))
    return OperatorAlgebra(chain, Region(srt), closed)


def check_nearest_neighbour(q: Qca | Automorphism, offset: int = 0) -> float:
    """Largest locality defect of ``alpha(B_n)`` against ``C_n (x) C_{n+1}`` over all ``n``."""
    a = q.auto if isinstance(q, Qca) else q
    chain = a.chain
    worst = 0.0
    for n in range(chain.num_sites // 2):
        b = pair_sites(chain, n, "B", offset)
        c0, c1 = pair_sites(chain, n, "C", offset), pair_sites(chain, n + 1, "C", offset)
        _, d = pair_map(a, b, c0, c0 + c1)
        worst = max(worst, d)
    return worst


def support_algebras(q: Qca | Automorphism, n: int, offset: int = 0, seed: int = 0, tol: float = 1e-9) -> SupportAlgebras:
    """``L_n`` (inside ``C_n``, from ``alpha(B_n)``) and ``R_{n-1}`` (inside ``C_n``, from ``alpha(B_{n-1})``)."""
    a = q.auto if isinstance(q, Qca) else q
    chain = a.chain
    m = chain.num_sites
    if chain.periodic and m < 8:
        raise FactorizationFailure(f"a ring needs at least 8 sites after blocking, got {m}")
    if m % 2:
        raise FactorizationFailure("support algebras need an even number of sites")
    bn = pair_sites(chain, n, "B", offset)
    bp = pair_sites(chain, n - 1, "B", offset)
    cn = pair_sites(chain, n, "C", offset)
    cnext = pair_sites(chain, n + 1, "C", offset)
    cprev = pair_sites(chain, n - 1, "C", offset)
    t_l, d1 = pair_map(a, bn, cn, cn + cnext)
    t_r, d2 = pair_map(a, bp, cn, cprev + cn)
    defect = max(d1, d2)
    if defect > tol:
        raise FactorizationFailure(f"alpha(B) leaves the neighbouring C pairs (defect {defect:.2e})")
    d_c = chain.dim_of(cn)
    big_l = _range_algebra(t_l, d_c, chain, cn, seed)
    big_r = _range_algebra(t_r, d_c, chain, cn, seed + 1)
    if big_l.dim * big_r.dim != d_c * d_c:
        raise FactorizationFailure(f"dim L * dim R = {big_l.dim} * {big_r.dim} differs from {d_c * d_c}")
    rng = np.random.default_rng(seed)
    x, y = big_l.random_element(rng), big_r.random_element(rng)
    if matrix_norm(x @ y - y @ x) > 1e-8 * matrix_norm(x) * matrix_norm(y):
        raise FactorizationFailure("L and R do not commute")
    return SupportAlgebras(n, big_l, big_r, offset, defect)


def find_offset(q: Qca | Automorphism, tol: float = 1e-9) -> int:
    """Pairing offset (0 or 1) for which the map is nearest neighbour."""
    for off in (0, 1):
        if check_nearest_neighbour(q, off) <= tol:
            return off
    raise FactorizationFailure("map is not nearest neighbour for either pairing; block it first")


def index_dimension(q: Qca | Automorphism, offset: int | None = None, positions: Sequence[int] | None = None, seed: int = 0) -> IndexValue:
    """``(log dim L_n - log dim A_{2n}) / 2``, checked to agree across positions."""
    a = q.auto if isinstance(q, Qca) else q
    chain = a.chain
    if not chain.periodic:
        return round_index(0.0, chain.primes)
    off = find_offset(a) if offset is None else offset
    pos = range(chain.num_sites // 2) if positions is None else positions
    raws = []
    for n in pos:
        sa = support_algebras(a, n, off, seed)
        site = pair_sites(chain, n, "B", off)[0]
        d = chain.local_dims[site]
        raws.append(0.5 * (math.log(sa.L.dim) - math.log(d * d)))
    spread = max(raws) - min(raws)
    if spread > 1e-9:
        raise NumericalFailure(f"index depends on position (spread {spread:.2e})")
    return round_index(float(np.mean(raws)), chain.primes)


# ---------------------------------------------------------------------------
# maps given block by block


class BlockImageModel:
    """Light-cone model of a map specified by its values on the pairs ``B_n``.

    ``images[n][i]`` is the image of the matrix unit ``e_{i0}`` of ``B_n``
    (pair sites in sorted order) as an operator on ``C_n`` and ``C_{n+1}``.
    The light cone of a union of pairs ``X`` is read off from matrix units:
    the columns ``alpha(e_{i0}) xi_k``, with ``xi_k`` spanning the range of
    ``alpha(e_{00})``, form ``V^dag`` in the order ``(X, rest)``."""

    def __init__(self, chain: ChainSpec, offset: int, images: Sequence[Sequence[ChainOperator]]):
        self.chain = chain
        self.offset = offset
        self.images = [list(im) for im in images]
        self.blocks = [tuple(sorted(pair_sites(chain, n, "B", offset))) for n in range(chain.num_sites // 2)]
        self._owner = {s: n for n, b in enumerate(self.blocks) for s in b}

    def light_cone(self, sites: tuple[int, ...]) -> tuple[tuple[int, ...], np.ndarray]:
        chain = self.chain
        ns = sorted({self._owner[s] for s in sites})
        if not ns:
            return (), np.eye(1, dtype=complex)
        ys = tuple(sorted(set().union(*(im.support.sites for n in ns for im in self.images[n]))))
        dims = chain.dims_of(ys)
        d_y = math.prod(dims)
        check_dim(d_y, "block light cone")
        mats = [[embed_matrix(im.matrix, im.support.sites, ys, chain) for im in self.images[n]] for n in ns]
        proj = np.eye(d_y, dtype=complex)
        for m in mats:
            proj = proj @ m[0]
        w, vecs = np.linalg.eigh((proj + proj.conj().T) / 2)
        xi = vecs[:, w > 0.5]
        x_sites = [s for n in ns for s in self.blocks[n]]
        d_x = chain.dim_of(x_sites)
        if xi.shape[1] * d_x != d_y:
            raise NumericalFailure("block images do not form a homomorphism")
        cols = []
        for idx in itertools.product(*(range(len(m)) for m in mats)):
            c = xi
            for m, i in zip(mats, idx):
                c = m[i] @ c
            cols.append(c)
        w_dag = np.concatenate(cols, axis=1)
        pos = {s: i for i, s in enumerate(ys)}
        order = [pos[s] for s in x_sites] + [pos[s] for s in ys if s not in set(x_sites)]
        r = reorder_isometry(dims, order)
        return ys, r.conj().T @ w_dag.conj().T

    def inverse(self) -> GlobalModel:
        _, v = self.light_cone(tuple(range(self.chain.num_sites)))
        return GlobalModel(self.chain, v.conj().T)


def block_images(a: Automorphism, offset: int, theta=None) -> list[list[ChainOperator]]:
    """Images of the units ``e_{i0}`` of every ``B_n`` under ``a`` (or under ``theta(n, op)``)."""
    chain = a.chain
    out = []
    for n in range(chain.num_sites // 2):
        b = tuple(sorted(pair_sites(chain, n, "B", offset)))
        d = chain.dim_of(b)
        ims = []
        for i in range(d):
            e = np.zeros((d, d), dtype=complex)
            e[i, 0] = 1.0
            op = a.apply(ChainOperator.on(chain, b, e)) if theta is None else theta(n, ChainOperator.on(chain, b, e))
            ims.append(op)
        out.append(ims)
    return out


def single_site_residual(a1: Automorphism, a2: Automorphism, sites: Sequence[int] | None = None) -> float:
    """``max ||a1(x) - a2(x)||`` over an orthonormal single-site basis."""
    chain = a1.chain
    worst = 0.0
    for s in range(chain.num_sites) if sites is None else sites:
        for h in hermitian_basis(chain.local_dims[s])[1:]:
            x = ChainOperator.on(chain, [s], h)
            worst = max(worst, (a1.apply(x) - a2.apply(x)).norm())
    return worst


# ---------------------------------------------------------------------------
# circuit form of index-zero maps


@dataclass
class Decomposition:
    """``alpha(x) = v^dag u^dag x u v`` with ``v`` on the pairs ``C_n`` and ``u`` on ``B_n``."""

    chain: ChainSpec
    offset: int
    v_gates: tuple[tuple[tuple[int, ...], np.ndarray], ...]
    u_gates: tuple[tuple[tuple[int, ...], np.ndarray], ...]
    residual: float
    v_norms: tuple[float, ...]
    u_norms: tuple[float, ...]
    routes: tuple[str, ...]

    @property
    def layers(self) -> tuple[tuple[tuple[tuple[int, ...], np.ndarray], ...], ...]:
        return (self.v_gates, self.u_gates)

    def as_qca(self, certify: bool = False) -> Qca:
        return circuit_qca(self.chain, self.layers, certify=certify)

    def as_dict(self) -> dict[str, object]:
        return {
            "offset": self.offset,
            "residual": self.residual,
            "v_norms": list(self.v_norms),
            "u_norms": list(self.u_norms),
            "routes": list(self.routes),
        }


def _target_position(chain: ChainSpec, cn: tuple[int, ...]) -> int:
    return sorted(cn).index(cn[1])


def _aligning_unitary(alg: OperatorAlgebra, chain: ChainSpec, cn: tuple[int, ...], seed: int) -> tuple[np.ndarray, str]:
    """``v`` on ``C_n`` (sorted order) with ``v L v^dag`` equal to the algebra of site ``cn[1]``."""
    target = cn[1]
    if near_inclusion_eps(alg, Region((target,))) <= ROTATE_MAX_EPS:
        try:
            rot = rotate_into(alg, Region((target,)), seed=seed)
            return fix_phase(rot.unitary.matrix.conj().T), "rotation"
        except NumericalFailure:
            pass
    st = alg.structure
    if len(st.blocks) != 1:
        raise NonzeroIndex("support algebra is not a factor", float("nan"))
    f = st.blocks[0].frame
    dims = chain.dims_of(sorted(cn))
    t = _target_position(chain, cn)
    q = reorder_isometry(dims, [t, 1 - t])
    return fix_phase(q.conj().T @ f), "matrix units"


def decompose_index_zero(q: Qca | Automorphism, offset: int | None = None, seed: int = 0, tol: float = 1e-7) -> Decomposition:
    """Two block-partitioned layers reproducing an index-zero nearest-neighbour map."""
    a = q.auto if isinstance(q, Qca) else q
    chain = a.chain
    if not chain.periodic:
        raise OpenChainUnsupported("the decomposition works on rings")
    off = find_offset(a) if offset is None else offset
    ind = index_dimension(a, off, seed=seed)
    if ind.lattice and any(k for _, k in ind.lattice):
        raise NonzeroIndex(f"index {ind.rounded:.6f} is not zero", ind.rounded)
    m = chain.num_sites // 2
    v_gates, v_norms, routes = [], [], []
    v_ops = []
    for n in range(m):
        sa = support_algebras(a, n, off, seed)
        cn = pair_sites(chain, n, "C", off)
        v, route = _aligning_unitary(sa.L, chain, cn, seed)
        v_gates.append((tuple(sorted(cn)), v))
        v_ops.append(ChainOperator.on(chain, sorted(cn), v))
        v_norms.append(matrix_norm(v - np.eye(v.shape[0])))
        routes.append(route)

    u_gates, u_norms = [], []
    for n in range(m):
        bn = tuple(sorted(pair_sites(chain, n, "B", off)))
        vv = v_ops[n] @ v_ops[(n + 1) % m]
        b_alg = OperatorAlgebra.region(chain, bn, bn)

        def theta(x: np.ndarray, vv: ChainOperator = vv, bn: tuple[int, ...] = bn) -> np.ndarray:
            img = a.apply(ChainOperator.on(chain, bn, x))
            y = vv @ img @ vv.dag()
            red = conditional_expectation(y, Region(bn))
            return red.embed(Region(bn)).matrix

        u = inner_unitary_of_automorphism(b_alg, theta, seed=seed).matrix
        u = fix_phase(u)
        u_gates.append((bn, u))
        u_norms.append(matrix_norm(u - np.eye(u.shape[0])))

    circ = CircuitModel(chain, (tuple(v_gates), tuple(u_gates)))
    rebuilt = Automorphism(chain, circ, Locality.exact(2))
    res = single_site_residual(a, rebuilt)
    if res > tol:
        raise NumericalFailure(f"reconstruction residual {res:.2e} exceeds {tol:.0e}")
    return Decomposition(chain, off, tuple(v_gates), tuple(u_gates), res, tuple(v_norms), tuple(u_norms), tuple(routes))


# ---------------------------------------------------------------------------
# blending


@dataclass
class BlendResult:
    auto: Automorphism
    offset: int
    cut_blocks: tuple[int, int]
    collar: tuple[int, ...]
    left_residual: float
    right_residual: float
    matching_norms: tuple[float, float]

    def as_dict(self) -> dict[str, object]:
        return {
            "offset": self.offset,
            "cut_blocks": list(self.cut_blocks),
            "collar": list(self.collar),
            "left_residual": self.left_residual,
            "right_residual": self.right_residual,
            "matching_norms": list(self.matching_norms),
        }


def _common_offset(a1: Automorphism, a2: Automorphism, tol: float = 1e-9) -> int:
    for off in (0, 1):
        if check_nearest_neighbour(a1, off) <= tol and check_nearest_neighbour(a2, off) <= tol:
            return off
    raise FactorizationFailure("the two maps share no nearest-neighbour pairing")


def _matching_unitary(l_from: OperatorAlgebra, l_to: OperatorAlgebra) -> np.ndarray:
    """``w`` with ``w l_from w^dag = l_to`` (and the commutants matched too)."""
    f_from = l_from.structure.blocks[0].frame
    f_to = l_to.structure.blocks[0].frame
    w = f_to.conj().T @ f_from
    if matrix_norm(w - np.eye(w.shape[0])) < 1e-12:
        return np.eye(w.shape[0], dtype=complex)
    return w


def blend(q1: Qca | Automorphism, q2: Qca | Automorphism, cut: int, seed: int = 0, tol: float = 1e-8) -> BlendResult:
    """Map equal to ``q1`` left of ``cut`` and to ``q2`` right of it.

    On a ring the two regions meet twice: at the pair containing ``cut`` and
    half a ring further on.  Each interface is a pair ``C`` where the left
    factor of one map is matched to the other's by a unitary on that pair."""
    a1 = q1.auto if isinstance(q1, Qca) else q1
    a2 = q2.auto if isinstance(q2, Qca) else q2
    chain = a1.chain
    if a2.chain != chain:
        raise SpecMismatch("blend needs equal chains")
    if not chain.periodic:
        raise OpenChainUnsupported("blending is implemented on rings")
    off = _common_offset(a1, a2)
    i1 = index_dimension(a1, off, seed=seed)
    i2 = index_dimension(a2, off, seed=seed)
    if i1.lattice != i2.lattice:
        raise IndexMismatch(f"indices differ: {i1.rounded:.6f} vs {i2.rounded:.6f}")
    m = chain.num_sites // 2
    n0 = ((cut - off + 1) // 2) % m
    n1 = (n0 + m // 2) % m
    right = {(n0 + j) % m for j in range(m // 2)}
    sa1 = {n: support_algebras(a1, n, off, seed) for n in (n0, n1)}
    sa2 = {n: support_algebras(a2, n, off, seed) for n in (n0, n1)}
    c0 = tuple(sorted(pair_sites(chain, n0, "C", off)))
    c1 = tuple(sorted(pair_sites(chain, n1, "C", off)))
    # q2 blocks are matched onto q1 at the first interface, q1 onto q2 at the second
    w0 = ChainOperator.on(chain, c0, _matching_unitary(sa2[n0].L, sa1[n0].L))
    w1 = ChainOperator.on(chain, c1, _matching_unitary(sa1[n1].L, sa2[n1].L))

    def theta(n: int, x: ChainOperator) -> ChainOperator:
        if n in right:
            return w0 @ a2.apply(x) @ w0.dag()
        return w1 @ a1.apply(x) @ w1.dag()

    model = BlockImageModel(chain, off, block_images(a1, off, theta))
    r = max(a1.locality.radius or 0, a2.locality.radius or 0) + 2
    auto = Automorphism(chain, model, Locality.exact(r))
    collar = sorted({(n0 - 1) % m, n0, (n1 - 1) % m, n1})
    blocks = model.blocks
    left_sites = [s for n in range(m) if n not in right and n not in collar for s in blocks[n]]
    right_sites = [s for n in right if n not in collar for s in blocks[n]]
    lres = single_site_residual(auto, a1, left_sites)
    rres = single_site_residual(auto, a2, right_sites)
    if max(lres, rres) > tol:
        raise NumericalFailure(f"blend disagrees outside the collar ({max(lres, rres):.2e})")
    norms = (matrix_norm(w0.matrix - np.eye(w0.matrix.shape[0])), matrix_norm(w1.matrix - np.eye(w1.matrix.shape[0])))
    return BlendResult(auto, off, (n0, n1), tuple(collar), lres, rres, norms)


# ---------------------------------------------------------------------------
# robustness of the index under small perturbations


ROBUST_EPS = 1.0 / 192
WITNESS_CONSTANT = 36.0


@dataclass
class RobustnessRow:
    strength: float
    local_error: float
    index_before: float
    index_after: float | None
    unchanged: bool
    witness_norm: float | None
    witness_bound: float
    in_regime: bool
    status: str

    def as_dict(self) -> dict[str, object]:
        return dict(self.__dict__)


def _pair_generators(chain: ChainSpec, kind: str, offset: int, rng: np.random.Generator) -> list[tuple[tuple[int, ...], np.ndarray]]:
    out = []
    for n in range(chain.num_sites // 2):
        sites = tuple(sorted(pair_sites(chain, n, kind, offset)))
        h = random_hermitian(chain.dim_of(sites), rng)
        out.append((sites, h / matrix_norm(h)))
    return out


def _exp_gates(gens: Sequence[tuple[tuple[int, ...], np.ndarray]], t: float) -> list[tuple[tuple[int, ...], np.ndarray]]:
    return [(sites, sla.expm(1j * t * h)) for sites, h in gens]


def _local_error(a: Automorphism, off: int, gb: Sequence, gc: Sequence) -> float:
    """Upper bound on ``sup ||alpha_2(x) - alpha(x)||`` over unit ``x`` in one pair ``B_k``.

    On ``B_k`` the perturbed map is ``Ad(g)`` after ``alpha`` with
    ``g = alpha(w_B) w_C w_C'``; the factor on ``C_{k+1}`` drops out when
    ``alpha(B_k)`` stays inside ``C_k``, and then the value is exact."""
    chain = a.chain
    m = chain.num_sites // 2
    err = 0.0
    for k in range(m):
        sites_b, w_b = gb[k]
        g = a.apply(ChainOperator.on(chain, sites_b, w_b)) @ ChainOperator.on(chain, *gc[k])
        ck = pair_sites(chain, k, "C", off)
        _, spill = pair_map(a, pair_sites(chain, k, "B", off), ck, ck)
        if spill > 1e-9:
            g = g @ ChainOperator.on(chain, *gc[(k + 1) % m])
        err = max(err, conjugation_distance(g.matrix, np.eye(g.matrix.shape[0])))
    return float(err)


def robustness_experiment(
    q: Qca | Automorphism,
    strengths: Sequence[float],
    seed: int = 0,
    n: int = 0,
    target: str = "strength",
) -> list[RobustnessRow]:
    """Perturb ``q`` by ``e^{i t K}`` gates on both pairings and recompute the index.

    The perturbed map is ``Ad(W_C) o q o Ad(W_B)`` with random unit-norm
    ``K``.  With ``target="strength"`` each sweep value is the gate strength
    ``t``; with ``target="error"`` it is the local error, and ``t`` is found
    by bisection.  The witness is the rotation of the perturbed ``L_n`` onto
    the frame of the unperturbed one."""
    if target not in ("strength", "error"):
        raise ValueError("target must be 'strength' or 'error'")
    a = q.auto if isinstance(q, Qca) else q
    chain = a.chain
    off = find_offset(a)
    base = index_dimension(a, off, seed=seed)
    frame = support_algebras(a, n, off, seed).L.structure.blocks[0]
    rows = []
    for idx, eps in enumerate(strengths):
        rng = np.random.default_rng([seed, idx])
        kb = _pair_generators(chain, "B", off, rng)
        kc = _pair_generators(chain, "C", off, rng)
        t = float(eps)
        if target == "error" and eps > 0:
            lo, hi = 0.0, float(eps)
            while _local_error(a, off, _exp_gates(kb, hi), _exp_gates(kc, hi)) < eps and hi < math.pi:
                hi *= 2
            for _ in range(50):
                mid = 0.5 * (lo + hi)
                if _local_error(a, off, _exp_gates(kb, mid), _exp_gates(kc, mid)) > eps:
                    hi = mid
                else:
                    lo = mid
            t = lo
        gb, gc = _exp_gates(kb, t), _exp_gates(kc, t)
        wb = Automorphism(chain, CircuitModel(chain, (tuple(gb),)), Locality.exact(1))
        wc = Automorphism(chain, CircuitModel(chain, (tuple(gc),)), Locality.exact(1))
        pert = wc.after(a.after(wb))
        rows.append(_robust_row(a, pert, off, n, t, _local_error(a, off, gb, gc), base, frame, seed))
    return rows


def _robust_row(
    a: Automorphism,
    pert: Automorphism,
    off: int,
    n: int,
    strength: float,
    err: float,
    base: IndexValue,
    frame: Block,
    seed: int,
) -> RobustnessRow:
    bound = WITNESS_CONSTANT * err
    in_regime = bool(err <= ROBUST_EPS)
    try:
        after = index_dimension(pert, off, seed=seed)
        sa = support_algebras(pert, n, off, seed)
    except FactorizationFailure as exc:
        return RobustnessRow(strength, err, base.rounded, None, False, None, bound, in_regime, f"factorization failure: {exc}")
    unchanged = after.lattice == base.lattice
    if frame.multiplicity == 1:
        # L_n is the whole pair algebra for both maps, so the witness is trivial
        return RobustnessRow(strength, err, base.rounded, after.rounded, unchanged, 0.0, bound, in_regime, "ok" if in_regime else "outside regime")
    try:
        rot = rotate_into(sa.L, Region(()), frame=(frame.frame, frame.k), seed=seed)
        wn: float | None = float(matrix_norm(rot.unitary.matrix - np.eye(rot.unitary.matrix.shape[0])))
        status = "ok" if in_regime else "outside regime"
    except NumericalFailure as exc:
        wn = None
        status = f"no witness: {exc}"
    return RobustnessRow(strength, err, base.rounded, after.rounded, unchanged, wn, bound, in_regime, status)
