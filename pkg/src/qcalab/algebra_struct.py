"""Finite-dimensional *-algebras inside a region algebra.

An :class:`OperatorAlgebra` stores an orthonormal linear basis (normalized
Hilbert-Schmidt product) of matrices acting on an ambient region.  Its
Wedderburn structure is represented per simple block by an isometry
``F`` of shape ``(k*m, n)`` with matrix units ``e_ij = F^dag (E_ij (x) 1_m) F``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg as sla

from .chain_algebra import (
    ChainOperator,
    ChainSpec,
    Region,
    check_dim,
    dist_to_region,
    embed_matrix,
    matrix_norm,
    random_hermitian,
    random_unitary,
)
from .errors import DegenerateSpectrum, NotAnAutomorphism, RegionMismatch

RANK_TOL = 1e-9


def orthonormal_span(mats: np.ndarray, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal basis (normalized HS) of the span of a stack of n x n matrices."""
    k, n, _ = mats.shape
    if k == 0:
        return mats
    vecs = mats.reshape(k, n * n)
    _, s, vh = np.linalg.svd(vecs, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((0, n, n), dtype=complex)
    r = int(np.sum(s > rank_tol * s[0]))
    return (vh[:r] * math.sqrt(n)).reshape(r, n, n)


@dataclass(frozen=True)
class Block:
    """One simple summand ``M_k (x) 1_m`` of an algebra."""

    k: int
    multiplicity: int
    frame: np.ndarray = field(repr=False)

    @property
    def projection(self) -> np.ndarray:
        return self.frame.conj().T @ self.frame

    def unit(self, i: int, j: int) -> np.ndarray:
        m = self.multiplicity
        f = self.frame
        return f[i * m:(i + 1) * m].conj().T @ f[j * m:(j + 1) * m]


@dataclass(frozen=True)
class WedderburnStructure:
    center: np.ndarray = field(repr=False)
    blocks: tuple[Block, ...]

    @property
    def factor_sizes(self) -> list[int]:
        return [b.k for b in self.blocks]

    @property
    def multiplicities(self) -> list[int]:
        return [b.multiplicity for b in self.blocks]


def reorder_isometry(dims: Sequence[int], order: Sequence[int]) -> np.ndarray:
    """Permutation matrix taking tensor factors into ``order`` (new factor i is old factor order[i])."""
    n = math.prod(dims)
    eye = np.eye(n, dtype=complex).reshape(tuple(dims) + (n,))
    return eye.transpose(list(order) + [len(dims)]).reshape(n, n)


class OperatorAlgebra:
    """Unital *-subalgebra of the matrices on ``ambient``.

    The linear basis is built lazily when only the Wedderburn frame is known,
    as for region algebras, so large ambients stay cheap."""

    def __init__(
        self,
        chain: ChainSpec,
        ambient: Region,
        basis: np.ndarray | None = None,
        structure: WedderburnStructure | None = None,
    ):
        if basis is None and structure is None:
            raise ValueError("need a basis or a structure")
        self.chain = chain
        self.ambient = ambient
        self._basis = None if basis is None else np.asarray(basis, dtype=complex)
        self._structure = structure

    def __repr__(self) -> str:
        return f"OperatorAlgebra(ambient={self.ambient.sites}, dim={self.dim})"

    @property
    def basis(self) -> np.ndarray:
        if self._basis is None:
            check_dim(self.dim * self.n, "algebra basis")
            mats = []
            for b in self.structure.blocks:
                for i in range(b.k):
                    for j in range(b.k):
                        mats.append(b.unit(i, j))
            self._basis = orthonormal_span(np.array(mats))
        return self._basis

    @property
    def dim(self) -> int:
        if self._basis is not None:
            return self._basis.shape[0]
        return sum(b.k**2 for b in self.structure.blocks)

    @property
    def n(self) -> int:
        return self.chain.dim_of(self.ambient)

    @classmethod
    def region(cls, chain: ChainSpec, sites: Sequence[int], ambient: Sequence[int] | None = None) -> OperatorAlgebra:
        """Full algebra of a region, optionally embedded in a larger ambient."""
        sites = sorted(set(sites))
        amb = sorted(set(ambient)) if ambient is not None else sites
        if not set(sites) <= set(amb):
            raise RegionMismatch("region is not inside the ambient")
        pos = {s: i for i, s in enumerate(amb)}
        rest = [s for s in amb if s not in set(sites)]
        order = [pos[s] for s in sites] + [pos[s] for s in rest]
        frame = reorder_isometry(chain.dims_of(amb), order)
        k = chain.dim_of(sites)
        m = chain.dim_of(rest)
        center = np.eye(frame.shape[0], dtype=complex)[None]
        return cls(chain, Region(tuple(amb)), None, WedderburnStructure(center, (Block(k, m, frame),)))

    @classmethod
    def from_frame(cls, chain: ChainSpec, ambient: Region, k: int, frame: np.ndarray) -> OperatorAlgebra:
        """Factor ``F^dag (M_k (x) 1) F`` for a unitary or isometric frame ``F``."""
        m = frame.shape[0] // k
        center = (frame.conj().T @ frame)[None]
        return cls(chain, ambient, None, WedderburnStructure(center, (Block(k, m, frame),)))

    @classmethod
    def from_span(cls, chain: ChainSpec, ambient: Region, mats: np.ndarray) -> OperatorAlgebra:
        return cls(chain, ambient, orthonormal_span(np.asarray(mats, dtype=complex)))

    def commutant_factor(self) -> OperatorAlgebra:
        """Commutant of a factor, in the same frame (``1_k (x) M_m``)."""
        blocks = self.structure.blocks
        if len(blocks) != 1:
            raise NotAnAutomorphism("commutant frame needs a factor")
        b = blocks[0]
        k, m = b.k, b.multiplicity
        swap = reorder_isometry([k, m], [1, 0])
        center = self.structure.center
        return OperatorAlgebra(self.chain, self.ambient, None, WedderburnStructure(center, (Block(m, k, swap @ b.frame),)))

    def operators(self) -> list[ChainOperator]:
        return [ChainOperator(self.chain, self.ambient, b) for b in self.basis]

    def coefficients(self, y: np.ndarray) -> np.ndarray:
        return self.basis.reshape(self.dim, -1).conj() @ y.reshape(-1) / self.n

    def project(self, y: np.ndarray) -> np.ndarray:
        """Hilbert-Schmidt orthogonal projection onto the span."""
        c = self.coefficients(y)
        return np.tensordot(c, self.basis, axes=1)

    def span_residual(self, y: np.ndarray) -> float:
        """Relative HS distance of ``y`` from the span."""
        nrm = np.linalg.norm(y)
        return float(np.linalg.norm(y - self.project(y)) / nrm) if nrm else 0.0

    def random_element(self, rng: np.random.Generator, hermitian: bool = False) -> np.ndarray:
        c = rng.normal(size=self.dim) + 1j * rng.normal(size=self.dim)
        x = np.tensordot(c, self.basis, axes=1)
        return (x + x.conj().T) / 2 if hermitian else x

    def random_unitary(self, rng: np.random.Generator) -> np.ndarray:
        """Haar-random unitary of the algebra, blockwise with random central phases."""
        out = np.zeros((self.n, self.n), dtype=complex)
        for b in self.structure.blocks:
            ub = random_unitary(b.k, rng) * np.exp(2j * np.pi * rng.random())
            out += b.frame.conj().T @ np.kron(ub, np.eye(b.multiplicity)) @ b.frame
        return out

    def embedded(self, ambient: Sequence[int]) -> OperatorAlgebra:
        amb = tuple(sorted(ambient))
        mats = np.array([embed_matrix(b, self.ambient.sites, amb, self.chain) for b in self.basis])
        return OperatorAlgebra(self.chain, Region(amb), mats)

    def contains_residual(self, y: np.ndarray) -> float:
        """Relative operator-norm distance of ``y`` from its conditional expectation."""
        nrm = matrix_norm(y)
        return matrix_norm(y - self.expectation(y)) / nrm if nrm else 0.0

    def conjugated(self, u: np.ndarray) -> OperatorAlgebra:
        """The algebra ``u^dag A u``."""
        mats = None
        if self._basis is not None:
            mats = np.einsum("ji,kjl,lm->kim", u.conj(), self._basis, u)
        s = self._structure
        if s is not None:
            blocks = tuple(Block(b.k, b.multiplicity, b.frame @ u) for b in s.blocks)
            s = WedderburnStructure(np.einsum("ji,kjl,lm->kim", u.conj(), s.center, u), blocks)
        return OperatorAlgebra(self.chain, self.ambient, mats, s)

    @property
    def structure(self) -> WedderburnStructure:
        if self._structure is None:
            self._structure = wedderburn(self)
        return self._structure

    def expectation(self, y: np.ndarray) -> np.ndarray:
        """Trace-preserving conditional expectation onto the algebra."""
        out = np.zeros_like(y, dtype=complex)
        for b in self.structure.blocks:
            k, m = b.k, b.multiplicity
            z = (b.frame @ y @ b.frame.conj().T).reshape(k, m, k, m)
            red = np.einsum("iaja->ij", z) / m
            out += b.frame.conj().T @ np.kron(red, np.eye(m)) @ b.frame
        return out

    def commutant_expectation(self, y: np.ndarray) -> np.ndarray:
        """Exact twirl onto the commutant: ``sum_b (1/k_b) sum_ij e_ij y e_ji``."""
        out = np.zeros_like(y, dtype=complex)
        for b in self.structure.blocks:
            k, m = b.k, b.multiplicity
            z = (b.frame @ y @ b.frame.conj().T).reshape(k, m, k, m)
            red = np.einsum("iaib->ab", z) / k
            out += b.frame.conj().T @ np.kron(np.eye(k), red) @ b.frame
        return out


@dataclass(frozen=True)
class AlgebraIso:
    source: OperatorAlgebra
    target: OperatorAlgebra
    unitary_witness: ChainOperator

    def residual(self) -> float:
        """Largest span residual of ``u A u^dag`` against the target."""
        u = self.unitary_witness.matrix
        return max(self.target.span_residual(u @ b @ u.conj().T) for b in self.source.basis)


def _common_region(generators: Sequence[ChainOperator]) -> tuple[ChainSpec, Region]:
    chain = generators[0].chain
    reg = Region(())
    for g in generators:
        if g.chain != chain:
            raise RegionMismatch("generators live on different chains")
        reg = reg.union(g.support)
    return chain, reg


def closure_of_span(basis: np.ndarray, rng: np.random.Generator, rank_tol: float = RANK_TOL, max_iter: int = 200) -> np.ndarray:
    """Saturate a span to a unital *-algebra.

    Each step adds ``V r``, ``r V`` and ``V^dag`` for a random ``r`` in the
    current span.  For generic ``r`` the span is stable exactly when it is
    closed under products, so a step without growth ends the loop (after one
    confirming step with fresh randomness)."""
    n = basis.shape[1]
    eye = np.eye(n, dtype=complex)[None]
    v = orthonormal_span(np.concatenate([eye, basis, basis.conj().transpose(0, 2, 1)]), rank_tol)
    stable = 0
    for _ in range(max_iter):
        c = rng.normal(size=v.shape[0]) + 1j * rng.normal(size=v.shape[0])
        r = np.tensordot(c / np.linalg.norm(c), v, axes=1)
        cand = np.concatenate([v, v @ r, r @ v, v.conj().transpose(0, 2, 1)])
        new = orthonormal_span(cand, rank_tol)
        if new.shape[0] == v.shape[0]:
            stable += 1
            if stable >= 2:
                return v
        else:
            stable = 0
        v = new
    return v


def algebra_closure(generators: Sequence[ChainOperator], seed: int = 0) -> OperatorAlgebra:
    """Smallest unital *-algebra containing the generators."""
    if not generators:
        raise ValueError("need at least one generator")
    chain, reg = _common_region(generators)
    check_dim(chain.dim_of(reg), "closure ambient")
    mats = np.array([embed_matrix(g.matrix, g.support.sites, reg.sites, chain) for g in generators])
    rng = np.random.default_rng(seed)
    return OperatorAlgebra(chain, reg, closure_of_span(mats, rng))


def _clusters(vals: np.ndarray, tol: float) -> list[np.ndarray]:
    """Group sorted eigenvalues separated by gaps above ``tol``."""
    order = np.argsort(vals)
    groups = [[order[0]]]
    for a, b in zip(order, order[1:]):
        if vals[b] - vals[a] > tol:
            groups.append([b])
        else:
            groups[-1].append(b)
    return [np.array(g) for g in groups]


def center_basis(alg: OperatorAlgebra, rng: np.random.Generator, probes: int = 3) -> np.ndarray:
    """Basis of ``A & A'``: elements of A commuting with a few random elements of A."""
    k = alg.dim
    rows = []
    for _ in range(probes):
        g = alg.random_element(rng)
        comm = alg.basis @ g - g @ alg.basis
        rows.append(comm.reshape(k, -1).T)
    mat = np.concatenate(rows, axis=0)
    _, s, vh = np.linalg.svd(mat, full_matrices=True)
    scale = max(s[0] if s.size else 1.0, 1.0)
    rank = int(np.sum(s > 1e-8 * scale))
    null = vh[rank:].conj()
    return orthonormal_span(np.tensordot(null, alg.basis, axes=1))


def wedderburn(alg: OperatorAlgebra, seed: int = 0, retries: int = 5) -> WedderburnStructure:
    """Center, simple blocks and matrix units of a closed algebra."""
    rng = np.random.default_rng(seed)
    n = alg.n
    cen = center_basis(alg, rng)
    nc = cen.shape[0]
    for _ in range(retries):
        try:
            return WedderburnStructure(cen, tuple(_blocks(alg, cen, nc, rng)))
        except DegenerateSpectrum:
            continue
    raise DegenerateSpectrum(f"could not split an algebra of dimension {alg.dim} in M_{n}")


def _spectral_projections(h: np.ndarray, groups: int, rng_tol: float = 1e-7) -> list[np.ndarray]:
    vals, vecs = np.linalg.eigh(h)
    spread = max(vals[-1] - vals[0], 1.0)
    cl = _clusters(vals, rng_tol * spread)
    if len(cl) != groups:
        raise DegenerateSpectrum(f"expected {groups} eigenvalue clusters, found {len(cl)}")
    return [vecs[:, g] for g in cl]


def _blocks(alg: OperatorAlgebra, cen: np.ndarray, nc: int, rng: np.random.Generator) -> list[Block]:
    n = alg.n
    c = rng.normal(size=nc)
    z = np.tensordot(c, cen, axes=1)
    z = (z + z.conj().T) / 2
    vals, vecs = np.linalg.eigh(z)
    spread = max(vals[-1] - vals[0], 1e-300)
    cl = _clusters(vals, 1e-7 * max(spread, 1.0)) if nc > 1 else [np.arange(n)]
    if len(cl) != nc:
        raise DegenerateSpectrum("central element did not separate the blocks")
    blocks = []
    for g in cl:
        w = vecs[:, g]  # isometric embedding of the block's range
        sub = np.einsum("ji,kjl,lm->kim", w.conj(), alg.basis, w)
        sub = orthonormal_span(sub)
        dimb = sub.shape[0]
        kb = int(round(math.sqrt(dimb)))
        if kb * kb != dimb:
            raise DegenerateSpectrum(f"block dimension {dimb} is not a square")
        nb = w.shape[1]
        if nb % kb:
            raise DegenerateSpectrum("block size incompatible with factor size")
        mb = nb // kb
        if kb == 1:
            blocks.append(Block(1, mb, w.conj().T))
            continue
        c2 = rng.normal(size=dimb)
        h = np.tensordot(c2, sub, axes=1)
        h = (h + h.conj().T) / 2
        hv, hw = np.linalg.eigh(h)
        hcl = _clusters(hv, 1e-7 * max(hv[-1] - hv[0], 1.0))
        if len(hcl) != kb or any(len(x) != mb for x in hcl):
            raise DegenerateSpectrum("in-block element has degenerate spectrum")
        phi = hw[:, hcl[0]]  # orthonormal basis of range(e_11)
        q1 = phi @ phi.conj().T
        a = np.tensordot(rng.normal(size=dimb) + 1j * rng.normal(size=dimb), sub, axes=1)
        rows = [phi.conj().T]
        for i in range(1, kb):
            qi = hw[:, hcl[i]] @ hw[:, hcl[i]].conj().T
            x = qi @ a @ q1
            lam = np.real(np.trace(x.conj().T @ x)) / mb
            if lam < 1e-8 * np.linalg.norm(a) ** 2 / nb:
                raise DegenerateSpectrum("partial isometry too small")
            e_i1 = x / math.sqrt(lam)
            rows.append((e_i1 @ phi).conj().T)
        fb = np.concatenate(rows, axis=0) @ w.conj().T
        blocks.append(Block(kb, mb, fb))
    return blocks


def matrix_unit_residual(structure: WedderburnStructure) -> float:
    """Worst violation of ``e_ij e_kl = delta_jk e_il`` and ``sum_i e_ii = P``."""
    worst = 0.0
    for b in structure.blocks:
        k = b.k
        units = [[b.unit(i, j) for j in range(k)] for i in range(k)]
        for i in range(k):
            for j in range(k):
                for kk in range(k):
                    for ll in range(k):
                        want = units[i][ll] if j == kk else 0.0
                        worst = max(worst, float(np.max(np.abs(units[i][j] @ units[kk][ll] - want))))
        tot = sum(units[i][i] for i in range(k))
        worst = max(worst, float(np.max(np.abs(tot - b.projection))))
    return worst


def near_inclusion_eps(alg: OperatorAlgebra, region: Region) -> float:
    """Largest relative distance of a basis element from the region algebra."""
    worst = 0.0
    for op in alg.operators():
        worst = max(worst, dist_to_region(op, region)[1])
    return worst


def fix_phase(u: np.ndarray) -> np.ndarray:
    """Multiply by a phase making the trace real positive (largest entry if the trace vanishes)."""
    t = np.trace(u)
    if abs(t) < 1e-8 * u.shape[0]:
        idx = np.unravel_index(np.argmax(np.abs(u)), u.shape)
        t = u[idx]
    return u * (abs(t) / t) if abs(t) > 0 else u


def inner_unitary_of_automorphism(
    alg: OperatorAlgebra,
    theta: Callable[[np.ndarray], np.ndarray],
    seed: int = 0,
    tol: float = 1e-8,
) -> ChainOperator:
    """Unitary ``u`` with ``theta(a) = u^dag a u`` on a factor.

    ``u`` is the polar part of ``sum_i e_i1 g theta(e_1i)``, which intertwines
    ``a u = u theta(a)`` for any ``g``; the identity is tried first and random
    ``g`` afterwards if the sum is singular."""
    s = alg.structure
    if len(s.blocks) != 1:
        raise NotAnAutomorphism("inner extraction needs a factor")
    b = s.blocks[0]
    rng = np.random.default_rng(seed)
    for _ in range(2):
        a, c = alg.random_element(rng), alg.random_element(rng)
        scale = max(1.0, matrix_norm(a) * matrix_norm(c))
        if np.max(np.abs(theta(a @ c) - theta(a) @ theta(c))) > 1e-7 * scale:
            raise NotAnAutomorphism("map is not multiplicative on the factor")
        if np.max(np.abs(theta(a.conj().T) - theta(a).conj().T)) > 1e-7 * max(1.0, np.max(np.abs(a))):
            raise NotAnAutomorphism("map is not *-preserving on the factor")
    k = b.k
    units_i1 = [b.unit(i, 0) for i in range(k)]
    images_1i = [theta(b.unit(0, i)) for i in range(k)]
    n = alg.n
    for attempt in range(6):
        g = np.eye(n, dtype=complex) if attempt == 0 else rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        y = sum(units_i1[i] @ g @ images_1i[i] for i in range(k))
        sv = np.linalg.svd(y, compute_uv=False)
        if sv[-1] > 1e-6 * sv[0]:
            u, _ = sla.polar(y)
            u = fix_phase(u)
            res = max(float(np.max(np.abs(theta(e) - u.conj().T @ e @ u))) for e in alg.basis)
            if res > tol * max(1.0, n):
                raise NotAnAutomorphism(f"intertwining residual {res:.2e}")
            return ChainOperator(alg.chain, alg.ambient, u)
    raise NotAnAutomorphism("no invertible intertwiner found; ranges of the factor and its image differ")


def commuting_sample(alg: OperatorAlgebra, rng: np.random.Generator) -> np.ndarray:
    """Random element of the commutant of ``alg`` in its ambient."""
    return alg.commutant_expectation(random_hermitian(alg.n, rng))
