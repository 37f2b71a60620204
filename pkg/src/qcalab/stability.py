"""Stability constructions for near inclusions and near homomorphisms.

* :func:`make_inner` turns unital homomorphisms close to the identity into a
  single unitary conjugation, by exact twirls followed by a polar
  decomposition.
* :func:`rotate_into` turns a near inclusion into an exact one, through a
  dilation by a maximally entangled copy of the complement.
* :func:`conjugation_distance` is the exact distance between two
  conjugations, given by the smallest disk containing a spectrum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy import linalg as sla

from .algebra_struct import OperatorAlgebra, near_inclusion_eps, reorder_isometry
from .chain_algebra import (
    Automorphism,
    Boundary,
    ChainOperator,
    ChainSpec,
    Region,
    matrix_norm,
    permute_operator,
    random_hermitian,
    random_unitary,
    reduce_matrix,
)
from .errors import EpsilonTooLarge, NotAnAutomorphism, NumericalFailure, SingularY, SpectralGapFailure

Map = Callable[[np.ndarray], np.ndarray]

ROTATE_MAX_EPS = 1 / 64
SPECTRAL_CAP = 0.25


# ---------------------------------------------------------------------------
# near homomorphisms


def map_deviation(alg: OperatorAlgebra, phi: Map, rng: np.random.Generator, probes: int = 24) -> float:
    """Estimate ``sup ||phi(a) - a|| / ||a||`` from basis elements and random unitaries."""
    worst = 0.0
    cands: list[np.ndarray] = []
    if alg.dim * alg.n * alg.n <= 2**22:
        cands.extend(alg.basis)
    cands.extend(alg.random_unitary(rng) for _ in range(probes))
    for a in cands:
        na = matrix_norm(a)
        if na > 0:
            worst = max(worst, matrix_norm(phi(a) - a) / na)
    return worst


@dataclass
class NearHomomorphism:
    """Unital homomorphisms ``phi_i`` on mutually commuting source algebras."""

    sources: list[OperatorAlgebra]
    maps: list[Map]
    gammas: list[float]
    images: list[OperatorAlgebra] | None = None

    @property
    def eps(self) -> float:
        return float(sum(self.gammas))

    @classmethod
    def build(
        cls,
        sources: Sequence[OperatorAlgebra],
        maps: Sequence[Map],
        seed: int = 0,
        check: bool = True,
        tol: float = 1e-9,
    ) -> NearHomomorphism:
        if len(sources) != len(maps) or not sources:
            raise ValueError("need one map per source")
        rng = np.random.default_rng(seed)
        if check:
            for alg, phi in zip(sources, maps):
                eye = np.eye(alg.n, dtype=complex)
                if matrix_norm(phi(eye) - eye) > tol:
                    raise NotAnAutomorphism("map is not unital")
                a, b = alg.random_unitary(rng), alg.random_unitary(rng)
                if matrix_norm(phi(a @ b) - phi(a) @ phi(b)) > 1e3 * tol:
                    raise NotAnAutomorphism("map is not multiplicative")
                if matrix_norm(phi(a.conj().T) - phi(a).conj().T) > 1e3 * tol:
                    raise NotAnAutomorphism("map does not preserve adjoints")
            for i in range(len(sources)):
                for j in range(i + 1, len(sources)):
                    a, b = sources[i].random_unitary(rng), sources[j].random_unitary(rng)
                    if matrix_norm(a @ b - b @ a) > 1e3 * tol:
                        raise NotAnAutomorphism("source algebras do not commute")
        gammas = [map_deviation(alg, phi, rng) for alg, phi in zip(sources, maps)]
        return cls(list(sources), list(maps), gammas)


def inner_twirl(y: np.ndarray, alg: OperatorAlgebra, phi: Map) -> np.ndarray:
    """``sum_b (1/k_b) sum_ij e_ij y phi(e_ji)``, through image frames.

    Only ``phi(e_i1)`` is evaluated: with ``g`` an orthonormal basis of the
    range of ``phi(e_11)``, the rows ``(phi(e_i1) g)^dag`` form a frame ``G``
    of the image, so the sum collapses to ``F^dag (1 (x) tr_k(F y G^dag)/k) G``."""
    out = np.zeros_like(y, dtype=complex)
    for b in alg.structure.blocks:
        k, m = b.k, b.multiplicity
        p1 = phi(b.unit(0, 0))
        p1 = (p1 + p1.conj().T) / 2
        vals, vecs = np.linalg.eigh(p1)
        g = vecs[:, vals > 0.5]
        mp = g.shape[1]
        rows = [g.conj().T] + [(phi(b.unit(i, 0)) @ g).conj().T for i in range(1, k)]
        gf = np.concatenate(rows, axis=0)
        z = (b.frame @ y @ gf.conj().T).reshape(k, m, k, mp)
        red = np.einsum("iaib->ab", z) / k
        out += b.frame.conj().T @ np.kron(np.eye(k), red) @ gf
    return out


def inner_twirl_naive(y: np.ndarray, alg: OperatorAlgebra, phi: Map) -> np.ndarray:
    """Same sum as :func:`inner_twirl`, term by term over all matrix units."""
    out = np.zeros_like(y, dtype=complex)
    for b in alg.structure.blocks:
        for i in range(b.k):
            for j in range(b.k):
                out += b.unit(i, j) @ y @ phi(b.unit(j, i)) / b.k
    return out


def inner_bound(eps: float) -> float:
    """Norm bound on ``||1 - u||`` for the unitary produced by :func:`make_inner`."""
    return math.sqrt(2) * eps / math.sqrt(1 + math.sqrt(max(0.0, 1 - eps * eps)))


def intertwining_residual(h: NearHomomorphism, u: np.ndarray, rng: np.random.Generator | None = None) -> float:
    """Largest ``||phi_i(a) - u^dag a u|| / ||a||`` over bases (or random unitaries)."""
    rng = rng or np.random.default_rng(1)
    worst = 0.0
    for alg, phi in zip(h.sources, h.maps):
        cands = list(alg.basis) if alg.dim * alg.n * alg.n <= 2**22 else [alg.random_unitary(rng) for _ in range(8)]
        for a in cands:
            na = matrix_norm(a)
            worst = max(worst, matrix_norm(phi(a) - u.conj().T @ a @ u) / na)
    return worst


def make_inner(h: NearHomomorphism, chain: ChainSpec | None = None, ambient: Region | None = None, tol: float = 1e-8) -> ChainOperator:
    """Unitary ``u`` with ``phi_i(a) = u^dag a u`` on every source.

    ``y`` is built by nested exact twirls ``y <- sum (1/k) e_ij y phi(e_ji)``
    starting from the identity; ``u`` is its polar part.  No phase is fixed:
    the polar part is the choice that satisfies the norm bound."""
    eps = h.eps
    if eps >= 1:
        raise EpsilonTooLarge(f"sum of deviations {eps:.4g} is not below 1")
    src = h.sources[0]
    y = np.eye(src.n, dtype=complex)
    for alg, phi in zip(h.sources, h.maps):
        y = inner_twirl(y, alg, phi)
    sv = np.linalg.svd(y, compute_uv=False)
    if sv[-1] < 1e-6:
        raise SingularY(f"smallest singular value of y is {sv[-1]:.2e}")
    u, _ = sla.polar(y)
    res = intertwining_residual(h, u)
    if res > tol:
        raise NumericalFailure(f"intertwining residual {res:.2e} exceeds {tol:.0e}")
    return ChainOperator(chain or src.chain, ambient or src.ambient, u)


# ---------------------------------------------------------------------------
# rotating near inclusions


@dataclass
class RotationResult:
    unitary: ChainOperator
    eps_in: float
    inclusion_residual: float
    deviation: float
    bound: float
    flipped: bool = False
    spectral_distance: float = 0.0

    def __iter__(self) -> Iterator[object]:
        yield self.unitary
        yield self.eps_in


def _virtual_chain(d_r: int, d_c: int) -> ChainSpec:
    return ChainSpec(2, (d_r, max(d_c, 2)), Boundary.OPEN)


def _standard_algebra(alg: OperatorAlgebra, q: np.ndarray, d_r: int) -> OperatorAlgebra:
    """``q A q^dag`` on the virtual chain ``R (x) C``."""
    n = alg.n
    d_c = n // d_r
    if d_c < 2:
        raise ValueError("target region must leave a nontrivial complement")
    std = alg.conjugated(q.conj().T)
    return OperatorAlgebra(_virtual_chain(d_r, d_c), Region((0, 1)), std._basis, std._structure)


def _rotate_standard(alg: OperatorAlgebra, d_r: int, d_c: int, seed: int) -> tuple[np.ndarray, float]:
    """Unitary ``u`` with ``u^dag A u`` inside ``M_{d_r} (x) 1`` (standard order)."""
    n = alg.n
    big = n * d_c
    # v: H_R -> H_R (x) H_C (x) H_C', the maximally entangled copy of C.
    v = np.zeros((d_r, d_c, d_c, d_r), dtype=complex)
    for r in range(d_r):
        for c in range(d_c):
            v[r, c, c, r] = 1 / math.sqrt(d_c)
    v = v.reshape(big, d_r)
    x = np.zeros((big, big), dtype=complex)
    for b in alg.structure.blocks:
        k, m = b.k, b.multiplicity
        fpi = np.kron(b.frame, np.eye(d_c))
        yb = (fpi @ v).reshape(k, m * d_c, d_r)
        red = np.einsum("iar,ibr->ab", yb, yb.conj()) / k
        x += fpi.conj().T @ np.kron(np.eye(k), red) @ fpi
    x = (x + x.conj().T) / 2
    vals, vecs = np.linalg.eigh(x)
    spec_dist = float(np.max(np.minimum(np.abs(vals), np.abs(1 - vals))))
    if spec_dist > SPECTRAL_CAP:
        raise SpectralGapFailure(f"twirled projection has spectrum {spec_dist:.3g} away from {{0,1}}")
    qv = vecs[:, vals > 0.5]
    if qv.shape[1] != d_r:
        raise SpectralGapFailure(f"spectral projection has rank {qv.shape[1]}, expected {d_r}")
    qproj = qv @ qv.conj().T
    mvec = v.conj().T @ qproj @ v
    mv, mw = np.linalg.eigh((mvec + mvec.conj().T) / 2)
    if mv[0] < 1e-6:
        raise SpectralGapFailure("compressed projection is singular")
    w = qproj @ v @ (mw @ np.diag(mv**-0.5) @ mw.conj().T)
    w3 = w.reshape(n, d_c, d_r)

    def phi(a: np.ndarray) -> np.ndarray:
        small = np.einsum("icr,ij,jcs->rs", w3.conj(), a, w3)
        return np.kron(small, np.eye(d_c))

    h = NearHomomorphism.build([alg], [phi], seed=seed, check=False)
    u = make_inner(h, tol=1e-7)
    return u.matrix, spec_dist


def rotate_into(
    a: OperatorAlgebra,
    b_region: Region,
    *,
    frame: tuple[np.ndarray, int] | None = None,
    allow_flip: bool = False,
    max_eps: float = ROTATE_MAX_EPS,
    seed: int = 0,
) -> RotationResult:
    """Unitary ``u`` close to the identity with ``u^dag a u`` inside a region algebra.

    With ``frame=(Q, d)`` the target is instead ``Q^dag (M_d (x) 1) Q``.  With
    ``allow_flip`` the commutants are rotated when that is cheaper; the
    guaranteed constant then doubles."""
    chain = a.chain
    amb = a.ambient.sites
    if frame is None:
        r_sites = [s for s in amb if s in b_region]
        if set(b_region.sites) - set(amb):
            raise ValueError("target region must lie inside the ambient")
        pos = {s: i for i, s in enumerate(amb)}
        order = [pos[s] for s in r_sites] + [pos[s] for s in amb if s not in b_region]
        q = reorder_isometry(chain.dims_of(amb), order)
        d_r = chain.dim_of(r_sites)
    else:
        q, d_r = frame
    n = a.n
    d_c = n // d_r
    std = _standard_algebra(a, q, d_r)
    eps_in = near_inclusion_eps(std, Region((0,)))
    if eps_in > max_eps:
        raise EpsilonTooLarge(f"near-inclusion constant {eps_in:.4g} exceeds {max_eps:.4g}")
    flipped = False
    if eps_in <= 1e-13:
        u_std = np.eye(n, dtype=complex)
        spec = 0.0
    elif allow_flip and len(std.structure.blocks) == 1 and std.structure.blocks[0].k < d_c:
        # rotate B' = 1 (x) M_C into A' and invert: u^dag A u lies in B.
        flipped = True
        comm = std.commutant_factor()
        f2 = comm.structure.blocks[0].frame
        m2 = comm.structure.blocks[0].k
        bprime = OperatorAlgebra.region(std.chain, [1], [0, 1])
        moved = bprime.conjugated(f2.conj().T)
        vchain = _virtual_chain(m2, n // m2)
        moved = OperatorAlgebra(vchain, Region((0, 1)), moved._basis, moved._structure)
        ut, spec = _rotate_standard(moved, m2, n // m2, seed)
        u_std = (f2.conj().T @ ut @ f2).conj().T
    else:
        u_std, spec = _rotate_standard(std, d_r, d_c, seed)
    u = q.conj().T @ u_std @ q
    res = _inclusion_residual(std, u_std, d_r)
    if res > 1e-8:
        raise NumericalFailure(f"rotated algebra misses the target by {res:.2e}")
    dev = matrix_norm(np.eye(n) - u)
    const = 24 if flipped else 12
    return RotationResult(ChainOperator(chain, a.ambient, u), eps_in, res, dev, const * eps_in, flipped, spec)


def _inclusion_residual(std: OperatorAlgebra, u: np.ndarray, d_r: int) -> float:
    n = std.n
    dims = [d_r, n // d_r]
    rng = np.random.default_rng(7)
    cands = list(std.basis) if std.dim * n * n <= 2**22 else [std.random_unitary(rng) for _ in range(8)]
    worst = 0.0
    for b in cands:
        y = u.conj().T @ b @ u
        e = np.kron(reduce_matrix(y, dims, [0]), np.eye(dims[1]))
        worst = max(worst, matrix_norm(y - e) / matrix_norm(b))
    return worst


def rotation_probe_check(
    result: RotationResult,
    a: OperatorAlgebra,
    b_region: Region,
    z: np.ndarray,
    rng: np.random.Generator,
    samples: int = 32,
) -> dict[str, float]:
    """Measure the probe statements that accompany :func:`rotate_into`.

    ``delta_comm`` is the largest sampled ``||[z,c]|| / (||z|| ||c||)`` over
    ``c`` from ``a`` and the region algebra; ``delta_close`` the larger
    relative distance of ``z`` from ``a`` and from the region algebra."""
    u = result.unitary.matrix
    chain = a.chain
    amb = a.ambient.sites
    nz = matrix_norm(z)
    moved = matrix_norm(u.conj().T @ z @ u - z) / nz
    region_alg = OperatorAlgebra.region(chain, [s for s in amb if s in b_region], amb)
    delta_comm = 0.0
    for alg in (a, region_alg):
        cands = list(alg.basis) if alg.dim <= 256 else []
        cands += [alg.random_unitary(rng) for _ in range(samples)]
        for c in cands:
            delta_comm = max(delta_comm, matrix_norm(z @ c - c @ z) / (nz * matrix_norm(c)))
    delta_close = max(a.contains_residual(z), region_alg.contains_residual(z))
    return {"moved": moved, "delta_comm": delta_comm, "delta_close": delta_close}


# ---------------------------------------------------------------------------
# conjugation distance


def _circle_two(a: complex, b: complex) -> tuple[complex, float]:
    c = (a + b) / 2
    return c, abs(a - c)


def _circle_three(a: complex, b: complex, c: complex) -> tuple[complex, float] | None:
    ax, ay, bx, by, cx, cy = a.real, a.imag, b.real, b.imag, c.real, c.imag
    d = 2 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    if abs(d) < 1e-15:
        return None
    ux = ((ax**2 + ay**2) * (by - cy) + (bx**2 + by**2) * (cy - ay) + (cx**2 + cy**2) * (ay - by)) / d
    uy = ((ax**2 + ay**2) * (cx - bx) + (bx**2 + by**2) * (ax - cx) + (cx**2 + cy**2) * (bx - ax)) / d
    center = complex(ux, uy)
    return center, abs(a - center)


def smallest_enclosing_circle(points: Sequence[complex], seed: int = 0) -> tuple[complex, float]:
    """Welzl's randomized incremental algorithm for the minimal disk."""
    pts = list(points)
    rng = np.random.default_rng(seed)
    rng.shuffle(pts)
    eps = 1e-12

    def inside(c: tuple[complex, float], p: complex) -> bool:
        return abs(p - c[0]) <= c[1] + eps

    if not pts:
        return 0j, 0.0
    circ = (pts[0], 0.0)
    for i, p in enumerate(pts):
        if inside(circ, p):
            continue
        circ = (p, 0.0)
        for j in range(i):
            q = pts[j]
            if inside(circ, q):
                continue
            circ = _circle_two(p, q)
            for k in range(j):
                r = pts[k]
                if inside(circ, r):
                    continue
                three = _circle_three(p, q, r)
                if three is None:
                    cands = [_circle_two(p, r), _circle_two(q, r), _circle_two(p, q)]
                    circ = max(cands, key=lambda c: c[1])
                else:
                    circ = three
    return circ


def conjugation_distance(u: np.ndarray, v: np.ndarray) -> float:
    """Exact ``sup_{||x|| <= 1} ||u^dag x u - v^dag x v||``.

    It equals the diameter of the smallest disk containing the spectrum of
    ``v u^dag``, which is invariant under global phases."""
    w = v @ u.conj().T
    ev = np.linalg.eigvals(w)
    ev = ev / np.abs(ev)
    return 2 * smallest_enclosing_circle(ev)[1]


# ---------------------------------------------------------------------------
# local restrictions of automorphism differences


def _embed_positions(x_small: np.ndarray, dims: Sequence[int], pos: Sequence[int]) -> np.ndarray:
    n = len(dims)
    rest = [i for i in range(n) if i not in set(pos)]
    big = np.kron(x_small, np.eye(math.prod(dims[i] for i in rest), dtype=complex))
    order = list(pos) + rest
    inv = [order.index(i) for i in range(n)]
    return permute_operator(big, [dims[i] for i in order], inv)


def commutator_sup_search(
    w: np.ndarray,
    dims: Sequence[int],
    pos: Sequence[int],
    rng: np.random.Generator,
    restarts: int = 200,
    iters: int = 25,
    exact_dim: int = 64,
    power_steps: int = 40,
) -> float:
    """Lower bound on ``sup ||[x, w]||`` over the unit ball of the algebra at ``pos``.

    Each restart starts from a random symmetry and repeatedly moves to the
    extreme point maximizing the linearized objective, which never decreases
    the commutator norm.  Above ``exact_dim`` the top singular pair comes from
    warm-started power iteration; ``||c phi||`` is still a lower bound."""
    pos = sorted(pos)
    n = len(dims)
    rest = [i for i in range(n) if i not in set(pos)]
    dx = math.prod(dims[i] for i in pos)
    dr = math.prod(dims[i] for i in rest) if rest else 1
    big = dx * dr
    # in the order (pos, rest) an element of the algebra is xs (x) 1
    wp = permute_operator(w, dims, pos + rest)
    wp3 = wp.reshape(big, dx, dr)

    def commutator(xs: np.ndarray) -> np.ndarray:
        left = (xs @ wp.reshape(dx, dr * big)).reshape(big, big)
        right = np.einsum("ibd,ba->iad", wp3, xs).reshape(big, big)
        return left - right

    best = 0.0
    for _ in range(restarts):
        h = random_hermitian(dx, rng)
        vals, vecs = np.linalg.eigh(h)
        xs = vecs @ np.diag(np.where(vals >= 0, 1.0, -1.0)) @ vecs.conj().T
        prev = -1.0
        phi = None
        for _ in range(iters):
            c = commutator(xs)
            if big <= exact_dim:
                ev, vc = np.linalg.eigh(c.conj().T @ c)
                phi = vc[:, -1]
            else:
                if phi is None:
                    phi = rng.normal(size=big) + 1j * rng.normal(size=big)
                c_dag = c.conj().T
                for _ in range(power_steps):
                    phi = c_dag @ (c @ phi)
                    nrm = np.linalg.norm(phi)
                    if nrm < 1e-300:
                        break
                    phi = phi / nrm
            cphi = c @ phi
            val = float(np.linalg.norm(cphi))
            best = max(best, val)
            if val <= prev + 1e-13 or val < 1e-14:
                break
            prev = val
            psi = cphi / val
            # partial trace over the rest of (w phi) psi^dag - phi (w^dag psi)^dag
            a = (wp @ phi).reshape(dx, dr)
            b = psi.reshape(dx, dr)
            cc = phi.reshape(dx, dr)
            d = (wp.conj().T @ psi).reshape(dx, dr)
            gx = a @ b.conj().T - cc @ d.conj().T
            gv, gw = np.linalg.eigh((gx + gx.conj().T) / 2)
            xs = gw @ np.diag(np.where(gv >= 0, 1.0, -1.0)) @ gw.conj().T
    return best


def _schmidt_factor(w: np.ndarray, dims: Sequence[int], pos: Sequence[int]) -> tuple[np.ndarray | None, float]:
    """Return ``w_X`` if ``w = w_X (x) w_rest`` to tolerance, with the ratio of Schmidt values."""
    n = len(dims)
    rest = [i for i in range(n) if i not in set(pos)]
    dx = math.prod(dims[i] for i in pos)
    dr = math.prod(dims[i] for i in rest) if rest else 1
    t = w.reshape(tuple(dims) * 2).transpose(list(pos) + [n + i for i in pos] + rest + [n + i for i in rest])
    m = t.reshape(dx * dx, dr * dr)
    uu, s, _ = np.linalg.svd(m, full_matrices=False)
    ratio = float(s[1] / s[0]) if s.size > 1 else 0.0
    if ratio > 1e-10:
        return None, ratio
    wx = uu[:, 0].reshape(dx, dx)
    wx = wx / math.sqrt(np.real(np.trace(wx.conj().T @ wx)) / dx)
    return wx, ratio


def restricted_distance_bounds(
    u1: np.ndarray,
    u2: np.ndarray,
    dims: Sequence[int],
    pos: Sequence[int],
    rng: np.random.Generator,
    restarts: int = 200,
) -> tuple[float, float]:
    """(lower, upper) bounds on ``sup_{x in A_X, ||x|| <= 1} ||u1^dag x u1 - u2^dag x u2||``.

    With ``w = u2 u1^dag`` the quantity is ``sup ||[x, w]||``.  If ``w`` factors
    across ``X`` the value is the exact disk formula of the ``X`` factor;
    otherwise the upper bound is ``2 ||w - c||`` for ``c`` commuting with
    ``A_X`` (the conditional expectation of ``w`` off ``X`` and its polar
    part) or the global conjugation distance."""
    w = u2 @ u1.conj().T
    wx, _ = _schmidt_factor(w, dims, pos)
    if wx is not None:
        val = conjugation_distance(np.eye(wx.shape[0]), wx)
        return val, val
    rest = [i for i in range(len(dims)) if i not in set(pos)]
    upper = conjugation_distance(u1, u2)
    if rest:
        c = _embed_positions(reduce_matrix(w, dims, rest), dims, rest)
        upper = min(upper, 2 * matrix_norm(w - c))
        sv = np.linalg.svd(c, compute_uv=False)
        if sv[-1] > 1e-12:
            cu, _ = sla.polar(c)
            upper = min(upper, 2 * matrix_norm(w - cu))
    lower = commutator_sup_search(w, dims, pos, rng, restarts=restarts)
    return lower, max(upper, lower)


@dataclass
class LocalErrorReport:
    blocks: list[tuple[int, ...]]
    block_lower: list[float]
    block_upper: list[float]
    eps: float
    global_lower: float
    global_exact: float
    bound: float
    bound_respected: bool

    def as_dict(self) -> dict[str, object]:
        return {
            "blocks": [list(b) for b in self.blocks],
            "block_lower": self.block_lower,
            "block_upper": self.block_upper,
            "eps": self.eps,
            "global_lower": self.global_lower,
            "global_exact": self.global_exact,
            "bound": self.bound,
            "bound_respected": self.bound_respected,
        }


def homomorphism_local_error_check(
    alpha1: Automorphism,
    alpha2: Automorphism,
    blocks: Sequence[Region],
    seed: int = 0,
    restarts: int = 200,
) -> LocalErrorReport:
    """Compare the global distance of two automorphisms with the sum of blockwise distances."""
    chain = alpha1.chain
    seen: list[int] = []
    for b in blocks:
        seen.extend(b.sites)
    if sorted(seen) != list(range(chain.num_sites)):
        raise ValueError("blocks must partition the chain")
    rng = np.random.default_rng(seed)
    u1, u2 = alpha1.unitary, alpha2.unitary
    dims = list(chain.local_dims)
    lows, ups = [], []
    for b in blocks:
        lo, up = restricted_distance_bounds(u1, u2, dims, list(b.sites), rng, restarts)
        lows.append(lo)
        ups.append(up)
    eps = float(sum(ups))
    glow = commutator_sup_search(u2 @ u1.conj().T, dims, list(range(chain.num_sites)), rng, restarts=max(1, restarts // 10))
    gexact = conjugation_distance(u1, u2)
    bound = 2 * math.sqrt(2) * eps
    ok = bool(eps >= 1 or glow <= bound + 1e-9)
    if not ok:
        raise NumericalFailure(f"global lower bound {glow:.4g} exceeds {bound:.4g}")
    return LocalErrorReport([tuple(b.sites) for b in blocks], lows, ups, eps, glow, gexact, bound, ok)


# ---------------------------------------------------------------------------
# commutator inequalities


def _principal_power(vals: np.ndarray, s: float) -> np.ndarray:
    return np.exp(s * np.log(vals))


def commutator_lemma_suite(draws: int = 1000, seed: int = 0, max_dim: int = 5) -> dict[str, dict[str, float]]:
    """Randomized checks of the commutator-with-powers and commutator-with-polar inequalities."""
    rng = np.random.default_rng(seed)
    tiny = 1e-12
    powers = {"draws": draws, "violations": 0, "max_ratio": 0.0}
    for _ in range(draws):
        n = int(rng.integers(2, max_dim + 1))
        eps = float(rng.uniform(0.0, 0.95))
        rad = eps * np.sqrt(rng.random(n))
        ang = rng.uniform(0, 2 * np.pi, n)
        lam = 1 + rad * np.exp(1j * ang)
        lam[0] = 1 + eps * np.exp(1j * ang[0])
        v = random_unitary(n, rng)
        y = v @ np.diag(lam) @ v.conj().T
        s = float(rng.uniform(-1, 1))
        ys = v @ np.diag(_principal_power(lam, s)) @ v.conj().T
        x = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        eps_true = matrix_norm(np.eye(n) - y)
        lhs = matrix_norm(x @ ys - ys @ x)
        rhs = abs(s) / (1 - eps_true) ** (1 - s) * matrix_norm(x @ y - y @ x)
        if lhs > rhs + tiny * max(1.0, rhs):
            powers["violations"] += 1
        if rhs > 0:
            powers["max_ratio"] = max(powers["max_ratio"], lhs / rhs)
    polar = {"draws": draws, "violations": 0, "max_ratio": 0.0}
    for _ in range(draws):
        n = int(rng.integers(2, max_dim + 1))
        e = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        e *= rng.uniform(0, 1 / 8) / matrix_norm(e)
        y = np.eye(n) + e
        u, _ = sla.polar(y)
        x = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        lhs = matrix_norm(x @ u - u @ x)
        rhs = 3 * matrix_norm(x @ y - y @ x) + 2 * matrix_norm(x @ y.conj().T - y.conj().T @ x)
        if not lhs < rhs + tiny:
            polar["violations"] += 1
        if rhs > 0:
            polar["max_ratio"] = max(polar["max_ratio"], lhs / rhs)
    return {"powers": powers, "polar": polar}


def simultaneous_inclusion_suite(instances: int = 20, seed: int = 0) -> dict[str, float]:
    """Two commuting algebras, each nearly inside a region algebra: the algebra they
    generate is nearly inside it too, within four times the sum of the constants."""
    rng = np.random.default_rng(seed)
    chain = ChainSpec.uniform(4, 2, Boundary.OPEN)
    amb = [0, 1, 2, 3]
    worst_ratio = 0.0
    violations = 0
    for _ in range(instances):
        k = random_hermitian(16, rng)
        t = float(rng.uniform(0.001, 0.02)) / matrix_norm(k)
        w = sla.expm(1j * t * k)
        a1 = OperatorAlgebra.region(chain, [0], amb).conjugated(w)
        a2 = OperatorAlgebra.region(chain, [1], amb).conjugated(w)
        gen = OperatorAlgebra.region(chain, [0, 1], amb).conjugated(w)
        target = Region((0, 1, 2))
        e1, e2 = near_inclusion_eps(a1, target), near_inclusion_eps(a2, target)
        eg = near_inclusion_eps(gen, target)
        bound = 4 * (e1 + e2)
        if eg > bound + 1e-12:
            violations += 1
        if bound > 0:
            worst_ratio = max(worst_ratio, eg / bound)
    return {"instances": instances, "violations": violations, "max_ratio": worst_ratio}


# ---------------------------------------------------------------------------
# randomized instances


def _small_chain() -> tuple[ChainSpec, list[int]]:
    return ChainSpec.uniform(3, 2, Boundary.OPEN), [0, 1, 2]


def _unit_hermitian(d: int, rng: np.random.Generator) -> np.ndarray:
    k = random_hermitian(d, rng)
    return k / matrix_norm(k)


def random_inner_instance(rng: np.random.Generator, max_eps: float = 0.3) -> tuple[NearHomomorphism, np.ndarray]:
    """``Ad(w)`` with ``w`` near the identity, restricted to one or two commuting
    region algebras of three qubits.  Returns the homomorphism and ``w``."""
    chain, amb = _small_chain()
    choices = [[[0]], [[0, 1]], [[0], [1]], [[0], [2]], [[0], [1], [2]]]
    srcs = choices[int(rng.integers(len(choices)))]
    # each deviation is at most 2 ||w - 1|| <= 2t
    t = float(rng.uniform(0.0, max_eps)) / (2 * len(srcs))
    w = sla.expm(1j * t * _unit_hermitian(chain.dim, rng))
    algs = [OperatorAlgebra.region(chain, s, amb) for s in srcs]

    def phi(a: np.ndarray) -> np.ndarray:
        return w.conj().T @ a @ w

    h = NearHomomorphism.build(algs, [phi] * len(algs), seed=int(rng.integers(2**31)))
    return h, w


def make_inner_suite(instances: int = 100, seed: int = 0, max_eps: float = 0.3) -> dict[str, object]:
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(instances):
        h, _ = random_inner_instance(rng, max_eps)
        u = make_inner(h).matrix
        dev = matrix_norm(np.eye(u.shape[0]) - u)
        rows.append({
            "eps": h.eps,
            "residual": intertwining_residual(h, u),
            "deviation": dev,
            "bound": inner_bound(h.eps),
            "within_bound": bool(dev <= inner_bound(h.eps) + 1e-12),
        })
    return {
        "instances": instances,
        "max_residual": max(r["residual"] for r in rows),
        "max_ratio": max(r["deviation"] / r["bound"] for r in rows if r["bound"] > 0),
        "violations": sum(not r["within_bound"] for r in rows),
        "rows": rows,
    }


def random_rotation_instance(rng: np.random.Generator, max_eps: float = ROTATE_MAX_EPS) -> tuple[OperatorAlgebra, Region]:
    """A region algebra of three qubits conjugated by ``e^{itK}`` and a target
    region containing its original support, with near-inclusion constant at
    most ``max_eps``."""
    chain, amb = _small_chain()
    src, target = [([0], (0,)), ([0], (0, 1)), ([0, 1], (0, 1)), ([1], (0, 1))][int(rng.integers(4))]
    k = _unit_hermitian(chain.dim, rng)
    t = float(rng.uniform(0.0, max_eps / 2))
    base = OperatorAlgebra.region(chain, src, amb)
    while True:
        a = base.conjugated(sla.expm(1j * t * k))
        if near_inclusion_eps(a, Region(target)) <= max_eps:
            return a, Region(target)
        t /= 2


def rotate_into_suite(instances: int = 50, seed: int = 0, max_eps: float = ROTATE_MAX_EPS) -> dict[str, object]:
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(instances):
        a, target = random_rotation_instance(rng, max_eps)
        res = rotate_into(a, target, seed=seed + i)
        rows.append({
            "eps": res.eps_in,
            "residual": res.inclusion_residual,
            "deviation": res.deviation,
            "bound": res.bound,
            "within_bound": bool(res.deviation <= res.bound + 1e-12),
        })
    return {
        "instances": instances,
        "max_residual": max(r["residual"] for r in rows),
        "max_ratio": max((r["deviation"] / r["bound"] for r in rows if r["bound"] > 0), default=0.0),
        "violations": sum(not r["within_bound"] for r in rows),
        "rows": rows,
    }
