"""Finite spin chains: geometry, operators, partial traces and automorphisms.

Matrices on a set of sites always use the tensor order of the sorted site
indices.  Automorphisms act in the Heisenberg picture, ``alpha(x) = U^dag x U``.
Besides the global unitary, every automorphism carries a *light-cone model*:
for a set of sites ``X`` it returns a superset ``Y`` and a unitary ``V`` on
``Y`` with ``alpha(x) = V^dag (x (x) 1) V`` for all ``x`` supported on ``X``.
That keeps local computations affordable on chains whose global unitary would
be too large to store.
"""

from __future__ import annotations

import contextlib
import contextvars
import enum
import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Iterator, Protocol, Sequence

import numpy as np
from scipy import stats

from .errors import DimensionCap, RegionMismatch, SpecMismatch, ZeroOperator

UNITARITY_TOL = 1e-10
EIG_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# size caps


@dataclass(frozen=True)
class Limits:
    """Caps on dense objects.  ``max_dim`` bounds full-chain operators and
    ``max_amplitudes`` bounds pure-state vectors such as Choi states."""

    max_dim: int = 2**12
    max_amplitudes: int = 2**20


_LIMITS: contextvars.ContextVar[Limits] = contextvars.ContextVar("qcalab_limits", default=Limits())


def current_limits() -> Limits:
    return _LIMITS.get()


@contextlib.contextmanager
def limits(max_dim: int | None = None, max_amplitudes: int | None = None) -> Iterator[Limits]:
    """Temporarily override the size caps for the current context."""
    old = _LIMITS.get()
    new = Limits(
        max_dim=old.max_dim if max_dim is None else int(max_dim),
        max_amplitudes=old.max_amplitudes if max_amplitudes is None else int(max_amplitudes),
    )
    token = _LIMITS.set(new)
    try:
        yield new
    finally:
        _LIMITS.reset(token)


def check_dim(dim: int, what: str = "operator") -> None:
    cap = current_limits().max_dim
    if dim > cap:
        raise DimensionCap(f"{what} dimension {dim} exceeds cap {cap}")


def check_amplitudes(n: int, what: str = "state") -> None:
    cap = current_limits().max_amplitudes
    if n > cap:
        raise DimensionCap(f"{what} with {n} amplitudes exceeds cap {cap}")


# ---------------------------------------------------------------------------
# geometry


class Boundary(str, enum.Enum):
    OPEN = "open"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class Region:
    """A set of sites, kept sorted.  ``is_interval`` records whether the set
    was built as a contiguous (possibly wrapping) interval."""

    sites: tuple[int, ...]
    is_interval: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "sites", tuple(sorted({int(s) for s in self.sites})))

    @classmethod
    def of(cls, *sites: int) -> Region:
        return cls(tuple(sites))

    def __iter__(self) -> Iterator[int]:
        return iter(self.sites)

    def __len__(self) -> int:
        return len(self.sites)

    def __contains__(self, s: object) -> bool:
        return s in self.sites

    def union(self, other: Region | Iterable[int]) -> Region:
        return Region(self.sites + tuple(other))

    def intersection(self, other: Region | Iterable[int]) -> Region:
        o = set(other)
        return Region(tuple(s for s in self.sites if s in o))

    def issubset(self, other: Region | Iterable[int]) -> bool:
        return set(self.sites) <= set(other)


@dataclass(frozen=True)
class ChainSpec:
    num_sites: int
    local_dims: tuple[int, ...]
    boundary: Boundary = Boundary.PERIODIC

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.local_dims)
        object.__setattr__(self, "local_dims", dims)
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        if self.num_sites < 1:
            raise SpecMismatch("num_sites must be positive")
        if len(dims) != self.num_sites:
            raise SpecMismatch("local_dims must have one entry per site")
        if any(d < 2 for d in dims):
            raise SpecMismatch("local dimensions must be at least 2")

    @classmethod
    def uniform(cls, num_sites: int, d: int, boundary: Boundary | str = Boundary.PERIODIC) -> ChainSpec:
        return cls(num_sites, (d,) * num_sites, Boundary(boundary))

    @property
    def periodic(self) -> bool:
        return self.boundary is Boundary.PERIODIC

    @property
    def dim(self) -> int:
        return math.prod(self.local_dims)

    @property
    def uniform_dim(self) -> int | None:
        d = set(self.local_dims)
        return d.pop() if len(d) == 1 else None

    def dims_of(self, sites: Iterable[int]) -> list[int]:
        return [self.local_dims[s] for s in sites]

    def dim_of(self, sites: Iterable[int]) -> int:
        return math.prod(self.dims_of(sites))

    @property
    def all_sites(self) -> Region:
        return Region(tuple(range(self.num_sites)), is_interval=True)

    def site(self, s: int) -> Region:
        return Region((s % self.num_sites,), is_interval=True)

    def interval(self, start: int, length: int) -> Region:
        n = self.num_sites
        if length < 0 or length > n:
            raise RegionMismatch(f"interval length {length} out of range")
        if self.periodic:
            return Region(tuple((start + i) % n for i in range(length)), is_interval=True)
        if start < 0 or start + length > n:
            raise RegionMismatch(f"interval [{start},{start + length}) leaves the open chain")
        return Region(tuple(range(start, start + length)), is_interval=True)

    def distance(self, a: int, b: int) -> int:
        d = abs(a - b)
        return min(d, self.num_sites - d) if self.periodic else d

    def ball(self, region: Region | Iterable[int], r: int) -> Region:
        """B(X, r): all sites within distance r of X."""
        xs = list(region)
        if r < 0:
            raise RegionMismatch("radius must be nonnegative")
        out = {s for s in range(self.num_sites) if any(self.distance(s, x) <= r for x in xs)}
        reg = Region(tuple(out))
        return Region(reg.sites, is_interval=self.is_interval(reg))

    def complement(self, region: Region | Iterable[int]) -> Region:
        r = set(region)
        return Region(tuple(s for s in range(self.num_sites) if s not in r))

    def is_interval(self, region: Region | Iterable[int]) -> bool:
        s = sorted(set(region))
        n = self.num_sites
        if len(s) <= 1 or len(s) == n:
            return True
        gaps = sum(1 for a, b in zip(s, s[1:]) if b != a + 1)
        if gaps == 0:
            return True
        return self.periodic and gaps == 1 and s[0] == 0 and s[-1] == n - 1

    def block(self, g: int) -> ChainSpec:
        if g < 1 or self.num_sites % g:
            raise SpecMismatch(f"block size {g} does not divide {self.num_sites}")
        dims = tuple(math.prod(self.local_dims[i * g:(i + 1) * g]) for i in range(self.num_sites // g))
        return ChainSpec(self.num_sites // g, dims, self.boundary)

    @property
    def primes(self) -> tuple[int, ...]:
        ps: set[int] = set()
        for d in self.local_dims:
            m, p = d, 2
            while m > 1:
                while m % p == 0:
                    ps.add(p)
                    m //= p
                p += 1
        return tuple(sorted(ps))


# ---------------------------------------------------------------------------
# dense tensor helpers


def permute_operator(mat: np.ndarray, dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    """Reorder tensor factors: new factor ``k`` is old factor ``perm[k]``."""
    n = len(dims)
    if list(perm) == list(range(n)):
        return mat
    d = math.prod(dims)
    t = mat.reshape(tuple(dims) * 2)
    axes = list(perm) + [n + p for p in perm]
    return t.transpose(axes).reshape(d, d)


def embed_matrix(mat: np.ndarray, sites: Sequence[int], target: Sequence[int], chain: ChainSpec) -> np.ndarray:
    """Tensor ``mat`` (on sorted ``sites``) with identity up to sorted ``target``."""
    sites = list(sites)
    target = list(target)
    if sites == target:
        return mat
    tset = set(target)
    if not set(sites) <= tset:
        raise RegionMismatch(f"support {sites} is not inside {target}")
    extra = [s for s in target if s not in set(sites)]
    big = np.kron(mat, np.eye(chain.dim_of(extra), dtype=complex)) if extra else mat
    order = sites + extra
    pos = {s: i for i, s in enumerate(order)}
    return permute_operator(big, chain.dims_of(order), [pos[s] for s in target])


def reduce_matrix(mat: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Normalized partial trace keeping factor positions ``keep`` (sorted)."""
    n = len(dims)
    keep = list(keep)
    drop = [i for i in range(n) if i not in set(keep)]
    if not drop:
        return mat
    dk = math.prod(dims[i] for i in keep)
    dd = math.prod(dims[i] for i in drop)
    t = mat.reshape(tuple(dims) * 2).transpose(keep + drop + [n + i for i in keep] + [n + i for i in drop])
    t = t.reshape(dk, dd, dk, dd)
    return np.einsum("iaja->ij", t) / dd


def kron_all(mats: Iterable[np.ndarray]) -> np.ndarray:
    return reduce(np.kron, mats, np.eye(1, dtype=complex))


def is_hermitian(mat: np.ndarray, tol: float = 1e-12) -> bool:
    scale = max(1.0, float(np.max(np.abs(mat)))) if mat.size else 1.0
    return bool(np.max(np.abs(mat - mat.conj().T), initial=0.0) <= tol * scale)


def matrix_norm(mat: np.ndarray) -> float:
    """Spectral norm, through a Hermitian eigensolve when possible."""
    if mat.size == 0:
        return 0.0
    if is_hermitian(mat):
        return float(np.max(np.abs(np.linalg.eigvalsh(mat))))
    return float(np.linalg.svd(mat, compute_uv=False)[0])


def unitarity_defect(u: np.ndarray) -> float:
    return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0])), initial=0.0))


def random_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    if d == 1:
        return np.exp(2j * np.pi * rng.random()) * np.ones((1, 1), dtype=complex)
    return np.asarray(stats.unitary_group.rvs(d, random_state=rng), dtype=complex)


def random_hermitian(d: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return (g + g.conj().T) / 2


def hermitian_basis(d: int) -> list[np.ndarray]:
    """Hermitian basis of M_d, orthonormal for ``tr(a^dag b)/d``."""
    out = []
    for a in range(d):
        e = np.zeros((d, d), dtype=complex)
        e[a, a] = math.sqrt(d)
        out.append(e)
    s = math.sqrt(d / 2)
    for a in range(d):
        for b in range(a + 1, d):
            e = np.zeros((d, d), dtype=complex)
            e[a, b] = e[b, a] = s
            out.append(e)
            f = np.zeros((d, d), dtype=complex)
            f[a, b], f[b, a] = -1j * s, 1j * s
            out.append(f)
    return out


def matrix_units(d: int) -> list[np.ndarray]:
    out = []
    for a in range(d):
        for b in range(d):
            e = np.zeros((d, d), dtype=complex)
            e[a, b] = 1
            out.append(e)
    return out


def weyl_pair(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Clock and shift matrices of dimension d."""
    w = np.exp(2j * np.pi / d)
    clock = np.diag(w ** np.arange(d)).astype(complex)
    shift = np.roll(np.eye(d, dtype=complex), 1, axis=0)
    return clock, shift


PAULI_I = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


# ---------------------------------------------------------------------------
# operators


@dataclass(frozen=True, eq=False)
class ChainOperator:
    """Dense matrix on a declared support of a chain."""

    chain: ChainSpec
    support: Region
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=complex)
        d = self.chain.dim_of(self.support)
        if m.shape != (d, d):
            raise RegionMismatch(f"matrix shape {m.shape} does not match support dimension {d}")
        if self.support.sites and self.support.sites[-1] >= self.chain.num_sites:
            raise RegionMismatch("support outside the chain")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def on(cls, chain: ChainSpec, sites: Iterable[int] | Region, matrix: np.ndarray) -> ChainOperator:
        reg = sites if isinstance(sites, Region) else Region(tuple(sites))
        return cls(chain, reg, matrix)

    @classmethod
    def identity(cls, chain: ChainSpec, sites: Iterable[int] | Region = ()) -> ChainOperator:
        reg = sites if isinstance(sites, Region) else Region(tuple(sites))
        return cls(chain, reg, np.eye(chain.dim_of(reg), dtype=complex))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def dag(self) -> ChainOperator:
        return ChainOperator(self.chain, self.support, self.matrix.conj().T)

    def embed(self, target: Region | Iterable[int]) -> ChainOperator:
        return embed(self, target if isinstance(target, Region) else Region(tuple(target)))

    def full(self) -> np.ndarray:
        check_dim(self.chain.dim, "full-chain operator")
        return embed_matrix(self.matrix, self.support.sites, range(self.chain.num_sites), self.chain)

    def norm(self) -> float:
        return operator_norm(self)

    def _joint(self, other: ChainOperator) -> tuple[Region, np.ndarray, np.ndarray]:
        if other.chain != self.chain:
            raise SpecMismatch("operators live on different chains")
        reg = self.support.union(other.support)
        return (
            reg,
            embed_matrix(self.matrix, self.support.sites, reg.sites, self.chain),
            embed_matrix(other.matrix, other.support.sites, reg.sites, self.chain),
        )

    def __matmul__(self, other: ChainOperator) -> ChainOperator:
        reg, a, b = self._joint(other)
        return ChainOperator(self.chain, reg, a @ b)

    def __add__(self, other: ChainOperator) -> ChainOperator:
        reg, a, b = self._joint(other)
        return ChainOperator(self.chain, reg, a + b)

    def __sub__(self, other: ChainOperator) -> ChainOperator:
        reg, a, b = self._joint(other)
        return ChainOperator(self.chain, reg, a - b)

    def __neg__(self) -> ChainOperator:
        return ChainOperator(self.chain, self.support, -self.matrix)

    def __mul__(self, c: complex) -> ChainOperator:
        return ChainOperator(self.chain, self.support, c * self.matrix)

    __rmul__ = __mul__


def embed(op: ChainOperator, target: Region) -> ChainOperator:
    """Pad ``op`` with identities so that it lives on ``target``."""
    if not op.support.issubset(target):
        raise RegionMismatch(f"support {op.support.sites} is not inside {target.sites}")
    check_dim(op.chain.dim_of(target), "embedded operator")
    return ChainOperator(op.chain, target, embed_matrix(op.matrix, op.support.sites, target.sites, op.chain))


def conditional_expectation(op: ChainOperator, onto: Region) -> ChainOperator:
    """Normalized partial trace over the sites outside ``onto``.

    The result is returned on ``support & onto``, the smallest region on which
    it is nontrivial.  Embedding it anywhere inside ``onto`` gives the usual
    ``E(x) (x) 1``."""
    keep_sites = op.support.intersection(onto)
    pos = {s: i for i, s in enumerate(op.support.sites)}
    red = reduce_matrix(op.matrix, op.chain.dims_of(op.support), [pos[s] for s in keep_sites])
    return ChainOperator(op.chain, keep_sites, red)


def operator_norm(op: ChainOperator) -> float:
    return matrix_norm(op.matrix)


def commutator_norm(a: ChainOperator, b: ChainOperator) -> float:
    _, x, y = a._joint(b)
    return matrix_norm(x @ y - y @ x)


def dist_to_region(op: ChainOperator, region: Region) -> tuple[ChainOperator, float]:
    """Conditional-expectation witness and relative distance ``||x - E(x)|| / ||x||``.

    The value is at most twice the true distance from ``x`` to the region
    algebra, and at least the true distance."""
    nrm = operator_norm(op)
    if nrm <= 1e-14:
        raise ZeroOperator("distance of the zero operator is undefined")
    w = conditional_expectation(op, region)
    diff = op.matrix - embed_matrix(w.matrix, w.support.sites, op.support.sites, op.chain)
    return w, matrix_norm(diff) / nrm


def hs_inner(a: np.ndarray, b: np.ndarray) -> complex:
    """Normalized Hilbert-Schmidt inner product ``tr(a^dag b)/dim``."""
    return complex(np.vdot(a, b) / a.shape[0])


def region_hermitian_basis(chain: ChainSpec, sites: Sequence[int]) -> Iterator[np.ndarray]:
    """Product Hermitian basis of the algebra on ``sites`` (lazy)."""
    import itertools

    per_site = [hermitian_basis(chain.local_dims[s]) for s in sites]
    for combo in itertools.product(*per_site):
        yield kron_all(combo)


# ---------------------------------------------------------------------------
# automorphisms


@dataclass(frozen=True)
class Locality:
    kind: str = "unknown"
    radius: int | None = None
    profile: object | None = None

    @classmethod
    def exact(cls, r: int) -> Locality:
        return cls("exact", int(r))

    @classmethod
    def measured(cls, profile: object) -> Locality:
        return cls("measured", None, profile)

    @classmethod
    def unknown(cls) -> Locality:
        return cls()


class LightConeModel(Protocol):
    chain: ChainSpec

    def light_cone(self, sites: tuple[int, ...]) -> tuple[tuple[int, ...], np.ndarray]: ...

    def inverse(self) -> LightConeModel: ...


@dataclass(frozen=True, eq=False)
class GlobalModel:
    chain: ChainSpec
    unitary: np.ndarray = field(repr=False)

    def light_cone(self, sites: tuple[int, ...]) -> tuple[tuple[int, ...], np.ndarray]:
        return tuple(range(self.chain.num_sites)), self.unitary

    def inverse(self) -> GlobalModel:
        return GlobalModel(self.chain, self.unitary.conj().T)


def permutation_unitary(dims: Sequence[int], mapping: Sequence[int]) -> np.ndarray:
    """Unitary W with ``W x_p W^dag = x_{mapping[p]}`` on tensor positions."""
    n = len(dims)
    d = math.prod(dims)
    inv = [0] * n
    for p, q in enumerate(mapping):
        inv[q] = p
    if any(dims[p] != dims[mapping[p]] for p in range(n)):
        raise SpecMismatch("permutation mixes sites of different dimension")
    eye = np.eye(d, dtype=complex).reshape(tuple(dims) + (d,))
    return eye.transpose(inv + [n]).reshape(d, d)


@dataclass(frozen=True)
class ShiftModel:
    """Translation ``alpha(x_s) = x_{s-k}`` on a ring."""

    chain: ChainSpec
    k: int

    def light_cone(self, sites: tuple[int, ...]) -> tuple[tuple[int, ...], np.ndarray]:
        n = self.chain.num_sites
        xs = set(sites)
        img = {(s - self.k) % n for s in xs}
        ys = tuple(sorted(xs | img))
        target = {s: (s - self.k) % n for s in xs}
        rest_src = [s for s in ys if s not in xs]
        rest_dst = [t for t in ys if t not in img]
        target.update(zip(rest_src, rest_dst))
        pos = {s: i for i, s in enumerate(ys)}
        w = permutation_unitary(self.chain.dims_of(ys), [pos[target[s]] for s in ys])
        return ys, w.conj().T

    def inverse(self) -> ShiftModel:
        return ShiftModel(self.chain, -self.k)


Gate = tuple[tuple[int, ...], np.ndarray]


@dataclass(frozen=True, eq=False)
class CircuitModel:
    """Layers of gates; the global unitary is ``L_last ... L_first``."""

    chain: ChainSpec
    layers: tuple[tuple[Gate, ...], ...]

    def light_cone(self, sites: tuple[int, ...]) -> tuple[tuple[int, ...], np.ndarray]:
        ys = set(sites)
        used: list[list[Gate]] = []
        for layer in reversed(self.layers):
            hit = [g for g in layer if ys & set(g[0])]
            for g in hit:
                ys |= set(g[0])
            used.append(hit)
        yt = tuple(sorted(ys))
        v = np.eye(self.chain.dim_of(yt), dtype=complex)
        # used[0] is the last layer, which sits leftmost in V.
        for hit in reversed(used):
            for gsites, gmat in hit:
                v = embed_matrix(gmat, gsites, yt, self.chain) @ v
        return yt, v

    def inverse(self) -> CircuitModel:
        layers = tuple(tuple((s, m.conj().T) for s, m in layer) for layer in reversed(self.layers))
        return CircuitModel(self.chain, layers)


@dataclass(frozen=True, eq=False)
class ComposedModel:
    """``outer o inner``: apply ``inner`` first, then ``outer``."""

    chain: ChainSpec
    outer: Automorphism
    inner: Automorphism

    def light_cone(self, sites: tuple[int, ...]) -> tuple[tuple[int, ...], np.ndarray]:
        y2, v2 = self.inner.light_cone(sites)
        y1, v1 = self.outer.light_cone(y2)
        return y1, embed_matrix(v2, y2, y1, self.chain) @ v1

    def inverse(self) -> ComposedModel:
        return ComposedModel(self.chain, self.inner.inverse(), self.outer.inverse())


@dataclass(frozen=True, eq=False)
class BlockedModel:
    chain: ChainSpec
    fine: Automorphism
    g: int

    def light_cone(self, sites: tuple[int, ...]) -> tuple[tuple[int, ...], np.ndarray]:
        g = self.g
        fine_x = tuple(b * g + i for b in sites for i in range(g))
        yf, v = self.fine.light_cone(fine_x)
        yb = tuple(sorted({s // g for s in yf}))
        fine_y = tuple(b * g + i for b in yb for i in range(g))
        return yb, embed_matrix(v, yf, fine_y, self.fine.chain)

    def inverse(self) -> BlockedModel:
        return BlockedModel(self.chain, self.fine.inverse(), self.g)


@dataclass(frozen=True, eq=False)
class TensorModel:
    """Sitewise tensor product of two automorphisms on chains of equal length."""

    chain: ChainSpec
    first: Automorphism
    second: Automorphism

    def light_cone(self, sites: tuple[int, ...]) -> tuple[tuple[int, ...], np.ndarray]:
        y1, v1 = self.first.light_cone(sites)
        y2, v2 = self.second.light_cone(sites)
        ys = tuple(sorted(set(y1) | set(y2)))
        a = embed_matrix(v1, y1, ys, self.first.chain)
        b = embed_matrix(v2, y2, ys, self.second.chain)
        m = len(ys)
        dims = self.first.chain.dims_of(ys) + self.second.chain.dims_of(ys)
        perm = [p for i in range(m) for p in (i, m + i)]
        return ys, permute_operator(np.kron(a, b), dims, perm)

    def inverse(self) -> TensorModel:
        return TensorModel(self.chain, self.first.inverse(), self.second.inverse())


class Automorphism:
    """Automorphism ``alpha(x) = U^dag x U`` of a chain algebra."""

    def __init__(self, chain: ChainSpec, model: LightConeModel, locality: Locality | None = None):
        if model.chain != chain:
            raise SpecMismatch("model and chain disagree")
        self.chain = chain
        self.model = model
        self.locality = locality or Locality.unknown()
        self._unitary: np.ndarray | None = None

    @classmethod
    def from_unitary(
        cls, chain: ChainSpec, unitary: np.ndarray, locality: Locality | None = None, check: bool = True
    ) -> Automorphism:
        u = np.asarray(unitary, dtype=complex)
        if u.shape != (chain.dim, chain.dim):
            raise SpecMismatch(f"unitary shape {u.shape} does not match chain dimension {chain.dim}")
        if check and unitarity_defect(u) > UNITARITY_TOL:
            raise SpecMismatch("matrix is not unitary to tolerance")
        a = cls(chain, GlobalModel(chain, u), locality)
        a._unitary = u
        return a

    @classmethod
    def identity(cls, chain: ChainSpec) -> Automorphism:
        return cls(chain, CircuitModel(chain, ()), Locality.exact(0))

    def __repr__(self) -> str:
        return f"Automorphism({type(self.model).__name__}, N={self.chain.num_sites}, locality={self.locality.kind})"

    @property
    def unitary(self) -> np.ndarray:
        if self._unitary is None:
            check_dim(self.chain.dim, "global unitary")
            ys, v = self.model.light_cone(tuple(range(self.chain.num_sites)))
            self._unitary = v
        return self._unitary

    def light_cone(self, sites: Iterable[int]) -> tuple[tuple[int, ...], np.ndarray]:
        sites = tuple(sorted(set(sites)))
        if isinstance(self.model, GlobalModel) and self._unitary is not None:
            return tuple(range(self.chain.num_sites)), self._unitary
        return self.model.light_cone(sites)

    def apply_matrix(self, mat: np.ndarray, sites: Sequence[int]) -> tuple[tuple[int, ...], np.ndarray]:
        ys, v = self.light_cone(sites)
        x = embed_matrix(mat, sorted(sites), ys, self.chain)
        return ys, v.conj().T @ x @ v

    def apply(self, op: ChainOperator) -> ChainOperator:
        ys, m = self.apply_matrix(op.matrix, op.support.sites)
        return ChainOperator(self.chain, Region(ys), m)

    def inverse(self) -> Automorphism:
        loc = self.locality if self.locality.kind == "exact" else Locality.unknown()
        inv = Automorphism(self.chain, self.model.inverse(), loc)
        if self._unitary is not None:
            inv._unitary = self._unitary.conj().T
        return inv

    def after(self, inner: Automorphism) -> Automorphism:
        """The composition ``self o inner``."""
        if inner.chain != self.chain:
            raise SpecMismatch("cannot compose automorphisms of different chains")
        loc = Locality.unknown()
        if self.locality.kind == "exact" and inner.locality.kind == "exact":
            loc = Locality.exact(self.locality.radius + inner.locality.radius)
        return Automorphism(self.chain, ComposedModel(self.chain, self, inner), loc)
