"""Entropic index from Choi states.

The Choi state of ``alpha(x) = U^dag x U`` is the pure vector
``(U (x) 1)|Omega>`` on the chain and a primed copy, so that
``<x (x) y'> = tau(alpha(x) y^T)``: an unprimed site ``s`` is correlated with
the primed sites that ``alpha`` moves ``s`` onto.  As a matrix indexed by
(unprimed, primed) the vector is simply ``U / sqrt(D)``.

Marginals on unprimed ``A`` and primed ``B'`` only involve ``alpha`` on
``A``, so local Choi vectors built from a light cone give exact marginals
without touching the global unitary.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .chain_algebra import (
    EIG_FLOOR,
    Automorphism,
    ChainSpec,
    Region,
    check_amplitudes,
)
from .errors import NumericalFailure, RegionMismatch, WindowTooLarge
from .qca import IndexValue, round_index


class Entropy(str, enum.Enum):
    VON_NEUMANN = "vn"
    RENYI2 = "renyi2"


@dataclass(frozen=True, eq=False)
class ChoiState:
    """Pure state on ``sites`` and their primed copies.

    ``state`` has shape ``(d_sites, d_sites)``: rows are the unprimed sites and
    columns the primed ones, both in sorted order.  Doubled-chain labels are
    ``s`` for an unprimed site and ``num_sites + s`` for its copy."""

    chain: ChainSpec
    sites: tuple[int, ...]
    state: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return self.state.reshape(-1)

    def positions(self, labels: Region | Sequence[int]) -> list[int]:
        """Tensor positions (of the doubled local system) for doubled-chain labels."""
        n = self.chain.num_sites
        idx = {s: i for i, s in enumerate(self.sites)}
        out = []
        for lab in labels:
            s, primed = (lab - n, True) if lab >= n else (lab, False)
            if s not in idx:
                raise RegionMismatch(f"label {lab} is outside the Choi window {self.sites}")
            out.append(idx[s] + (len(self.sites) if primed else 0))
        return sorted(out)

    @property
    def dims(self) -> list[int]:
        d = self.chain.dims_of(self.sites)
        return d + d


def choi_state(a: Automorphism) -> ChoiState:
    chain = a.chain
    check_amplitudes(chain.dim**2, "Choi state")
    u = a.unitary
    return ChoiState(chain, tuple(range(chain.num_sites)), u / math.sqrt(chain.dim))


def local_choi(a: Automorphism, sites: Sequence[int]) -> ChoiState:
    """Choi vector on the light cone of ``sites``; exact on marginals touching
    only ``sites`` among the unprimed labels."""
    ys, v = a.light_cone(sites)
    d = a.chain.dim_of(ys)
    check_amplitudes(d * d, "local Choi state")
    return ChoiState(a.chain, tuple(ys), v / math.sqrt(d))


def schmidt_probabilities(s: ChoiState, labels: Region | Sequence[int]) -> np.ndarray:
    """Eigenvalues of the reduced density matrix on ``labels``."""
    pos = s.positions(labels)
    dims = s.dims
    n = len(dims)
    rest = [i for i in range(n) if i not in set(pos)]
    da = math.prod(dims[i] for i in pos)
    db = math.prod(dims[i] for i in rest)
    if da == 1 or db == 1:
        return np.array([1.0])
    t = s.state.reshape(dims).transpose(pos + rest).reshape(da, db)
    sv = np.linalg.svd(t, compute_uv=False)
    p = sv**2
    p[np.abs(p) < EIG_FLOOR] = 0.0
    return p


def entropy_of(p: np.ndarray, kind: Entropy | str = Entropy.VON_NEUMANN) -> float:
    kind = Entropy(kind)
    p = p[p > 0]
    if kind is Entropy.RENYI2:
        return float(-math.log(np.sum(p**2)))
    return float(-np.sum(p * np.log(p)))


def subsystem_entropy(s: ChoiState, labels: Region | Sequence[int], kind: Entropy | str = Entropy.VON_NEUMANN) -> float:
    if len(list(labels)) == 0:
        return 0.0
    return entropy_of(schmidt_probabilities(s, labels), kind)


def mutual_information(s: ChoiState, a: Region | Sequence[int], b: Region | Sequence[int], entropy: Entropy | str = Entropy.VON_NEUMANN) -> float:
    """``S(A) + S(B) - S(AB)`` for disjoint doubled-chain regions."""
    la, lb = list(a), list(b)
    if set(la) & set(lb):
        raise RegionMismatch("regions must be disjoint")
    return subsystem_entropy(s, la, entropy) + subsystem_entropy(s, lb, entropy) - subsystem_entropy(s, la + lb, entropy)


def windows(chain: ChainSpec, cut: int, window: int) -> tuple[list[int], list[int]]:
    n = chain.num_sites
    if window < 1:
        raise WindowTooLarge("window must be positive")
    if chain.periodic:
        if 2 * window > n:
            raise WindowTooLarge(f"windows of {window} sites overlap on a ring of {n}")
        left = [(cut - window + i) % n for i in range(window)]
        right = [(cut + i) % n for i in range(window)]
    else:
        if cut - window < 0 or cut + window > n:
            raise WindowTooLarge(f"windows of {window} sites leave the open chain")
        left = list(range(cut - window, cut))
        right = list(range(cut, cut + window))
    return left, right


def _mi_terms(a: Automorphism, cut: int, window: int, entropy: Entropy | str) -> tuple[float, float]:
    n = a.chain.num_sites
    left, right = windows(a.chain, cut, window)
    s = local_choi(a, left + right)
    lp = [n + x for x in left]
    rp = [n + x for x in right]
    return mutual_information(s, lp, right, entropy), mutual_information(s, left, rp, entropy)


def index_mi(a: Automorphism, cut: int = 0, window: int = 2, entropy: Entropy | str = Entropy.VON_NEUMANN, tol: float = 1e-8) -> IndexValue:
    """``(I(L':R) - I(L:R')) / 2`` on windows of ``window`` sites at ``cut``."""
    i_lr, i_rl = _mi_terms(a, cut, window, entropy)
    val = round_index(0.5 * (i_lr - i_rl), a.chain.primes)
    loc = a.locality
    if loc.kind == "exact" and loc.radius is not None and loc.radius <= window and val.residual > tol:
        raise NumericalFailure(f"index of a radius-{loc.radius} map is off the lattice by {val.residual:.2e}")
    return val


def index_entropy_diff(a: Automorphism, cut: int = 0, window: int = 2, entropy: Entropy | str = Entropy.VON_NEUMANN) -> float:
    """``(S(L R') - S(L' R)) / 2``."""
    n = a.chain.num_sites
    left, right = windows(a.chain, cut, window)
    s = local_choi(a, left + right)
    lp = [n + x for x in left]
    rp = [n + x for x in right]
    return 0.5 * (subsystem_entropy(s, left + rp, entropy) - subsystem_entropy(s, lp + right, entropy))


def cut_spread(a: Automorphism, window: int, entropy: Entropy | str = Entropy.VON_NEUMANN) -> float:
    cuts = range(a.chain.num_sites) if a.chain.periodic else range(window, a.chain.num_sites - window + 1)
    vals = [0.5 * (lambda t: t[0] - t[1])(_mi_terms(a, c, window, entropy)) for c in cuts]
    return float(max(vals) - min(vals))


@dataclass
class WindowRow:
    window: int
    raw_vn: float
    raw_renyi2: float
    rounded: float


def window_sweep(a: Automorphism, cut: int = 0, windows_: Sequence[int] | None = None) -> list[WindowRow]:
    n = a.chain.num_sites
    # windows that cover the whole ring see no cut
    top = (n - 1) // 2 if a.chain.periodic else n // 2
    ws = list(windows_) if windows_ is not None else list(range(1, top + 1))
    rows = []
    for w in ws:
        i1, i2 = _mi_terms(a, cut, w, Entropy.VON_NEUMANN)
        r1, r2 = _mi_terms(a, cut, w, Entropy.RENYI2)
        raw = 0.5 * (i1 - i2)
        rows.append(WindowRow(w, raw, 0.5 * (r1 - r2), round_index(raw, a.chain.primes).rounded))
    return rows


def plateau_onset(rows: Sequence[WindowRow], flat: float = 0.02) -> int | None:
    """Smallest window from which the rounded value is constant and the raw
    values stay within ``flat`` of each other."""
    for i in range(len(rows)):
        tail = rows[i:]
        raws = [r.raw_vn for r in tail]
        if len({r.rounded for r in tail}) == 1 and max(raws) - min(raws) <= flat:
            return tail[0].window
    return None


def restricted_choi_density(a: Automorphism, sites: Sequence[int]) -> np.ndarray:
    """Reduced density matrix of the Choi state on ``sites`` and their copies."""
    s = local_choi(a, sites)
    n = a.chain.num_sites
    labels = sorted(list(sites) + [n + x for x in sites])
    pos = s.positions(labels)
    dims = s.dims
    rest = [i for i in range(len(dims)) if i not in set(pos)]
    da = math.prod(dims[i] for i in pos)
    t = s.state.reshape(dims).transpose(pos + rest).reshape(da, -1)
    return t @ t.conj().T


def trace_distance(r1: np.ndarray, r2: np.ndarray) -> float:
    ev = np.linalg.eigvalsh((r1 - r2 + (r1 - r2).conj().T) / 2)
    return float(0.5 * np.sum(np.abs(ev)))


@dataclass
class ContinuityReport:
    eps_lower: float
    eps_upper: float
    trace_distance: float
    delta_index: float
    bound: float
    holds: bool

    def as_dict(self) -> dict[str, object]:
        return dict(self.__dict__)


def mi_continuity_experiment(a1: Automorphism, a2: Automorphism, window: int, cut: int = 0, seed: int = 0, restarts: int = 40) -> ContinuityReport:
    """Compare the index change with the restricted distance of two automorphisms on the windows."""
    from .stability import restricted_distance_bounds

    if a1.chain != a2.chain:
        raise RegionMismatch("automorphisms act on different chains")
    chain = a1.chain
    left, right = windows(chain, cut, window)
    x = sorted(left + right)
    rng = np.random.default_rng(seed)
    lo, up = restricted_distance_bounds(a1.unitary, a2.unitary, list(chain.local_dims), x, rng, restarts)
    td = trace_distance(restricted_choi_density(a1, x), restricted_choi_density(a2, x))
    i1 = index_mi(a1, cut, window).raw
    i2 = index_mi(a2, cut, window).raw
    d = max(chain.local_dims[s] for s in x)
    e = min(up, 1.0)
    bound = 3 * e * len(x) * math.log(d) + (e * math.log(1 / e) if e > 0 else 0.0)
    delta = abs(i1 - i2)
    return ContinuityReport(lo, up, td, delta, bound, bool(delta <= bound + 1e-12))
