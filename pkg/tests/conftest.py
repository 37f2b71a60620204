from __future__ import annotations

import numpy as np
import pytest

from qcalab.chain_algebra import Boundary, ChainSpec

X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
I2 = np.eye(2, dtype=complex)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240601)


@pytest.fixture
def ring8() -> ChainSpec:
    return ChainSpec.uniform(8, 2)


@pytest.fixture
def line3() -> ChainSpec:
    return ChainSpec.uniform(3, 2, Boundary.OPEN)


def haar(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar unitary by QR of a Ginibre matrix, with the phase correction."""
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    q, r = np.linalg.qr(g)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def kron(*mats: np.ndarray) -> np.ndarray:
    out = np.eye(1, dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return out


def site_op(op: np.ndarray, site: int, n: int, d: int = 2) -> np.ndarray:
    return kron(*[op if s == site else np.eye(d) for s in range(n)])


def shift_unitary(n: int, d: int, k: int) -> np.ndarray:
    """Permutation unitary with ``U^dag x_s U = x_{s-k}``, built from basis states."""
    dim = d**n
    u = np.zeros((dim, dim), dtype=complex)
    for idx in range(dim):
        digits = np.unravel_index(idx, (d,) * n)
        moved = tuple(digits[(s - k) % n] for s in range(n))
        u[np.ravel_multi_index(moved, (d,) * n), idx] = 1
    return u


CRITERIA = {
    1: "shift index by four methods",
    2: "random circuits have index zero",
    3: "index additivity",
    4: "index formulas agree",
    5: "index robust under small perturbation",
    6: "rounding recovers zero for short-time evolution",
    7: "stability constructions",
    8: "commutator inequality suites",
    9: "decomposition and synthesis round trips",
    10: "QCA approximation sweep",
    11: "Lieb-Robinson tail sum and reproducing verdicts",
    12: "fermionic translation",
    13: "blending",
}

_verdicts: dict[int, bool] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    if report.when == "call" or report.failed:
        n = int(name.split("_")[2])
        _verdicts[n] = _verdicts.get(n, True) and report.passed


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        if n in _verdicts:
            terminalreporter.write_line(f"criterion {n:2d} {'PASS' if _verdicts[n] else 'FAIL'}  {title}")
