"""Shared builders and statistics for the test suite."""

from __future__ import annotations

from collections import Counter

import numpy as np
from scipy import stats

from mcmsim.circuit import CircuitBuilder, ZoneKind

SX = np.array([[1 + 1j, 1 - 1j], [1 - 1j, 1 + 1j]]) / 2
H = np.array([[1, 1], [1, -1]]) / np.sqrt(2)


def rz(k: int) -> np.ndarray:
    return np.diag([1, 1j ** (k % 4)])


def equal_up_to_phase(a: np.ndarray, b: np.ndarray, tol: float = 1e-10) -> bool:
    i = np.unravel_index(np.argmax(np.abs(b)), b.shape)
    if abs(a[i]) < tol:
        return False
    return np.allclose(a * (b[i] / a[i]), b, atol=tol)


def random_clifford_circuit(rng: np.random.Generator, n: int, depth: int, mid_measure: bool = True):
    """Random Clifford circuit on n register qubits with optional MZ round trips, ending in MEASURE."""
    b = CircuitBuilder()
    qs = [b.add_qubit("data", ZoneKind.REGISTER, i) for i in range(n)]
    for _ in range(depth):
        r = rng.random()
        q = int(rng.integers(n))
        if r < 0.3:
            b.rz(q, int(rng.integers(1, 4)))
        elif r < 0.6:
            b.sx(q)
        elif r < 0.7:
            b.x(q)
        elif r < 0.92 and n > 1:
            a, c = rng.choice(n, 2, replace=False)
            b.cz(int(a), int(c))
        elif mid_measure:
            b.move([q], ZoneKind.MZ, [0])
            b.mcm([q])
            if rng.random() < 0.5:
                b.reset([q])
            b.move([q], ZoneKind.REGISTER, [q])
    b.measure(qs)
    return b.build()


def chi_square_pvalue(observed: Counter, expected: dict, shots: int) -> float:
    """Goodness of fit with bins of expected count < 5 pooled; 0 if an impossible outcome appears."""
    for k in observed:
        if expected.get(k, 0.0) <= 0:
            return 0.0
    big = [k for k, p in expected.items() if p * shots >= 5]
    small = [k for k, p in expected.items() if p * shots < 5]
    obs = [observed.get(k, 0) for k in big]
    exp = [expected[k] * shots for k in big]
    if small:
        obs.append(sum(observed.get(k, 0) for k in small))
        exp.append(sum(expected[k] for k in small) * shots)
    if len(obs) < 2:
        return 1.0
    exp = np.array(exp) * (sum(obs) / sum(exp))
    return float(stats.chisquare(obs, exp).pvalue)


def binom_z(k: int, n: int, p: float) -> float:
    """Standardized distance of k/n from p."""
    sd = np.sqrt(n * p * (1 - p))
    return abs(k - n * p) / sd if sd > 0 else (0.0 if k == n * p else np.inf)


def unitary_of(ops) -> np.ndarray:
    """Matrix product of native single-qubit ops in time order."""
    from mcmsim.circuit import Opcode

    U = np.eye(2, dtype=complex)
    for op in ops:
        if op.opcode is Opcode.RZ:
            U = rz(int(op.angle)) @ U
        elif op.opcode is Opcode.SX:
            U = SX @ U
        elif op.opcode is Opcode.X:
            U = np.array([[0, 1], [1, 0]]) @ U
    return U


_PERMS: dict = {}


def min_assignment_brute_force(cost: np.ndarray) -> float:
    """Exhaustive minimum over all injective maps rows -> columns."""
    import itertools

    k, m = cost.shape
    if k == 0:
        return 0.0
    if (m, k) not in _PERMS:
        _PERMS[(m, k)] = np.array(list(itertools.permutations(range(m), k)), dtype=np.int8)
    perms = _PERMS[(m, k)]
    return float(cost[np.arange(k), perms].sum(axis=1).min())
