"""Global-echo randomized benchmarking on CZ pairs.

Each block applies a random single-qubit Clifford to every qubit and then
CZ, a global X echo and CZ.  CZ (X x X) CZ is a Pauli, so each pair stays in
a product state and the final inversion is a single-qubit Clifford per
qubit, found by search over the 24-element group.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

import numpy as np

from ..circuit import Circuit, CircuitBuilder, ZoneKind
from .clifford1q import clifford_ops, clifford_unitary, clifford_words

CZ = np.diag([1, 1, 1, -1]).astype(complex)
XX = np.kron([[0, 1], [1, 0]], [[0, 1], [1, 0]]).astype(complex)


@dataclass(frozen=True)
class GerbSpec:
    n_blocks: int
    pair_count: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_blocks < 0:
            raise ValueError("n_blocks must be >= 0")
        if self.pair_count < 1:
            raise ValueError("pair_count must be >= 1")


def _inversion(psi: np.ndarray) -> tuple[int, int]:
    target = 3  # |11>
    for i, j in itertools.product(range(24), repeat=2):
        out = np.kron(clifford_unitary(i), clifford_unitary(j)) @ psi
        if abs(abs(out[target]) - 1) < 1e-9:
            return i, j
    raise AssertionError("no Clifford inversion found")


def gen_gerb(spec: GerbSpec) -> Circuit:
    rng = np.random.default_rng(spec.seed)
    b = CircuitBuilder()
    pairs = []
    for _ in range(spec.pair_count):
        a = b.add_qubit("data", ZoneKind.REGISTER, len(b.qubits))
        c = b.add_qubit("data", ZoneKind.REGISTER, len(b.qubits))
        pairs.append((a, c))
    states = [np.array([1, 0, 0, 0], dtype=complex) for _ in pairs]
    choices = []
    for _ in range(spec.n_blocks):
        picks = rng.integers(0, 24, size=(len(pairs), 2))
        choices.append(picks.tolist())
        for (a, c), (i, j) in zip(pairs, picks):
            b.append(clifford_ops(int(i), a))
            b.append(clifford_ops(int(j), c))
        for a, c in pairs:
            b.cz(a, c)
        b.x(*[q for p in pairs for q in p], echo=True)
        for a, c in pairs:
            b.cz(a, c)
        for p, (i, j) in enumerate(picks):
            u = np.kron(clifford_unitary(int(i)), clifford_unitary(int(j)))
            states[p] = CZ @ XX @ CZ @ u @ states[p]
    inversions = []
    for (a, c), psi in zip(pairs, states):
        i, j = _inversion(psi)
        inversions.append([i, j])
        b.append(clifford_ops(i, a))
        b.append(clifford_ops(j, c))
    qubits = [q for p in pairs for q in p]
    b.measure(qubits)
    b.metadata = {
        "kind": "gerb",
        "spec": asdict(spec),
        "pairs": pairs,
        "clifford_set": "single-qubit Clifford group (24)",
        "choices": choices,
        "inversions": inversions,
        "expected": {str(q): 1 for q in qubits},
        "words": [list(map(str, w)) for w in clifford_words()],
    }
    return b.build()
