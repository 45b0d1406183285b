"""Dense statevector oracle for small noiseless circuits (validation only)."""

from __future__ import annotations

import numpy as np

from ..circuit import Circuit, Opcode
from .rng import make_rng

MAX_QUBITS = 6
SX = 0.5 * np.array([[1 + 1j, 1 - 1j], [1 - 1j, 1 + 1j]])
X = np.array([[0, 1], [1, 0]], dtype=complex)


def _apply1(psi: np.ndarray, u: np.ndarray, q: int) -> np.ndarray:
    psi = np.moveaxis(psi, q, 0)
    psi = np.tensordot(u, psi, axes=(1, 0))
    return np.moveaxis(psi, 0, q)


def _apply_op(psi, op):
    c = op.opcode
    if c is Opcode.RZ:
        return _apply1(psi, np.diag([1, 1j ** (int(round(op.angle)) % 4)]), op.targets[0])
    if c is Opcode.SX:
        return _apply1(psi, SX, op.targets[0])
    if c is Opcode.X:
        return _apply1(psi, X, op.targets[0])
    if c is Opcode.CZ:
        a, b = op.targets
        psi = psi.copy()
        idx = [slice(None)] * psi.ndim
        idx[a] = 1
        idx[b] = 1
        psi[tuple(idx)] *= -1
        return psi
    return psi


def _project(psi, q, bit):
    idx = [slice(None)] * psi.ndim
    idx[q] = 1 - bit
    out = psi.copy()
    out[tuple(idx)] = 0
    return out


def _prob_one(psi, q) -> float:
    idx = [slice(None)] * psi.ndim
    idx[q] = 1
    return float(np.sum(np.abs(psi[tuple(idx)]) ** 2))


def _check(circuit: Circuit):
    n = circuit.num_qubits
    if n > MAX_QUBITS:
        raise ValueError(f"statevector oracle supports at most {MAX_QUBITS} qubits, got {n}")
    if circuit.loop_span() is not None:
        raise ValueError("statevector oracle does not run RETRY loops")
    return n


def oracle_statevector(circuit: Circuit, seed: int = 0) -> tuple[np.ndarray, list[tuple[int, int, int]]]:
    """Final amplitudes (qubit 0 most significant) and sampled (op, qubit, bit) record."""
    n = _check(circuit)
    rng = make_rng(seed)
    psi = np.zeros((2,) * n, dtype=complex) if n else np.ones((), dtype=complex)
    psi[(0,) * n] = 1
    record = []
    for i, op in enumerate(circuit.ops):
        c = op.opcode
        if c in (Opcode.MCM, Opcode.MEASURE, Opcode.RESET0):
            if c is Opcode.MCM and not op.light:
                continue
            for q in op.targets:
                p1 = _prob_one(psi, q)
                bit = int(rng.random() < p1)
                psi = _project(psi, q, bit)
                psi /= np.linalg.norm(psi)
                if c is Opcode.RESET0:
                    if bit:
                        psi = _apply1(psi, X, q)
                else:
                    record.append((i, q, bit))
        else:
            psi = _apply_op(psi, op)
    return psi.reshape(-1), record


def outcome_distribution(circuit: Circuit, tol: float = 1e-14) -> dict[tuple[int, ...], float]:
    """Exact distribution of the measurement record in ``measurement_keys()`` order."""
    n = _check(circuit)
    psi0 = np.zeros((2,) * n, dtype=complex)
    psi0[(0,) * n] = 1
    branches = [(psi0, 1.0, ())]
    for op in circuit.ops:
        c = op.opcode
        if c in (Opcode.MCM, Opcode.MEASURE, Opcode.RESET0):
            if c is Opcode.MCM and not op.light:
                continue
            for q in op.targets:
                nxt = []
                for psi, p, bits in branches:
                    p1 = _prob_one(psi, q)
                    for bit, pb in ((0, 1 - p1), (1, p1)):
                        if pb <= tol:
                            continue
                        phi = _project(psi, q, bit) / np.sqrt(pb)
                        if c is Opcode.RESET0:
                            if bit:
                                phi = _apply1(phi, X, q)
                            nxt.append((phi, p * pb, bits))
                        else:
                            nxt.append((phi, p * pb, bits + (bit,)))
                branches = nxt
        else:
            branches = [(_apply_op(psi, op), p, bits) for psi, p, bits in branches]
    dist: dict = {}
    for _, p, bits in branches:
        dist[bits] = dist.get(bits, 0.0) + p
    return dist
