"""The 24 single-qubit Cliffords as shortest native words over {RZ(k*pi/2), SX}."""

from __future__ import annotations

from collections import deque
from functools import lru_cache

import numpy as np

from ..circuit import NativeOp, Opcode

SX = 0.5 * np.array([[1 + 1j, 1 - 1j], [1 - 1j, 1 + 1j]])


def rz(k: int) -> np.ndarray:
    return np.diag([1, 1j ** (k % 4)])


def canonical(u: np.ndarray) -> tuple:
    """Hashable form of a unitary up to global phase."""
    flat = u.ravel()
    j = int(np.argmax(np.abs(flat) > 1e-9))
    v = flat * (abs(flat[j]) / flat[j])
    return tuple(np.round(v, 9).tolist())


def word_unitary(word) -> np.ndarray:
    u = np.eye(2, dtype=complex)
    for g in word:
        u = (SX if g == "SX" else rz(g)) @ u
    return u


@lru_cache(maxsize=None)
def clifford_words() -> tuple:
    """Breadth-first enumeration; index 0 is the identity."""
    gens = ["SX", 1, 2, 3]
    seen = {canonical(np.eye(2)): ()}
    order = [()]
    queue = deque([()])
    while queue:
        w = queue.popleft()
        u = word_unitary(w)
        for g in gens:
            if w and not isinstance(g, str) and not isinstance(w[-1], str):
                continue  # merge consecutive RZs
            w2 = w + (g,)
            key = canonical((SX if g == "SX" else rz(g)) @ u)
            if key not in seen:
                seen[key] = w2
                order.append(w2)
                queue.append(w2)
    if len(order) != 24:
        raise AssertionError(f"expected 24 Cliffords, found {len(order)}")
    return tuple(order)


def clifford_unitary(index: int) -> np.ndarray:
    return word_unitary(clifford_words()[index])


def clifford_ops(index: int, q: int) -> list[NativeOp]:
    return [
        NativeOp(Opcode.SX, (q,)) if g == "SX" else NativeOp(Opcode.RZ, (q,), angle=g)
        for g in clifford_words()[index]
    ]
