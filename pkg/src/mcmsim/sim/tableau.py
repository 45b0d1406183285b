"""CHP stabilizer tableau (Aaronson & Gottesman) on numpy boolean arrays.

Rows ``0..n-1`` are destabilizers, ``n..2n-1`` stabilizers and row ``2n``
is scratch space for deterministic measurements.
"""

from __future__ import annotations

import numpy as np


def _g_reference(x1, z1, x2, z2) -> int:
    if x1 and z1:
        return z2 - x2
    if x1:
        return z2 * (2 * x2 - 1)
    if z1:
        return x2 * (1 - 2 * z2)
    return 0


# phase exponent indexed by the packed bits x1 z1 x2 z2
_G_TABLE = np.array([_g_reference(*((k >> s) & 1 for s in (3, 2, 1, 0))) for k in range(16)], dtype=np.int8)


def _g(x1, z1, x2, z2):
    """Exponent of i picked up when multiplying Pauli (x1,z1) into (x2,z2), per qubit."""
    u = np.uint8
    idx = (x1.view(u) << 3) | (z1.view(u) << 2) | (x2.view(u) << 1) | z2.view(u)
    return _G_TABLE[idx]


class Tableau:
    def __init__(self, n: int):
        self.n = n
        self.x = np.zeros((2 * n + 1, n), dtype=bool)
        self.z = np.zeros((2 * n + 1, n), dtype=bool)
        self.r = np.zeros(2 * n + 1, dtype=bool)
        idx = np.arange(n)
        self.x[idx, idx] = True
        self.z[n + idx, idx] = True

    def copy(self) -> "Tableau":
        t = Tableau.__new__(Tableau)
        t.n = self.n
        t.x = self.x.copy()
        t.z = self.z.copy()
        t.r = self.r.copy()
        return t

    # Clifford generators ---------------------------------------------------
    def h(self, a: int):
        xa, za = self.x[:, a].copy(), self.z[:, a].copy()
        self.r ^= xa & za
        self.x[:, a], self.z[:, a] = za, xa

    def s(self, a: int):
        self.r ^= self.x[:, a] & self.z[:, a]
        self.z[:, a] ^= self.x[:, a]

    def sdg(self, a: int):
        self.s(a)
        self.s(a)
        self.s(a)

    def sx(self, a: int):
        # H S H: X -> X, Z -> -Y
        xa, za = self.x[:, a], self.z[:, a]
        self.r ^= za & ~xa
        xa ^= za

    def rz(self, a: int, quarter_turns: int):
        for _ in range(int(quarter_turns) % 4):
            self.s(a)

    def pauli_x(self, a: int):
        self.r ^= self.z[:, a]

    def pauli_z(self, a: int):
        self.r ^= self.x[:, a]

    def pauli_y(self, a: int):
        self.r ^= self.x[:, a] ^ self.z[:, a]

    def apply_pauli(self, a: int, which: str):
        if which == "X":
            self.pauli_x(a)
        elif which == "Y":
            self.pauli_y(a)
        elif which == "Z":
            self.pauli_z(a)

    def cnot(self, a: int, b: int):
        x, z = self.x, self.z
        self.r ^= x[:, a] & z[:, b] & ~(x[:, b] ^ z[:, a])
        x[:, b] ^= x[:, a]
        z[:, a] ^= z[:, b]

    def cz(self, a: int, b: int):
        x, z = self.x, self.z
        self.r ^= x[:, a] & x[:, b] & (z[:, a] ^ z[:, b])
        z[:, a] ^= x[:, b]
        z[:, b] ^= x[:, a]

    # Measurement -----------------------------------------------------------
    def _rowsum_many(self, rows: np.ndarray, i: int):
        """Left-multiply row ``i`` into every row in ``rows`` (in place)."""
        g = _g(self.x[i], self.z[i], self.x[rows], self.z[rows]).sum(axis=1)
        total = 2 * self.r[rows].astype(np.int64) + 2 * int(self.r[i]) + g
        self.r[rows] = (total % 4) == 2
        self.x[rows] ^= self.x[i]
        self.z[rows] ^= self.z[i]

    def is_deterministic(self, a: int) -> bool:
        n = self.n
        return not self.x[n : 2 * n, a].any()

    def measure(self, a: int, rng: np.random.Generator | None = None, forced: int | None = None) -> tuple[int, bool]:
        """Z-measure qubit ``a``; returns (outcome, was_random).

        For a random outcome, ``forced`` picks the branch, otherwise one
        uniform draw from ``rng`` decides it.
        """
        n = self.n
        stab_x = self.x[n : 2 * n, a]
        hits = stab_x.nonzero()[0]
        if hits.size:
            p = int(hits[0]) + n
            others = self.x[: 2 * n, a].nonzero()[0]
            others = others[others != p]
            if others.size:
                self._rowsum_many(others, p)
            self.x[p - n] = self.x[p]
            self.z[p - n] = self.z[p]
            self.r[p - n] = self.r[p]
            self.x[p] = False
            self.z[p] = False
            self.z[p, a] = True
            if forced is not None:
                bit = int(forced)
            else:
                bit = int(rng.integers(2)) if rng is not None else 0
            self.r[p] = bool(bit)
            return bit, True
        s = 2 * n
        self.x[s] = False
        self.z[s] = False
        self.r[s] = False
        for i in self.x[:n, a].nonzero()[0]:
            self._rowsum_many(np.array([s]), int(i) + n)
        return int(self.r[s]), False

    def peek_z(self, a: int) -> int | None:
        """Deterministic Z value of qubit ``a`` or None if random; no collapse."""
        if not self.is_deterministic(a):
            return None
        t = self.copy()
        return t.measure(a)[0]

    def reset(self, a: int, rng: np.random.Generator | None = None):
        bit, _ = self.measure(a, rng=rng)
        if bit:
            self.pauli_x(a)

    # Introspection ---------------------------------------------------------
    def stabilizers(self) -> list[str]:
        n = self.n
        out = []
        for row in range(n, 2 * n):
            chars = []
            for j in range(n):
                xb, zb = self.x[row, j], self.z[row, j]
                chars.append("Y" if xb and zb else "X" if xb else "Z" if zb else "I")
            out.append(("-" if self.r[row] else "+") + "".join(chars))
        return out

    def commutation_ok(self) -> bool:
        """Symplectic integrity: destabilizer/stabilizer rows pair up canonically."""
        n = self.n
        x = self.x[: 2 * n].astype(np.int64)
        z = self.z[: 2 * n].astype(np.int64)
        lam = (x @ z.T + z @ x.T) % 2
        expected = np.zeros((2 * n, 2 * n), dtype=np.int64)
        expected[:n, n:] = np.eye(n, dtype=np.int64)
        expected[n:, :n] = np.eye(n, dtype=np.int64)
        return bool(np.array_equal(lam, expected))

    def expectation(self, pauli: str) -> int:
        """+1/-1 if the Pauli string (optionally signed) is a stabilizer up to sign, else 0."""
        sign = 1
        if pauli[0] in "+-":
            sign = -1 if pauli[0] == "-" else 1
            pauli = pauli[1:]
        n = self.n
        px = np.array([c in "XY" for c in pauli], dtype=bool)
        pz = np.array([c in "ZY" for c in pauli], dtype=bool)
        # anticommutes with some stabilizer => random
        comm = (self.x[n : 2 * n] & pz).sum(axis=1) + (self.z[n : 2 * n] & px).sum(axis=1)
        if (comm % 2).any():
            return 0
        # P = product of stabilizers selected by destabilizers anticommuting with P
        dcomm = ((self.x[:n] & pz).sum(axis=1) + (self.z[:n] & px).sum(axis=1)) % 2
        t = self.copy()
        s = 2 * n
        t.x[s] = False
        t.z[s] = False
        t.r[s] = False
        for i in np.flatnonzero(dcomm):
            t._rowsum_many(np.array([s]), int(i) + n)
        if not (np.array_equal(t.x[s], px) and np.array_equal(t.z[s], pz)):
            return 0
        # account for Y = iXZ convention of the row encoding
        return sign * (-1 if t.r[s] else 1)
