"""Ramsey sequence on register atoms with interleaved MCM cycles."""

from __future__ import annotations

import numpy as np

from ..circuit import Circuit, CircuitBuilder, ZoneKind
from .clifford1q import SX, rz


def gen_ramsey_mcm(
    n_mcm_cycles: int,
    include_light: bool = True,
    phase_scan=(0, 2),
    n_register: int = 16,
    n_measured: int = 4,
) -> Circuit:
    """pi/2 - n x (MCM on MZ atoms + register echo) - phase - pi/2 - measure.

    Register qubit j uses phase ``phase_scan[j % len(phase_scan)]`` in
    quarter turns.  With ``include_light`` false the MCM blocks keep their
    timing but no imaging happens, so nothing is recorded or refilled.
    """
    if n_mcm_cycles < 0:
        raise ValueError("n_mcm_cycles must be >= 0")
    phases = [int(p) for p in phase_scan]
    if not phases:
        raise ValueError("phase_scan must not be empty")
    b = CircuitBuilder()
    reg = [b.add_qubit("data", ZoneKind.REGISTER, j) for j in range(n_register)]
    mz = [b.add_qubit("ancilla", ZoneKind.MZ, j) for j in range(n_measured)]
    b.sx(*reg)
    for c in range(n_mcm_cycles):
        b.mcm(mz, cycle=c, light=include_light)
        b.x(*reg, echo=True)
        if include_light:
            b.reset(mz)
            b.cond_fill(ZoneKind.MZ)
    assigned = []
    for j, q in enumerate(reg):
        k = phases[j % len(phases)]
        assigned.append(k)
        if k % 4:
            b.rz(q, k)
        b.sx(q)
    b.measure(reg)
    # noiseless P(1) per register qubit
    p1 = []
    echo = np.linalg.matrix_power(np.array([[0, 1], [1, 0]], dtype=complex), n_mcm_cycles)
    for k in assigned:
        psi = SX @ rz(k) @ echo @ SX @ np.array([1, 0], dtype=complex)
        p1.append(float(round(abs(psi[1]) ** 2, 12)))
    b.metadata = {
        "kind": "ramsey_mcm",
        "n_mcm_cycles": n_mcm_cycles,
        "include_light": include_light,
        "register": reg,
        "measured": mz,
        "phases": assigned,
        "p1": p1,
    }
    return b.build()
