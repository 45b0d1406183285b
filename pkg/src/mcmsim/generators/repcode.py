"""Walking (swap-compiled) ring repetition code.

2N qubits on a ring.  In cycle c the data sits on qubits i = 2k + c.  Two
CNOT layers, i -> i+1 and then i+1 -> i+2, copy the data one site forward
and leave x_k xor x_{k+1} on qubit i+2, which is measured and recycled.
Every qubit therefore sees at most four CZ gates between measurements and
the logical information walks one site per cycle.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

from ..circuit import CircuitBuilder, Circuit, ZoneKind


@dataclass(frozen=True)
class RepCodeSpec:
    distance: int
    cycles: int
    phase_sensitive: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.distance < 3 or self.distance % 2 == 0:
            raise ValueError(f"distance must be odd and >= 3, got {self.distance}")
        if self.cycles < 1:
            raise ValueError(f"cycles must be >= 1, got {self.cycles}")


def data_qubits(n_checks: int, cycle: int) -> list[int]:
    """Qubits holding logical positions 0..N-1 at the start of ``cycle``."""
    n = 2 * n_checks
    return [(2 * k + cycle) % n for k in range(n_checks)]


def measured_qubits(n_checks: int, cycle: int) -> list[int]:
    n = 2 * n_checks
    return [(2 * k + 2 + cycle) % n for k in range(n_checks)]


def gen_walking_repcode(spec: RepCodeSpec) -> Circuit:
    N, C = spec.distance, spec.cycles
    n = 2 * N
    b = CircuitBuilder()
    for i in range(n):
        b.add_qubit("data" if i % 2 == 0 else "ancilla", ZoneKind.REGISTER, i)
    # classical bit tracking of the noiseless computational-basis evolution
    bits = [0] * n
    checks: dict[tuple[int, int], tuple[int, int]] = {}
    expected: dict[tuple[int, int], int] = {}
    for c in range(C):
        data = data_qubits(N, c)
        fresh = [(i + 1) % n for i in data]
        meas = measured_qubits(N, c)
        for i, f in zip(data, fresh):
            b.cnot(i, f)
            bits[f] ^= bits[i]
        for f, m in zip(fresh, meas):
            b.cnot(f, m)
            bits[m] ^= bits[f]
        b.move(meas, ZoneKind.MZ, range(N))
        if spec.phase_sensitive:
            b.h(*fresh)
        op_index = len(b.ops)
        b.mcm(meas, cycle=c)
        for k, m in enumerate(meas):
            checks[(c, k)] = (op_index, m)
            expected[(c, k)] = bits[m]
        b.x(*fresh, echo=True)
        if not spec.phase_sensitive:
            for f in fresh:
                bits[f] ^= 1
        b.reset(meas)
        for m in meas:
            bits[m] = 0
        b.cond_fill(ZoneKind.MZ)
        if spec.phase_sensitive:
            b.h(*fresh)
        b.move(meas, ZoneKind.REGISTER, meas)
    final = data_qubits(N, C)
    final_op = len(b.ops)
    b.measure(final)
    final_key = {q: (final_op, q) for q in final}

    detectors = []
    for c in range(C):
        for k in range(N):
            keys = [checks[(c, k)]]
            parity = expected[(c, k)]
            if c > 0:
                keys.append(checks[(c - 1, k)])
                parity ^= expected[(c - 1, k)]
            detectors.append({"id": [c, k], "keys": [list(x) for x in keys], "expected": parity})
    for k in range(N):
        left, right = final[k], final[(k + 1) % N]
        keys = [checks[(C - 1, k)], final_key[left], final_key[right]]
        parity = expected[(C - 1, k)] ^ bits[left] ^ bits[right]
        detectors.append({"id": [C, k], "keys": [list(x) for x in keys], "expected": parity})

    b.metadata = {
        "kind": "repcode",
        "spec": asdict(spec),
        "roles": {str(i): ("data" if i % 2 == 0 else "ancilla") for i in range(n)},
        "detectors": detectors,
        "observable": {"keys": [list(final_key[final[0]])], "expected": bits[final[0]]},
        "final_data": final,
    }
    return b.build()
