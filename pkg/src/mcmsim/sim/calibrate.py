"""Calibration of noise parameters against benchmark targets.

The Bell calibration is exact: a small density-matrix simulation of the
Bell circuit with the engine's Pauli channels and readout flips, post-selected
on survival like the benchmark it targets.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np
import yaml
from scipy.optimize import brentq

from ..circuit import Circuit, CircuitBuilder, Opcode, ZoneKind
from ..generators.distill import DistillSpec, gen_distillation, rotation_ops
from .frames import sample_batch
from .noise import NoiseModel
from .statevector import SX, X

BELL_TARGET = 0.988
HERALD_TARGET_ATTEMPTS = 1.44
_P = {
    "I": np.eye(2, dtype=complex),
    "X": X,
    "Y": np.array([[0, -1j], [1j, 0]]),
    "Z": np.diag([1.0 + 0j, -1.0]),
}
# target parity bit of |Phi+> per basis after the basis rotation
_BELL_PARITY = {"XX": 0, "YY": 1, "ZZ": 0}


def bell_circuit(basis: str) -> Circuit:
    b = CircuitBuilder()
    q0 = b.add_qubit("data", ZoneKind.REGISTER, 0)
    q1 = b.add_qubit("data", ZoneKind.REGISTER, 1)
    b.h(q0)
    b.cnot(q0, q1)
    for q in (q0, q1):
        b.append(rotation_ops(basis, q))
    b.measure([q0, q1])
    b.metadata = {"kind": "bell", "basis": basis, "target_parity": _BELL_PARITY[basis]}
    return b.build()


def _op_on(n, q, u):
    mats = [np.eye(2, dtype=complex)] * n
    mats[q] = u
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def _channel(rho, kraus):
    return sum(p * K @ rho @ K.conj().T for p, K in kraus)


def density_matrix_bits(circuit: Circuit, noise: NoiseModel) -> np.ndarray:
    """Exact distribution of the reported final MEASURE bits, post-selected on survival.

    Gate channels follow the engine: SX and non-echo X depolarize with
    p_1q_pauli, CZ applies one of 15 Paulis with p_cz_pauli; readout flips
    1->0 and 0->1 independently per qubit.  Qubit 0 is the most significant bit.
    """
    n = circuit.num_qubits
    if n > 4 or circuit.loop_span() is not None:
        raise ValueError("density-matrix calibration supports loop-free circuits with <= 4 qubits")
    dim = 2**n
    rho = np.zeros((dim, dim), dtype=complex)
    rho[0, 0] = 1
    measured = None
    for op in circuit.ops:
        c = op.opcode
        if c is Opcode.RZ:
            U = _op_on(n, op.targets[0], np.diag([1, 1j ** (int(round(op.angle)) % 4)]))
            rho = U @ rho @ U.conj().T
        elif c in (Opcode.SX, Opcode.X):
            q = op.targets[0]
            U = _op_on(n, q, SX if c is Opcode.SX else X)
            rho = U @ rho @ U.conj().T
            if c is Opcode.SX or not op.echo:
                p = noise.p_1q_pauli
                rho = _channel(rho, [(1 - p, np.eye(dim))] + [(p / 3, _op_on(n, q, _P[s])) for s in "XYZ"])
        elif c is Opcode.CZ:
            a, b = op.targets
            diag = np.ones(dim, dtype=complex)
            for idx in range(dim):
                if (idx >> (n - 1 - a)) & 1 and (idx >> (n - 1 - b)) & 1:
                    diag[idx] = -1
            U = np.diag(diag)
            rho = U @ rho @ U.conj().T
            p = noise.p_cz_pauli
            kraus = [(1 - p, np.eye(dim))]
            for sa in "IXYZ":
                for sb in "IXYZ":
                    if sa + sb != "II":
                        kraus.append((p / 15, _op_on(n, a, _P[sa]) @ _op_on(n, b, _P[sb])))
            rho = _channel(rho, kraus)
        elif c is Opcode.MEASURE:
            measured = list(op.targets)
        elif c is Opcode.MOVE:
            continue
        else:
            raise ValueError(f"{c.value} is not supported by the density-matrix calibration")
    if measured is None:
        raise ValueError("circuit has no MEASURE")
    probs = np.real(np.diag(rho)).reshape((2,) * n)
    # marginalize to measured qubits, in MEASURE order
    keep = measured
    drop = tuple(q for q in range(n) if q not in keep)
    probs = probs.sum(axis=drop) if drop else probs
    order = sorted(keep)
    probs = np.transpose(probs, [order.index(q) for q in keep])
    flip = np.array([[1 - noise.p_flip_0to1, noise.p_flip_0to1], [noise.p_flip_1to0, 1 - noise.p_flip_1to0]])
    for axis in range(len(keep)):
        probs = np.moveaxis(np.tensordot(probs, flip, axes=([axis], [0])), -1, axis)
    return probs.reshape(-1)


def bell_failures(noise: NoiseModel) -> dict:
    """Exact per-basis probability that the pair parity misses the |Phi+> target."""
    out = {}
    for basis in ("XX", "YY", "ZZ"):
        probs = density_matrix_bits(bell_circuit(basis), noise)
        odd = probs[1] + probs[2]
        out[basis] = float(odd if _BELL_PARITY[basis] == 0 else 1 - odd)
    return out


def bell_fidelity_exact(noise: NoiseModel) -> float:
    f = bell_failures(noise)
    return 1 - sum(f.values()) / 2


def calibrate_cz_pauli(noise: NoiseModel, target: float = BELL_TARGET) -> float:
    """p_cz_pauli such that the exact Bell fidelity equals ``target``."""
    g = lambda p: bell_fidelity_exact(noise.replace(p_cz_pauli=p)) - target
    if g(0.0) < 0:
        raise ValueError("target fidelity is below what readout and 1Q noise alone give")
    return float(brentq(g, 0.0, 0.5, xtol=1e-12))


@dataclass(frozen=True)
class HeraldCalibration:
    scale: float
    mean_attempts: float
    shots: int
    seed: int


def herald_mean_attempts(noise: NoiseModel, shots: int, seed: int, spec: DistillSpec | None = None) -> float:
    circuit = gen_distillation(spec or DistillSpec())
    batch = sample_batch(circuit, noise, shots, seed)
    return float(batch.attempts.mean())


def herald_noise(noise: NoiseModel, scale: float) -> NoiseModel:
    """Distillation-run noise: gate Pauli probabilities multiplied by ``scale``."""
    return noise.replace(
        p_cz_pauli=min(0.5, noise.p_cz_pauli * scale),
        p_1q_pauli=min(0.5, noise.p_1q_pauli * scale),
    )


def calibrate_herald(
    noise: NoiseModel,
    target_attempts: float = HERALD_TARGET_ATTEMPTS,
    shots: int = 20000,
    seed: int = 7,
    lo: float = 0.0,
    hi: float = 8.0,
    iters: int = 30,
) -> HeraldCalibration:
    """Bisection on the knob of ``herald_noise`` for the target mean attempt count."""
    f = lambda s: herald_mean_attempts(herald_noise(noise, s), shots, seed) - target_attempts
    if f(lo) > 0:
        raise ValueError("target attempt count is below the knob's lower end")
    if f(hi) < 0:
        raise ValueError("target attempt count is above the knob's upper end")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-4 * max(1.0, hi):
            break
    s = 0.5 * (lo + hi)
    return HeraldCalibration(s, herald_mean_attempts(herald_noise(noise, s), shots, seed), shots, seed)


def load_calibration() -> dict:
    text = resources.files("mcmsim.data").joinpath("calibration.yaml").read_text()
    return yaml.safe_load(text)


def distillation_noise(noise: NoiseModel | None = None) -> NoiseModel:
    """Default (or given) noise with the calibrated herald-stage gate-noise scale applied."""
    scale = float(load_calibration()["herald_gate_noise_scale"]["value"])
    return herald_noise(noise or NoiseModel.default(), scale)
