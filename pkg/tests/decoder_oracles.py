"""Independent oracles for the decoder tests and the acceptance suite."""

from __future__ import annotations

import math

import numpy as np

from mcmsim.circuit import Opcode, ZoneKind
from mcmsim.decoder import DetectorLayout
from mcmsim.sim.engine import run_shot
from mcmsim.sim.noise import NoiseModel, xor_prob

NOISELESS = NoiseModel.noiseless()


def brute_force_matching(W: np.ndarray, B: np.ndarray) -> float:
    """Minimum weight over every pairing of the nodes, each node optionally sent to the boundary."""
    k = len(B)

    def rec(rest: tuple) -> float:
        if not rest:
            return 0.0
        i, others = rest[0], rest[1:]
        best = B[i] + rec(others) if math.isfinite(B[i]) else math.inf
        for n, j in enumerate(others):
            if math.isfinite(W[i, j]):
                best = min(best, W[i, j] + rec(others[:n] + others[n + 1 :]))
        return best

    return rec(tuple(range(k)))


def enumerate_mechanisms(circuit, noise):
    """(prob, [(op, qubit, pauli)]) for each elementary fault, written out from the channel definitions."""
    placement = {q.index: q.zone for q in circuit.qubits}
    out = []
    for i, op in enumerate(circuit.ops):
        if op.opcode is Opcode.CZ:
            a, b = op.targets
            for pa in "IXYZ":
                for pb in "IXYZ":
                    if pa == pb == "I":
                        continue
                    parts = ([(i, a, pa)] if pa != "I" else []) + ([(i, b, pb)] if pb != "I" else [])
                    out.append((noise.p_cz_pauli / 15, parts))
        elif op.opcode is Opcode.SX or (op.opcode is Opcode.X and not op.echo):
            out += [(noise.p_1q_pauli / 3, [(i, op.targets[0], p)]) for p in "XYZ"]
        elif op.opcode is Opcode.MCM and op.light:
            out += [(noise.p_register_dephase_per_mcm, [(i, q, "Z")]) for q, z in placement.items() if z is ZoneKind.REGISTER and q not in op.targets]
            out += [((noise.p_flip_0to1 + noise.p_flip_1to0) / 2, [(i, q, "M")]) for q in op.targets]
        elif op.opcode is Opcode.MEASURE:
            out += [((noise.p_flip_0to1 + noise.p_flip_1to0) / 2, [(i, q, "M")]) for q in op.targets]
        elif op.opcode is Opcode.MOVE:
            for q in op.targets:
                placement[q] = op.zone
    return out


def tableau_signature(circuit, layout: DetectorLayout, parts, seed=0):
    """Detector flips and observable flip of a fault, by running the stabilizer engine with it injected."""
    inject, flips = {}, []
    for i, q, p in parts:
        if p == "M":
            flips.append((i, q))
        else:
            inject.setdefault(i, []).append((q, p))
    vals = run_shot(circuit, NOISELESS, seed, inject=inject).measurement_vector(circuit)
    for key in flips:
        j = layout.keys.index(key)
        vals[j] ^= 1
    par, _, obs, _ = layout.evaluate(vals, np.random.default_rng(0))
    return np.flatnonzero(par[0]), bool(obs[0])


def exhaustive_graph(circuit, noise):
    """Edge key -> (p, obs) and the maximum detector count flipped by any single fault."""
    layout = DetectorLayout(circuit)
    bnd = layout.num_detectors
    edges, widest = {}, 0
    for p, parts in enumerate_mechanisms(circuit, noise):
        dets, obs = tableau_signature(circuit, layout, parts)
        widest = max(widest, len(dets))
        if len(dets) == 0 or len(dets) > 2 or p <= 0:
            continue
        key = (int(dets[0]), bnd) if len(dets) == 1 else (int(dets[0]), int(dets[1]))
        q, o = edges.get(key, (0.0, obs))
        edges[key] = (xor_prob(q, p), obs)
    return edges, widest
