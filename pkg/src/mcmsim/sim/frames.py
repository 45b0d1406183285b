"""Vectorized Pauli-frame sampling with atom loss.

A noiseless reference run of the tableau (random outcomes forced to 0)
fixes one valid measurement record; each shot then carries a Pauli frame
relative to it.  Z frames are randomized at initialization and after every
measurement or reset, which reproduces the statistics of random outcomes.

Loss, refill and the reservoir are tracked per shot.  The reservoir is
tracked as an atom count: which SZ site feeds a vacancy only affects move
latency, not the quantum state.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..circuit import Circuit, Opcode, ZoneKind
from .engine import LOST, StructuralError
from .noise import NoiseModel
from .rng import make_rng, shot_seed
from .tableau import Tableau

NOT_RUN = -2
CHUNK = 4096
_PX = np.array([0, 1, 1, 0], dtype=bool)
_PZ = np.array([0, 0, 1, 1], dtype=bool)


@dataclass
class FrameBatch:
    keys: list  # (op index, qubit) outside the loop body, program order
    meas: np.ndarray  # (shots, len(keys)) int8 with LOST = -1
    loop_keys: list  # lit MCM keys inside the loop body
    loop_meas: np.ndarray  # (shots, max_attempts, len(loop_keys)), NOT_RUN where skipped
    attempts: np.ndarray
    heralded: np.ndarray
    reservoir: np.ndarray  # SZ atoms left at the end of the shot
    fills: np.ndarray  # successful conditional fills
    insufficient: np.ndarray  # a COND_FILL found too few reservoir atoms

    @property
    def shots(self) -> int:
        return self.meas.shape[0]

    @staticmethod
    def concat(batches: list["FrameBatch"]) -> "FrameBatch":
        b0 = batches[0]
        cat = lambda name: np.concatenate([getattr(b, name) for b in batches])
        return FrameBatch(
            b0.keys, cat("meas"), b0.loop_keys, cat("loop_meas"), cat("attempts"),
            cat("heralded"), cat("reservoir"), cat("fills"), cat("insufficient"),
        )


class _Program:
    """Circuit split into prefix / loop body / suffix with reference records."""

    def __init__(self, circuit: Circuit):
        self.circuit = circuit
        ops = circuit.ops
        span = circuit.loop_span()
        if span is None:
            self.prefix, self.body, self.suffix = range(len(ops)), range(0), range(0)
            self.max_attempts, self.herald = 0, ()
        else:
            s, e = span
            self.prefix, self.body, self.suffix = range(s), range(s + 1, e), range(e + 1, len(ops))
            self.max_attempts = ops[s].max_attempts
            self.herald = ops[e].targets
        in_body = set(self.body)
        self.keys = [k for k in circuit.measurement_keys() if k[0] not in in_body]
        self.loop_keys = [k for k in circuit.measurement_keys() if k[0] in in_body]
        self.key_col = {k: j for j, k in enumerate(self.keys)}
        self.loop_col = {k: j for j, k in enumerate(self.loop_keys)}
        # placements never depend on the shot
        self.zone_before = []
        placement = {q.index: (q.zone, q.site) for q in circuit.qubits}
        for op in ops:
            self.zone_before.append(dict(placement))
            if op.opcode is Opcode.MOVE:
                for q, s in zip(op.targets, op.sites or (None,) * len(op.targets)):
                    placement[q] = (op.zone, s)
        self._reference()

    def _reference(self):
        """Contexts: 0 prefix, 1 first body, 2 repeated body, 3 suffix."""
        t = Tableau(self.circuit.num_qubits)
        self.ref: dict = {}
        self.refill_x: dict = {}

        def run(indices, ctx):
            out = {}
            for i in indices:
                op = self.circuit.ops[i]
                c = op.opcode
                if c is Opcode.RZ:
                    t.rz(op.targets[0], int(round(op.angle)))
                elif c is Opcode.SX:
                    t.sx(op.targets[0])
                elif c is Opcode.X:
                    t.pauli_x(op.targets[0])
                elif c is Opcode.CZ:
                    t.cz(*op.targets)
                elif (c is Opcode.MCM and op.light) or c is Opcode.MEASURE:
                    for q in op.targets:
                        out[(i, q)] = t.measure(q, forced=0)[0]
                elif c is Opcode.RESET0:
                    for q in op.targets:
                        if t.measure(q, forced=0)[0]:
                            t.pauli_x(q)
                elif c is Opcode.COND_FILL:
                    for q, (z, s) in self.zone_before[i].items():
                        if z is op.zone and s is not None:
                            v = t.peek_z(q)
                            self.refill_x[(ctx, i, q)] = 0 if v is None else v
            return out

        for key, v in run(self.prefix, 0).items():
            self.ref[(0,) + key] = v
        if self.max_attempts:
            for ctx in (1, 2):
                for key, v in run(self.body, ctx).items():
                    self.ref[(ctx,) + key] = v
            saved = {k: v for k, v in self.refill_x.items() if k[0] == 2}
            third = run(self.body, 2)
            if any(third[k] != self.ref[(2,) + k] for k in third) or any(
                self.refill_x[k] != v for k, v in saved.items()
            ):
                raise StructuralError("loop body must reinitialize the qubits it measures")
            for key, v in run(self.suffix, 3).items():
                self.ref[(3,) + key] = v


class _Shots:
    def __init__(self, prog: _Program, noise: NoiseModel, shots: int, rng, sz_atoms: int, randomize=True):
        n = prog.circuit.num_qubits
        self.prog, self.noise, self.rng, self.randomize = prog, noise, rng, randomize
        self.S = shots
        self.x = np.zeros((shots, n), dtype=bool)
        self.z = self._coins((shots, n))
        self.present = np.ones((shots, n), dtype=bool)
        self.vacant = np.zeros((shots, n), dtype=bool)
        self.reservoir = np.full(shots, sz_atoms, dtype=np.int64)
        self.fills = np.zeros(shots, dtype=np.int64)
        self.insufficient = np.zeros(shots, dtype=bool)
        self.meas = np.full((shots, len(prog.keys)), NOT_RUN, dtype=np.int8)
        self.loop_meas = np.full((shots, max(prog.max_attempts, 1), len(prog.loop_keys)), NOT_RUN, dtype=np.int8)

    def _coins(self, shape):
        if not self.randomize:
            return np.zeros(shape, dtype=bool)
        return self.rng.random(shape) < 0.5

    def _hits(self, k, p):
        if p <= 0:
            return np.zeros(k, dtype=bool)
        return self.rng.random(k) < p

    def _depolarize1(self, r, q, p):
        hit = self._hits(len(r), p)
        if hit.any():
            k = self.rng.integers(1, 4, size=len(r))
            self.x[r, q] ^= hit & _PX[k]
            self.z[r, q] ^= hit & _PZ[k]

    def _readout(self, r, q, ref, p_loss_by_bit, p_dist):
        noise = self.noise
        pres = self.present[r, q]
        bit = (ref ^ self.x[r, q]).astype(np.int8)
        k = len(r)
        lost = pres & (self.rng.random(k) < np.where(bit == 1, p_loss_by_bit[1], p_loss_by_bit[0]))
        flip = self.rng.random(k) < np.where(bit == 1, noise.p_flip_1to0, noise.p_flip_0to1)
        mis = self._hits(k, p_dist)
        value = (bit ^ flip).astype(np.int8)
        gone = lost | (pres & mis)
        value[gone] = LOST
        value[~pres] = np.where(mis[~pres], 0, LOST)
        self.present[r, q] = pres & ~gone
        return value

    def run(self, indices, r, ctx, sink, attempt=0, inject=None):
        prog, noise, rng = self.prog, self.noise, self.rng
        ops = prog.circuit.ops
        for i in indices:
            op = ops[i]
            c = op.opcode
            k = len(r)
            if c is Opcode.RZ:
                if int(round(op.angle)) % 2:
                    q = op.targets[0]
                    self.z[r, q] ^= self.x[r, q]
            elif c is Opcode.SX:
                q = op.targets[0]
                self.x[r, q] ^= self.z[r, q]
                self._depolarize1(r, q, noise.p_1q_pauli)
            elif c is Opcode.X:
                if not op.echo:
                    self._depolarize1(r, op.targets[0], noise.p_1q_pauli)
            elif c is Opcode.CZ:
                self._cz(r, *op.targets)
            elif c is Opcode.MCM:
                self._mcm(r, i, op, ctx, sink, attempt)
            elif c is Opcode.RESET0:
                for q in op.targets:
                    self.x[r, q] = False
                    self.z[r, q] = self._coins(k)
            elif c is Opcode.MOVE:
                pass
            elif c is Opcode.COND_FILL:
                self._fill(r, i, op, ctx)
            elif c is Opcode.MEASURE:
                for q in op.targets:
                    v = self._readout(r, q, prog.ref[(ctx, i, q)], (noise.p_readout_loss_regular,) * 2, noise.p_distinguish_regular)
                    sink(r, (i, q), v)
            else:
                raise StructuralError(f"unexpected {c.value} at op {i}")
            if inject is not None and i in inject:
                for rows, q, which in inject[i]:
                    rr = rows if k == self.S else r[np.isin(r, rows)]
                    self.x[rr, q] ^= which in "XY"
                    self.z[rr, q] ^= which in "ZY"
                    if which == "M":
                        sink(rr, (i, q), None)

    def _cz(self, r, a, b):
        noise, rng = self.noise, self.rng
        pa, pb = self.present[r, a], self.present[r, b]
        both = pa & pb
        xa, xb = self.x[r, a], self.x[r, b]
        self.z[r, a] ^= xb & both
        self.z[r, b] ^= xa & both
        k = len(r)
        hit = both & self._hits(k, noise.p_cz_pauli)
        if hit.any():
            kk = rng.integers(1, 16, size=k)
            ka, kb = kk // 4, kk % 4
            self.x[r, a] ^= hit & _PX[ka]
            self.z[r, a] ^= hit & _PZ[ka]
            self.x[r, b] ^= hit & _PX[kb]
            self.z[r, b] ^= hit & _PZ[kb]
        if noise.p_cz_loss > 0:
            self.present[r, a] &= ~(both & self._hits(k, noise.p_cz_loss))
            self.present[r, b] &= ~(both & self._hits(k, noise.p_cz_loss))
        one = pa ^ pb
        if one.any():
            flip = one & self._hits(k, noise.p_partner_z_on_lost)
            self.z[r, a] ^= flip & pa
            self.z[r, b] ^= flip & pb

    def _mcm(self, r, i, op, ctx, sink, attempt):
        noise, prog, k = self.noise, self.prog, len(r)
        placement = prog.zone_before[i]
        targets = set(op.targets)
        if op.light:
            p_by_bit = (noise.mcm_loss_probability(1), noise.mcm_loss_probability(2))
            for q in op.targets:
                if placement[q][0] is ZoneKind.REGISTER:
                    raise StructuralError(f"MCM target {q} is in the register")
                v = self._readout(r, q, prog.ref[(ctx, i, q)], p_by_bit, noise.p_distinguish)
                self.z[r, q] = self._coins(k)
                self.vacant[r, q] = v == LOST
                sink(r, (i, q), v, attempt)
            p_loss, p_z, p_sz = noise.p_register_loss_per_mcm, noise.p_register_dephase_per_mcm, noise.p_reservoir_loss_per_mcm
        else:
            p_loss, p_z = noise.p_register_loss_dark_per_mcm, noise.p_register_dephase_dark_per_mcm
            p_sz = p_loss
        for q, (zone, _) in placement.items():
            if q in targets or zone is not ZoneKind.REGISTER:
                continue
            lost = self.present[r, q] & self._hits(k, p_loss)
            self.present[r, q] &= ~lost
            self.z[r, q] ^= self._hits(k, p_z)
        if p_sz > 0:
            self.reservoir[r] -= self.rng.binomial(self.reservoir[r], p_sz)

    def _fill(self, r, i, op, ctx):
        prog, k = self.prog, len(r)
        qs = [q for q, (z, s) in prog.zone_before[i].items() if z is op.zone and s is not None]
        if not qs:
            return
        need = self.vacant[np.ix_(r, qs)]
        count = need.sum(axis=1)
        short = count > self.reservoir[r]
        self.insufficient[r] |= short
        need &= ~short[:, None]
        self.reservoir[r] -= need.sum(axis=1)
        ok = need & (self.rng.random(need.shape) >= self.noise.p_move_fail)
        self.fills[r] += ok.sum(axis=1)
        for j, q in enumerate(qs):
            nq, oq = need[:, j], ok[:, j]
            self.present[r, q] = (self.present[r, q] & ~nq) | oq
            self.x[r, q] = np.where(oq, bool(prog.refill_x[(ctx, i, q)]), self.x[r, q])
            self.z[r, q] = np.where(oq, self._coins(k), self.z[r, q])
            self.vacant[r, q] &= ~oq


def _sample_chunk(circuit, noise, shots, seed, sz_atoms, inject=None, randomize=True, prog=None) -> FrameBatch:
    prog = prog or _Program(circuit)
    st = _Shots(prog, noise, shots, make_rng(seed), sz_atoms, randomize)
    all_rows = np.arange(shots)

    def sink(r, key, v, attempt=0):
        if attempt:
            st.loop_meas[r, attempt - 1, prog.loop_col[key]] = v
        elif v is None:  # injected readout flip
            j = prog.key_col[key]
            st.meas[r, j] = np.where(st.meas[r, j] >= 0, 1 - st.meas[r, j], st.meas[r, j])
        else:
            st.meas[r, prog.key_col[key]] = v

    attempts = np.zeros(shots, dtype=np.int64)
    heralded = np.zeros(shots, dtype=bool)
    st.run(prog.prefix, all_rows, 0, sink, inject=inject)
    if prog.max_attempts:
        herald_cols = []
        for q in prog.herald:
            cols = [j for j, (i, qq) in enumerate(prog.loop_keys) if qq == q]
            if not cols:
                raise StructuralError(f"HERALD target {q} is never measured in the loop body")
            herald_cols.append(cols[-1])
        herald_cols = np.array(herald_cols)
        rows = all_rows
        for a in range(1, prog.max_attempts + 1):
            st.run(prog.body, rows, 1 if a == 1 else 2, sink, attempt=a, inject=inject)
            vals = st.loop_meas[rows, a - 1][:, herald_cols]
            ok = np.all((vals[:, 0::2] >= 0) & (vals[:, 0::2] == vals[:, 1::2]), axis=1)
            attempts[rows] = a
            heralded[rows[ok]] = True
            rows = rows[~ok]
            if rows.size == 0:
                break
        st.run(prog.suffix, all_rows, 3, sink, inject=inject)
    else:
        attempts[:] = 1
    return FrameBatch(
        prog.keys, st.meas, prog.loop_keys, st.loop_meas, attempts, heralded,
        st.reservoir, st.fills, st.insufficient,
    )


def _chunk_task(args):
    circuit, noise, shots, seed, sz_atoms = args
    return _sample_chunk(circuit, noise, shots, seed, sz_atoms)


def sample_batch(
    circuit: Circuit,
    noise: NoiseModel,
    shots: int,
    base_seed: int,
    sz_atoms: int = 32,
    threads: int = 1,
    chunk: int = CHUNK,
) -> FrameBatch:
    """Sample ``shots`` shots; chunk j uses ``shot_seed(base_seed, j)`` so threads never change results."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    sizes = [min(chunk, shots - s) for s in range(0, shots, chunk)]
    tasks = [(circuit, noise, n, shot_seed(base_seed, j), sz_atoms) for j, n in enumerate(sizes)]
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_chunk_task, tasks))
    else:
        prog = _Program(circuit)
        parts = [_sample_chunk(c, nz, n, s, sz, prog=prog) for c, nz, n, s, sz in tasks]
    return FrameBatch.concat(parts)


def propagate_faults(circuit: Circuit, faults) -> np.ndarray:
    """Measurement flips caused by each single fault, without any other noise.

    ``faults`` is a list of ``(op index, qubit, pauli)`` with ``pauli`` in
    ``"XYZ"`` (applied after the op) or ``"M"`` (flip of the recorded result
    of measurement key ``(op index, qubit)``).  Returns a bool array of
    shape (len(faults), len(measurement keys)) for loop-free circuits.
    """
    if circuit.loop_span() is not None:
        raise StructuralError("fault propagation needs a loop-free circuit")
    faults = list(faults)
    grouped: dict = {}
    for row, (i, q, which) in enumerate(faults):
        grouped.setdefault((i, q, which), []).append(row)
    inject: dict = {}
    for (i, q, which), rows in grouped.items():
        inject.setdefault(i, []).append((np.array(rows), q, which))
    batch = _sample_chunk(circuit, NoiseModel.noiseless(), max(len(faults), 1), 0, 32, inject=inject, randomize=False)
    prog = _Program(circuit)
    ref = np.array([prog.ref[(0,) + k] for k in prog.keys], dtype=np.int8)
    return (batch.meas[: len(faults)] != ref[None, :])
