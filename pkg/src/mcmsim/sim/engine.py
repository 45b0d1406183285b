"""Per-shot lossy stabilizer execution of native circuits.

Measurement values are 0, 1 or ``LOST``.  A lost atom is decohered (its
tableau column is measured and discarded) and never touched again until a
conditional fill places a fresh atom, prepared in |0>, on its site.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from ..circuit import DEFAULT_ZONES, Circuit, NativeOp, Opcode, ZoneKind
from ..logistics import InsufficientReservoir, ZoneOccupancy, execute_plan, plan_fill
from .noise import NoiseModel
from .rng import make_rng, shot_seed
from .tableau import Tableau

LOST = -1
SHOT_SCHEMA = "mcmsim.shot/1"
PAULIS = "IXYZ"


class StructuralError(RuntimeError):
    """The circuit cannot be executed (unknown qubit, bad loop, broken tableau)."""


@dataclass
class ShotRecord:
    seed: int
    outcomes: list = field(default_factory=list)  # (op index, qubit, value) per lit MCM target
    outcome_attempts: list = field(default_factory=list)  # loop attempt of each outcome, 0 outside loops
    final_measurements: dict = field(default_factory=dict)  # qubit -> value from MEASURE
    fills_performed: list = field(default_factory=list)
    attempts: int = 1
    heralded: bool | None = None

    def value(self, op_index: int, qubit: int, attempt: int | None = None) -> int:
        """Last recorded value of (op, qubit), optionally restricted to one loop attempt."""
        for (i, q, v), a in zip(reversed(self.outcomes), reversed(self.outcome_attempts)):
            if i == op_index and q == qubit and (attempt is None or a == attempt):
                return v
        raise KeyError((op_index, qubit, attempt))

    def measurement_vector(self, circuit: Circuit) -> np.ndarray:
        """Values in ``circuit.measurement_keys()`` order (loop-free circuits)."""
        lookup = {(i, q): v for i, q, v in self.outcomes}
        out = []
        for i, q in circuit.measurement_keys():
            if circuit.ops[i].opcode is Opcode.MEASURE:
                out.append(self.final_measurements[q])
            else:
                out.append(lookup[(i, q)])
        return np.array(out, dtype=np.int8)

    def to_dict(self) -> dict:
        return {
            "schema": SHOT_SCHEMA,
            "seed": str(self.seed),
            "outcomes": [list(o) for o in self.outcomes],
            "outcome_attempts": list(self.outcome_attempts),
            "final_measurements": {str(q): v for q, v in sorted(self.final_measurements.items())},
            "fills_performed": self.fills_performed,
            "attempts": self.attempts,
            "heralded": self.heralded,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "ShotRecord":
        d = json.loads(line)
        if d.get("schema") != SHOT_SCHEMA:
            raise ValueError(f"unsupported shot schema {d.get('schema')!r}")
        return cls(
            seed=int(d["seed"]),
            outcomes=[tuple(o) for o in d["outcomes"]],
            outcome_attempts=list(d["outcome_attempts"]),
            final_measurements={int(q): v for q, v in d["final_measurements"].items()},
            fills_performed=d["fills_performed"],
            attempts=d["attempts"],
            heralded=d["heralded"],
        )


class LossyStabilizerState:
    def __init__(
        self,
        circuit: Circuit,
        noise: NoiseModel,
        rng: np.random.Generator,
        sz_atoms: int = 32,
        zones=DEFAULT_ZONES,
    ):
        n = circuit.num_qubits
        self.n = n
        self.noise = noise
        self.rng = rng
        self.tableau = Tableau(n)
        self.present = np.ones(n, dtype=bool)
        self.leaked = np.zeros(n, dtype=bool)
        # software Pauli frame; X components flip Z-basis readouts
        self.frame_x = np.zeros(n, dtype=bool)
        self.frame_z = np.zeros(n, dtype=bool)
        self.placement = {q.index: (q.zone, q.site) for q in circuit.qubits}
        self.occupancy = ZoneOccupancy.standard(sz_atoms, zones)
        self.reported_vacant: set[int] = set()
        self.last_value: dict[int, int] = {}

    def active(self, q: int) -> bool:
        return bool(self.present[q] and not self.leaked[q])

    def lose(self, q: int):
        if self.present[q]:
            self.tableau.measure(q, rng=self.rng)
            self.present[q] = False

    def refill(self, q: int):
        """A fresh atom in |0> takes the place of qubit q."""
        if self.present[q]:
            raise StructuralError(f"refill onto present qubit {q}")
        self.tableau.reset(q, rng=self.rng)
        self.present[q] = True
        self.leaked[q] = False
        self.frame_x[q] = self.frame_z[q] = False

    def pauli(self, q: int, which: str):
        if self.active(q):
            self.tableau.apply_pauli(q, which)

    def apply_frame_pauli(self, q: int, which: str):
        """Record a software Pauli correction (never applied physically)."""
        self.frame_x[q] ^= which in "XY"
        self.frame_z[q] ^= which in "ZY"

    def zone_of(self, q: int) -> ZoneKind:
        return self.placement[q][0]


def _depolarize1(state: LossyStabilizerState, q: int, p: float):
    if p > 0 and state.rng.random() < p:
        state.pauli(q, PAULIS[int(state.rng.integers(1, 4))])


def apply_gate(state: LossyStabilizerState, op: NativeOp) -> LossyStabilizerState:
    """Clifford update plus the gate's noise channel."""
    noise, rng, t = state.noise, state.rng, state.tableau
    for q in op.targets:
        if not 0 <= q < state.n:
            raise StructuralError(f"unknown qubit {q}")
    if op.opcode is Opcode.RZ:
        q = op.targets[0]
        if state.active(q):
            t.rz(q, int(round(op.angle)))
    elif op.opcode is Opcode.SX:
        q = op.targets[0]
        if state.active(q):
            t.sx(q)
            _depolarize1(state, q, noise.p_1q_pauli)
    elif op.opcode is Opcode.X:
        q = op.targets[0]
        if state.active(q):
            t.pauli_x(q)
            if not op.echo:
                _depolarize1(state, q, noise.p_1q_pauli)
    elif op.opcode is Opcode.CZ:
        a, b = op.targets
        pa, pb = state.active(a), state.active(b)
        if pa and pb:
            t.cz(a, b)
            if noise.p_cz_pauli > 0 and rng.random() < noise.p_cz_pauli:
                k = int(rng.integers(1, 16))
                state.pauli(a, PAULIS[k // 4])
                state.pauli(b, PAULIS[k % 4])
            for q in (a, b):
                if noise.p_cz_loss > 0 and rng.random() < noise.p_cz_loss:
                    state.lose(q)
        elif pa or pb:
            partner = a if pa else b
            if rng.random() < noise.p_partner_z_on_lost:
                state.pauli(partner, "Z")
    else:
        raise StructuralError(f"{op.opcode.value} is not a gate")
    return state


def _readout(state: LossyStabilizerState, q: int, p_loss: float, p_distinguish: float) -> int:
    """Projective Z readout of a present atom with loss and misclassification."""
    noise, rng = state.noise, state.rng
    bit, _ = state.tableau.measure(q, rng=rng)
    if rng.random() < p_loss(bit):
        state.present[q] = False
        return LOST
    flip = noise.p_flip_1to0 if bit else noise.p_flip_0to1
    reported = bit ^ int(rng.random() < flip) ^ int(state.frame_x[q])
    if rng.random() < p_distinguish:
        # a present atom classified as missing is discarded by the control system
        state.present[q] = False
        return LOST
    return reported


def measure_mcm(state: LossyStabilizerState, targets: Iterable[int], light: bool = True) -> list[int]:
    """Two-image MCM of ``targets`` plus its side effects on register and SZ atoms."""
    noise, rng = state.noise, state.rng
    targets = list(targets)
    values = []
    if light:
        for q in targets:
            if state.zone_of(q) is ZoneKind.REGISTER:
                raise StructuralError(f"MCM target {q} is in the register")
            if state.active(q):
                v = _readout(state, q, lambda b: noise.mcm_loss_probability(1 + b), noise.p_distinguish)
            elif rng.random() < noise.p_distinguish:
                v = 0  # an empty site misread as a dark atom
            else:
                v = LOST
            values.append(v)
            state.last_value[q] = v
            if v == LOST:
                state.reported_vacant.add(q)
            else:
                state.reported_vacant.discard(q)
        p_loss, p_z = noise.p_register_loss_per_mcm, noise.p_register_dephase_per_mcm
        p_sz = noise.p_reservoir_loss_per_mcm
    else:
        p_loss, p_z = noise.p_register_loss_dark_per_mcm, noise.p_register_dephase_dark_per_mcm
        p_sz = p_loss
    tset = set(targets)
    for q in range(state.n):
        if q in tset or state.zone_of(q) is not ZoneKind.REGISTER or not state.active(q):
            continue
        if rng.random() < p_loss:
            state.lose(q)
        elif rng.random() < p_z:
            state.pauli(q, "Z")
    sz = state.occupancy.occupied[ZoneKind.SZ]
    if p_sz > 0:
        sz &= ~(rng.random(sz.size) < p_sz)
    return values


def _measure_regular(state: LossyStabilizerState, targets) -> list[int]:
    noise = state.noise
    out = []
    for q in targets:
        if state.active(q):
            v = _readout(state, q, lambda b: noise.p_readout_loss_regular, noise.p_distinguish_regular)
        else:
            v = LOST
        out.append(v)
    return out


def _cond_fill(state: LossyStabilizerState, op: NativeOp, op_index: int, attempt: int) -> dict:
    zone = op.zone
    vacant = sorted(q for q in state.reported_vacant if state.zone_of(q) is zone and state.placement[q][1] is not None)
    site_to_q = {state.placement[q][1]: q for q in vacant}
    record = {"op": op_index, "attempt": attempt, "vacancies": vacant, "moves": [], "insufficient": False}
    if not vacant:
        return record
    try:
        plan = plan_fill(list(site_to_q), state.occupancy, dst_zone=zone)
    except InsufficientReservoir:
        record["insufficient"] = True
        return record
    for q in vacant:
        # the image said "missing": whatever is there is swept before the fill
        state.lose(q)
    _, results = execute_plan(state.occupancy, plan, state.noise.p_move_fail, state.rng)
    for m, ok in zip(plan.moves, results):
        state.occupancy.occupied[m.src[0]][m.src[1]] = False
        q = site_to_q[m.dst[1]]
        if ok:
            state.refill(q)
            state.reported_vacant.discard(q)
        record["moves"].append({"src": m.src[1], "dst": m.dst[1], "qubit": q, "ok": ok})
    return record


def _execute(state, circuit, indices, record: ShotRecord, attempt: int, inject, debug: bool):
    for i in indices:
        op = circuit.ops[i]
        code = op.opcode
        if code in (Opcode.RZ, Opcode.SX, Opcode.X, Opcode.CZ):
            apply_gate(state, op)
        elif code is Opcode.MCM:
            values = measure_mcm(state, op.targets, light=op.light)
            if op.light:
                for q, v in zip(op.targets, values):
                    record.outcomes.append((i, q, v))
                    record.outcome_attempts.append(attempt)
        elif code is Opcode.RESET0:
            for q in op.targets:
                if state.active(q):
                    state.tableau.reset(q, rng=state.rng)
                    state.frame_x[q] = state.frame_z[q] = False
        elif code is Opcode.MOVE:
            sites = op.sites or (None,) * len(op.targets)
            for q, s in zip(op.targets, sites):
                state.placement[q] = (op.zone, s)
        elif code is Opcode.COND_FILL:
            record.fills_performed.append(_cond_fill(state, op, i, attempt))
        elif code is Opcode.MEASURE:
            for q, v in zip(op.targets, _measure_regular(state, op.targets)):
                record.final_measurements[q] = v
        else:
            raise StructuralError(f"unexpected {code.value} at op {i}")
        if inject and i in inject:
            for q, which in inject[i]:
                state.pauli(q, which)
        if debug and not state.tableau.commutation_ok():
            raise StructuralError(f"tableau lost symplectic structure after op {i}")


def herald_ok(values: dict[int, int], targets) -> bool:
    """Every consecutive target pair was seen, is present and has even parity."""
    for a, b in zip(targets[0::2], targets[1::2]):
        va, vb = values.get(a, LOST), values.get(b, LOST)
        if va == LOST or vb == LOST or va != vb:
            return False
    return True


def run_shot(
    circuit: Circuit,
    noise: NoiseModel,
    seed: int,
    sz_atoms: int = 32,
    inject: dict | None = None,
    debug: bool = False,
) -> ShotRecord:
    """Execute one shot.  ``inject`` maps op index -> [(qubit, Pauli)] applied after the op."""
    state = LossyStabilizerState(circuit, noise, make_rng(seed), sz_atoms)
    record = ShotRecord(seed=int(seed))
    ops = circuit.ops
    span = circuit.loop_span()
    if span is None:
        _execute(state, circuit, range(len(ops)), record, 0, inject, debug)
    else:
        s, e = span
        if not s < e or ops[s].max_attempts is None:
            raise StructuralError("malformed RETRY/HERALD loop")
        _execute(state, circuit, range(s), record, 0, inject, debug)
        ok = False
        for attempt in range(1, ops[s].max_attempts + 1):
            state.last_value = {}
            _execute(state, circuit, range(s + 1, e), record, attempt, inject, debug)
            ok = herald_ok(state.last_value, ops[e].targets)
            if ok:
                break
        record.attempts = attempt
        record.heralded = ok
        _execute(state, circuit, range(e + 1, len(ops)), record, 0, inject, debug)
    if not state.tableau.commutation_ok():
        raise StructuralError("tableau lost symplectic structure")
    return record


def _run_chunk(args) -> list[ShotRecord]:
    circuit, noise, seeds, sz_atoms = args
    return [run_shot(circuit, noise, s, sz_atoms) for s in seeds]


def iter_batch(
    circuit: Circuit,
    noise: NoiseModel,
    n_shots: int,
    base_seed: int,
    threads: int = 1,
    sz_atoms: int = 32,
    chunk: int = 64,
) -> Iterator[ShotRecord]:
    """Shot i uses ``shot_seed(base_seed, i)``; output order and content never depend on ``threads``."""
    if n_shots < 1:
        raise ValueError("n_shots must be >= 1")
    seeds = [shot_seed(base_seed, i) for i in range(n_shots)]
    if threads <= 1:
        for s in seeds:
            yield run_shot(circuit, noise, s, sz_atoms)
        return
    chunks = [(circuit, noise, seeds[k : k + chunk], sz_atoms) for k in range(0, n_shots, chunk)]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        for records in pool.map(_run_chunk, chunks):
            yield from records


def run_batch(circuit, noise, n_shots, base_seed, threads=1, sz_atoms=32) -> list[ShotRecord]:
    return list(iter_batch(circuit, noise, n_shots, base_seed, threads, sz_atoms))


def write_jsonl(records: Iterable[ShotRecord], path) -> int:
    n = 0
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")
            n += 1
    return n


def read_jsonl(path) -> list[ShotRecord]:
    with open(path) as fh:
        return [ShotRecord.from_json(line) for line in fh if line.strip()]
