"""Native-gateset circuit representation for the zoned neutral-atom machine.

Native operations are ``RZ`` (integer quarter turns only), ``SX``, ``X``,
``CZ``, the midcircuit measurement ``MCM``, ``RESET0``, ``MOVE`` and
``COND_FILL``.  Three control/readout opcodes complete the set:
``MEASURE`` (regular register imaging at the end of a circuit), and the
``RETRY``/``HERALD`` pair that delimits a repeat-until-success loop body.

Canonical text form, one op per line::

    QUBIT 0 role=data zone=REGISTER site=0
    RZ 0 angle=1
    SX 0
    CZ 0 1
    MOVE 2 3 zone=MZ sites=0,1
    MCM 2 3 cycle=0
    X 1 echo=1
    RESET0 2 3
    COND_FILL zone=MZ
    MOVE 2 3 zone=REGISTER sites=2,3
    RETRY max=20
    HERALD 4 5 6 7
    MEASURE 0 1

``angle`` is in units of pi/2.  Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence


class ZoneKind(str, enum.Enum):
    REGISTER = "REGISTER"
    IZ = "IZ"
    MZ = "MZ"
    SZ = "SZ"
    LZ = "LZ"


@dataclass(frozen=True)
class Zone:
    kind: ZoneKind
    rows: int
    cols: int

    @property
    def capacity(self) -> int:
        return self.rows * self.cols


# 128 register sites in 8 column pairs; the 80-site 459 nm group is one IZ row,
# two MZ rows and two SZ rows of 16; the LZ has 75 densely packed sites.
DEFAULT_ZONES: dict[ZoneKind, Zone] = {
    ZoneKind.REGISTER: Zone(ZoneKind.REGISTER, 8, 16),
    ZoneKind.IZ: Zone(ZoneKind.IZ, 1, 16),
    ZoneKind.MZ: Zone(ZoneKind.MZ, 2, 16),
    ZoneKind.SZ: Zone(ZoneKind.SZ, 2, 16),
    ZoneKind.LZ: Zone(ZoneKind.LZ, 5, 15),
}

ROLES = frozenset({"data", "ancilla", "reservoir"})


@dataclass(frozen=True)
class QubitId:
    index: int
    label: str | None = None
    zone: ZoneKind = ZoneKind.REGISTER
    site: int | None = None

    def __post_init__(self):
        if self.index < 0:
            raise ValueError(f"qubit index must be nonnegative, got {self.index}")
        if self.label is not None and self.label not in ROLES:
            raise ValueError(f"unknown role tag {self.label!r}; expected one of {sorted(ROLES)}")


class Opcode(str, enum.Enum):
    RZ = "RZ"
    SX = "SX"
    X = "X"
    CZ = "CZ"
    MCM = "MCM"
    RESET0 = "RESET0"
    MOVE = "MOVE"
    COND_FILL = "COND_FILL"
    MEASURE = "MEASURE"
    RETRY = "RETRY"
    HERALD = "HERALD"


GATE_OPCODES = frozenset({Opcode.RZ, Opcode.SX, Opcode.X, Opcode.CZ})
SINGLE_QUBIT_GATES = frozenset({Opcode.RZ, Opcode.SX, Opcode.X})
MEASURING_OPCODES = frozenset({Opcode.MCM, Opcode.MEASURE})


@dataclass(frozen=True)
class NativeOp:
    opcode: Opcode
    targets: tuple[int, ...] = ()
    angle: float | None = None  # quarter turns, RZ only
    cycle: int | None = None
    zone: ZoneKind | None = None  # MOVE destination or COND_FILL zone
    sites: tuple[int, ...] | None = None  # MOVE destination sites
    echo: bool = False
    light: bool = True  # MCM only; False keeps timing but no imaging light
    max_attempts: int | None = None  # RETRY only

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if self.sites is not None:
            object.__setattr__(self, "sites", tuple(int(s) for s in self.sites))

    @property
    def is_clifford_angle(self) -> bool:
        return self.angle is not None and abs(self.angle - round(self.angle)) < 1e-12

    def to_text(self) -> str:
        parts = [self.opcode.value, *(str(t) for t in self.targets)]
        if self.angle is not None:
            k = self.angle
            parts.append(f"angle={int(round(k))}" if self.is_clifford_angle else f"angle={k!r}")
        if self.zone is not None:
            parts.append(f"zone={self.zone.value}")
        if self.sites is not None:
            parts.append("sites=" + ",".join(str(s) for s in self.sites))
        if self.cycle is not None:
            parts.append(f"cycle={self.cycle}")
        if self.echo:
            parts.append("echo=1")
        if not self.light:
            parts.append("light=0")
        if self.max_attempts is not None:
            parts.append(f"max={self.max_attempts}")
        return " ".join(parts)

    @classmethod
    def from_text(cls, line: str) -> "NativeOp":
        tokens = line.split()
        if not tokens:
            raise ValueError("empty op line")
        try:
            opcode = Opcode(tokens[0])
        except ValueError:
            raise ValueError(f"unknown opcode {tokens[0]!r}") from None
        targets: list[int] = []
        kw: dict = {}
        for tok in tokens[1:]:
            if "=" not in tok:
                targets.append(int(tok))
                continue
            key, value = tok.split("=", 1)
            if key == "angle":
                kw["angle"] = float(value)
            elif key == "zone":
                kw["zone"] = ZoneKind(value)
            elif key == "sites":
                kw["sites"] = tuple(int(s) for s in value.split(","))
            elif key == "cycle":
                kw["cycle"] = int(value)
            elif key == "echo":
                kw["echo"] = value == "1"
            elif key == "light":
                kw["light"] = value != "0"
            elif key == "max":
                kw["max_attempts"] = int(value)
            else:
                raise ValueError(f"unknown op attribute {key!r} in line {line!r}")
        return cls(opcode, tuple(targets), **kw)


@dataclass(frozen=True)
class Circuit:
    """Immutable op program over declared qubits.

    ``metadata`` carries generator parameters (spec echo, detector
    definitions, ...) and is serialized separately as a JSON sidecar.
    """

    ops: tuple[NativeOp, ...]
    qubits: tuple[QubitId, ...]
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        object.__setattr__(self, "qubits", tuple(self.qubits))

    @property
    def num_qubits(self) -> int:
        return 1 + max((q.index for q in self.qubits), default=-1)

    def qubit(self, index: int) -> QubitId:
        for q in self.qubits:
            if q.index == index:
                return q
        raise KeyError(index)

    def measurement_keys(self) -> list[tuple[int, int]]:
        """(op index, qubit) for every recorded measurement, in program order."""
        keys = []
        for i, op in enumerate(self.ops):
            if op.opcode is Opcode.MEASURE or (op.opcode is Opcode.MCM and op.light):
                keys.extend((i, q) for q in op.targets)
        return keys

    def loop_span(self) -> tuple[int, int] | None:
        """Indices of the RETRY and HERALD ops, if the circuit has a loop body."""
        start = end = None
        for i, op in enumerate(self.ops):
            if op.opcode is Opcode.RETRY:
                start = i
            elif op.opcode is Opcode.HERALD:
                end = i
        if start is None or end is None:
            return None
        return start, end

    def to_text(self) -> str:
        lines = ["# mcmsim circuit v1"]
        for q in sorted(self.qubits, key=lambda q: q.index):
            s = f"QUBIT {q.index}"
            if q.label is not None:
                s += f" role={q.label}"
            s += f" zone={q.zone.value}"
            if q.site is not None:
                s += f" site={q.site}"
            lines.append(s)
        lines.extend(op.to_text() for op in self.ops)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, metadata: dict | None = None) -> "Circuit":
        qubits, ops = [], []
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("QUBIT"):
                tokens = line.split()
                kw = dict(tok.split("=", 1) for tok in tokens[2:])
                qubits.append(
                    QubitId(
                        int(tokens[1]),
                        kw.get("role"),
                        ZoneKind(kw.get("zone", "REGISTER")),
                        int(kw["site"]) if "site" in kw else None,
                    )
                )
            else:
                ops.append(NativeOp.from_text(line))
        return cls(tuple(ops), tuple(qubits), dict(metadata or {}))


def _index(q) -> int:
    return q.index if isinstance(q, QubitId) else int(q)


def compile_h(q) -> list[NativeOp]:
    """Hadamard as RZ(pi/2) SX RZ(pi/2), exact up to global phase."""
    i = _index(q)
    return [NativeOp(Opcode.RZ, (i,), angle=1), NativeOp(Opcode.SX, (i,)), NativeOp(Opcode.RZ, (i,), angle=1)]


def compile_cnot(control, target) -> list[NativeOp]:
    c, t = _index(control), _index(target)
    if c == t:
        raise ValueError("CNOT control and target must differ")
    return [*compile_h(t), NativeOp(Opcode.CZ, (c, t)), *compile_h(t)]


def compile_swap(a, b) -> list[NativeOp]:
    return [*compile_cnot(a, b), *compile_cnot(b, a), *compile_cnot(a, b)]


class CircuitBuilder:
    """Mutable helper that accumulates ops and emits an immutable Circuit."""

    def __init__(self, qubits: Iterable[QubitId] = ()):
        self.qubits: list[QubitId] = list(qubits)
        self.ops: list[NativeOp] = []
        self.metadata: dict = {}

    def add_qubit(self, label=None, zone=ZoneKind.REGISTER, site=None) -> int:
        index = len(self.qubits)
        self.qubits.append(QubitId(index, label, zone, site))
        return index

    def append(self, ops: NativeOp | Sequence[NativeOp]) -> "CircuitBuilder":
        if isinstance(ops, NativeOp):
            self.ops.append(ops)
        else:
            self.ops.extend(ops)
        return self

    def h(self, *qs):
        for q in qs:
            self.append(compile_h(q))
        return self

    def cnot(self, c, t):
        return self.append(compile_cnot(c, t))

    def cz(self, a, b):
        return self.append(NativeOp(Opcode.CZ, (a, b)))

    def rz(self, q, quarter_turns):
        return self.append(NativeOp(Opcode.RZ, (q,), angle=quarter_turns))

    def sx(self, *qs):
        return self.append([NativeOp(Opcode.SX, (q,)) for q in qs])

    def x(self, *qs, echo=False):
        return self.append([NativeOp(Opcode.X, (q,), echo=echo) for q in qs])

    def move(self, qs, zone: ZoneKind, sites):
        return self.append(NativeOp(Opcode.MOVE, tuple(qs), zone=zone, sites=tuple(sites)))

    def mcm(self, qs, cycle=None, light=True):
        return self.append(NativeOp(Opcode.MCM, tuple(qs), cycle=cycle, light=light))

    def reset(self, qs):
        return self.append(NativeOp(Opcode.RESET0, tuple(qs)))

    def cond_fill(self, zone=ZoneKind.MZ):
        return self.append(NativeOp(Opcode.COND_FILL, zone=zone))

    def measure(self, qs):
        return self.append(NativeOp(Opcode.MEASURE, tuple(qs)))

    def retry(self, max_attempts):
        return self.append(NativeOp(Opcode.RETRY, max_attempts=max_attempts))

    def herald(self, qs):
        return self.append(NativeOp(Opcode.HERALD, tuple(qs)))

    def build(self) -> Circuit:
        return Circuit(tuple(self.ops), tuple(self.qubits), dict(self.metadata))


@dataclass(frozen=True)
class Violation:
    code: str
    op_index: int | None
    message: str

    def __str__(self):
        where = "circuit" if self.op_index is None else f"op {self.op_index}"
        return f"{where}: {self.code}: {self.message}"


def iter_placements(circuit: Circuit, zones=DEFAULT_ZONES) -> Iterator[tuple[int, NativeOp, dict[int, tuple[ZoneKind, int | None]]]]:
    """Yield (op index, op, placement before the op) along the program."""
    placement = {q.index: (q.zone, q.site) for q in circuit.qubits}
    for i, op in enumerate(circuit.ops):
        yield i, op, dict(placement)
        if op.opcode is Opcode.MOVE:
            sites = op.sites or (None,) * len(op.targets)
            for q, s in zip(op.targets, sites):
                placement[q] = (op.zone, s)


def validate(circuit: Circuit, zones: dict[ZoneKind, Zone] = DEFAULT_ZONES) -> list[Violation]:
    """Report every invariant violation; an empty list means the circuit is runnable."""
    out: list[Violation] = []
    known = set()
    for q in circuit.qubits:
        if q.index in known:
            out.append(Violation("duplicate-qubit", None, f"qubit {q.index} declared twice"))
        known.add(q.index)

    def occupancy_errors(placement, i):
        errs = []
        for kind, zone in zones.items():
            members = [(q, s) for q, (z, s) in placement.items() if z is kind]
            if len(members) > zone.capacity:
                errs.append(Violation("capacity", i, f"{len(members)} qubits in {kind.value} (capacity {zone.capacity})"))
            seen = {}
            for q, s in members:
                if s is None:
                    continue
                if not 0 <= s < zone.capacity:
                    errs.append(Violation("capacity", i, f"site {s} outside {kind.value}"))
                elif s in seen:
                    errs.append(Violation("site-collision", i, f"qubits {seen[s]} and {q} share {kind.value} site {s}"))
                else:
                    seen[s] = q
        return errs

    initial = {q.index: (q.zone, q.site) for q in circuit.qubits}
    out.extend(occupancy_errors(initial, None))

    in_loop = False
    loop_seen = False
    for i, op, placement in iter_placements(circuit, zones):
        for t in op.targets:
            if t not in known:
                out.append(Violation("unknown-target", i, f"{op.opcode.value} targets undeclared qubit {t}"))
        if op.opcode is Opcode.RZ:
            if op.angle is None:
                out.append(Violation("missing-angle", i, "RZ without angle"))
            elif not op.is_clifford_angle:
                out.append(Violation("non-clifford-angle", i, f"RZ angle {op.angle * math.pi / 2:.6g} rad is not a multiple of pi/2"))
        if op.opcode in SINGLE_QUBIT_GATES and len(op.targets) != 1:
            out.append(Violation("arity", i, f"{op.opcode.value} takes one target"))
        if op.opcode is Opcode.CZ:
            if len(op.targets) != 2:
                out.append(Violation("arity", i, "CZ takes two targets"))
            elif op.targets[0] == op.targets[1]:
                out.append(Violation("cz-same-qubit", i, "CZ targets must be distinct"))
        if op.opcode in (Opcode.MCM, Opcode.RESET0, Opcode.MEASURE, Opcode.MOVE, Opcode.HERALD):
            if len(set(op.targets)) != len(op.targets):
                out.append(Violation("duplicate-target", i, f"{op.opcode.value} lists a qubit twice"))
        if op.opcode is Opcode.MCM:
            for t in op.targets:
                if t in placement and placement[t][0] is ZoneKind.REGISTER:
                    out.append(Violation("mcm-in-register", i, f"MCM target {t} is in the register"))
        if op.opcode is Opcode.MOVE:
            if op.zone is None:
                out.append(Violation("move-destination", i, "MOVE without destination zone"))
            elif op.sites is not None and len(op.sites) != len(op.targets):
                out.append(Violation("move-destination", i, "MOVE site list length differs from target list"))
            else:
                after = dict(placement)
                for q, s in zip(op.targets, op.sites or (None,) * len(op.targets)):
                    after[q] = (op.zone, s)
                out.extend(occupancy_errors(after, i))
        if op.opcode is Opcode.COND_FILL and op.zone not in (ZoneKind.MZ, ZoneKind.SZ):
            out.append(Violation("fill-zone", i, "COND_FILL must target MZ or SZ"))
        if op.opcode is Opcode.RETRY:
            if in_loop or loop_seen:
                out.append(Violation("loop-structure", i, "only one non-nested RETRY loop is supported"))
            if not op.max_attempts or op.max_attempts < 1:
                out.append(Violation("loop-structure", i, "RETRY needs max >= 1"))
            in_loop = loop_seen = True
        if op.opcode is Opcode.HERALD:
            if not in_loop:
                out.append(Violation("loop-structure", i, "HERALD without RETRY"))
            if len(op.targets) % 2:
                out.append(Violation("loop-structure", i, "HERALD targets are checked in pairs"))
            in_loop = False
    if in_loop:
        out.append(Violation("loop-structure", None, "RETRY without closing HERALD"))
    return out
