"""Matching graph from single-fault propagation, with per-shot loss overlays."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..circuit import Circuit, Opcode, ZoneKind
from ..sim.frames import propagate_faults
from ..sim.noise import NoiseModel, xor_prob
from .detectors import DetectorLayout

SPACELIKE = "spacelike data error"
TIMELIKE = "timelike readout error"
LOSS_CORRELATED = "loss-correlated gate error"
PAIR_PAULIS = [(a, b) for a in "IXYZ" for b in "IXYZ" if a + b != "II"]


def edge_weight(p: float) -> float:
    """ln((1-p)/p); zero at p = 0.5, infinite at p = 0."""
    if p <= 0:
        return math.inf
    p = min(p, 0.5)
    return math.log((1 - p) / p)


@dataclass
class Edge:
    u: int
    v: int
    p: float
    observable: bool
    contributions: dict = field(default_factory=dict)  # label -> probability

    @property
    def label(self) -> str:
        return max(self.contributions, key=self.contributions.get) if self.contributions else LOSS_CORRELATED

    @property
    def weight(self) -> float:
        return edge_weight(self.p)


@dataclass
class MatchingGraph:
    num_detectors: int
    ids: list
    edges: dict = field(default_factory=dict)  # (u, v) with u < v -> Edge; v == boundary allowed
    loss_edits: dict = field(default_factory=dict)  # measurement key -> [(edge key, obs, label)]
    hyperedges: int = 0
    conflicts: int = 0  # mechanisms merged into an edge with the opposite observable flip
    undetectable: float = 0.0

    @property
    def boundary(self) -> int:
        return self.num_detectors

    def add(self, dets, obs: bool, p: float, label: str):
        key = _edge_key(dets, self.boundary)
        if key is None:
            return None
        e = self.edges.get(key)
        if e is None:
            self.edges[key] = Edge(key[0], key[1], p, obs, {label: p})
        else:
            if e.observable != obs:
                self.conflicts += 1
                if p > e.p:
                    e.observable = obs
            e.p = xor_prob(e.p, p)
            e.contributions[label] = xor_prob(e.contributions.get(label, 0.0), p)
        return key

    def effective(self, overlay: dict | None = None) -> dict:
        """Edge key -> (p, observable), with overlay probabilities taking precedence."""
        out = {k: (e.p, e.observable) for k, e in self.edges.items() if e.p > 0}
        if overlay:
            out.update(overlay)
        return out

    def dump(self) -> str:
        lines = ["# mcmsim matching graph v1", f"NODES {self.num_detectors} BOUNDARY {self.boundary}"]
        for i, ident in enumerate(self.ids):
            lines.append(f"NODE {i} " + " ".join(str(x) for x in ident))
        for (u, v), e in sorted(self.edges.items()):
            lines.append(f"EDGE {u} {v} p={e.p:.6e} w={e.weight:.6f} obs={int(e.observable)} label={e.label.replace(' ', '_')}")
        return "\n".join(lines) + "\n"


def _edge_key(dets, boundary):
    dets = sorted(int(d) for d in dets)
    if len(dets) == 1:
        return (dets[0], boundary)
    if len(dets) == 2:
        return (dets[0], dets[1])
    return None


def _mechanisms(circuit: Circuit, noise: NoiseModel):
    """Yield (label, prob, [(op, qubit, pauli)...]) for every elementary fault."""
    placement = {q.index: (q.zone, q.site) for q in circuit.qubits}
    for i, op in enumerate(circuit.ops):
        c = op.opcode
        if c is Opcode.CZ:
            a, b = op.targets
            for pa, pb in PAIR_PAULIS:
                parts = [(i, a, pa)] if pa != "I" else []
                parts += [(i, b, pb)] if pb != "I" else []
                yield SPACELIKE, noise.p_cz_pauli / 15, parts
        elif c is Opcode.SX or (c is Opcode.X and not op.echo):
            for p in "XYZ":
                yield SPACELIKE, noise.p_1q_pauli / 3, [(i, op.targets[0], p)]
        elif c is Opcode.MCM and op.light:
            targets = set(op.targets)
            for q, (zone, _) in placement.items():
                if zone is ZoneKind.REGISTER and q not in targets:
                    yield SPACELIKE, noise.p_register_dephase_per_mcm, [(i, q, "Z")]
            for q in op.targets:
                yield TIMELIKE, noise.p_readout_flip_mcm, [(i, q, "M")]
        elif c is Opcode.MEASURE:
            for q in op.targets:
                yield TIMELIKE, noise.p_readout_flip_regular, [(i, q, "M")]
        if c is Opcode.MOVE:
            for q, s in zip(op.targets, op.sites or (None,) * len(op.targets)):
                placement[q] = (op.zone, s)


def _fault_signatures(circuit: Circuit, layout: DetectorLayout, faults):
    """Detector and observable flips of each single-qubit fault."""
    flips = propagate_faults(circuit, faults).astype(np.int64)
    det = (flips @ layout.matrix.T.astype(np.int64)) % 2
    obs = (flips @ layout.obs_vector.astype(np.int64)) % 2
    return det.astype(bool), obs.astype(bool)


def build_matching_graph(circuit: Circuit, noise: NoiseModel) -> MatchingGraph:
    layout = DetectorLayout(circuit)
    graph = MatchingGraph(layout.num_detectors, list(layout.ids))
    mechs = list(_mechanisms(circuit, noise))
    # loss-correlated partner faults: Z on the partner right after each CZ
    cz_partner = []
    for i, op in enumerate(circuit.ops):
        if op.opcode is Opcode.CZ:
            a, b = op.targets
            cz_partner += [(i, b, "Z"), (i, a, "Z")]
    atoms = sorted({part[:3] if part[2] != "Y" else None for _, _, parts in mechs for part in parts} - {None})
    atoms += [(i, q, p) for (i, q, p) in cz_partner if (i, q, p) not in set(atoms)]
    # Y = X * Z, so only X, Z and readout flips need propagating
    for _, _, parts in mechs:
        for i, q, p in parts:
            if p == "Y":
                for s in ("X", "Z"):
                    if (i, q, s) not in atoms:
                        atoms.append((i, q, s))
    atoms = sorted(set(atoms))
    index = {a: j for j, a in enumerate(atoms)}
    det, obs = _fault_signatures(circuit, layout, atoms)

    def signature(parts):
        d = np.zeros(layout.num_detectors, dtype=bool)
        o = False
        for i, q, p in parts:
            for s in (("X", "Z") if p == "Y" else (p,)):
                j = index[(i, q, s)]
                d ^= det[j]
                o ^= bool(obs[j])
        return np.flatnonzero(d), o

    for label, prob, parts in mechs:
        dets, o = signature(parts)
        if len(dets) == 0:
            if o:
                graph.undetectable = xor_prob(graph.undetectable, prob)
            continue
        if len(dets) > 2:
            graph.hyperedges += 1
            continue
        if prob > 0:
            graph.add(dets, o, prob, label)

    # per-measurement loss edits: the readout edge and partner Z faults of CZs
    # the atom took part in since it was last reset
    czs_since: dict[int, list] = {q.index: [] for q in circuit.qubits}
    for i, op in enumerate(circuit.ops):
        c = op.opcode
        if c is Opcode.CZ:
            a, b = op.targets
            czs_since[a].append((i, b))
            czs_since[b].append((i, a))
        elif c is Opcode.RESET0:
            for q in op.targets:
                czs_since[q] = []
        elif c is Opcode.MEASURE or (c is Opcode.MCM and op.light):
            for q in op.targets:
                edits = []
                dets, o = signature([(i, q, "M")])
                key = _edge_key(dets, graph.boundary)
                if key is not None:
                    edits.append((key, o, TIMELIKE))
                for j, partner in czs_since[q]:
                    dets, o = signature([(j, partner, "Z")])
                    key = _edge_key(dets, graph.boundary)
                    if key is not None:
                        edits.append((key, o, LOSS_CORRELATED))
                graph.loss_edits[(i, q)] = edits
    return graph


def apply_loss_edits(graph: MatchingGraph, lost_keys) -> dict:
    """Per-shot overlay: edge key -> (p = 0.5, observable) for every loss-affected edge."""
    overlay = {}
    for key in lost_keys:
        for edge, obs, _ in graph.loss_edits.get(tuple(key), ()):
            if edge in graph.edges:
                obs = graph.edges[edge].observable
            overlay[edge] = (0.5, obs)
    return overlay
