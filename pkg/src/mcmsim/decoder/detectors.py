"""Detector extraction from measurement records."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..circuit import Circuit
from ..sim.engine import LOST, ShotRecord
from ..sim.rng import make_rng, shot_seed

# stream index reserved for randomizing the bits of lost atoms
LOST_STREAM = 0x4C4F5354


@dataclass(frozen=True)
class DetectorRecord:
    id: tuple[int, int]  # (cycle, check); cycle == cycles for final detectors
    parity: int
    loss_touched: bool
    randomized: bool


class DetectorLayout:
    """Detector and observable definitions as matrices over measurement keys."""

    def __init__(self, circuit: Circuit):
        meta = circuit.metadata
        if "detectors" not in meta or "observable" not in meta:
            raise ValueError("circuit metadata has no detector definitions")
        self.keys = [tuple(k) for k in circuit.measurement_keys()]
        col = {k: j for j, k in enumerate(self.keys)}
        try:
            dets = meta["detectors"]
            self.ids = [tuple(d["id"]) for d in dets]
            self.members = [[col[tuple(k)] for k in d["keys"]] for d in dets]
            self.obs_members = [col[tuple(k)] for k in meta["observable"]["keys"]]
        except KeyError as exc:
            raise ValueError(f"detector refers to unknown measurement {exc}") from None
        self.expected = np.array([d["expected"] for d in dets], dtype=np.uint8)
        self.obs_expected = int(meta["observable"]["expected"])
        self.matrix = np.zeros((len(dets), len(self.keys)), dtype=np.uint8)
        for i, m in enumerate(self.members):
            self.matrix[i, m] = 1
        self.obs_vector = np.zeros(len(self.keys), dtype=np.uint8)
        self.obs_vector[self.obs_members] = 1

    @property
    def num_detectors(self) -> int:
        return len(self.ids)

    def evaluate(self, values: np.ndarray, rng: np.random.Generator):
        """Parities for a (shots, keys) value array; LOST entries become random bits.

        Returns (parities, touched, observable, lost_mask).
        """
        values = np.atleast_2d(values)
        if values.shape[1] != len(self.keys):
            raise ValueError(f"record has {values.shape[1]} measurements, layout expects {len(self.keys)}")
        lost = values == LOST
        bits = np.where(lost, 0, values).astype(np.uint8)
        n_lost = int(lost.sum())
        if n_lost:
            bits[lost] = rng.integers(0, 2, size=n_lost, dtype=np.uint8)
        parities = (bits.astype(np.int64) @ self.matrix.T.astype(np.int64)) % 2
        parities = parities.astype(np.uint8) ^ self.expected[None, :]
        touched = (lost.astype(np.int64) @ self.matrix.T.astype(np.int64)) > 0
        obs = ((bits.astype(np.int64) @ self.obs_vector.astype(np.int64)) % 2).astype(np.uint8) ^ self.obs_expected
        return parities, touched, obs, lost


def lost_bit_rng(seed: int) -> np.random.Generator:
    return make_rng(shot_seed(seed, LOST_STREAM))


def extract_detectors(shot: ShotRecord, circuit: Circuit) -> list[DetectorRecord]:
    layout = DetectorLayout(circuit)
    try:
        values = shot.measurement_vector(circuit)
    except KeyError as exc:
        raise ValueError(f"shot does not match circuit: missing measurement {exc}") from None
    parities, touched, _, _ = layout.evaluate(values, lost_bit_rng(shot.seed))
    return [
        DetectorRecord(layout.ids[i], int(parities[0, i]), bool(touched[0, i]), bool(touched[0, i]))
        for i in range(layout.num_detectors)
    ]
