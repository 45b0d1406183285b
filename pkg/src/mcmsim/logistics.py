"""Zone occupancy, conditional fill planning, and reservoir replenishment.

Sites are addressed as ``(zone, site)`` with ``site = row * cols + col``.
All highway zones share the 16-column layout of eight column pairs; atoms
leave a site into the highway lane on the open side of its column pair,
travel along lanes and rows, and enter the destination from its lane.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import t as student_t

from .circuit import DEFAULT_ZONES, Circuit, Opcode, Zone, ZoneKind, iter_placements
from .sim.noise import NoiseModel

# y offset of row 0 of each zone, in units of the site pitch.  Nine empty rows
# separate the bottom MZ row from the register.
ROW_OFFSET = {
    ZoneKind.SZ: 0,
    ZoneKind.IZ: 2,
    ZoneKind.MZ: 3,
    ZoneKind.REGISTER: 14,
    ZoneKind.LZ: -7,
}
HIGHWAY_ZONES = frozenset({ZoneKind.REGISTER, ZoneKind.IZ, ZoneKind.MZ, ZoneKind.SZ})


@dataclass(frozen=True)
class LogisticsConfig:
    base_latency_ms: float = 5.0  # software service, assumed
    per_move_ms: float = 0.8  # 0.4 ms tweezer ramp at pickup and at drop-off
    hungarian_limit: int = 64
    lz_yield: float = 0.5
    transport_ms: float = 120.0
    handoff_ms: float = 10.0
    galvo_ms: float = 10.0
    lac_ms: float = 20.0  # assumed
    lz_base_latency_ms: float = 24.0  # assumed; ~120 ms for a full SZ refill
    lz_per_move_ms: float = 3.0  # assumed
    target_fill_fraction: float = 0.9
    mot_parallel_s: float = 0.0


class InsufficientReservoir(RuntimeError):
    def __init__(self, needed: int, available: int):
        super().__init__(f"INSUFFICIENT_RESERVOIR: {needed} vacancies, {available} reservoir atoms")
        self.needed = needed
        self.available = available


class PlanError(ValueError):
    pass


def site_xy(zone: ZoneKind, site: int, zones=DEFAULT_ZONES) -> tuple[float, float]:
    z = zones[zone]
    row, col = divmod(int(site), z.cols)
    return float(col), float(ROW_OFFSET[zone] + row)


def lane_x(col: float) -> float:
    """x of the highway lane adjacent to a column (even columns face left)."""
    return col - 0.5 if int(col) % 2 == 0 else col + 0.5


def path_length(src: tuple[ZoneKind, int], dst: tuple[ZoneKind, int], zones=DEFAULT_ZONES) -> float:
    (sx, sy), (dx, dy) = site_xy(*src, zones), site_xy(*dst, zones)
    if src[0] in HIGHWAY_ZONES and dst[0] in HIGHWAY_ZONES:
        return abs(sy - dy) + abs(lane_x(sx) - lane_x(dx)) + 1.0
    # the LZ has no highways: plain Manhattan up to the lane of the other end
    if src[0] in HIGHWAY_ZONES:
        sx = lane_x(sx)
    if dst[0] in HIGHWAY_ZONES:
        dx = lane_x(dx)
    return abs(sx - dx) + abs(sy - dy) + 0.5 * ((src[0] in HIGHWAY_ZONES) + (dst[0] in HIGHWAY_ZONES))


@dataclass
class ZoneOccupancy:
    occupied: dict[ZoneKind, np.ndarray]
    zones: dict[ZoneKind, Zone] = field(default_factory=lambda: dict(DEFAULT_ZONES))

    @classmethod
    def empty(cls, zones=DEFAULT_ZONES) -> "ZoneOccupancy":
        return cls({k: np.zeros(z.capacity, dtype=bool) for k, z in zones.items()}, dict(zones))

    @classmethod
    def standard(cls, sz_filled: int = 32, zones=DEFAULT_ZONES) -> "ZoneOccupancy":
        occ = cls.empty(zones)
        occ.occupied[ZoneKind.SZ][:sz_filled] = True
        return occ

    def copy(self) -> "ZoneOccupancy":
        return ZoneOccupancy({k: v.copy() for k, v in self.occupied.items()}, dict(self.zones))

    def count(self, zone: ZoneKind) -> int:
        return int(self.occupied[zone].sum())

    def fill_fraction(self, zone: ZoneKind) -> float:
        return self.count(zone) / self.zones[zone].capacity

    def sites(self, zone: ZoneKind, occupied: bool = True) -> list[int]:
        arr = self.occupied[zone]
        return [int(s) for s in np.flatnonzero(arr if occupied else ~arr)]

    def to_json(self) -> str:
        return json.dumps({k.value: self.sites(k) for k in self.occupied}, sort_keys=True)


@dataclass(frozen=True)
class Move:
    src: tuple[ZoneKind, int]
    dst: tuple[ZoneKind, int]
    length: float

    def to_dict(self) -> dict:
        return {"src": [self.src[0].value, self.src[1]], "dst": [self.dst[0].value, self.dst[1]], "length": self.length}


@dataclass(frozen=True)
class MovePlan:
    moves: tuple[Move, ...]
    latency_ms: float

    @property
    def total_length(self) -> float:
        return float(sum(m.length for m in self.moves))

    def to_json(self) -> str:
        return json.dumps({"moves": [m.to_dict() for m in self.moves], "latency_ms": self.latency_ms})

    @classmethod
    def from_json(cls, text: str) -> "MovePlan":
        data = json.loads(text)
        moves = tuple(
            Move((ZoneKind(m["src"][0]), m["src"][1]), (ZoneKind(m["dst"][0]), m["dst"][1]), m["length"])
            for m in data["moves"]
        )
        return cls(moves, data["latency_ms"])


def assign(vacancies, sources, config: LogisticsConfig = LogisticsConfig()) -> list[tuple[int, int]]:
    """Pairs (vacancy index, source index) minimizing total path length."""
    if not vacancies:
        return []
    cost = np.array([[path_length(s, v) for s in sources] for v in vacancies])
    if len(vacancies) <= config.hungarian_limit:
        rows, cols = linear_sum_assignment(cost)
        return [(int(r), int(c)) for r, c in zip(rows, cols)]
    # greedy nearest source for very large requests
    pairs, used = [], set()
    order = np.argsort(cost.min(axis=1), kind="stable")
    for r in order:
        for c in np.argsort(cost[r], kind="stable"):
            if int(c) not in used:
                used.add(int(c))
                pairs.append((int(r), int(c)))
                break
    return pairs


def plan_fill(
    mz_vacancies,
    sz_occupancy,
    config: LogisticsConfig = LogisticsConfig(),
    dst_zone: ZoneKind = ZoneKind.MZ,
    src_zone: ZoneKind = ZoneKind.SZ,
) -> MovePlan:
    """Assign every vacancy a distinct reservoir atom.

    ``sz_occupancy`` is either a ZoneOccupancy or an iterable of occupied
    source sites.  Raises InsufficientReservoir when the reservoir is short.
    """
    if isinstance(sz_occupancy, ZoneOccupancy):
        src_sites = sz_occupancy.sites(src_zone)
    else:
        src_sites = sorted(int(s) for s in sz_occupancy)
    vac = sorted(int(v) for v in mz_vacancies)
    if len(vac) > len(src_sites):
        raise InsufficientReservoir(len(vac), len(src_sites))
    vacancies = [(dst_zone, v) for v in vac]
    sources = [(src_zone, s) for s in src_sites]
    pairs = assign(vacancies, sources, config)
    moves = sorted(
        (Move(sources[c], vacancies[r], path_length(sources[c], vacancies[r])) for r, c in pairs),
        key=lambda m: m.dst[1],
    )
    return MovePlan(tuple(moves), config.base_latency_ms + config.per_move_ms * len(moves))


def execute_plan(
    occupancy: ZoneOccupancy,
    plan: MovePlan,
    p_move_fail: float,
    rng: np.random.Generator,
) -> tuple[ZoneOccupancy, list[bool]]:
    """Apply moves in order; a failed move loses the atom (source and target end empty)."""
    occ = occupancy.copy()
    results = []
    for m in plan.moves:
        if not occ.occupied[m.src[0]][m.src[1]]:
            raise PlanError(f"move source {m.src[0].value}:{m.src[1]} is empty")
        if occ.occupied[m.dst[0]][m.dst[1]]:
            raise PlanError(f"move destination {m.dst[0].value}:{m.dst[1]} is occupied")
        occ.occupied[m.src[0]][m.src[1]] = False
        ok = bool(rng.random() >= p_move_fail)
        if ok:
            occ.occupied[m.dst[0]][m.dst[1]] = True
        results.append(ok)
    return occ, results


@dataclass(frozen=True)
class ReplenishSequence:
    stages_ms: dict
    total_ms: float
    lz_loaded: int
    moves_attempted: int
    moves_succeeded: int
    sz_fill_before: float
    sz_fill_after: float
    partial: bool
    register_contrast: float
    register_dephase_probability: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def replenish(
    occupancy: ZoneOccupancy,
    noise: NoiseModel,
    rng: np.random.Generator,
    config: LogisticsConfig = LogisticsConfig(),
    lz_yield: float | None = None,
) -> tuple[ZoneOccupancy, ReplenishSequence]:
    """One LZ load, parity projection, MCM imaging and LZ -> SZ refill."""
    yield_ = config.lz_yield if lz_yield is None else lz_yield
    occ = occupancy.copy()
    before = occ.fill_fraction(ZoneKind.SZ)
    lz = occ.occupied[ZoneKind.LZ]
    # light-assisted collisions leave 0 or 1 atom per site
    lz |= rng.random(lz.size) < yield_
    lz_loaded = int(lz.sum())
    # MCM block images LZ and SZ; atoms are prepared in |0> (one bright image)
    p_img = noise.p_reservoir_loss_per_mcm
    for zone in (ZoneKind.LZ, ZoneKind.SZ):
        arr = occ.occupied[zone]
        arr &= ~(rng.random(arr.size) < p_img)
    vacancies = occ.sites(ZoneKind.SZ, occupied=False)
    sources = occ.sites(ZoneKind.LZ)
    partial = len(sources) < len(vacancies)
    vacancies_to_fill = vacancies
    if partial:
        # fill the vacancies cheapest to reach; the remainder waits for the next load
        cost = np.array([[path_length((ZoneKind.LZ, s), (ZoneKind.SZ, v)) for s in sources] for v in vacancies])
        order = np.argsort(cost.min(axis=1) if sources else np.zeros(len(vacancies)), kind="stable")
        vacancies_to_fill = sorted(vacancies[i] for i in order[: len(sources)])
    plan = plan_fill(vacancies_to_fill, sources, config, dst_zone=ZoneKind.SZ, src_zone=ZoneKind.LZ)
    occ, results = execute_plan(occ, plan, noise.p_move_fail, rng)
    rearrange_ms = config.lz_base_latency_ms + config.lz_per_move_ms * len(plan.moves)
    stages = {
        "transport": config.transport_ms,
        "handoff": config.handoff_ms,
        "galvo": config.galvo_ms,
        "lac": config.lac_ms,
        "mcm_block": noise.mcm_cycle_duration_s * 1e3,
        "rearrangement": rearrange_ms,
    }
    contrast = noise.replenish_site_contrast * math.exp(-noise.idle_dephase_rate * config.mot_parallel_s)
    report = ReplenishSequence(
        stages_ms=stages,
        total_ms=float(sum(stages.values())),
        lz_loaded=lz_loaded,
        moves_attempted=len(results),
        moves_succeeded=int(sum(results)),
        sz_fill_before=before,
        sz_fill_after=occ.fill_fraction(ZoneKind.SZ),
        partial=partial or occ.fill_fraction(ZoneKind.SZ) <= config.target_fill_fraction,
        register_contrast=contrast,
        register_dephase_probability=(1 - contrast) / 2,
    )
    return occ, report


@dataclass(frozen=True)
class CircuitProfile:
    mz_per_cycle: int
    register_per_cycle: int
    sz_initial: int = 32
    sz_imaging_loss: bool = True


def profile_from_circuit(circuit: Circuit, sz_initial: int = 32) -> CircuitProfile:
    """Average MCM target count and register population per lit MCM op."""
    mz, reg, n = 0, 0, 0
    for _, op, placement in iter_placements(circuit):
        if op.opcode is Opcode.MCM and op.light:
            n += 1
            mz += len(op.targets)
            reg += sum(1 for z, _ in placement.values() if z is ZoneKind.REGISTER)
    if n == 0:
        return CircuitProfile(0, 0, sz_initial)
    return CircuitProfile(round(mz / n), round(reg / n), sz_initial)


@dataclass(frozen=True)
class LifetimeEstimate:
    mean_cycles: float
    ci_low: float
    ci_high: float
    trials: int

    @property
    def infinite(self) -> bool:
        return math.isinf(self.mean_cycles)


def per_cycle_vacancy_probabilities(noise: NoiseModel) -> tuple[float, float]:
    """(loss prob of a measured MZ atom, loss prob of a register atom) per cycle."""
    p_mz = 0.5 * (noise.mcm_loss_probability(1) + noise.mcm_loss_probability(2))
    return p_mz, noise.p_register_loss_per_mcm


def reservoir_lifetime(
    profile: CircuitProfile,
    noise: NoiseModel,
    rng: np.random.Generator,
    trials: int = 2000,
    max_cycles: int = 1_000_000,
) -> LifetimeEstimate:
    """Monte-Carlo cycles until a COND_FILL finds fewer SZ atoms than vacancies.

    Each vacancy costs one reservoir atom per attempt; a failed move leaves
    the vacancy for the next cycle.  SZ atoms also suffer imaging loss.
    """
    p_mz, p_reg = per_cycle_vacancy_probabilities(noise)
    p_sz = noise.p_reservoir_loss_per_mcm if profile.sz_imaging_loss else 0.0
    if (p_mz == 0 or profile.mz_per_cycle == 0) and (p_reg == 0 or profile.register_per_cycle == 0) and p_sz == 0:
        return LifetimeEstimate(math.inf, math.inf, math.inf, 0)
    reservoir = np.full(trials, profile.sz_initial, dtype=np.int64)
    pending = np.zeros(trials, dtype=np.int64)
    done = np.zeros(trials, dtype=bool)
    cycles = np.zeros(trials, dtype=np.int64)
    for c in range(1, max_cycles + 1):
        live = ~done
        if not live.any():
            break
        k = int(live.sum())
        reservoir[live] -= rng.binomial(reservoir[live], p_sz)
        vac = pending[live] + rng.binomial(profile.mz_per_cycle, p_mz, k) + rng.binomial(profile.register_per_cycle, p_reg, k)
        short = vac > reservoir[live]
        idx = np.flatnonzero(live)
        cycles[idx[short]] = c
        done[idx[short]] = True
        ok = idx[~short]
        reservoir[ok] -= vac[~short]
        pending[ok] = rng.binomial(vac[~short], noise.p_move_fail)
    else:
        cycles[~done] = max_cycles
    mean = float(cycles.mean())
    sem = float(cycles.std(ddof=1) / math.sqrt(trials)) if trials > 1 else math.inf
    half = float(student_t.ppf(0.975, max(trials - 1, 1))) * sem
    return LifetimeEstimate(mean, mean - half, mean + half, trials)
