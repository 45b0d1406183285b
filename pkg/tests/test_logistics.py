import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from helpers import binom_z, min_assignment_brute_force
from mcmsim.circuit import ZoneKind
from mcmsim.generators import RepCodeSpec, gen_walking_repcode
from mcmsim.logistics import (
    CircuitProfile,
    InsufficientReservoir,
    LogisticsConfig,
    Move,
    MovePlan,
    PlanError,
    ZoneOccupancy,
    execute_plan,
    path_length,
    per_cycle_vacancy_probabilities,
    plan_fill,
    profile_from_circuit,
    replenish,
    reservoir_lifetime,
)
from mcmsim.sim.noise import NoiseModel
from mcmsim.sim.rng import make_rng

CFG = LogisticsConfig()
D = NoiseModel.default()


def brute_force_min(vacancies, sources, dst=ZoneKind.MZ, src=ZoneKind.SZ):
    cost = np.array([[path_length((src, s), (dst, v)) for s in sources] for v in vacancies]).reshape(len(vacancies), len(sources))
    return min_assignment_brute_force(cost)


def test_empty_plan_latency():
    plan = plan_fill([], ZoneOccupancy.standard())
    assert plan.moves == () and plan.latency_ms == CFG.base_latency_ms


def test_single_vacancy_nearest_source():
    occ = ZoneOccupancy.standard(32)
    plan = plan_fill([3], occ)
    assert len(plan.moves) == 1
    best = min(path_length((ZoneKind.SZ, s), (ZoneKind.MZ, 3)) for s in occ.sites(ZoneKind.SZ))
    assert plan.moves[0].length == best
    assert plan.total_length == brute_force_min([3], occ.sites(ZoneKind.SZ))


def test_insufficient_reservoir():
    with pytest.raises(InsufficientReservoir):
        plan_fill([0, 1, 2, 3, 4], [0, 1, 2])


@given(
    st.lists(st.integers(0, 31), min_size=0, max_size=6, unique=True),
    st.lists(st.integers(0, 31), min_size=6, max_size=12, unique=True),
)
@settings(max_examples=150)
def test_plan_is_optimal_on_small_instances(vac, src):
    plan = plan_fill(vac, src)
    assert math.isclose(plan.total_length, brute_force_min(sorted(vac), src), abs_tol=1e-9)
    assert sorted(m.dst[1] for m in plan.moves) == sorted(vac)
    assert len({m.src for m in plan.moves}) == len(vac)


@given(st.lists(st.integers(0, 31), max_size=20, unique=True))
def test_latency_is_affine(vac):
    plan = plan_fill(vac, ZoneOccupancy.standard())
    assert math.isclose(plan.latency_ms, CFG.base_latency_ms + CFG.per_move_ms * len(vac))


def test_plan_json_round_trip():
    plan = plan_fill([1, 5, 9], ZoneOccupancy.standard())
    assert MovePlan.from_json(plan.to_json()) == plan
    json.loads(ZoneOccupancy.standard().to_json())


def test_execute_without_failures_fills_everything():
    occ = ZoneOccupancy.standard()
    vac = [0, 7, 20]
    after, results = execute_plan(occ, plan_fill(vac, occ), 0.0, make_rng(1))
    assert all(results)
    assert all(after.occupied[ZoneKind.MZ][v] for v in vac)
    assert after.count(ZoneKind.SZ) == occ.count(ZoneKind.SZ) - 3


def test_move_from_empty_source_raises():
    plan = MovePlan((Move((ZoneKind.SZ, 0), (ZoneKind.MZ, 0), 1.0),), 5.0)
    with pytest.raises(PlanError):
        execute_plan(ZoneOccupancy.empty(), plan, 0.0, make_rng(0))


def test_single_move_success_frequency():
    occ = ZoneOccupancy.standard()
    plan = plan_fill([4], occ)
    rng = make_rng(2)
    ok = sum(execute_plan(occ, plan, D.p_move_fail, rng)[1][0] for _ in range(100_000))
    assert binom_z(ok, 100_000, 1 - D.p_move_fail) < 4


@given(st.integers(0, 2**31), st.lists(st.integers(0, 31), max_size=16, unique=True), st.floats(0, 0.5))
@settings(max_examples=50)
def test_conservation(seed, vac, p_fail):
    occ = ZoneOccupancy.standard()
    after, results = execute_plan(occ, plan_fill(vac, occ), p_fail, make_rng(seed))
    total = lambda o: sum(o.count(z) for z in ZoneKind)
    assert total(after) == total(occ) - (len(results) - sum(results))


def test_replenish_full_yield_fills_sz():
    occ, seq = replenish(ZoneOccupancy.standard(0), NoiseModel.noiseless(), make_rng(0), lz_yield=1.0)
    assert seq.sz_fill_after == 1.0 and occ.fill_fraction(ZoneKind.SZ) == 1.0


def exact_fill_probability(noise, lz_sites=75, vacancies=32, yield_=0.5, target=0.9):
    """P(fill > target) from the binomial chain: LZ atoms -> imaging survival -> move success."""
    q = yield_ * (1 - noise.p_reservoir_loss_per_mcm)
    need = math.floor(target * vacancies) + 1
    total = 0.0
    for n in range(lz_sites + 1):
        m = min(n, vacancies)
        total += stats.binom.pmf(n, lz_sites, q) * stats.binom.sf(need - 1, m, 1 - noise.p_move_fail)
    return total


def test_replenish_matches_binomial_oracle():
    from mcmsim.experiments import run_replenish

    res = run_replenish(D, 10_000, 5)
    p = exact_fill_probability(D)
    k = int((res.fill_after > 0.9).sum())
    assert binom_z(k, 10_000, p) < 4, (k / 1e4, p)


@given(st.integers(0, 2**31), st.integers(0, 32), st.floats(0, 1))
@settings(max_examples=60)
def test_rearrangement_never_lowers_fill(seed, filled, y):
    noise = D.replace(p_mcm_loss_bright=0.0, p_background_loss_per_image=0.0)
    occ = ZoneOccupancy.standard(filled)
    _, seq = replenish(occ, noise, make_rng(seed), lz_yield=y)
    assert seq.sz_fill_after >= seq.sz_fill_before


def test_imaging_loss_can_lower_fill_without_supply():
    # the replenishment MCM block also images the SZ, so an empty LZ load can lose SZ atoms
    noise = D.replace(p_mcm_loss_bright=0.2)
    fills = [replenish(ZoneOccupancy.standard(32), noise, make_rng(s), lz_yield=0.0)[1].sz_fill_after for s in range(20)]
    assert min(fills) < 1.0


def test_replenish_contrast_and_timing():
    _, seq = replenish(ZoneOccupancy.standard(0), D, make_rng(3))
    assert math.isclose(seq.register_contrast, 0.981)
    assert 200 < seq.total_ms < 400


def test_lifetime_zero_loss_is_infinite():
    est = reservoir_lifetime(CircuitProfile(5, 10), NoiseModel.noiseless(), make_rng(0))
    assert est.infinite


def random_walk_lifetime(mz, p, sz, trials, rng):
    """Per-trial loop: each cycle draws the MZ losses; stop when they exceed the reservoir."""
    out = []
    for _ in range(trials):
        res, c = sz, 0
        while True:
            c += 1
            v = int((rng.random(mz) < p).sum())
            if v > res:
                break
            res -= v
        out.append(c)
    return float(np.mean(out))


def test_lifetime_against_random_walk():
    noise = NoiseModel.noiseless().replace(p_mcm_loss_bright=0.02)
    profile = CircuitProfile(mz_per_cycle=8, register_per_cycle=0, sz_initial=32, sz_imaging_loss=False)
    p_mz, _ = per_cycle_vacancy_probabilities(noise)
    est = reservoir_lifetime(profile, noise, make_rng(4), trials=4000)
    oracle = random_walk_lifetime(8, p_mz, 32, 4000, np.random.default_rng(5))
    assert abs(est.mean_cycles - oracle) / oracle < 0.05
    lam = 8 * p_mz
    assert abs(est.mean_cycles - 32 / lam) / (32 / lam) < 0.1


def test_d9_lifetime_is_finite():
    profile = profile_from_circuit(gen_walking_repcode(RepCodeSpec(9, 3)))
    assert profile.mz_per_cycle == 9
    est = reservoir_lifetime(profile, D, make_rng(6), trials=500)
    assert not est.infinite and est.ci_low < est.mean_cycles < est.ci_high
