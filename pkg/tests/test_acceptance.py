"""Acceptance criteria, one test each; every test prints a PASS/FAIL line with its measured numbers."""

import math
import time
from collections import Counter

import numpy as np
import pytest

from decoder_oracles import brute_force_matching
from helpers import chi_square_pvalue, min_assignment_brute_force, random_clifford_circuit
from mcmsim.analysis import detection_frequency, linear_trend, wilson_interval
from mcmsim.circuit import ZoneKind
from mcmsim.decoder import DetectorLayout, build_matching_graph
from mcmsim.decoder.graph import apply_loss_edits
from mcmsim.decoder.matching import Decoder, logical_failure_rate, reference_distances
from mcmsim.experiments import QUOTED_FIDELITY, TABLE_V, TABLE_VII, run_distillation, run_ramsey, run_replenish
from mcmsim.generators import DistillSpec, RepCodeSpec, gen_walking_repcode
from mcmsim.lindblad import Decay, Drive, Level, LevelSystem, default_builder, evolve, final_state, stark_shift
from mcmsim.logistics import ZoneOccupancy, path_length, plan_fill
from mcmsim.analysis import bell_fidelity
from mcmsim.sim.calibrate import distillation_noise, herald_mean_attempts
from mcmsim.sim.engine import run_shot
from mcmsim.sim.frames import sample_batch
from mcmsim.sim.noise import NoiseModel
from mcmsim.sim.rng import shot_seed
from mcmsim.sim.statevector import outcome_distribution

NOISELESS = NoiseModel.noiseless()
DEFAULT = NoiseModel.default()
MHZ = 2 * math.pi * 1e6


def verdict(label, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {label}: {detail}"
    print("\n" + line)
    return line


@pytest.fixture
def report(capsys):
    def emit(label, ok, detail):
        with capsys.disabled():
            verdict(label, ok, detail)
        assert ok, detail

    return emit


def test_criterion_1_noiseless_determinism(report):
    t0 = time.perf_counter()
    events = failures = 0
    for d in (3, 5, 7, 9):
        for cycles in (1, d, 41):
            c = gen_walking_repcode(RepCodeSpec(d, cycles))
            vals = sample_batch(c, NOISELESS, 1000, d * 100 + cycles).meas
            par = DetectorLayout(c).evaluate(vals, np.random.default_rng(0))[0]
            events += int(par.sum())
            failures += logical_failure_rate(c, vals, np.random.default_rng(0), NOISELESS).failures
    dt = time.perf_counter() - t0
    ok = events == 0 and failures == 0 and dt < 60
    report("1", ok, f"detector events {events}, logical failures {failures}, runtime {dt:.1f} s (< 60 s)")


def test_criterion_2_oracle_equivalence(report):
    t0 = time.perf_counter()
    shots, alpha, n_circ = 200, 1e-3, 500
    rejected = impossible = 0
    for i in range(n_circ):
        rng = np.random.default_rng(20_000 + i)
        c = random_clifford_circuit(rng, int(rng.integers(1, 6)), 25)
        counts = Counter(tuple(run_shot(c, NOISELESS, shot_seed(i, s)).measurement_vector(c)) for s in range(shots))
        exact = outcome_distribution(c)
        impossible += any(exact.get(k, 0.0) <= 0 for k in counts)
        rejected += chi_square_pvalue(counts, exact, shots) < alpha
    dt = time.perf_counter() - t0
    # Binomial(500, 0.001) exceeds 4 with probability below 2e-4
    ok = impossible == 0 and rejected <= 4 and dt < 120
    report("2", ok, f"{rejected}/{n_circ} rejections at alpha={alpha} (allowed <= 4), impossible outcomes {impossible}, runtime {dt:.1f} s (< 120 s)")


def test_criterion_3_decoder_exactness(report):
    noise = DEFAULT
    c = gen_walking_repcode(RepCodeSpec(5, 5))
    g = build_matching_graph(c, noise)
    dec = Decoder(g)
    layout = DetectorLayout(c)
    instances = []
    for j, scale in enumerate((3.0, 6.0, 10.0)):
        want = 1000 // 3 + (j == 0)
        batch = sample_batch(c, noise.scaled(scale), 4 * want, 500 + j)
        par, _, _, lost = layout.evaluate(batch.meas, np.random.default_rng(j))
        got = 0
        for s in range(batch.shots):
            flagged = np.flatnonzero(par[s])
            if 0 < flagged.size <= 12:
                instances.append((flagged.tolist(), apply_loss_edits(g, [layout.keys[k] for k in np.flatnonzero(lost[s])])))
                got += 1
            if got == want:
                break
    agree = edited = 0
    for flagged, overlay in instances:
        dist, _ = reference_distances(g, flagged + [g.boundary], overlay)
        k = len(flagged)
        exact = brute_force_matching(dist[:k, :k], dist[:k, k])
        agree += math.isclose(dec.decode(flagged, overlay).weight, exact, rel_tol=1e-9, abs_tol=1e-7)
        edited += bool(overlay)
    ok = len(instances) == 1000 and agree == 1000
    report("3", ok, f"{agree}/{len(instances)} matching weights equal brute force ({edited} with loss edits)")


def test_criterion_4_paper_tables(report):
    fid = {enc: bell_fidelity(TABLE_VII[enc]).value for enc in ("unencoded", "encoded")}
    fid_ok = all(abs(fid[e] - QUOTED_FIDELITY[e]) <= 0.001 + 1e-12 for e in fid)
    rates_ok = True
    for (_, _), (f, n) in TABLE_V.items():
        lo, hi = wilson_interval(f, n)
        rates_ok &= lo <= f / n <= hi and 0 <= lo < hi <= 1
    rates_ok &= 25 / 17820 == TABLE_V[("phase_insensitive", 3)][0] / TABLE_V[("phase_insensitive", 3)][1]
    rates_ok &= 30 / 11700 == TABLE_V[("phase_sensitive", 3)][0] / TABLE_V[("phase_sensitive", 3)][1]
    lo, hi = wilson_interval(25, 17820)
    detail = (
        f"fidelity unencoded {fid['unencoded']:.4f} (quoted 0.977), encoded {fid['encoded']:.4f} (quoted 0.996); "
        f"25/17820 = {25 / 17820:.4e} CI [{lo:.4e}, {hi:.4e}]"
    )
    report("4", fid_ok and rates_ok, detail)


def _bulk_frequency(d, cycles, sensitive, shots, seed):
    c = gen_walking_repcode(RepCodeSpec(d, cycles, sensitive))
    layout = DetectorLayout(c)
    vals = sample_batch(c, DEFAULT, shots, seed).meas
    par = layout.evaluate(vals, np.random.default_rng(seed))[0]
    cyc = np.array([i[0] for i in layout.ids])
    freq = detection_frequency(par, cyc, n_boot=200, seed=seed)
    # bulk: drop the first cycle and the final data-readout layer
    bulk = (freq.cycles >= 1) & (freq.cycles < cycles)
    return freq.cycles[bulk], freq.mean[bulk], par[:, np.isin(cyc, freq.cycles[bulk])]


def test_criterion_5a_flat_detection(report):
    rows, ok = [], True
    for d in (3, 5, 7):
        for sensitive in (False, True):
            x, y, _ = _bulk_frequency(d, 41, sensitive, 600, 5000 + d)
            fit = linear_trend(x, y)
            z = abs(fit["slope"]) / fit.stderr["slope"]
            ok &= z < 2
            rows.append(f"d={d}{' ps' if sensitive else ''} |slope|/sigma={z:.2f}")
    report("5a", ok, "; ".join(rows) + " (each < 2)")


def test_criterion_5b_phase_sensitive_elevated(report):
    rows, ok = [], True
    for d in (3, 5):
        _, _, pi = _bulk_frequency(d, 41, False, 2000, 77)
        _, _, ps = _bulk_frequency(d, 41, True, 2000, 78)
        a, b = pi.mean(axis=1), ps.mean(axis=1)
        z = (b.mean() - a.mean()) / math.hypot(a.std(ddof=1) / math.sqrt(a.size), b.std(ddof=1) / math.sqrt(b.size))
        ok &= b.mean() > a.mean()
        rows.append(f"d={d} insensitive {a.mean():.4f} vs sensitive {b.mean():.4f} (z={z:.1f})")
    report("5b", ok, "; ".join(rows))


def test_criterion_5c_suppression_with_distance(report):
    t0 = time.perf_counter()
    rates, counts = [], []
    for d in (3, 5, 7):
        c = gen_walking_repcode(RepCodeSpec(d, d))
        vals = sample_batch(c, DEFAULT, 100_000, 9000 + d).meas
        fr = logical_failure_rate(c, vals, np.random.default_rng(d), DEFAULT)
        rates.append(fr.rate)
        counts.append(fr.failures)
    dt = time.perf_counter() - t0
    ok = rates[0] > rates[1] > rates[2] and dt < 900
    detail = ", ".join(f"d={d}: {k}/100000" for d, k in zip((3, 5, 7), counts))
    report("5c", ok, f"{detail}; runtime {dt:.0f} s (< 900 s)")


def test_criterion_6_heralded_distillation(report):
    noise = distillation_noise()
    mean = herald_mean_attempts(noise, 10_000, 606)
    quiet = run_distillation(DistillSpec(encoded=True), NOISELESS, 1000, seed=61)
    first = bool(np.all(quiet.attempts() == 1) and quiet.heralded().all())
    res = run_distillation(DistillSpec(encoded=True), noise, 10_000, seed=62)
    post, pre = res.counts("post").rows, res.counts("pre").rows
    pf, pn = (sum(v[i] for v in post.values()) for i in (0, 1))
    qf, qn = (sum(v[i] for v in pre.values()) for i in (0, 1))
    ok = abs(mean - 1.44) <= 0.05 and first and pf / pn < qf / qn
    detail = (
        f"mean attempts {mean:.3f} (1.44 +- 0.05); noiseless herald on attempt 1: {first}; "
        f"post-herald {pf}/{pn} = {pf / pn:.4f} < pre-herald {qf}/{qn} = {qf / qn:.4f}"
    )
    report("6", ok, detail)


def test_criterion_7_ramsey_loss_bookkeeping(report):
    r = run_ramsey(DEFAULT, [0, 10, 20, 30, 40], 600, seed=707)
    loss, contrast = r.loss_fit, r.contrast_fit
    zl = abs(loss["eps"] - 0.0106) / loss.stderr["eps"]
    zc = abs(contrast["eps"] - 0.0049) / contrast.stderr["eps"]
    ok = zl < 2 and zc < 2
    detail = (
        f"loss eps {loss['eps']:.5f} +- {loss.stderr['eps']:.5f} vs 0.0106 ({zl:.2f} sigma); "
        f"contrast eps {contrast['eps']:.5f} +- {contrast.stderr['eps']:.5f} vs 0.0049 ({zc:.2f} sigma)"
    )
    report("7", ok, detail)


def _fill_oracle(noise, lz_sites=75, vacancies=32, yield_=0.5, target=0.9):
    from scipy import stats

    q = yield_ * (1 - noise.p_reservoir_loss_per_mcm)
    need = math.floor(target * vacancies) + 1
    return sum(
        stats.binom.pmf(n, lz_sites, q) * stats.binom.sf(need - 1, min(n, vacancies), 1 - noise.p_move_fail)
        for n in range(lz_sites + 1)
    )


def test_criterion_8a_plan_optimality(report):
    rng = np.random.default_rng(808)
    n, agree = 500, 0
    for _ in range(n):
        vac = sorted(rng.choice(32, int(rng.integers(0, 7)), replace=False).tolist())
        src = sorted(rng.choice(32, int(rng.integers(6, 13)), replace=False).tolist())
        plan = plan_fill(vac, src)
        cost = np.array([[path_length((ZoneKind.SZ, s), (ZoneKind.MZ, v)) for s in src] for v in vac]).reshape(len(vac), len(src))
        agree += math.isclose(plan.total_length, min_assignment_brute_force(cost), abs_tol=1e-9)
    report("8a", agree == n, f"{agree}/{n} plans equal the brute-force minimum path length")


def test_criterion_8b_replenishment(report):
    res = run_replenish(DEFAULT, 10_000, 8)
    frac = res.success_fraction
    oracle = _fill_oracle(DEFAULT)
    lossless = _fill_oracle(NOISELESS)
    z = (frac - oracle) / math.sqrt(oracle * (1 - oracle) / 10_000)
    detail = (
        f"fill > 0.9 in {frac:.4f} of 10^4 trials (needs >= 0.99); binomial oracle {oracle:.4f} ({z:+.1f} sigma); "
        f"even without losses the oracle is {lossless:.4f}"
    )
    report("8b", frac >= 0.99, detail)


def test_criterion_9_lindblad(report, capsys):
    om = MHZ
    two = LevelSystem([Level("g"), Level("e")], [Drive("g", "e", om)])
    r = evolve(two, "g", 3e-6, n_out=301)
    rabi = float(np.max(np.abs(r.populations[:, 1] - np.sin(om * r.times / 2) ** 2)))
    delta = 10 * om
    shift = stark_shift(LevelSystem([Level("g"), Level("e")], [Drive("g", "e", om, delta)]), "g", 2e-5)
    stark_err = abs(shift / (om**2 / (4 * delta)) - 1)

    def leaky(delta):
        return LevelSystem([Level("g"), Level("e"), Level("x")], [Drive("g", "e", om, delta)], [Decay("e", "x", om)], sink="x")

    ts = np.array([1e-5, 2e-5, 4e-5, 8e-5])
    k_t = np.polyfit(np.log(ts), np.log([final_state(leaky(160 * om), "g", t)[2, 2].real for t in ts]), 1)[0]
    ratios = np.array([1 / 40, 1 / 80, 1 / 160, 1 / 320])
    k_r = np.polyfit(np.log(ratios), np.log([final_state(leaky(om / x), "g", 1e-5)[2, 2].real for x in ratios]), 1)[0]

    drift = max(r.trace_drift, evolve(leaky(3 * om), "g", 1e-5, n_out=51).trace_drift)
    img = default_builder()(0.0, 0.0)
    long = evolve(img, "g1", 1e-2, n_out=11, method="expm")
    drift = max(drift, long.trace_drift)
    per_image = float(np.real(final_state(img, "g1", 7e-3)[-1, -1]))

    ok = drift < 1e-9 and rabi < 1e-6 and stark_err < 0.05 and abs(k_t - 1) < 0.05 and abs(k_r - 2) < 0.05
    detail = (
        f"trace drift {drift:.1e}; Rabi error {rabi:.1e}; Stark error {100 * stark_err:.2f}%; "
        f"exponents t {k_t:.3f}, Omega/Delta {k_r:.3f}"
    )
    with capsys.disabled():
        print(f"\nINFO criterion 9 (non-gating): register per-image loss at the operating point {per_image:.2e} (order 1e-3 expected)")
    report("9", ok, detail)
