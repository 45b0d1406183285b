import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mcmsim.analysis import (
    CountTable,
    bell_fidelity,
    bell_fidelity_from_expectations,
    detection_frequency,
    fit_exponential_decay,
    linear_trend,
    markdown_report,
    retry_histogram,
    wilson_interval,
)
from mcmsim.experiments import QUOTED_FIDELITY, TABLE_VII

Z95 = 1.959963984540054


def wilson_reference(k, n, z=Z95):
    # score interval solved directly as the roots of the quadratic (p - phat)^2 = z^2 p (1 - p) / n
    phat = k / n
    a = 1 + z * z / n
    b = -(2 * phat + z * z / n)
    c = phat * phat
    disc = math.sqrt(b * b - 4 * a * c)
    return (-b - disc) / (2 * a), (-b + disc) / (2 * a)


def test_wilson_zero_successes():
    lo, hi = wilson_interval(0, 100)
    assert lo == 0.0
    assert hi == pytest.approx(Z95**2 / (100 + Z95**2), abs=1e-12)
    assert hi == pytest.approx(0.0370, abs=1e-4)


@pytest.mark.parametrize("k,n", [(25, 17820), (3, 1443), (61, 2188), (50, 100), (1, 7)])
def test_wilson_against_quadratic_roots(k, n):
    assert wilson_interval(k, n) == pytest.approx(wilson_reference(k, n), abs=1e-12)


def test_wilson_symmetric_at_half():
    lo, hi = wilson_interval(50, 100)
    assert 0.5 - lo == pytest.approx(hi - 0.5, abs=1e-12)


@given(st.integers(1, 10**6), st.data())
def test_wilson_contains_estimate(n, data):
    k = data.draw(st.integers(0, n))
    lo, hi = wilson_interval(k, n)
    assert 0 <= lo <= k / n <= hi <= 1


def test_wilson_rejects_bad_counts():
    with pytest.raises(ValueError):
        wilson_interval(0, 0)
    with pytest.raises(ValueError):
        wilson_interval(5, 4)


@pytest.mark.parametrize("enc", ["unencoded", "encoded"])
def test_bell_fidelity_published_counts(enc):
    est = bell_fidelity(TABLE_VII[enc])
    assert abs(est.value - QUOTED_FIDELITY[enc]) <= 0.001
    assert 0 < est.stderr < 0.01


def test_bell_fidelity_perfect_and_missing():
    counts = CountTable()
    for b in ("XX", "YY", "ZZ"):
        counts.add(b, 0, 100)
    est = bell_fidelity(counts)
    assert est.value == 1.0 and est.stderr == 0.0
    with pytest.raises(ValueError):
        bell_fidelity({"XX": (0, 10), "ZZ": (0, 10)})


@given(st.lists(st.tuples(st.integers(0, 50), st.integers(50, 500)), min_size=3, max_size=3))
def test_bell_counts_match_expectations(rows):
    counts = dict(zip(("XX", "YY", "ZZ"), rows))
    signs = {"XX": 1, "YY": -1, "ZZ": 1}
    # a failure flips the sign of the measured parity relative to the target eigenvalue
    expect = {b: signs[b] * (1 - 2 * f / n) for b, (f, n) in counts.items()}
    assert bell_fidelity(counts).value == pytest.approx(bell_fidelity_from_expectations(expect), abs=1e-12)


def test_bell_expectation_signs():
    assert bell_fidelity_from_expectations({"XX": 1, "YY": -1, "ZZ": 1}) == 1
    assert bell_fidelity_from_expectations({"XX": 1, "YY": 1, "ZZ": -1}, target="psi+") == 1
    assert bell_fidelity_from_expectations({"XX": 1, "YY": 1, "ZZ": -1}) == 0


def test_count_table_csv_round_trip():
    t = CountTable().add(3, 25, 17820).add(5, 3, 17640).add(3, 1, 10)
    assert t.rows[3] == (26, 17830)
    back = CountTable.from_csv(t.to_csv())
    assert back.rows == {"3": (26, 17830), "5": (3, 17640)}
    with pytest.raises(ValueError):
        t.add("x", 5, 4)


def test_exact_exponential_fit():
    x = np.arange(0, 50, 5)
    fit = fit_exponential_decay(x, 0.99**x)
    assert abs(fit["eps"] - 0.01) < 1e-9
    assert abs(fit["A"] - 1) < 1e-9


def test_fit_is_deterministic():
    x = np.array([0, 10, 20, 30, 40])
    y = np.array([0.98, 0.90, 0.83, 0.75, 0.70])
    a, b = fit_exponential_decay(x, y), fit_exponential_decay(x, y)
    assert a.params == b.params and a.stderr == b.stderr


def test_fit_rejects_degenerate_input():
    with pytest.raises(ValueError):
        fit_exponential_decay([0, 1], [1, 0.9])
    with pytest.raises(ValueError):
        fit_exponential_decay([2, 2, 2], [1, 0.9, 0.8])
    with pytest.raises(ValueError):
        fit_exponential_decay([0, 1, 2], [0, 0, 0])


def test_ramsey_fit_coverage():
    # synthetic survival at 600 shots per point: the 2 sigma interval covers the truth ~95% of the time
    x = np.array([0, 10, 20, 30, 40])
    eps, A, shots = 0.0106, 0.98, 600
    rng = np.random.default_rng(1)
    hits = 0
    trials = 300
    for _ in range(trials):
        p = A * (1 - eps) ** x
        y = rng.binomial(shots, p) / shots
        sigma = np.sqrt(y * (1 - y) / shots)
        fit = fit_exponential_decay(x, y, sigma=sigma)
        hits += abs(fit["eps"] - eps) < 2 * fit.stderr["eps"]
    assert 0.90 <= hits / trials <= 0.99


def test_gerb_style_fit():
    blocks = np.array([0, 5, 10, 20, 40])
    rng = np.random.default_rng(2)
    shots = 20000
    y = rng.binomial(shots, 0.995 * (1 - 0.004) ** blocks) / shots
    fit = fit_exponential_decay(blocks, y)
    assert abs(fit["eps"] - 0.004) < 4 * fit.stderr["eps"]


def test_linear_trend_exact():
    x = np.arange(10.0)
    fit = linear_trend(x, 2 + 0.5 * x)
    assert fit["slope"] == pytest.approx(0.5, abs=1e-12)
    assert fit["intercept"] == pytest.approx(2, abs=1e-12)
    assert fit.stderr["slope"] < 1e-12


def test_detection_frequency_noiseless():
    P = np.zeros((200, 12), dtype=np.uint8)
    cycles = np.repeat(np.arange(4), 3)
    out = detection_frequency(P, cycles, n_boot=50)
    assert np.array_equal(out.cycles, np.arange(4))
    assert np.all(out.mean == 0) and np.all(out.std == 0)


def test_detection_frequency_spike():
    rng = np.random.default_rng(3)
    cycles = np.repeat(np.arange(10), 4)
    P = (rng.random((2000, 40)) < 0.02).astype(np.uint8)
    P[:, cycles == 5] |= (rng.random((2000, 4)) < 0.3).astype(np.uint8)
    out = detection_frequency(P, cycles, n_boot=200)
    assert np.argmax(out.mean) == 5
    others = np.delete(out.mean, 5)
    assert out.mean[5] - others.max() > 10 * out.std[5]


def test_detection_frequency_shot_order_invariant():
    rng = np.random.default_rng(4)
    P = (rng.random((500, 9)) < 0.1).astype(np.uint8)
    cycles = np.repeat(np.arange(3), 3)
    a = detection_frequency(P, cycles, n_boot=100, seed=9)
    b = detection_frequency(P[rng.permutation(500)], cycles, n_boot=100, seed=9)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.std, b.std)


def test_detection_frequency_rejects_empty():
    with pytest.raises(ValueError):
        detection_frequency(np.zeros((0, 3)), [0, 1, 2])


def test_retry_histogram_first_attempt():
    h = retry_histogram(np.ones(100, dtype=int), np.ones(100, dtype=bool))
    assert list(h.counts) == [100]
    assert h.mean_attempts == 1 and h.exhausted == 0
    assert h.ci_low == h.ci_high == 1


def test_retry_histogram_geometric():
    p = 0.7
    rng = np.random.default_rng(5)
    a = rng.geometric(p, 20000)
    h = retry_histogram(a)
    sd = math.sqrt((1 - p) / p**2 / a.size)
    assert abs(h.mean_attempts - 1 / p) < 3 * sd
    assert h.ci_low < 1 / p < h.ci_high
    for r in range(3):
        expected = a.size * p * (1 - p) ** r
        assert abs(h.counts[r] - expected) < 4 * math.sqrt(expected)


def test_retry_histogram_counts_exhausted_and_rejects_bad_input():
    h = retry_histogram([1, 2, 21], [True, True, False])
    assert h.exhausted == 1
    with pytest.raises(ValueError):
        retry_histogram([])
    with pytest.raises(ValueError):
        retry_histogram([0, 1])


def test_markdown_report():
    text = markdown_report("T", {"Rows": [{"a": 1, "b": 0.5}], "Notes": "ok", "Empty": []})
    lines = text.splitlines()
    assert lines[0] == "# T"
    assert "| a | b |" in lines and "| 1 | 0.5 |" in lines
    assert "ok" in lines and "(no rows)" in lines
