"""Statistics and fits: detection frequencies, Wilson intervals, Bell fidelity, decay fits."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit
from scipy.stats import norm

BELL_BASES = ("XX", "YY", "ZZ")
# sign of each basis expectation in the fidelity of the target Bell state
BELL_SIGNS = {
    "phi+": {"XX": 1, "YY": -1, "ZZ": 1},
    "psi+": {"XX": 1, "YY": 1, "ZZ": -1},
}


@dataclass
class CountTable:
    """Failure and trial counts per condition (basis name or code distance)."""

    rows: dict = field(default_factory=dict)  # condition -> (failures, trials)

    def add(self, condition, failures: int, trials: int):
        failures, trials = int(failures), int(trials)
        if failures < 0 or trials < 0 or failures > trials:
            raise ValueError(f"invalid counts {failures}/{trials} for {condition!r}")
        f0, t0 = self.rows.get(condition, (0, 0))
        self.rows[condition] = (f0 + failures, t0 + trials)
        return self

    def rate(self, condition) -> float:
        f, t = self.rows[condition]
        return f / t

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["condition", "failures", "trials", "rate", "ci_low", "ci_high"])
        for cond, (f, t) in self.rows.items():
            lo, hi = wilson_interval(f, t)
            w.writerow([cond, f, t, f"{f / t:.6e}", f"{lo:.6e}", f"{hi:.6e}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CountTable":
        table = cls()
        for row in csv.DictReader(io.StringIO(text)):
            table.add(row["condition"], int(row["failures"]), int(row["trials"]))
        return table


@dataclass
class FitResult:
    params: dict
    stderr: dict
    covariance: np.ndarray
    residual_norm: float

    def __getitem__(self, name):
        return self.params[name]


@dataclass
class Estimate:
    value: float
    stderr: float


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    if trials <= 0:
        raise ValueError("wilson_interval needs trials > 0")
    if not 0 <= successes <= trials:
        raise ValueError(f"successes must be in [0, {trials}], got {successes}")
    z = norm.ppf(0.5 + confidence / 2)
    n = trials
    p = successes / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if successes == 0 else max(0.0, float(mid - half))
    hi = 1.0 if successes == trials else min(1.0, float(mid + half))
    return lo, hi


def bell_fidelity(counts: CountTable | dict) -> Estimate:
    """F = 1 - sum_B f_B / 2 over XX, YY, ZZ failure fractions.

    A failure is a parity inconsistent with the target eigenvalue, so the
    per-state signs of the expectations are already folded into the counts.
    """
    rows = counts.rows if isinstance(counts, CountTable) else counts
    missing = [b for b in BELL_BASES if b not in rows]
    if missing:
        raise ValueError(f"missing basis counts: {missing}")
    f = np.array([rows[b][0] / rows[b][1] for b in BELL_BASES])
    n = np.array([rows[b][1] for b in BELL_BASES], dtype=float)
    value = 1 - f.sum() / 2
    stderr = 0.5 * math.sqrt(float(np.sum(f * (1 - f) / n)))
    return Estimate(float(value), stderr)


def bell_fidelity_from_expectations(expect: dict, target: str = "phi+") -> float:
    """(1 + s_XX<XX> + s_YY<YY> + s_ZZ<ZZ>) / 4 with target-state signs."""
    signs = BELL_SIGNS[target]
    return (1 + sum(signs[b] * expect[b] for b in BELL_BASES)) / 4


def _decay(x, a, eps):
    return a * (1 - eps) ** x


def fit_exponential_decay(x, y, sigma=None, p0=None) -> FitResult:
    """Least-squares fit of y = A (1 - eps)^x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3 or x.size != y.size:
        raise ValueError("need at least 3 matching (x, y) points")
    if np.ptp(x) == 0 or not np.all(np.isfinite(y)) or np.all(y <= 0):
        raise ValueError("degenerate data for exponential fit")
    if p0 is None:
        ok = y > 0
        if ok.sum() >= 2 and np.ptp(x[ok]) > 0:
            slope, icpt = np.polyfit(x[ok], np.log(y[ok]), 1)
            p0 = (math.exp(icpt), 1 - math.exp(slope))
        else:
            p0 = (float(y.max()), 0.01)
    popt, pcov = curve_fit(
        _decay, x, y, p0=p0, sigma=sigma, absolute_sigma=sigma is not None, xtol=1e-15, ftol=1e-15, gtol=1e-15, maxfev=10000
    )
    resid = y - _decay(x, *popt)
    err = np.sqrt(np.clip(np.diag(pcov), 0, None))
    return FitResult({"A": float(popt[0]), "eps": float(popt[1])}, {"A": float(err[0]), "eps": float(err[1])}, pcov, float(np.linalg.norm(resid)))


def linear_trend(x, y) -> FitResult:
    """Ordinary least-squares line y = a + b x with standard errors."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        raise ValueError("need at least 3 points")
    A = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = x.size - 2
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(A.T @ A)
    err = np.sqrt(np.diag(cov))
    return FitResult({"intercept": float(coef[0]), "slope": float(coef[1])}, {"intercept": float(err[0]), "slope": float(err[1])}, cov, float(np.linalg.norm(resid)))


@dataclass
class DetectionFrequency:
    cycles: np.ndarray
    mean: np.ndarray
    std: np.ndarray  # bootstrap standard deviation of the per-cycle mean


def detection_frequency(parities, cycle_of, n_boot: int = 1000, seed: int = 0) -> DetectionFrequency:
    """Per-cycle mean detector frequency with a shot-bootstrap standard deviation.

    ``parities`` is (shots, detectors) and ``cycle_of`` gives each detector's
    cycle index.  Rows are put in canonical order before resampling so the
    result does not depend on shot order.
    """
    P = np.asarray(parities, dtype=np.uint8)
    if P.ndim != 2 or P.shape[0] == 0 or P.shape[1] == 0:
        raise ValueError("detection_frequency needs a non-empty (shots, detectors) array")
    cycle_of = np.asarray(cycle_of)
    cycles = np.unique(cycle_of)
    per_shot = np.stack([P[:, cycle_of == c].mean(axis=1) for c in cycles], axis=1)
    order = np.lexsort(per_shot.T[::-1])
    per_shot = per_shot[order]
    rng = np.random.default_rng(seed)
    n = per_shot.shape[0]
    boot = np.empty((n_boot, len(cycles)))
    for b in range(n_boot):
        boot[b] = per_shot[rng.integers(0, n, n)].mean(axis=0)
    return DetectionFrequency(cycles, per_shot.mean(axis=0), boot.std(axis=0, ddof=1))


@dataclass
class RetryHistogram:
    counts: np.ndarray  # counts[r] = shots that needed r retries
    mean_retries: float
    mean_attempts: float
    ci_low: float
    ci_high: float
    exhausted: int = 0


def retry_histogram(attempts, heralded=None, confidence: float = 0.95) -> RetryHistogram:
    a = np.asarray(attempts, dtype=int)
    if a.size == 0:
        raise ValueError("retry_histogram needs at least one shot")
    if np.any(a < 1):
        raise ValueError("attempt counts must be >= 1")
    r = a - 1
    counts = np.bincount(r)
    mean = float(r.mean())
    half = norm.ppf(0.5 + confidence / 2) * (r.std(ddof=1) / math.sqrt(r.size) if r.size > 1 else 0.0)
    exhausted = 0 if heralded is None else int(np.count_nonzero(~np.asarray(heralded, dtype=bool)))
    return RetryHistogram(counts, mean, mean + 1, mean + 1 - half, mean + 1 + half, exhausted)


def markdown_report(title: str, sections: dict) -> str:
    """Render a simple report: each section maps to text or a list of rows (dicts)."""
    out = [f"# {title}", ""]
    for name, body in sections.items():
        out += [f"## {name}", ""]
        if isinstance(body, str):
            out += [body, ""]
            continue
        rows = list(body)
        if not rows:
            out += ["(no rows)", ""]
            continue
        cols = list(rows[0])
        out.append("| " + " | ".join(cols) + " |")
        out.append("|" + "---|" * len(cols))
        for row in rows:
            out.append("| " + " | ".join(_fmt(row[c]) for c in cols) + " |")
        out.append("")
    return "\n".join(out)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)
