import numpy as np
import pytest

from mcmsim.experiments import (
    TABLE_V,
    reproduce_paper_tables,
    run_distillation,
    run_gerb,
    run_ramsey,
    run_repcode,
    run_replenish,
)
from mcmsim.generators import DistillSpec, RepCodeSpec
from mcmsim.sim.noise import NoiseModel

NOISELESS = NoiseModel.noiseless()


def test_reproduce_tables_clean():
    report = reproduce_paper_tables()
    assert report.mismatches == []
    assert len(report.rows) == len(TABLE_V) + 2
    assert "Mismatches" in report.markdown()


@pytest.mark.parametrize("d", [3, 5])
def test_noiseless_repcode(d):
    r = run_repcode(RepCodeSpec(d, 4), NOISELESS, 300, seed=d, n_boot=20)
    assert r.failures == 0
    assert not r.parities.any()
    assert np.all(r.frequency.mean == 0)
    assert r.failure_ci[0] == 0


def test_repcode_deterministic():
    a = run_repcode(RepCodeSpec(3, 3), NoiseModel.default(), 2000, seed=11, n_boot=20)
    b = run_repcode(RepCodeSpec(3, 3), NoiseModel.default(), 2000, seed=11, n_boot=20, threads=2)
    assert a.failures == b.failures
    assert np.array_equal(a.parities, b.parities)


def test_noiseless_distillation():
    res = run_distillation(DistillSpec(encoded=True), NOISELESS, 200, seed=3)
    assert np.all(res.attempts() == 1) and res.heralded().all()
    for r in res.bases.values():
        assert r.post_failures == 0 and r.post_trials == 200 and r.pre_trials == 0
    assert res.counts("post").rows["XX"] == (0, 200)


def test_noiseless_gerb_and_ramsey():
    g = run_gerb(NOISELESS, [0, 2, 4], 100, seed=1)
    assert np.all(g.success == 1) and np.all(g.survival == 1)
    r = run_ramsey(NOISELESS, [0, 5, 10], 100, seed=1)
    assert np.all(r.survival == 1)
    assert np.all(r.contrast == 1)
    assert abs(r.loss_fit["eps"]) < 1e-9


def test_replenish_noiseless_full_yield():
    r = run_replenish(NOISELESS, 20, seed=0, lz_yield=1.0)
    assert r.success_fraction == 1.0
    assert np.all(r.fill_after == 1.0)
