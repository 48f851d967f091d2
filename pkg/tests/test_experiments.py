from dataclasses import replace

import numpy as np
import pytest

from vacsec.experiments import (
    BatchRun, initial_snapshot, run_stochastic_batch, run_weight_sweep, sample_operating_point,
    single_weights, uniform_weights,
)
from vacsec.scenario import bundled_scenario
from vacsec.simulation import run_simulation


@pytest.fixture(scope="module")
def fig8():
    return bundled_scenario("fig8_stochastic")


def run(dev, sat=()):
    return BatchRun(0, {}, {}, tuple(dev), True, (), None, tuple(sat))


class TestBatchRun:
    def test_monotone(self):
        assert run([3, 2, 2, 1]).monotone
        assert not run([3, 2, 2.1]).monotone

    def test_flat_while_saturated(self):
        assert run([1.0, 1.0005], [True, True]).stable()
        assert not run([1.0, 1.0005], [False, True]).stable()
        assert not run([1.0, 1.01], [True, True]).stable()
        assert run([1.0, 1.01], [True, True]).stable(flat_tol=0.02)


class TestSampling:
    def test_collapsed_ranges(self, fig8):
        rng = np.random.default_rng(0)
        s, loads, gens = sample_operating_point(fig8, rng, (20e3, 20e3), (5e3, 5e3))
        assert all(v == 20e3 for v in loads.values()) and all(v == 5e3 for v in gens.values())
        assert all(ld.p == 20e3 for ld in s.network.loads.values())
        assert all(c.setpoints.p_ref == 5e3 for c in s.converters)

    def test_within_ranges(self, fig8):
        rng = np.random.default_rng(1)
        for _ in range(50):
            _, loads, gens = sample_operating_point(fig8, rng, {n: (1e3, 2e3) for n in fig8.network.loads}, (0, 15e3))
            assert all(1e3 <= v <= 2e3 for v in loads.values())
            assert all(0 <= v <= 15e3 for v in gens.values())


class TestBatch:
    def test_reproducible(self, fig8):
        a = run_stochastic_batch(fig8, runs=2, seed=11)
        b = run_stochastic_batch(fig8, runs=2, seed=11)
        assert a == b
        assert a.seed == 11 and len(a.runs) == 2

    def test_seed_default_from_scenario(self, fig8):
        rng = np.random.default_rng(fig8.seed)
        _, loads, gens = sample_operating_point(fig8, rng)
        r = run_stochastic_batch(fig8, runs=1)
        assert r.runs[0].loads == loads and r.runs[0].generation == gens

    def test_trajectory_shape(self, fig8):
        r = run_stochastic_batch(fig8, runs=1, seed=3).runs[0]
        assert r.error is None
        n_upd = int((fig8.sim.t_end - fig8.secondary.first_at) // fig8.secondary.period) + 1
        assert len(r.deviation) == n_upd + 1 == len(r.saturated_at)

    def test_runs_positive(self, fig8):
        with pytest.raises(ValueError):
            run_stochastic_batch(fig8, runs=0)


class TestSweep:
    def test_one_point_equals_simulation(self, table_scenario):
        s = table_scenario
        rep = run_weight_sweep(s, "uniform", [0.5], updates=2)
        t_end = s.secondary.first_at + 2 * s.secondary.period
        lg = run_simulation(replace(s, weights=uniform_weights(s, 0.5), sim=replace(s.sim, t_end=t_end)))
        np.testing.assert_array_equal(np.asarray(rep.points[0].log.v_c), np.asarray(lg.v_c))
        v = lg.vmag[-1]
        assert rep.series("N2") == [pytest.approx(abs(1 - v[lg.node("N2")] / lg.v_nom))]

    def test_default_grid(self, table_scenario):
        s = replace(table_scenario, secondary=replace(table_scenario.secondary, first_at=0.5, period=1.0))
        rep = run_weight_sweep(s, "uniform", updates=1)
        assert [p.value for p in rep.points] == pytest.approx([0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1])

    def test_single_weights(self, table_scenario):
        w = single_weights(table_scenario, "N4", "DG3", 0.3)
        assert w.a["N4"] == 0.3 and w.b["DG3"] == pytest.approx(0.7)
        assert w.a["N2"] == 1.0 and w.b["DG1"] == 0.0


def test_initial_snapshot(table_scenario):
    snap = initial_snapshot(table_scenario, 2.5)
    assert snap.timestamp == 2.5
    snap.validate(table_scenario.network)
    lg = run_simulation(table_scenario, t_end=0.0)
    for k, n in enumerate(lg.nodes):
        assert abs(snap.v_common(n)) == pytest.approx(lg.vmag[0, k], rel=1e-9)
