import os
import sys
import unittest
from unittest.mock import patch

import numpy as np
import pytest

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from boltzmix import dsmc  # noqa: E402
from boltzmix.dsmc import Ensemble, SimConfig, init_maxwellian, init_student_t, make_rng  # noqa: E402
from boltzmix.errors import ConfigError, MajorantViolation  # noqa: E402
from boltzmix.mixture_model import InteractionClass  # noqa: E402
from tests.support import default_document, loaded, small_document  # noqa: E402


@pytest.mark.unit
class TestRandomStreams(unittest.TestCase):
    def test_same_seed_same_draws(self):
        np.testing.assert_array_equal(make_rng(5, 1).random(10), make_rng(5, 1).random(10))

    def test_streams_differ(self):
        self.assertFalse(np.array_equal(make_rng(5, 0).random(10), make_rng(5, 1).random(10)))
        self.assertFalse(np.array_equal(make_rng(5, 1).random(10), make_rng(6, 1).random(10)))


@pytest.mark.unit
class TestEnsembles(unittest.TestCase):
    """Initial data and ensemble bookkeeping."""

    def setUp(self):
        self.mixture = loaded(default_document()).mixture
        self.rng = make_rng(0, 1)

    def test_species_mass(self):
        ens = init_maxwellian(self.mixture, [100, 200, 300], [1.0, 2.0, 0.5], 1.0, self.rng)
        np.testing.assert_allclose(ens.species_mass, [1.0, 2.0, 0.5], rtol=1e-14)
        self.assertEqual(ens.counts, (100, 200, 300))

    def test_centered_momentum(self):
        ens = init_student_t(self.mixture, [300, 300, 300], [1.0, 1.0, 1.0], 1.0, self.rng)
        np.testing.assert_allclose(ens.momentum(), 0.0, atol=1e-12)

    def test_monatomic_species_have_no_internal_energy(self):
        ens = init_maxwellian(self.mixture, [50, 50, 50], [1.0, 1.0, 1.0], 1.0, self.rng)
        self.assertTrue(np.all(ens.I[0] == 0.0))
        self.assertTrue(np.all(ens.I[2] > 0.0))
        self.assertEqual(ens.internal_temperature(1), 0.0)

    def test_equilibrium_temperatures(self):
        ens = init_maxwellian(self.mixture, [20000, 20000, 20000], [1.0, 1.0, 1.0], 1.5, self.rng)
        for i in range(1, 4):
            self.assertAlmostEqual(ens.temperature(i), 1.5, delta=0.05)
        self.assertAlmostEqual(ens.internal_temperature(3), 1.5, delta=0.05)

    def test_invalid_initial_data(self):
        with self.assertRaises(ConfigError):
            init_maxwellian(self.mixture, [10, 0, 10], [1.0, 1.0, 1.0], 1.0, self.rng)
        with self.assertRaises(ConfigError):
            init_maxwellian(self.mixture, [10, 10, 10], [1.0, -1.0, 1.0], 1.0, self.rng)
        with self.assertRaises(ConfigError):
            init_student_t(self.mixture, [10, 10, 10], [1.0, 1.0, 1.0], 1.0, self.rng, nu=2.0)
        with self.assertRaises(ConfigError):
            dsmc.init_ensemble("uniform", self.mixture, [10, 10, 10], [1.0, 1.0, 1.0], 1.0, self.rng)

    def test_ensemble_validation(self):
        v = [np.zeros((2, 3))] * 3
        with self.assertRaises(ConfigError):
            Ensemble(self.mixture, list(v), [np.zeros(2), np.ones(2), np.zeros(2)], np.ones(3))
        with self.assertRaises(ConfigError):
            Ensemble(self.mixture, list(v), [np.zeros(2), np.zeros(2), -np.ones(2)], np.ones(3))
        with self.assertRaises(ConfigError):
            Ensemble(self.mixture, list(v[:2]), [np.zeros(2)] * 2, np.ones(2))

    def test_copy_is_independent(self):
        ens = init_maxwellian(self.mixture, [5, 5, 5], [1.0, 1.0, 1.0], 1.0, self.rng)
        other = ens.copy()
        other.v[0][0] += 1.0
        self.assertFalse(np.array_equal(ens.v[0], other.v[0]))


@pytest.mark.unit
class TestSimConfig(unittest.TestCase):
    def test_adds_required_orders_and_times(self):
        cfg = SimConfig(dt=0.1, t_end=1.0, orders=(4.0,), output_times=(0.5,))
        self.assertEqual(cfg.output_times, (0.0, 0.5, 1.0))
        self.assertIn(0.0, cfg.orders)
        self.assertIn(2.0, cfg.orders)

    def test_invalid(self):
        with self.assertRaises(ConfigError):
            SimConfig(dt=0.0, t_end=1.0)
        with self.assertRaises(ConfigError):
            SimConfig(dt=0.1, t_end=1.0, output_times=(2.0,))
        with self.assertRaises(ConfigError):
            SimConfig(dt=0.1, t_end=1.0, majorant_refresh=0)

    def test_disabled_pairs_unordered(self):
        cfg = SimConfig(dt=0.1, t_end=1.0, disabled_pairs=[(3, 1)])
        self.assertIn((1, 3), cfg.disabled_pairs)


@pytest.mark.unit
class TestParameterLaw(unittest.TestCase):
    def test_beta_parameters(self):
        R, r = dsmc.bl_beta_parameters(InteractionClass.POLY_POLY, (1.0, 0.5))
        self.assertEqual(R, (1.5, 3.5))
        self.assertEqual(r, (2.0, 1.5))
        self.assertEqual(dsmc.bl_beta_parameters(InteractionClass.MONO_POLY, (0.0, 1.0)), ((1.5, 2.0), None))
        self.assertEqual(dsmc.bl_beta_parameters(InteractionClass.MONO_MONO, (0.0, 0.0)), (None, None))

    def test_sampled_params(self):
        rng = np.random.default_rng(0)
        p = dsmc.sample_bl_params(InteractionClass.POLY_POLY, (1.0, 1.0), rng)
        self.assertAlmostEqual(float(np.linalg.norm(p.sigma)), 1.0, places=12)
        self.assertTrue(0.0 < p.R < 1.0 and 0.0 < p.r < 1.0)


@pytest.mark.unit
class TestRun(unittest.TestCase):
    """Short runs on a small ensemble."""

    @classmethod
    def setUpClass(cls):
        cls.cfg = loaded(small_document())
        cls.config = SimConfig(dt=0.002, t_end=0.02, seed=3, orders=(0.0, 2.0, 4.0), output_times=(0.01,))
        cls.ens0 = init_student_t(cls.cfg.mixture, [200, 200, 200], [1.0, 1.0, 1.0], 1.0, make_rng(3, 1))
        cls.report = dsmc.run(cls.ens0, cls.config, cls.cfg.kernels, cls.cfg.mixture)

    def test_times(self):
        np.testing.assert_allclose(self.report.times, [0.0, 0.01, 0.02], rtol=1e-12)
        self.assertEqual(len(self.report.moments), 3)
        self.assertEqual(len(self.report.temperatures), 3)

    def test_collisions_happen(self):
        self.assertGreater(self.report.total_accepted(), 0)
        for c in self.report.counters.values():
            self.assertLessEqual(c.accepted + c.nulls, c.candidates)

    def test_conservation_with_equal_weights(self):
        cons = self.report.conservation
        self.assertTrue(cons.equal_weights)
        self.assertTrue(cons.species_mass_exact)
        self.assertLess(cons.max_m2_drift, 1e-8)
        self.assertLess(cons.max_momentum_drift, 1e-10)
        self.assertAlmostEqual(cons.final["energy"], cons.initial["energy"], delta=1e-9 * cons.initial["energy"])

    def test_initial_ensemble_untouched(self):
        np.testing.assert_array_equal(self.report.moments[0].values,
                                      dsmc.moments_of_ensemble(self.ens0, (0.0, 2.0, 4.0)).values)

    def test_deterministic(self):
        again = dsmc.run(self.ens0, self.config, self.cfg.kernels, self.cfg.mixture)
        for a, b in zip(self.report.moments, again.moments):
            np.testing.assert_array_equal(a.values, b.values)

    def test_rows(self):
        rows = list(self.report.rows())
        self.assertEqual(len(rows), 3 * 3 * 4)
        self.assertEqual(rows[3][1], "mixture")
        self.assertIn("collisions", self.report.to_dict())

    def test_disabled_pair_never_collides(self):
        config = SimConfig(dt=0.002, t_end=0.01, seed=3, disabled_pairs=[(1, 1)])
        report = dsmc.run(self.ens0, config, self.cfg.kernels, self.cfg.mixture)
        self.assertNotIn((1, 1), report.counters)

    def test_empty_species(self):
        ens = self.ens0.copy()
        ens.v[1] = np.zeros((0, 3))
        ens.I[1] = np.zeros(0)
        with self.assertRaises(ConfigError):
            dsmc.run(ens, self.config, self.cfg.kernels, self.cfg.mixture)


@pytest.mark.unit
class TestStep(unittest.TestCase):
    """A single time step on a small equal-weight ensemble."""

    def setUp(self):
        self.cfg = loaded(small_document())
        self.ens = init_maxwellian(self.cfg.mixture, [150, 150, 150], [1.0, 1.0, 1.0], 1.0, make_rng(4, 1))
        self.config = SimConfig(dt=0.005, t_end=0.01, seed=4)

    def test_step_advances_and_conserves(self):
        state = dsmc.SimulationState(self.ens.copy(), make_rng(4, 0))
        p0 = state.ensemble.momentum()
        E0 = sum(state.ensemble.species_energy(i) for i in (1, 2, 3))
        out = dsmc.step(state, self.config, self.cfg.kernels, self.cfg.mixture)
        self.assertIs(out, state)
        self.assertEqual(state.steps, 1)
        self.assertEqual(set(state.majorant), set(self.cfg.mixture.pairs(ordered=False)))
        self.assertEqual(state.ensemble.counts, (150, 150, 150))
        np.testing.assert_allclose(state.ensemble.momentum(), p0, atol=1e-10 * state.ensemble.momentum_scale())
        E1 = sum(state.ensemble.species_energy(i) for i in (1, 2, 3))
        self.assertAlmostEqual(E1, E0, delta=1e-10 * E0)
        for c in state.counters.values():
            self.assertLessEqual(c.accepted + c.nulls, c.candidates)

    def test_disabled_pair_skipped(self):
        config = SimConfig(dt=0.005, t_end=0.01, seed=4, disabled_pairs=[(1, 3), (2, 3), (3, 3)])
        state = dsmc.SimulationState(self.ens.copy(), make_rng(4, 0))
        dsmc.step(state, config, self.cfg.kernels, self.cfg.mixture)
        for pair in ((1, 3), (2, 3), (3, 3)):
            self.assertNotIn(pair, state.counters)
        np.testing.assert_array_equal(state.ensemble.I[2], self.ens.I[2])
        np.testing.assert_array_equal(state.ensemble.v[2], self.ens.v[2])


@pytest.mark.unit
class TestMajorantThinning(unittest.TestCase):
    """Candidate rates and stale-majorant handling."""

    def setUp(self):
        self.cfg = loaded(small_document())
        self.ens = init_maxwellian(self.cfg.mixture, [2, 10, 10], [1.0, 1.0, 1.0], 1.0, make_rng(6, 1))
        self.config = SimConfig(dt=0.01, t_end=0.01, seed=6)

    def _state(self):
        state = dsmc.SimulationState(self.ens.copy(), make_rng(6, 0), spec=self.cfg.kernels)
        dsmc._refresh_majorants(state, self.cfg.kernels)
        return state

    def test_same_species_rate_counts_distinct_pairs(self):
        state = self._state()
        pk = self.cfg.kernels.pair(1, 1)
        empty = (np.empty(0, int), np.empty(0, int))
        with patch.object(dsmc, "_draw_candidates", return_value=empty) as draw:
            dsmc._pair_step(state, self.config, pk)
        rate = draw.call_args[0][4]
        w = float(state.ensemble.weights[0])
        expected = w * 1.0 * pk.b_norm * pk.weight_integral * state.majorant[(1, 1)] * self.config.dt
        self.assertAlmostEqual(rate, expected, delta=1e-12 * expected)

    def test_stale_bound_rejects_batch(self):
        state = self._state()
        pk = self.cfg.kernels.pair(3, 3)
        p, q = np.array([0, 1, 2]), np.array([3, 4, 5])
        v, I = state.ensemble.v[2], state.ensemble.I[2]
        values = pk.evaluate_without_angular(v[p], I[p], v[q], I[q], np.full(3, 0.5), np.full(3, 0.5))
        before_v, before_I = v.copy(), I.copy()
        state.majorant = {}
        counters = dsmc.PairCounters()
        ok = dsmc._collide_batch(state, pk, np.arange(3), p, q, float(values.max()) / 1.02, counters)
        self.assertFalse(ok)
        np.testing.assert_array_equal(state.ensemble.v[2], before_v)
        np.testing.assert_array_equal(state.ensemble.I[2], before_I)
        self.assertEqual(counters.majorant_recomputes, 1)
        self.assertEqual(counters.accepted, 0)
        self.assertEqual(set(state.majorant), set(self.cfg.mixture.pairs(ordered=False)))
        with self.assertRaises(MajorantViolation):
            dsmc._collide_batch(state, pk, np.arange(3), p, q, float(values.max()) / 2.0, counters)

    def test_rejected_batch_is_redrawn(self):
        state = self._state()
        pk = self.cfg.kernels.pair(2, 3)
        drawn = (np.array([0, 1, 2, 3]), np.array([4, 5, 6, 7]))
        with patch.object(dsmc, "_draw_candidates", return_value=drawn) as draw, \
                patch.object(dsmc, "_collide_batch", side_effect=[False, True]):
            dsmc._pair_step(state, self.config, pk)
        self.assertEqual(draw.call_count, 2)
        self.assertEqual(draw.call_args_list[0][0][4], draw.call_args_list[1][0][4])
        self.assertEqual(state.counters[(2, 3)].candidates, 4)

    def test_persistently_stale_majorant_aborts(self):
        state = self._state()
        drawn = (np.array([0]), np.array([1]))
        with patch.object(dsmc, "_draw_candidates", return_value=drawn), \
                patch.object(dsmc, "_collide_batch", return_value=False):
            with self.assertRaises(MajorantViolation):
                dsmc._pair_step(state, self.config, self.cfg.kernels.pair(2, 3))


@pytest.mark.unit
class TestMaxwellCrossPair(unittest.TestCase):
    """Two equal-mass monatomic species exchanging energy through a gamma = 0 cross pair."""

    @classmethod
    def setUpClass(cls):
        doc = small_document()
        doc["species"] = [{"name": "a", "mass": 1.0, "kind": "monatomic"},
                          {"name": "b", "mass": 1.0, "kind": "monatomic"}]
        # same-species collisions keep each species' energy; only the Maxwell pair moves it
        doc["gamma"] = [[1.0, 0.0], [0.0, 1.0]]
        doc["simulation"]["n_particles"] = [300, 300]
        cfg = loaded(doc)
        ens = init_maxwellian(cfg.mixture, [300, 300], [1.0, 1.0], 1.0, make_rng(9, 1))
        ens.v[0] *= np.sqrt(2.0)
        ens.v[1] *= np.sqrt(0.5)
        config = SimConfig(dt=0.005, t_end=0.5, seed=9, orders=(0.0, 2.0), output_times=(0.25,))
        cls.report = dsmc.run(ens, config, cfg.kernels, cfg.mixture)

    def test_species_energies_equilibrate(self):
        gap = np.abs(self.report.series(2.0, 1) - self.report.series(2.0, 2))
        self.assertAlmostEqual(gap[0], 4.5, delta=0.8)
        self.assertLess(gap[-1], 0.3 * gap[0])
        self.assertLess(gap[1], 0.5 * gap[0])

    def test_mixture_energy_constant(self):
        m2 = self.report.series(2.0)
        np.testing.assert_allclose(m2, m2[0], rtol=1e-10)
        self.assertLess(self.report.conservation.max_m2_drift, 1e-8)

    def test_only_the_cross_pair_is_maxwell(self):
        self.assertGreater(self.report.counters[(1, 2)].accepted, 0)


@pytest.mark.unit
class TestUnequalWeights(unittest.TestCase):
    def test_species_mass_still_exact(self):
        cfg = loaded(small_document())
        ens = init_maxwellian(cfg.mixture, [100, 200, 300], [1.0, 1.0, 1.0], 1.0, make_rng(1, 1))
        report = dsmc.run(ens, SimConfig(dt=0.002, t_end=0.01, seed=1), cfg.kernels, cfg.mixture)
        self.assertFalse(report.conservation.equal_weights)
        self.assertTrue(report.conservation.species_mass_exact)
        self.assertTrue(np.isfinite(report.conservation.max_m2_drift))


if __name__ == "__main__":
    unittest.main()
