import math
import os
import sys
import unittest

import numpy as np
import pytest

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from boltzmix import moments  # noqa: E402
from boltzmix.averaging import AveragingReport, PairAveraging  # noqa: E402
from boltzmix.dsmc import init_maxwellian, init_student_t, make_rng  # noqa: E402
from boltzmix.errors import BelowThresholdError, ConfigError, MissingMomentError  # noqa: E402
from boltzmix.kernels import compute_kappas  # noqa: E402
from boltzmix.mixture_model import ParticleState  # noqa: E402
from boltzmix.moments import ComparisonEnvelope, MomentVector  # noqa: E402
from boltzmix.suites import comparison_ode_check  # noqa: E402
from tests.support import default_document, loaded  # noqa: E402

K_GRID = np.array([2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0, 24.0, 32.0, 48.0, 64.0])


def synthetic_report(mixture, constants, k_bar_star=6):
    """C_k = 0.4 kappa_lb sqrt(2/k): below kappa_lb/2 on the whole grid."""
    pairs = {}
    for (i, j) in mixture.pairs():
        lb = float(constants.kappa_lb[i - 1, j - 1])
        C = 0.4 * lb * np.sqrt(2.0 / K_GRID)
        pairs[(i, j)] = PairAveraging(i, j, mixture.interaction_class(i, j), K_GRID, C, np.zeros_like(C), lb,
                                      float(constants.kappa_ub[i - 1, j - 1]), k_bar_star, -0.5, 0.0)
    k_star = max(2.0 + 2.0 * mixture.gamma_bar_bar, float(k_bar_star))
    return AveragingReport(pairs, k_bar_star, k_star, mixture.gamma_bar_bar)


class _Fixture(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.cfg = loaded(default_document())
        cls.mixture = cls.cfg.mixture
        cls.kc = compute_kappas(cls.cfg.kernels, cls.mixture)
        cls.report = synthetic_report(cls.mixture, cls.kc)
        cls.ensemble = init_maxwellian(cls.mixture, [500, 500, 500], [1.0, 1.0, 1.0], 1.0, make_rng(3, 1))
        cls.mom = moments.moments_of_ensemble(cls.ensemble, [0.0, 2.0, 4.0, 6.0, 8.0, 10.0])


@pytest.mark.unit
class TestMomentVector(_Fixture):
    """Moments of particle ensembles."""

    def test_species_mass(self):
        for i in range(1, 4):
            self.assertAlmostEqual(self.mom.species(i, 0.0), 1.0, places=12)
        self.assertAlmostEqual(self.mom.mixture(0.0), 3.0, places=12)

    def test_second_moment_matches_direct_sum(self):
        ens = self.ensemble
        m = self.mixture.total_mass
        direct = 0.0
        for i in range(1, 4):
            sp = self.mixture.spec(i)
            v, I = ens.v[i - 1], ens.I[i - 1]
            direct += ens.weights[i - 1] * np.sum(1.0 + sp.mass * np.sum(v * v, axis=1) / (2.0 * m) + I / m)
        self.assertAlmostEqual(self.mom.mixture(2.0), direct, places=10)

    def test_equal_weights_effective_sample_size(self):
        self.assertAlmostEqual(float(self.mom.ess[0, 0]), 500.0, places=8)
        self.assertTrue(self.mom.reliable(4.0))

    def test_missing_order(self):
        with self.assertRaises(MissingMomentError):
            self.mom.species(1, 3.0)
        self.assertFalse(self.mom.has(3.0))

    def test_moments_increase_with_order(self):
        for i in range(1, 4):
            values = [self.mom.species(i, k) for k in self.mom.orders]
            self.assertTrue(all(a <= b for a, b in zip(values, values[1:])))

    def test_interpolation(self):
        self.assertTrue(moments.interpolation_check(self.mom, 2.0, 6.0, 10.0))
        with self.assertRaises(ValueError):
            moments.interpolation_check(self.mom, 6.0, 2.0, 10.0)

    def test_from_values(self):
        mv = MomentVector.from_values([0.0, 2.0], [[1.0, 2.0], [0.0, 0.0]])
        self.assertEqual(mv.mixture(2.0), 2.0)
        self.assertEqual(mv.empty_species, [2])
        self.assertTrue(mv.reliable(2.0))

    def test_heavy_tails_unreliable_at_high_order(self):
        ens = init_student_t(self.mixture, [200, 200, 200], [1.0, 1.0, 1.0], 1.0, make_rng(0, 1), nu=3.0)
        mom = moments.moments_of_ensemble(ens, [0.0, 2.0, 40.0])
        self.assertFalse(mom.reliable(40.0))


@pytest.mark.unit
class TestComparisonEnvelope(unittest.TestCase):
    """Envelopes of y' = B - A y^{1+c}."""

    def test_tanh_case(self):
        env = ComparisonEnvelope(1.0, 1.0, 1.0)
        self.assertAlmostEqual(env.E, 1.0, places=14)
        self.assertAlmostEqual(env.K, 1.0, places=14)
        t = np.linspace(0.01, 100.0, 1000)
        self.assertTrue(np.all(np.tanh(t) <= env(t)))

    def test_supersolution(self):
        rng = np.random.default_rng(8)
        t = np.geomspace(1e-3, 1e3, 200)
        for _ in range(20):
            A, B = 10.0 ** rng.uniform(-1.0, 1.0, 2)
            c = rng.uniform(0.1, 2.0)
            env = ComparisonEnvelope(A, B, c)
            z = env(t)
            dz = -env.beta * np.exp(env.log_coefficient - (env.beta + 1.0) * np.log(t))
            residual = dz - (B - A * z ** (1.0 + c))
            self.assertTrue(np.all(residual >= -1e-9 * np.maximum(1.0, np.abs(dz))))

    def test_invalid(self):
        with self.assertRaises(ValueError):
            ComparisonEnvelope(0.0, 1.0, 1.0)
        with self.assertRaises(ValueError):
            ComparisonEnvelope(1.0, 1.0, 1.0)(0.0)

    def test_scalar_helper(self):
        self.assertIsInstance(moments.comparison_envelope(1.0, 1.0, 1.0, 1.0, 2.0), float)

    def test_ode_oracle(self):
        checks = comparison_ode_check(5, np.random.default_rng(0), t_max=10.0, n_grid=200)
        for c in checks:
            self.assertTrue(c.passed, f"{c.name}: {c.observed}")


@pytest.mark.unit
class TestOdiConstants(_Fixture):
    """Constants of the moment differential inequality."""

    def test_below_threshold(self):
        with self.assertRaises(BelowThresholdError):
            moments.compute_odi_constants(self.mom, self.kc, self.report, self.mixture, 4.0)

    def test_threshold_not_reached(self):
        report = synthetic_report(self.mixture, self.kc)
        report.k_bar_star = None
        with self.assertRaises(BelowThresholdError):
            moments.compute_odi_constants(self.mom, self.kc, report, self.mixture, 8.0)

    def test_missing_second_moment(self):
        mom = moments.moments_of_ensemble(self.ensemble, [0.0, 4.0])
        with self.assertRaises(MissingMomentError):
            moments.compute_odi_constants(mom, self.kc, self.report, self.mixture, 8.0)

    def test_constants(self):
        consts = moments.compute_odi_constants(self.mom, self.kc, self.report, self.mixture, 8.0)
        self.assertGreater(consts.A_star, 0.0)
        self.assertAlmostEqual(consts.epsilon, consts.A_star / (2.0 * consts.m0))
        self.assertGreater(consts.B_k, 0.0)
        self.assertEqual(consts.k_bar_star, 6)
        self.assertEqual(consts.k_star, 6.0)
        self.assertAlmostEqual(consts.D_k, 2.0 * 2.0**5 * self.kc.max_kappa_ub * consts.m2)
        self.assertAlmostEqual(consts.K_coll, 2.0 * self.kc.max_kappa_ub * self.mom.mixture(2.0))
        root = moments.generation_root(consts.m2, consts.B_k, consts.A_star, 8.0, consts.gamma_bar)
        self.assertAlmostEqual(consts.E_k, root, delta=1e-10 * root)
        self.assertAlmostEqual(consts.h_frak,
                               moments.h_frak(self.mom, self.kc, self.report, self.mixture), delta=1e-12 * consts.h_frak)
        self.assertEqual(consts.to_dict()["label"], "constants from empirical C_k")

    def test_equation_at_fixed_point(self):
        consts = moments.compute_odi_constants(self.mom, self.kc, self.report, self.mixture, 8.0)
        c = consts.gamma_bar / (consts.k - 2.0)
        rhs = consts.B_k - consts.A_star * consts.m2 ** (-c) * consts.E_k ** (1.0 + c)
        self.assertAlmostEqual(rhs / consts.B_k, 0.0, places=9)

    def test_comparison_matches_generation(self):
        consts = moments.compute_odi_constants(self.mom, self.kc, self.report, self.mixture, 8.0)
        t = np.geomspace(0.01, 100.0, 20)
        env = ComparisonEnvelope(consts.A_star, consts.B_k, consts.gamma_bar / 6.0, consts.m2)
        np.testing.assert_allclose(env(t), moments.generation_envelope(consts, t), rtol=1e-10)
        self.assertEqual(moments.propagation_bound(consts, 0.0), consts.E_k)

    def test_E_tilde_is_generation_envelope_at_inverse_D(self):
        consts = moments.compute_odi_constants(self.mom, self.kc, self.report, self.mixture, 8.0)
        self.assertIsNotNone(consts.E_tilde_k)
        expected = float(moments.generation_envelope(consts, 1.0 / consts.D_k))
        self.assertAlmostEqual(consts.E_tilde_k, expected, delta=1e-10 * expected)
        self.assertGreater(consts.E_tilde_k, consts.E_k)
        self.assertEqual(consts.to_dict()["E_tilde_k"], consts.E_tilde_k)

    def test_conservative_variant(self):
        a = moments.compute_odi_constants(self.mom, self.kc, self.report, self.mixture, 8.0)
        b = moments.compute_odi_constants(self.mom, self.kc, self.report, self.mixture, 8.0, conservative=True)
        self.assertGreater(b.B_k, a.B_k)

    def test_B_k_growth(self):
        exact, asym = moments.B_k_growth(self.mom, self.kc, self.report, self.mixture, [8.0, 16.0, 32.0])
        self.assertTrue(np.all(np.diff(exact) > 0.0))
        self.assertEqual(asym.shape, (3,))

    def test_cauchy_constants(self):
        C_H, C_L = moments.cauchy_constants(4.0, self.kc)
        self.assertAlmostEqual(C_H, 48.0 * self.kc.max_kappa_ub)
        self.assertAlmostEqual(C_L, 8.0 * self.kc.max_kappa_ub)
        with self.assertRaises(ValueError):
            moments.cauchy_constants(0.0, self.kc)

    def test_sub_threshold_envelope(self):
        mom = moments.moments_of_ensemble(self.ensemble, [0.0, 2.0, 4.0, 7.0])
        sub = moments.sub_threshold_envelope(mom, self.kc, self.report, self.mixture, 4.0)
        self.assertGreater(sub.E_tilde, 0.0)
        self.assertGreaterEqual(sub.propagation(mom.mixture(4.0)), math.e * mom.mixture(4.0))
        with self.assertRaises(ValueError):
            moments.sub_threshold_envelope(mom, self.kc, self.report, self.mixture, 8.0)


@pytest.mark.unit
class TestBilinearBounds(_Fixture):
    """Collision moment bounds and collision frequencies."""

    def test_regimes(self):
        consts = moments.compute_odi_constants(self.mom, self.kc, self.report, self.mixture, 8.0)
        value = moments.collision_moment_bound(self.mom, self.mom, consts, 4.0, "any_k", (1, 3), self.mixture)
        self.assertGreater(value, 0.0)
        with self.assertRaises(ValueError):
            moments.collision_moment_bound(self.mom, self.mom, consts, 2.0, "any_k", (1, 3), self.mixture)
        with self.assertRaises(ValueError):
            moments.collision_moment_bound(self.mom, self.mom, consts, 4.0, "sideways", (1, 3), self.mixture)
        with self.assertRaises(BelowThresholdError):
            moments.collision_moment_bound(self.mom, self.mom, consts, 4.0, "above_kstar", (1, 3), self.mixture)

    def test_above_kstar_needs_higher_orders(self):
        consts = moments.compute_odi_constants(self.mom, self.kc, self.report, self.mixture, 8.0)
        with self.assertRaises(MissingMomentError):
            moments.collision_moment_bound(self.mom, self.mom, consts, 10.0, "above_kstar", (1, 3), self.mixture)
        mom = moments.moments_of_ensemble(self.ensemble, [0.0, 2.0, 6.0, 8.0, 9.0, 10.0])
        value = moments.collision_moment_bound(mom, mom, consts, 8.0, "above_kstar", (1, 3), self.mixture)
        self.assertTrue(math.isfinite(value))

    def test_collision_frequency_below_bound(self):
        mom = moments.moments_of_ensemble(self.ensemble, [0.0, 2.0])
        for i, v, I in [(1, [0.5, 0.0, 0.0], 0.0), (3, [2.0, -1.0, 0.5], 3.0)]:
            state = ParticleState(np.array(v), I, i)
            nu = moments.collision_frequency(state, self.ensemble, self.cfg.kernels)
            bound = moments.collision_frequency_bound(state, mom, self.kc, self.mixture)
            self.assertLessEqual(nu, bound)

    def test_moment_production(self):
        checks = moments.moment_production_check(self.ensemble, self.cfg.kernels, self.kc, 4.0, 4000,
                                                 np.random.default_rng(2))
        self.assertEqual(len(checks), 10)
        for c in checks:
            self.assertTrue(c.passed, f"{c.name}: {c.observed} > {c.tolerance}")


@pytest.mark.unit
class TestOmega(_Fixture):
    """Invariant sets of initial data."""

    def setUp(self):
        self.consts = moments.compute_odi_constants(self.mom, self.kc, self.report, self.mixture, 8.0)

    def test_member(self):
        C_star = moments.default_C_star(self.mom, self.consts)
        result = moments.omega_membership(self.mom, self.consts, [1.0, 1.0, 1.0], self.mom.mixture(2.0), C_star,
                                          self.mixture)
        self.assertTrue(result.member, result.reasons)
        self.assertTrue(result.tilde_member)

    def test_wrong_mass(self):
        C_star = moments.default_C_star(self.mom, self.consts)
        result = moments.omega_membership(self.mom, self.consts, [1.0, 2.0, 1.0], self.mom.mixture(2.0), C_star,
                                          self.mixture)
        self.assertFalse(result.member)
        self.assertIn("differs from C_0", result.reasons[0])

    def test_C_star_below_h_frak(self):
        with self.assertRaises(ConfigError):
            moments.omega_membership(self.mom, self.consts, [1.0, 1.0, 1.0], self.mom.mixture(2.0),
                                     0.5 * self.consts.h_frak, self.mixture)


if __name__ == "__main__":
    unittest.main()
