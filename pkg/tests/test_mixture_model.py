import os
import sys
import unittest

import numpy as np
import pytest

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from boltzmix.errors import ConfigError  # noqa: E402
from boltzmix.mixture_model import (  # noqa: E402
    InteractionClass,
    Kind,
    MixtureSpec,
    ParticleState,
    SpeciesSpec,
    bracket,
    frame_bracket_energy,
    pair_bracket_energy,
    pair_frame,
    validate_gamma,
)

SPECIES = [
    {"name": "poly", "mass": 3.0, "kind": "polyatomic", "alpha": 1.0},
    {"name": "light", "mass": 1.0, "kind": "monatomic"},
]
GAMMA = [[1.0, 2.0], [2.0, 0.0]]


@pytest.mark.unit
class TestMixtureSpec(unittest.TestCase):
    """Species ordering and derived quantities."""

    def setUp(self):
        self.mixture = MixtureSpec.from_species(SPECIES, GAMMA)

    def test_reindexing(self):
        self.assertEqual(self.mixture.spec(1).name, "light")
        self.assertEqual(self.mixture.spec(2).name, "poly")
        self.assertEqual(self.mixture.permutation, (1, 0))
        self.assertEqual(self.mixture.input_ordinal(1), 2)
        self.assertEqual(self.mixture.from_input_ordinal(1), 2)

    def test_gamma_follows_reindexing(self):
        np.testing.assert_array_equal(self.mixture.gamma, [[0.0, 2.0], [2.0, 1.0]])
        self.assertEqual(self.mixture.gamma_bar, 2.0)
        self.assertEqual(self.mixture.gamma_bar_bar, 2.0)

    def test_interaction_classes(self):
        self.assertIs(self.mixture.interaction_class(1, 1), InteractionClass.MONO_MONO)
        self.assertIs(self.mixture.interaction_class(1, 2), InteractionClass.MONO_POLY)
        self.assertIs(self.mixture.interaction_class(2, 1), InteractionClass.POLY_MONO)
        self.assertIs(self.mixture.interaction_class(2, 2), InteractionClass.POLY_POLY)
        self.assertIs(InteractionClass.POLY_MONO.swapped(), InteractionClass.MONO_POLY)

    def test_pairs(self):
        self.assertEqual(len(self.mixture.pairs()), 4)
        self.assertEqual(self.mixture.pairs(ordered=False), [(1, 1), (1, 2), (2, 2)])

    def test_total_mass(self):
        self.assertEqual(self.mixture.total_mass, 4.0)

    def test_unknown_input_ordinal(self):
        with self.assertRaises(ConfigError):
            self.mixture.from_input_ordinal(5)

    def test_monatomic_after_polyatomic_rejected(self):
        species = (SpeciesSpec(1, 1.0, Kind.POLYATOMIC, 1.0), SpeciesSpec(2, 1.0, Kind.MONATOMIC))
        with self.assertRaises(ConfigError):
            MixtureSpec(species, np.array([[1.0, 1.0], [1.0, 1.0]]))

    def test_species_validation(self):
        with self.assertRaises(ConfigError):
            SpeciesSpec(1, 0.0, Kind.MONATOMIC)
        with self.assertRaises(ConfigError):
            SpeciesSpec(1, 1.0, Kind.POLYATOMIC, alpha=-1.0)
        self.assertEqual(SpeciesSpec(1, 1.0, Kind.MONATOMIC, alpha=3.0).alpha, 0.0)


@pytest.mark.unit
class TestGammaValidation(unittest.TestCase):
    """Rate matrix invariants."""

    def test_asymmetric(self):
        with self.assertRaises(ConfigError):
            validate_gamma([[1.0, 0.5], [1.0, 1.0]], 2)

    def test_shape(self):
        with self.assertRaises(ConfigError):
            validate_gamma([[1.0]], 2)

    def test_zero_row_names_species(self):
        with self.assertRaises(ConfigError) as ctx:
            validate_gamma([[1.0, 0.0], [0.0, 0.0]], 2, ["a", "b"])
        self.assertIn("row 2", str(ctx.exception))
        self.assertIn("'b'", str(ctx.exception))


@pytest.mark.unit
class TestBrackets(unittest.TestCase):
    """Brackets and centre-of-mass quantities."""

    def setUp(self):
        self.mixture = MixtureSpec.from_species(SPECIES, GAMMA)

    def test_bracket_at_rest(self):
        self.assertEqual(bracket(ParticleState(np.zeros(3), 0.0, 1), self.mixture), 1.0)

    def test_bracket_value(self):
        state = ParticleState(np.array([2.0, 0.0, 0.0]), 4.0, 2)
        expected = np.sqrt(1.0 + 3.0 * 4.0 / 8.0 + 4.0 / 4.0)
        self.assertAlmostEqual(bracket(state, self.mixture), expected, places=14)

    def test_frame_energy_matches_brackets(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a = ParticleState(rng.standard_normal(3), 0.0, 1)
            b = ParticleState(rng.standard_normal(3), float(rng.exponential()), 2)
            frame = pair_frame(a, b, self.mixture)
            self.assertAlmostEqual(pair_bracket_energy(a, b, self.mixture),
                                   frame_bracket_energy(frame, self.mixture.total_mass), places=12)

    def test_frame_mass_fraction(self):
        a = ParticleState(np.array([1.0, 0.0, 0.0]), 0.0, 1)
        b = ParticleState(np.zeros(3), 1.0, 2)
        frame = pair_frame(a, b, self.mixture)
        self.assertAlmostEqual(frame.s, 0.25)
        self.assertAlmostEqual(frame.s_bar, 0.25)
        self.assertAlmostEqual(frame.mu, 0.75)
        self.assertAlmostEqual(frame.E, 0.5 * 0.75 + 1.0)

    def test_negative_internal_energy(self):
        with self.assertRaises(ValueError):
            ParticleState(np.zeros(3), -1.0, 2)

    def test_state_check(self):
        with self.assertRaises(ValueError):
            ParticleState(np.zeros(3), 1.0, 1).check(self.mixture)
        with self.assertRaises(ValueError):
            ParticleState(np.zeros(2), 0.0, 1).check(self.mixture)


if __name__ == "__main__":
    unittest.main()
