import unittest

import numpy as np
from numpy.testing import assert_allclose
from pydantic import ValidationError

from parashoot.potentials import (
    Centre, ProblemConfig, centre_distances, eval_gradient, eval_hessian, eval_potential,
    far_field_constant, far_field_gradient, far_field_remainder, min_centre_distance,
    regular_gradient, regular_part
)
from parashoot.types.errors import DomainError, SingularityError
from tests.helpers import benchmark, pair, single


class TestProblemConfig(unittest.TestCase):
    def test_ring_radius_default(self):
        cfg = benchmark()
        self.assertAlmostEqual(cfg.ring_radius, 2.5)
        self.assertAlmostEqual(cfg.far_mass, 2.0)
        self.assertAlmostEqual(cfg.min_gap, 1.0)

    def test_single_centre_gap_is_infinite(self):
        self.assertEqual(single().min_gap, float("inf"))

    def test_rejects_alpha_out_of_range(self):
        for alpha in (0.5, 2.0):
            with self.assertRaises(ValidationError):
                ProblemConfig(alpha=alpha, centres=({"position": (0, 0), "mass": 1},))

    def test_rejects_duplicate_centres(self):
        with self.assertRaises(ValidationError):
            ProblemConfig(alpha=1.0, centres=(
                {"position": (1, 0), "mass": 1}, {"position": (1, 0), "mass": 2}))

    def test_rejects_small_ring(self):
        with self.assertRaises(ValidationError):
            ProblemConfig(alpha=1.0, centres=({"position": (1, 0), "mass": 1},),
                          ring_radius=1.5)

    def test_rejects_unknown_keys(self):
        with self.assertRaises(ValidationError):
            ProblemConfig(alpha=1.0, centres=({"position": (0, 0), "mass": 1, "charge": 3},))

    def test_scaled(self):
        scaled = benchmark().scaled(0.1)
        assert_allclose(scaled.positions, [[-0.05, 0.0], [0.05, 0.0]])
        assert_allclose(scaled.masses, [1.0, 1.0])


class TestPotential(unittest.TestCase):
    def test_single_centre_values(self):
        cfg = single(alpha=1.0, mass=2.0)
        self.assertAlmostEqual(float(eval_potential(cfg, [0.0, 4.0])), 0.5)
        assert_allclose(eval_gradient(cfg, [0.0, 4.0]), [0.0, -2.0 / 16.0])

    def test_alpha_one_and_a_half(self):
        cfg = single(alpha=1.5)
        self.assertAlmostEqual(float(eval_potential(cfg, [4.0, 0.0])), 1.0 / (1.5 * 8.0))
        self.assertAlmostEqual(float(eval_potential(single(alpha=1.5, mass=2.0), [2.0, 0.0])),
                               0.471405, places=6)

    def test_unit_pair(self):
        cfg = pair()
        self.assertAlmostEqual(float(eval_potential(cfg, [0.0, 0.0])), 2.0)
        assert_allclose(eval_gradient(cfg, [0.0, 1.0]), [0.0, -2.0 ** -0.5], atol=1e-15)
        self.assertAlmostEqual(float(far_field_remainder(cfg, [10.0, 0.0])),
                               1.0 / 9.0 + 1.0 / 11.0 - 0.2)

    def test_single_centre_hessian(self):
        assert_allclose(eval_hessian(single(), [1.0, 0.0]), [[2.0, 0.0], [0.0, -1.0]], atol=1e-15)

    def test_scaling_law(self):
        cfg = single(alpha=1.5)
        x = np.array([0.3, -1.1])
        assert_allclose(eval_potential(cfg, 3.0 * x), 3.0 ** -1.5 * eval_potential(cfg, x))

    def test_vectorized_matches_pointwise(self):
        cfg = benchmark()
        points = np.array([[1.0, 2.0], [-3.0, 0.5], [0.0, 0.1]])
        stacked = eval_potential(cfg, points)
        assert_allclose(stacked, [eval_potential(cfg, p) for p in points])
        self.assertEqual(eval_gradient(cfg, points).shape, (3, 2))
        self.assertEqual(eval_hessian(cfg, points).shape, (3, 2, 2))

    def test_gradient_and_hessian_finite_differences(self):
        cfg = benchmark()
        rng = np.random.default_rng(3)
        h = 1e-6
        for x in rng.uniform(-2.0, 2.0, size=(10, 2)):
            if centre_distances(cfg, x).min() < 0.1:
                continue
            fd = [(eval_potential(cfg, x + h * e) - eval_potential(cfg, x - h * e)) / (2 * h)
                  for e in np.eye(2)]
            assert_allclose(eval_gradient(cfg, x), fd, rtol=1e-6, atol=1e-9)
            fd_hess = np.stack([(eval_gradient(cfg, x + h * e) - eval_gradient(cfg, x - h * e))
                                / (2 * h) for e in np.eye(2)], axis=1)
            assert_allclose(eval_hessian(cfg, x), fd_hess, rtol=1e-5, atol=1e-8)

    def test_hessian_symmetric(self):
        hess = eval_hessian(benchmark(), [0.3, 1.7])
        assert_allclose(hess, hess.T, atol=1e-14)

    def test_singularity(self):
        with self.assertRaises(SingularityError):
            eval_potential(benchmark(), [0.5, 0.0])
        with self.assertRaises(SingularityError):
            eval_gradient(benchmark(), [[0.0, 1.0], [-0.5, 1e-14]])


class TestDecompositions(unittest.TestCase):
    def test_regular_part_excludes_centre(self):
        cfg = benchmark()
        x = np.array([-0.5, 1e-3])
        self.assertAlmostEqual(float(regular_part(cfg, x, 0)),
                               float(eval_potential(single(position=(0.5, 0.0)), x)))
        assert_allclose(regular_part(cfg, x, 0) + 1.0 / 1e-3, eval_potential(cfg, x))
        assert_allclose(regular_gradient(cfg, x, 0) + np.array([0.0, -1.0 / 1e-6]),
                        eval_gradient(cfg, x), rtol=1e-12)

    def test_regular_part_single_centre_is_zero(self):
        self.assertEqual(float(regular_part(single(), [0.1, 0.0], 0)), 0.0)

    def test_far_field_remainder_decays(self):
        cfg = benchmark()
        near = abs(float(far_field_remainder(cfg, [0.0, 5.0])))
        far = abs(float(far_field_remainder(cfg, [0.0, 50.0])))
        # Equal masses symmetric about the origin: no dipole term
        self.assertLess(far, near * 1e-2)
        assert_allclose(far_field_remainder(single(), [3.0, 4.0]), 0.0, atol=1e-15)

    def test_far_field_gradient_matches_difference(self):
        cfg = benchmark()
        x = np.array([3.0, 4.0])
        h = 1e-6
        fd = [(far_field_remainder(cfg, x + h * e) - far_field_remainder(cfg, x - h * e)) / (2 * h)
              for e in np.eye(2)]
        assert_allclose(far_field_gradient(cfg, x), fd, rtol=1e-5, atol=1e-12)

    def test_far_field_domain(self):
        with self.assertRaises(DomainError):
            far_field_remainder(benchmark(), [0.1, 0.2])

    def test_far_field_constant_finite(self):
        bound, gradient_bound = far_field_constant(benchmark(), rays=8, samples=50)
        self.assertTrue(np.isfinite(bound) and bound > 0.0)
        self.assertTrue(np.isfinite(gradient_bound) and gradient_bound > 0.0)

    def test_min_centre_distance_ties_go_low(self):
        distance, index = min_centre_distance(benchmark(), [0.0, 1.0])
        self.assertEqual(index, 0)
        self.assertAlmostEqual(distance, np.hypot(0.5, 1.0))
        self.assertEqual(min_centre_distance(pair(), [1.0, 0.0]), (0.0, 1))
        distance, index = min_centre_distance(pair(), [0.9, 0.0])
        self.assertAlmostEqual(distance, 0.1)
        self.assertEqual(index, 1)


if __name__ == "__main__":
    unittest.main()
