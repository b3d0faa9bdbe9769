import unittest
from types import SimpleNamespace

import numpy as np
from numpy.testing import assert_allclose

from parashoot.entire import (
    NOISE_FLOOR, CollapseRow, CollapseTable, ContinuationResult, ScatteringProblem,
    action_coefficient, action_scaling, asymptotic_directions, collapse_experiment,
    continue_in_radius, default_schedule, deviations_settle, extend_tails, fit_radius_law,
    kepler_parabolic_angle, noise_floors, radius_law_coefficient, rectilinear_limit,
    self_intersection_check, solve_bolza_at, window_deviation
)
from parashoot.homotopy import ParityClass, Partition
from parashoot.integrator import (
    State, angular_momentum, assemble_trajectory, integrate_cartesian, virial_residual
)
from parashoot.types.errors import (
    DomainError, InsufficientDataError, InsufficientSpanError, InvalidPartitionError,
    ScheduleError, WindowTooShortError
)
from parashoot.variational import MinimizeSettings
from tests.helpers import benchmark, single

LEFT = Partition(frozenset([0]))


def vertical_problem(cfg=None):
    return ScatteringProblem.from_angles(-np.pi / 2.0, np.pi / 2.0, LEFT, cfg or benchmark())


def rectilinear_trajectory(cfg, prob, span=1e4, count=4000):
    """Samples of the collapsed limit itself, on both sides of t = 0."""
    later = np.geomspace(1e-3, span, count)
    times = np.concatenate([-later[::-1], later])
    positions = rectilinear_limit(times, cfg.alpha, cfg.far_mass, prob.dir_minus, prob.dir_plus)
    coef = radius_law_coefficient(cfg.alpha, cfg.far_mass)
    power = 2.0 / (2.0 + cfg.alpha)
    rate = power * coef * np.abs(times) ** (power - 1.0)
    velocities = np.where((times < 0.0)[:, None], -rate[:, None] * prob.dir_minus,
                          rate[:, None] * prob.dir_plus)
    return assemble_trajectory(times, positions, velocities, cfg)


class TestScatteringProblem(unittest.TestCase):
    def test_benchmark(self):
        prob = vertical_problem()
        self.assertEqual(prob.target, ParityClass((1, 0)))
        self.assertAlmostEqual(prob.scattering_angle, np.pi)
        q_minus, q_plus = prob.endpoints(10.0)
        assert_allclose(q_minus, [0.0, -10.0], atol=1e-12)
        assert_allclose(q_plus, [0.0, 10.0], atol=1e-12)

    def test_validation(self):
        cfg = benchmark()
        with self.assertRaises(DomainError):
            ScatteringProblem(np.array([0.0, 2.0]), np.array([0.0, 1.0]), LEFT, cfg)
        with self.assertRaises(DomainError):
            ScatteringProblem.from_angles(0.3, 0.3, LEFT, cfg)
        with self.assertRaises(InvalidPartitionError):
            ScatteringProblem.from_angles(0.0, 1.0, Partition(frozenset([0, 1])), cfg)


class TestConstants(unittest.TestCase):
    def test_coefficients(self):
        self.assertAlmostEqual(radius_law_coefficient(1.0, 2.0), 2.0801, places=4)
        self.assertAlmostEqual(action_coefficient(1.0, 2.0), 8.0)

    def test_default_schedule(self):
        self.assertEqual(default_schedule(benchmark()), (10.0, 20.0, 40.0, 80.0))

    def test_rectilinear_limit(self):
        limit = rectilinear_limit([-1.0, 0.0, 1.0], 1.0, 2.0, [0.0, -1.0], [1.0, 0.0])
        assert_allclose(limit[1], [0.0, 0.0])
        assert_allclose(limit[0], [0.0, -radius_law_coefficient(1.0, 2.0)])
        assert_allclose(limit[2], [radius_law_coefficient(1.0, 2.0), 0.0])


class TestTailFits(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        start = State(0.0, [2.0, 0.0], [1.0, 0.0])
        cls.traj = integrate_cartesian(start, 1e4, 1e-10, single())

    def test_radius_law_on_radial_escape(self):
        fit = fit_radius_law(self.traj)
        self.assertEqual(fit.fit_window, (1e3, 1e4))
        self.assertAlmostEqual(fit.exponent, 2.0 / 3.0, delta=1e-2)
        assert_allclose(fit.coefficient, radius_law_coefficient(1.0, 1.0), rtol=1e-2)

    def test_short_window(self):
        with self.assertRaises(InsufficientSpanError):
            fit_radius_law(self.traj, t_lo=1.0, t_hi=5.0)
        with self.assertRaises(InsufficientSpanError):
            fit_radius_law(self.traj, side=-1)

    def test_window_deviation_needs_coverage(self):
        with self.assertRaises(WindowTooShortError):
            window_deviation(self.traj, self.traj, 1.0)


class TestActionScaling(unittest.TestCase):
    def test_recovers_coefficient(self):
        cfg = benchmark()
        radii = (10.0, 20.0, 40.0, 80.0)
        solutions = tuple(SimpleNamespace(action=8.0 * np.sqrt(r) + 3.0) for r in radii)
        result = ContinuationResult(radii=radii, solutions=solutions, window=(-1.0, 1.0),
                                    sup_deviations=(), inside_actions=(), separated=(),
                                    converged=True)
        scaling = action_scaling(result, cfg)
        self.assertAlmostEqual(scaling.coefficient, 8.0)
        self.assertAlmostEqual(scaling.offset, 3.0)
        self.assertAlmostEqual(scaling.relative_error, 0.0)

    def test_needs_four_radii(self):
        result = ContinuationResult(radii=(10.0, 20.0, 40.0), solutions=(), window=(-1.0, 1.0),
                                    sup_deviations=(), inside_actions=(), separated=(),
                                    converged=False)
        with self.assertRaises(InsufficientDataError):
            action_scaling(result, benchmark())


class TestCollapse(unittest.TestCase):
    def test_limit_is_a_fixed_point(self):
        cfg = benchmark()
        prob = vertical_problem(cfg)
        traj = rectilinear_trajectory(cfg, prob)
        table = collapse_experiment(traj, prob, [0.1, 0.01], probe_times=[-1.0, -0.5, 0.5, 1.0])
        for row in table.rows:
            self.assertLess(row.deviation, 1e-8)
        # The scaled centres merge into one as eps shrinks
        self.assertLess(table.rows[1].energy_residual, table.rows[0].energy_residual)

    def test_window_too_short(self):
        cfg = benchmark()
        prob = vertical_problem(cfg)
        traj = rectilinear_trajectory(cfg, prob, span=10.0, count=200)
        with self.assertRaises(WindowTooShortError):
            collapse_experiment(traj, prob, [1e-3])

    def test_decreasing(self):
        rows = (CollapseRow(0.1, 0.3, 0.0), CollapseRow(0.01, 0.1, 0.0), CollapseRow(1.0, 0.9, 0.0))
        self.assertTrue(CollapseTable(rows).decreasing)
        self.assertFalse(CollapseTable(rows + (CollapseRow(0.001, 0.2, 0.0),)).decreasing)


class TestKeplerAngle(unittest.TestCase):
    def test_alpha_one(self):
        assert_allclose(kepler_parabolic_angle(1.0), 2.0 * np.pi, rtol=1e-3)

    def test_alpha_one_and_a_half(self):
        assert_allclose(kepler_parabolic_angle(1.5), 4.0 * np.pi, rtol=1e-3)


class TestContinuation(unittest.TestCase):
    settings = MinimizeSettings(nodes=128)

    def test_schedule_errors(self):
        prob = vertical_problem()
        with self.assertRaises(ScheduleError):
            continue_in_radius(prob, schedule=(20.0, 10.0))
        with self.assertRaises(ScheduleError):
            continue_in_radius(prob, schedule=(4.0, 8.0))

    def test_solve_bolza_at_is_time_centred(self):
        prob = vertical_problem()
        sol = solve_bolza_at(6.0, prob, settings=self.settings, rng=np.random.default_rng(0))
        first, second = sol.trajectory.ring_crossings
        self.assertAlmostEqual(first, -second, places=10)
        self.assertLess(first, 0.0)
        # Symmetric problem: centring barely moves the clock
        self.assertLess(abs(sol.time_shift), 1e-2 * second)
        self.assertEqual(self_intersection_check(sol.trajectory), [])
        with self.assertRaises(DomainError):
            solve_bolza_at(2.0, prob, settings=self.settings)

    def test_short_continuation(self):
        prob = vertical_problem()
        result = continue_in_radius(prob, schedule=(6.0, 12.0, 24.0), settings=self.settings,
                                    rng=np.random.default_rng(1))
        self.assertEqual(len(result.sup_deviations), 2)
        self.assertTrue(all(result.separated))
        assert_allclose(result.inside_actions, result.inside_actions[-1], rtol=1e-2)
        self.assertLess(result.window[0], 0.0)


class TestConvergenceRule(unittest.TestCase):
    def test_noise_floors_follow_the_residuals(self):
        cfg = benchmark()
        solutions = [SimpleNamespace(energy_residual=e) for e in (2e-4, 1e-8, 5e-4)]
        assert_allclose(noise_floors(solutions, cfg), [2.5 * 2e-4, 2.5 * 5e-4])
        quiet = [SimpleNamespace(energy_residual=0.0)] * 2
        assert_allclose(noise_floors(quiet, cfg), [2.5 * NOISE_FLOOR])

    def test_plateau_at_discretization_noise_settles(self):
        deviations = (7.45e-5, 4.02e-5, 4.22e-5)
        self.assertTrue(deviations_settle(deviations, (2.5e-4,) * 3))
        self.assertFalse(deviations_settle(deviations, (2.5e-6,) * 3))

    def test_growth_above_the_floor_does_not_settle(self):
        self.assertFalse(deviations_settle((1e-3, 1e-2, 1e-1), (1e-4,) * 3))
        self.assertTrue(deviations_settle((1e-1, 1e-2, 1e-3), (0.0,) * 3))
        self.assertFalse(deviations_settle((1e-3,), (1.0,)))


class TestBenchmarkContinuation(unittest.TestCase):
    """Default schedule on the shipped two-centre benchmark."""

    @classmethod
    def setUpClass(cls):
        cls.cfg = benchmark()
        cls.prob = vertical_problem(cls.cfg)
        cls.result = continue_in_radius(cls.prob, settings=MinimizeSettings(nodes=256),
                                        rng=np.random.default_rng(0))
        cls.tails = extend_tails(cls.result.solutions[-1], cls.cfg, 1e5, 1e-10)

    def test_converges_and_separates(self):
        self.assertEqual(self.result.radii, (10.0, 20.0, 40.0, 80.0))
        self.assertTrue(self.result.converged, self.result.sup_deviations)
        self.assertTrue(all(self.result.separated))
        for sol in self.result.solutions:
            self.assertEqual(self_intersection_check(sol.path.nodes), [])

    def test_action_scaling(self):
        scaling = action_scaling(self.result, self.cfg)
        self.assertAlmostEqual(scaling.target, 8.0)
        self.assertLessEqual(scaling.relative_error, 0.05)

    def test_radius_law(self):
        fit = fit_radius_law(self.tails)
        assert_allclose(fit.exponent, 2.0 / 3.0, rtol=0.02)
        assert_allclose(fit.coefficient, radius_law_coefficient(1.0, 2.0), rtol=0.05)

    def test_virial_and_collapse(self):
        self.assertTrue(virial_residual(self.tails, self.cfg).convex)
        table = collapse_experiment(self.tails, self.prob, (0.2, 0.1, 0.05), probe_count=10)
        self.assertTrue(table.decreasing, table.rows)

    def test_inside_ring_actions_agree(self):
        actions = np.array(self.result.inside_actions)
        self.assertLess(actions.max(), 2.0 * np.median(actions))


class TestAsymmetricTails(unittest.TestCase):
    """Scattering from -pi/2 to pi/3: both tails carry angular motion."""

    @classmethod
    def setUpClass(cls):
        cls.cfg = benchmark()
        cls.prob = ScatteringProblem.from_angles(-np.pi / 2.0, np.pi / 3.0, LEFT, cls.cfg)
        cls.sol = solve_bolza_at(4.0 * cls.cfg.ring_radius, cls.prob,
                                 settings=MinimizeSettings(nodes=256),
                                 rng=np.random.default_rng(0))

    def test_bolza_meets_the_tolerances(self):
        self.assertLessEqual(self.sol.energy_residual, 1e-3)
        self.assertEqual(self.sol.parity, self.prob.target)

    def test_angular_decay(self):
        directions = asymptotic_directions(self.sol, self.prob, extent=1e5, tol=1e-10)
        fits = [f for f in (directions.decay_minus, directions.decay_plus) if f is not None]
        self.assertTrue(fits)
        for fit in fits:
            assert_allclose(fit.exponent, 4.0 / 3.0, rtol=0.1)

    def test_virial_on_turning_tails(self):
        tails = extend_tails(self.sol, self.cfg, 1e5, 1e-10)
        self.assertGreater(np.abs(angular_momentum(tails)).max(), 1e-3)
        self.assertTrue(virial_residual(tails, self.cfg).convex)


if __name__ == "__main__":
    unittest.main()
