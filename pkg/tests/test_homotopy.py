import unittest

import numpy as np
from numpy.testing import assert_array_equal

from parashoot.homotopy import (
    ClosedPolyline, ParityClass, Partition, close_path, complement, crossing_pairs,
    enumerate_partitions, gray_codes, parity_class, partition_to_class, separates,
    winding_number, winding_numbers
)
from parashoot.types.errors import (
    CoincidentEndpointsError, EndpointRadiusError, InvalidPartitionError, PointOnPathError
)
from tests.helpers import benchmark, circle_points, three_centres


def vertical(n=65, radius=5.0, x=0.0):
    y = np.linspace(-radius, radius, n)
    nodes = np.stack([np.full(n, x), y], axis=1)
    nodes[0] = [0.0, -radius]
    nodes[-1] = [0.0, radius]
    return nodes


def detour(side, radius=5.0):
    """Straight up the y-axis with a semicircle of radius 1 around the origin."""
    lower = np.stack([np.zeros(20), np.linspace(-radius, -1.0, 20)], axis=1)
    start = -np.pi / 2.0
    arc = circle_points(1.0, start, start + side * np.pi, 41)[1:-1]
    upper = np.stack([np.zeros(20), np.linspace(1.0, radius, 20)], axis=1)
    return np.vstack([lower, arc, upper])


class TestClosure(unittest.TestCase):
    def test_vertical_path_encloses_left_centre(self):
        self.assertEqual(parity_class(vertical(), benchmark()), ParityClass((1, 0)))

    def test_detours_change_the_class(self):
        cfg = benchmark()
        # Counterclockwise from the bottom sweeps through the right half-plane
        self.assertEqual(parity_class(detour(1), cfg), ParityClass((1, 1)))
        self.assertEqual(parity_class(detour(-1), cfg), ParityClass((0, 0)))

    def test_horizontal_detours(self):
        cfg = benchmark()
        left = np.stack([np.linspace(-5.0, -2.0, 10), np.zeros(10)], axis=1)
        right = np.stack([np.linspace(2.0, 5.0, 10), np.zeros(10)], axis=1)
        over = circle_points(2.0, np.pi, 0.0, 33)[1:-1]
        under = circle_points(2.0, np.pi, 2.0 * np.pi, 33)[1:-1]
        # The closing arc from (5, 0) to (-5, 0) runs over the top
        self.assertEqual(parity_class(np.vstack([left, over, right]), cfg), ParityClass((0, 0)))
        self.assertEqual(parity_class(np.vstack([left, under, right]), cfg), ParityClass((1, 1)))

    def test_closing_arc_runs_counterclockwise(self):
        poly = close_path(vertical(), arc_nodes=16)
        self.assertTrue(np.all(poly.vertices[65:-1, 0] < 0.0))

    def test_arc_resolution_does_not_change_class(self):
        cfg = benchmark()
        for nodes in (8, 128, 1024):
            self.assertEqual(parity_class(vertical(), cfg, arc_nodes=nodes), ParityClass((1, 0)))

    def test_endpoint_errors(self):
        bad = vertical()
        bad[-1] = [0.0, 6.0]
        with self.assertRaises(EndpointRadiusError):
            close_path(bad)
        loop = circle_points(5.0, 0.0, 2.0 * np.pi, 50)
        loop[-1] = loop[0]
        with self.assertRaises(CoincidentEndpointsError):
            close_path(loop)


class TestWinding(unittest.TestCase):
    def test_square(self):
        square = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1], [-1, -1]], dtype=float)
        poly = ClosedPolyline(square)
        self.assertEqual(winding_number(poly, [0.0, 0.0]), 1)
        self.assertEqual(winding_number(poly, [3.0, 0.0]), 0)
        assert_array_equal(winding_numbers(poly, [[0.2, 0.1], [5.0, 5.0]]), [1, 0])
        reversed_poly = ClosedPolyline(square[::-1])
        self.assertEqual(winding_number(reversed_poly, [0.0, 0.0]), -1)

    def test_double_loop(self):
        angles = np.linspace(0.0, 4.0 * np.pi, 200)
        loop = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        loop[-1] = loop[0]
        self.assertEqual(winding_number(ClosedPolyline(loop), [0.0, 0.0]), 2)

    def test_point_on_path(self):
        with self.assertRaises(PointOnPathError):
            winding_number(ClosedPolyline(
                np.array([[0, 0], [1, 0], [1, 1], [0, 0]], dtype=float)), [0.5, 0.0])


class TestPartitions(unittest.TestCase):
    def test_counts(self):
        self.assertEqual(len(enumerate_partitions(2)), 1)
        self.assertEqual(len(enumerate_partitions(3)), 3)
        self.assertEqual(len(enumerate_partitions(5)), 15)
        self.assertTrue(all(0 in p.members for p in enumerate_partitions(4)))

    def test_validation(self):
        for members in ([], [0, 1], [2]):
            with self.assertRaises(InvalidPartitionError):
                Partition(frozenset(members)).validate(2)

    def test_class_and_complement(self):
        cls = partition_to_class(Partition(frozenset([0, 2])), 3)
        self.assertEqual(cls, ParityClass((1, 0, 1)))
        self.assertTrue(cls.admissible)
        self.assertEqual(cls.complement(), ParityClass((0, 1, 0)))
        self.assertEqual(complement(Partition(frozenset([0, 2])), 3).members, frozenset([1]))
        self.assertFalse(ParityClass((1, 1)).admissible)

    def test_separates(self):
        cfg = benchmark()
        self.assertTrue(separates(vertical(), Partition(frozenset([0])), cfg))
        self.assertTrue(separates(vertical(), Partition(frozenset([1])), cfg))
        self.assertFalse(separates(detour(1), Partition(frozenset([0])), cfg))

    def test_three_centre_class(self):
        cfg = three_centres()
        path = vertical(radius=3.5, x=0.3)
        self.assertEqual(parity_class(path, cfg), ParityClass((1, 0, 1)))

    def test_gray_codes(self):
        codes = list(gray_codes(3))
        self.assertEqual(len(set(codes)), 8)
        for a, b in zip(codes, codes[1:]):
            self.assertEqual(sum(x != y for x, y in zip(a, b)), 1)


class TestCrossings(unittest.TestCase):
    def test_figure_eight(self):
        eight = np.array([[0, 0], [1, 1], [1, 0], [0, 1]], dtype=float)
        self.assertEqual(crossing_pairs(eight), [(0, 2)])

    def test_straight_and_adjacent(self):
        self.assertEqual(crossing_pairs(vertical()), [])
        self.assertEqual(crossing_pairs(np.array([[0, 0], [1, 0], [1, 1]], dtype=float)), [])

    def test_chunking_agrees(self):
        t = np.linspace(0.0, 2.0 * np.pi, 301)
        lissajous = np.stack([np.sin(2 * t), np.sin(3 * t + 0.3)], axis=1)
        self.assertEqual(crossing_pairs(lissajous, chunk=7), crossing_pairs(lissajous))
        self.assertGreater(len(crossing_pairs(lissajous)), 0)


if __name__ == "__main__":
    unittest.main()
