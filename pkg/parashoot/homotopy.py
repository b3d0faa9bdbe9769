"""Winding-parity bookkeeping for open paths between two points of a circle.

An open path from q- to q+ (|q-| = |q+|) is closed by the counterclockwise
arc of radius |q-| from q+ back to q-. The winding numbers of that loop
around the centres, taken mod 2, give the path's parity class.

Functions taking a path accept a ``DiscretePath`` or a plain ``(n, 2)`` array
of vertices.
"""
import itertools
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from parashoot.potentials import ProblemConfig
from parashoot.types.errors import (
    CoincidentEndpointsError, DegeneratePathError, EndpointRadiusError,
    IllConditionedWindingError, InvalidPartitionError, PointOnPathError
)

ARC_NODES = 128
ENDPOINT_RTOL = 1e-9
ON_PATH_SCALE = 1e-9
RESIDUAL_LIMIT = 0.25


@dataclass(frozen=True)
class ParityClass:
    bits: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "bits", tuple(int(b) for b in self.bits))
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError(f"Parity bits must be 0 or 1: {self.bits}")

    @property
    def admissible(self) -> bool:
        """At least two centres carry different parities."""
        return len(set(self.bits)) > 1

    def complement(self) -> "ParityClass":
        return ParityClass(tuple(1 - b for b in self.bits))

    def __str__(self):
        return "".join(str(b) for b in self.bits)


@dataclass(frozen=True)
class Partition:
    members: frozenset[int]

    def __post_init__(self):
        object.__setattr__(self, "members", frozenset(int(i) for i in self.members))

    def validate(self, n: int) -> "Partition":
        if not self.members:
            raise InvalidPartitionError("Partition is empty", members=[])
        if any(i < 0 or i >= n for i in self.members):
            raise InvalidPartitionError(
                f"Partition {sorted(self.members)} names a centre outside 0..{n - 1}",
                members=sorted(self.members))
        if len(self.members) == n:
            raise InvalidPartitionError(
                f"Partition {sorted(self.members)} contains every centre",
                members=sorted(self.members))
        return self

    def __str__(self):
        return "{" + ",".join(str(i) for i in sorted(self.members)) + "}"


@dataclass(frozen=True, eq=False)
class ClosedPolyline:
    vertices: np.ndarray

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=float)
        if vertices.ndim != 2 or vertices.shape[1] != 2 or len(vertices) < 4:
            raise DegeneratePathError("A closed polyline needs at least three edges")
        if not np.array_equal(vertices[0], vertices[-1]):
            raise DegeneratePathError("Polyline is not closed")
        if np.any(np.all(np.diff(vertices, axis=0) == 0.0, axis=1)):
            raise DegeneratePathError("Polyline repeats a vertex")
        vertices.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)

    @property
    def scale(self) -> float:
        return max(1.0, float(np.max(np.abs(self.vertices))))


def _vertices_of(path) -> np.ndarray:
    return np.asarray(getattr(path, "nodes", path), dtype=float)


def _drop_repeats(vertices):
    keep = np.ones(len(vertices), dtype=bool)
    keep[1:] = np.any(np.diff(vertices, axis=0) != 0.0, axis=1)
    return vertices[keep]


def close_path(path, arc_nodes: int = ARC_NODES) -> ClosedPolyline:
    """
    Close an open path with the counterclockwise arc from q+ to q-.

    :param path: DiscretePath or vertex array from q- to q+
    :param arc_nodes: Number of vertices on the closing arc, endpoints included

    :return: The closed polyline
    """
    nodes = _vertices_of(path)
    q_minus, q_plus = nodes[0], nodes[-1]
    r_minus, r_plus = np.linalg.norm(q_minus), np.linalg.norm(q_plus)
    if abs(r_minus - r_plus) > ENDPOINT_RTOL * max(r_minus, r_plus):
        raise EndpointRadiusError(
            f"Endpoint radii differ: {r_minus:.12g} vs {r_plus:.12g}")
    if np.linalg.norm(q_plus - q_minus) <= ENDPOINT_RTOL * max(1.0, r_minus):
        raise CoincidentEndpointsError("Path starts and ends at the same point")

    theta_minus = np.arctan2(q_minus[1], q_minus[0]) % (2.0 * np.pi)
    theta_plus = np.arctan2(q_plus[1], q_plus[0]) % (2.0 * np.pi)
    if theta_minus < theta_plus:
        theta_minus += 2.0 * np.pi
    angles = np.linspace(theta_plus, theta_minus, max(arc_nodes, 2))[1:-1]
    arc = r_minus * np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    vertices = np.vstack([nodes, arc, nodes[:1]])
    return ClosedPolyline(_drop_repeats(vertices))


def winding_numbers(poly: ClosedPolyline, points) -> np.ndarray:
    """Winding numbers of ``poly`` around each row of ``points``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    v = poly.vertices[None, :, :] - points[:, None, :]
    a, b = v[:, :-1, :], v[:, 1:, :]

    edge = b - a
    t = -np.einsum("pki,pki->pk", a, edge) / np.einsum("pki,pki->pk", edge, edge)
    closest = a + np.clip(t, 0.0, 1.0)[..., None] * edge
    gap = np.linalg.norm(closest, axis=-1).min(axis=1)
    limit = ON_PATH_SCALE * poly.scale
    if np.any(gap <= limit):
        bad = int(np.argmin(gap))
        raise PointOnPathError(
            f"Point {points[bad].tolist()} lies within {limit:.3g} of the path",
            distance=float(gap[bad]))

    cross = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    dot = np.einsum("pki,pki->pk", a, b)
    turns = np.arctan2(cross, dot).sum(axis=1) / (2.0 * np.pi)
    rounded = np.rint(turns)
    residual = np.abs(turns - rounded)
    if np.any(residual >= RESIDUAL_LIMIT):
        raise IllConditionedWindingError(
            f"Winding residual {residual.max():.3g} is too large",
            residual=float(residual.max()))
    return rounded.astype(int)


def winding_number(poly: ClosedPolyline, point) -> int:
    return int(winding_numbers(poly, np.asarray(point, dtype=float)[None, :])[0])


def parity_class(path, cfg: ProblemConfig, arc_nodes: int = ARC_NODES) -> ParityClass:
    poly = close_path(path, arc_nodes)
    return ParityClass(tuple(int(w) % 2 for w in winding_numbers(poly, cfg.positions)))


def partition_to_class(partition: Partition, n: int) -> ParityClass:
    partition.validate(n)
    return ParityClass(tuple(1 if i in partition.members else 0 for i in range(n)))


def complement(partition: Partition, n: int) -> Partition:
    partition.validate(n)
    return Partition(frozenset(range(n)) - partition.members)


def separates(path, partition: Partition, cfg: ProblemConfig,
              arc_nodes: int = ARC_NODES) -> bool:
    """True when the closed path splits the centres exactly along the partition."""
    target = partition_to_class(partition, cfg.n_centres)
    bits = parity_class(path, cfg, arc_nodes)
    return bits == target or bits == target.complement()


def enumerate_partitions(n: int) -> list[Partition]:
    """Unordered proper partitions, each named by the side holding centre 0."""
    partitions = []
    for mask in itertools.product((0, 1), repeat=max(n - 1, 0)):
        members = frozenset([0] + [i + 1 for i, bit in enumerate(mask) if bit])
        if len(members) < n:
            partitions.append(Partition(members))
    return partitions


def gray_codes(n: int) -> Iterable[tuple[int, ...]]:
    """All n-bit vectors, consecutive ones differing in a single bit."""
    for k in range(2 ** n):
        g = k ^ (k >> 1)
        yield tuple((g >> i) & 1 for i in range(n))


def _orientation(p, q, r):
    return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) \
        - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])


def crossing_pairs(vertices, chunk: int = 512) -> list[tuple[int, int]]:
    """
    Transversal crossings between non-adjacent segments of a polyline.

    :param vertices: ``(n, 2)`` polyline vertices
    :param chunk: Segments tested against the whole polyline per block

    :return: Sorted ``(i, j)`` segment index pairs with i < j
    """
    vertices = _vertices_of(vertices)
    p, q = vertices[:-1], vertices[1:]
    lo, hi = np.minimum(p, q), np.maximum(p, q)
    index = np.arange(len(p))
    pairs = []
    for start in range(0, len(p), chunk):
        block = index[start:start + chunk]
        candidate = (
            (lo[block, None, 0] <= hi[None, :, 0]) & (hi[block, None, 0] >= lo[None, :, 0])
            & (lo[block, None, 1] <= hi[None, :, 1]) & (hi[block, None, 1] >= lo[None, :, 1])
            & (index[None, :] > block[:, None] + 1)
        )
        ii, jj = np.nonzero(candidate)
        ii = block[ii]
        d1 = _orientation(p[ii], q[ii], p[jj])
        d2 = _orientation(p[ii], q[ii], q[jj])
        d3 = _orientation(p[jj], q[jj], p[ii])
        d4 = _orientation(p[jj], q[jj], q[ii])
        proper = (d1 * d2 < 0) & (d3 * d4 < 0)
        pairs.extend(zip(ii[proper].tolist(), jj[proper].tolist()))
    return sorted(pairs)
