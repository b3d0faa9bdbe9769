"""Discrete Maupertuis functional and its minimization in a parity class.

A path u is a polyline on parameter times -1 = t_0 < ... < t_M = 1 with fixed
endpoints q- and q+. The functional is M(u) = K(u) P(u) with

    K(u) = sum_k |u_{k+1} - u_k|^2 / dt_k      (exact for piecewise-linear u)
    P(u) = quadrature of U along u.

A critical point rescaled by omega = sqrt(K / 2P), x(t) = u(t / omega), is a
zero-energy solution of x'' = grad U(x) on [-omega, omega].
"""
import logging
from collections import deque
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt
from scipy.integrate import trapezoid
from scipy.linalg import solveh_banded

from parashoot.homotopy import ARC_NODES, ParityClass, gray_codes, parity_class
from parashoot.integrator import Trajectory, assemble_trajectory
from parashoot.potentials import (
    ProblemConfig, SINGULAR_SCALE, centre_distances, eval_gradient, eval_potential
)
from parashoot.types.errors import (
    BarrierSaturatedError, ClassChangeError, ClassMismatchError,
    CoincidentEndpointsError, DegeneratePathError, DomainError,
    EndpointRadiusError, EnergyResidualError, IllConditionedWindingError,
    InadmissibleClassError, LineSearchError, MaxIterationsError, NoRoutingError,
    NodeTooCloseError, ParashootError, PointOnPathError, SingularityError
)

MIN_NODES = 8
ENDPOINT_RTOL = 1e-9

_GAUSS_POINTS, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(4)
_GAUSS_LAMBDA = 0.5 * (1.0 + _GAUSS_POINTS)
_GAUSS_SHARE = 0.5 * _GAUSS_WEIGHTS
# Segments closer to a centre than this many segment lengths get the 4-point rule
REFINE_FACTOR = 4.0

ARMIJO = 1e-4
# Curvature bound and relative f slack of the approximate Wolfe test
CURVATURE = 0.9
FLAT_RTOL = 1e-12
MIN_STEP = 1e-12
BARRIER_SHRINK = 10.0
MAX_PASSES = 4
LOG_EVERY = 100
# Nodes above this share of the energy tolerance get their segments split
SPLIT_SHARE = 0.25
SPLIT_SPREAD = 4

ARC_STEP = np.pi / 16.0
RESAMPLE_SUBSTEPS = 32


class MinimizeSettings(BaseModel):
    """Minimizer and discretization settings (the ``solver`` config section)."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    nodes: int = Field(default=256, ge=MIN_NODES)
    gradient_tolerance: PositiveFloat = 1e-8
    max_iterations: PositiveInt = 20000
    barrier_strength: PositiveFloat = 1e4
    barrier_radius: Optional[PositiveFloat] = None
    barrier_shrinks: int = Field(default=2, ge=0)
    step_shrink_on_class_change: bool = True
    memory: PositiveInt = 12
    energy_tolerance: PositiveFloat = 1e-3
    max_nodes: PositiveInt = 4096
    graded: bool = True
    restarts: int = Field(default=0, ge=0)
    arc_nodes: int = Field(default=ARC_NODES, ge=8)

    def resolved_barrier_radius(self, cfg: ProblemConfig) -> float:
        radius = self.barrier_radius
        if radius is None:
            radius = min(0.1, cfg.min_gap / 4.0)
        if radius >= cfg.min_gap / 2.0:
            raise DomainError(
                f"barrier_radius {radius} must stay below half the centre gap {cfg.min_gap}")
        return radius


@dataclass(frozen=True, eq=False)
class DiscretePath:
    nodes: np.ndarray
    times: Optional[np.ndarray] = None

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise DegeneratePathError(f"Nodes must have shape (M + 1, 2), got {nodes.shape}")
        if len(nodes) - 1 < MIN_NODES:
            raise DegeneratePathError(f"A path needs at least {MIN_NODES} segments")
        if not np.all(np.isfinite(nodes)):
            raise DegeneratePathError("Path has non-finite nodes")
        r_minus, r_plus = np.linalg.norm(nodes[0]), np.linalg.norm(nodes[-1])
        if abs(r_minus - r_plus) > ENDPOINT_RTOL * max(r_minus, r_plus):
            raise EndpointRadiusError(f"|q-| = {r_minus:.12g} differs from |q+| = {r_plus:.12g}")
        if np.linalg.norm(nodes[-1] - nodes[0]) <= ENDPOINT_RTOL * max(1.0, r_minus):
            raise CoincidentEndpointsError("q- and q+ coincide")

        if self.times is None:
            times = np.linspace(-1.0, 1.0, len(nodes))
        else:
            times = np.array(self.times, dtype=float)
            if times.shape != (len(nodes),):
                raise DegeneratePathError("One parameter time per node is required")
            if abs(times[0] + 1.0) > 1e-12 or abs(times[-1] - 1.0) > 1e-12:
                raise DegeneratePathError("Parameter times must run from -1 to 1")
            if np.any(np.diff(times) <= 0.0):
                raise DegeneratePathError("Parameter times must increase")
            times[0], times[-1] = -1.0, 1.0
        nodes.setflags(write=False)
        times.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "times", times)

    @classmethod
    def from_nodes(cls, nodes) -> "DiscretePath":
        """Path on the uniform grid t_k = -1 + 2k/M."""
        return cls(nodes)

    @property
    def node_count(self) -> int:
        return len(self.nodes) - 1

    @property
    def q_minus(self) -> np.ndarray:
        return self.nodes[0]

    @property
    def q_plus(self) -> np.ndarray:
        return self.nodes[-1]

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.times)

    def with_interior(self, interior) -> "DiscretePath":
        nodes = self.nodes.copy()
        nodes[1:-1] = np.asarray(interior, dtype=float).reshape(-1, 2)
        return DiscretePath(nodes, self.times)

    def __repr__(self):
        return f"<DiscretePath M={self.node_count} q-={self.q_minus.tolist()} q+={self.q_plus.tolist()}>"


@dataclass(frozen=True, eq=False)
class QuadraturePlan:
    """Segments integrated with the 4-point Gauss rule instead of the midpoint rule."""
    refined: np.ndarray

    def same_as(self, other: "QuadraturePlan") -> bool:
        return np.array_equal(self.refined, other.refined)


@dataclass(frozen=True, eq=False)
class MinimizeResult:
    path: DiscretePath
    value: float
    gradient_norm: float
    iterations: int
    evaluations: int
    class_rejections: int
    passes: int
    history: tuple[float, ...]
    barrier_radius: float = float("nan")


@dataclass(frozen=True, eq=False)
class BolzaSolution:
    path: DiscretePath
    omega: float
    action: float
    parity: ParityClass
    trajectory: Trajectory
    value: float
    identity_gap: float
    energy_residual: float
    gradient_norm: float = float("nan")
    iterations: int = 0
    restart_spread: float = 0.0
    time_shift: float = 0.0

    @property
    def q_minus(self) -> np.ndarray:
        return self.path.q_minus

    @property
    def q_plus(self) -> np.ndarray:
        return self.path.q_plus

    def __repr__(self):
        return f"<BolzaSolution omega={self.omega:.6g} action={self.action:.6g} parity={self.parity}>"


# Kernels on raw arrays

def _kinetic(nodes, dt):
    du = np.diff(nodes, axis=0)
    return float(np.sum(np.einsum("ki,ki->k", du, du) / dt))


def _kinetic_gradient(nodes, dt):
    v = np.diff(nodes, axis=0) / dt[:, None]
    grad = np.zeros_like(nodes)
    grad[:-1] -= 2.0 * v
    grad[1:] += 2.0 * v
    grad[0] = grad[-1] = 0.0
    return grad


def _plan(nodes, cfg):
    length = np.linalg.norm(np.diff(nodes, axis=0), axis=1)
    r = centre_distances(cfg, nodes)
    near = np.minimum(r[:-1], r[1:]).min(axis=1)
    return QuadraturePlan(near < REFINE_FACTOR * length)


def _potential(nodes, dt, cfg, plan, with_gradient=True):
    segments = np.arange(len(dt))
    coarse = segments[~plan.refined]
    fine = segments[plan.refined]
    seg = np.concatenate([coarse, np.repeat(fine, len(_GAUSS_LAMBDA))])
    lam = np.concatenate([np.full(coarse.size, 0.5), np.tile(_GAUSS_LAMBDA, fine.size)])
    weight = np.concatenate([np.ones(coarse.size), np.tile(_GAUSS_SHARE, fine.size)]) * dt[seg]
    points = (1.0 - lam)[:, None] * nodes[seg] + lam[:, None] * nodes[seg + 1]
    value = float(weight @ eval_potential(cfg, points))
    if not with_gradient:
        return value, None
    g = weight[:, None] * eval_gradient(cfg, points)
    grad = np.zeros_like(nodes)
    np.add.at(grad, seg, (1.0 - lam)[:, None] * g)
    np.add.at(grad, seg + 1, lam[:, None] * g)
    grad[0] = grad[-1] = 0.0
    return value, grad


def _barrier(nodes, cfg, strength, radius):
    d = nodes[1:-1, None, :] - cfg.positions[None, :, :]
    r = np.linalg.norm(d, axis=-1)
    depth = np.maximum(0.0, radius - r)
    grad = np.zeros_like(nodes)
    if not depth.any():
        return 0.0, grad
    scale = -2.0 * strength * depth / np.maximum(r, np.finfo(float).tiny)
    grad[1:-1] = np.sum(scale[..., None] * d, axis=1)
    return float(strength * np.sum(depth ** 2)), grad


# Functional

def plan_quadrature(path: DiscretePath, cfg: ProblemConfig) -> QuadraturePlan:
    return _plan(path.nodes, cfg)


def kinetic_integral(path: DiscretePath) -> float:
    return _kinetic(path.nodes, path.steps)


def potential_integral(path: DiscretePath, cfg: ProblemConfig,
                       plan: Optional[QuadraturePlan] = None,
                       clearance: Optional[float] = None) -> float:
    """
    Quadrature of U along the path.

    Midpoint rule per segment, 4-point Gauss-Legendre on segments whose
    endpoints come within four segment lengths of a centre.

    :param plan: Fixed refinement mask; computed from the path when omitted
    :param clearance: Minimum node distance to every centre
    """
    r = centre_distances(cfg, path.nodes).min(axis=1)
    limit = SINGULAR_SCALE * (1.0 + np.max(np.linalg.norm(cfg.positions, axis=1)))
    if clearance is not None:
        limit = max(limit, clearance)
    if np.any(r < limit):
        raise NodeTooCloseError(
            f"Node {int(np.argmin(r))} is {r.min():.3g} from a centre", distance=float(r.min()))
    plan = plan or plan_quadrature(path, cfg)
    return _potential(path.nodes, path.steps, cfg, plan, with_gradient=False)[0]


def maupertuis(path: DiscretePath, cfg: ProblemConfig,
               plan: Optional[QuadraturePlan] = None) -> float:
    return kinetic_integral(path) * potential_integral(path, cfg, plan)


def maupertuis_gradient(path: DiscretePath, cfg: ProblemConfig,
                        plan: Optional[QuadraturePlan] = None) -> np.ndarray:
    """Exact gradient P grad K + K grad P of the discrete functional; zero at the endpoints."""
    plan = plan or plan_quadrature(path, cfg)
    dt = path.steps
    kinetic = _kinetic(path.nodes, dt)
    potential, grad_p = _potential(path.nodes, dt, cfg, plan)
    return potential * _kinetic_gradient(path.nodes, dt) + kinetic * grad_p


def omega_of(path: DiscretePath, cfg: ProblemConfig,
             plan: Optional[QuadraturePlan] = None) -> float:
    kinetic = kinetic_integral(path)
    if kinetic <= np.finfo(float).eps * max(1.0, float(np.max(np.abs(path.nodes)))) ** 2:
        raise DegeneratePathError("Constant path has no time scale")
    return float(np.sqrt(kinetic / (2.0 * potential_integral(path, cfg, plan))))


# Discretization

def graded_times(nodes, cfg: ProblemConfig, graded: bool = True) -> np.ndarray:
    """
    Parameter times for a node sequence.

    Graded steps grow like rho^((2 + alpha) / 2), rho the distance to the
    nearest centre, which is the zero-energy time spent on a segment of
    length proportional to rho.
    """
    if not graded:
        return np.linspace(-1.0, 1.0, len(nodes))
    mid = 0.5 * (nodes[:-1] + nodes[1:])
    rho = centre_distances(cfg, mid).min(axis=1)
    dt = rho ** (0.5 * (2.0 + cfg.alpha))
    dt *= 2.0 / dt.sum()
    times = np.concatenate([[-1.0], -1.0 + np.cumsum(dt)])
    times[-1] = 1.0
    return times


def _allocate(measure, total):
    raw = measure / measure.sum() * total
    counts = np.maximum(1, np.floor(raw)).astype(int)
    deficit = total - counts.sum()
    if deficit > 0:
        counts[np.argsort(counts - raw)[:deficit]] += 1
    while counts.sum() > total:
        excess = np.where(counts > 1, counts - raw, -np.inf)
        counts[int(np.argmax(excess))] -= 1
    return counts


def path_from_polyline(vertices, cfg: ProblemConfig, nodes: int, graded: bool = True,
                       keep_vertices: bool = True) -> DiscretePath:
    """
    Place ``nodes`` segments along a polyline.

    Nodes equidistribute the measure ds / rho (graded) or ds (uniform).
    With ``keep_vertices`` every polyline vertex stays a node, so the result
    traces exactly the same curve.
    """
    vertices = np.asarray(vertices, dtype=float)
    keep = np.ones(len(vertices), dtype=bool)
    keep[1:] = np.any(np.diff(vertices, axis=0) != 0.0, axis=1)
    vertices = vertices[keep]
    edges = np.diff(vertices, axis=0)
    lengths = np.linalg.norm(edges, axis=1)
    s = np.linspace(0.0, 1.0, RESAMPLE_SUBSTEPS + 1)
    points = vertices[:-1, None, :] + s[None, :, None] * edges[:, None, :]
    if graded:
        density = 1.0 / centre_distances(cfg, points).min(axis=-1)
    else:
        density = np.ones(points.shape[:2])
    increments = 0.5 * (density[:, 1:] + density[:, :-1]) * (lengths / RESAMPLE_SUBSTEPS)[:, None]
    cumulative = np.concatenate([np.zeros((len(edges), 1)), np.cumsum(increments, axis=1)], axis=1)

    if keep_vertices:
        if len(edges) > nodes:
            logging.debug(f"Polyline has {len(edges)} edges, raising node count from {nodes}")
            nodes = len(edges)
        counts = _allocate(cumulative[:, -1], nodes)
        out = [vertices[:1]]
        for j, count in enumerate(counts):
            targets = cumulative[j, -1] * np.arange(1, count + 1) / count
            lam = np.interp(targets, cumulative[j], s)
            piece = vertices[j] + lam[:, None] * edges[j]
            piece[-1] = vertices[j + 1]
            out.append(piece)
        result = np.vstack(out)
    else:
        offsets = np.concatenate([[0.0], np.cumsum(cumulative[:, -1])[:-1]])
        flat_measure = np.concatenate(
            [cumulative[0]] + [cumulative[j, 1:] + offsets[j] for j in range(1, len(edges))])
        flat_points = np.concatenate(
            [points[0]] + [points[j, 1:] for j in range(1, len(edges))])
        targets = np.linspace(0.0, flat_measure[-1], nodes + 1)
        result = np.stack([np.interp(targets, flat_measure, flat_points[:, 0]),
                           np.interp(targets, flat_measure, flat_points[:, 1])], axis=1)
        result[0], result[-1] = vertices[0], vertices[-1]
    return DiscretePath(result, graded_times(result, cfg, graded))


def refine(path: DiscretePath, segments=None) -> DiscretePath:
    """
    Insert segment midpoints (nodes and times).

    :param segments: Boolean mask of the segments to split; without it every
        segment is split and the node count doubles
    """
    if segments is None:
        split = np.ones(path.node_count, dtype=bool)
    else:
        split = np.asarray(segments, dtype=bool)
        if split.shape != (path.node_count,):
            raise DegeneratePathError(f"Segment mask needs {path.node_count} entries, got {split.shape}")
    chosen = np.flatnonzero(split)
    # Midpoint of segment k lands between nodes k and k + 1
    order = np.argsort(np.concatenate([np.arange(path.node_count + 1), chosen + 0.5]),
                       kind="stable")
    nodes = np.vstack([path.nodes, 0.5 * (path.nodes[chosen] + path.nodes[chosen + 1])])
    times = np.concatenate([path.times, 0.5 * (path.times[chosen] + path.times[chosen + 1])])
    return DiscretePath(nodes[order], times[order])


def split_mask(residuals, tolerance: float) -> np.ndarray:
    """Segments within SPLIT_SPREAD of a node whose energy residual exceeds SPLIT_SHARE * tolerance."""
    hot = np.abs(np.asarray(residuals, dtype=float)) > SPLIT_SHARE * tolerance
    touched = (hot[:-1] | hot[1:]).astype(float)
    window = np.ones(2 * SPLIT_SPREAD + 1)
    return np.convolve(touched, window, mode="same") > 0.0


def regrade(path: DiscretePath, cfg: ProblemConfig, nodes: Optional[int] = None,
            graded: bool = True) -> DiscretePath:
    """Redistribute nodes along the path's own polyline."""
    return path_from_polyline(path.nodes, cfg, nodes or path.node_count, graded,
                              keep_vertices=False)


# Seeds

@dataclass(frozen=True)
class _RoutingFrame:
    axis: np.ndarray
    normal: np.ndarray
    half_width: float
    offset: float
    order: tuple[int, ...]


def _arc(radius, start_angle, end_angle):
    sweep = (end_angle - start_angle + np.pi) % (2.0 * np.pi) - np.pi
    count = max(1, int(np.ceil(abs(sweep) / ARC_STEP)))
    angles = start_angle + sweep * np.linspace(0.0, 1.0, count + 1)
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _routing_frames(q_minus, q_plus, cfg, barrier_radius, candidates=360, limit=12):
    """Diameters separating the centres' projections, cheapest detour first."""
    radius = float(np.linalg.norm(q_minus))
    angles = np.linspace(0.0, 2.0 * np.pi, candidates, endpoint=False)
    axes = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    projections = cfg.positions @ axes.T
    if cfg.n_centres > 1:
        gap = np.diff(np.sort(projections, axis=0), axis=0).min(axis=0)
    else:
        gap = np.full(candidates, 1.0)
    eligible = np.flatnonzero(gap >= 0.5 * gap.max())
    cost = (np.arccos(np.clip(-(axes @ q_minus) / radius, -1.0, 1.0))
            + np.arccos(np.clip((axes @ q_plus) / radius, -1.0, 1.0)))
    frames, taken = [], []
    spacing = 2.0 * np.pi / limit
    for best in eligible[np.argsort(cost[eligible], kind="stable")]:
        # Neighbouring candidates give the same routing
        if any(abs((angles[best] - a + np.pi) % (2.0 * np.pi) - np.pi) < 0.5 * spacing for a in taken):
            continue
        taken.append(angles[best])
        axis = axes[best]
        half_width = float(gap[best]) / 3.0
        frames.append(_RoutingFrame(
            axis=axis, normal=np.array([-axis[1], axis[0]]), half_width=half_width,
            offset=max(half_width, 2.0 * barrier_radius),
            order=tuple(int(i) for i in np.argsort(projections[:, best], kind="stable"))))
        if len(frames) == limit:
            break
    return frames


def polyline_clearance(vertices, cfg: ProblemConfig) -> float:
    """Smallest distance from a centre to any segment of the polyline."""
    vertices = np.asarray(vertices, dtype=float)
    start, edge = vertices[:-1], np.diff(vertices, axis=0)
    lengths = np.maximum(np.einsum("ki,ki->k", edge, edge), np.finfo(float).tiny)
    offsets = cfg.positions[:, None, :] - start[None]
    share = np.clip(np.einsum("cki,ki->ck", offsets, edge) / lengths, 0.0, 1.0)
    closest = start[None] + share[..., None] * edge[None]
    return float(np.linalg.norm(cfg.positions[:, None, :] - closest, axis=-1).min())


def _route(q_minus, q_plus, frame, cfg, sides):
    radius = float(np.linalg.norm(q_minus))
    p_minus, p_plus = -radius * frame.axis, radius * frame.axis
    lead = _arc(radius, np.arctan2(q_minus[1], q_minus[0]), np.arctan2(p_minus[1], p_minus[0]))
    tail = _arc(radius, np.arctan2(p_plus[1], p_plus[0]), np.arctan2(q_plus[1], q_plus[0]))
    lead[0], tail[-1] = q_minus, q_plus
    bars = []
    for i in frame.order:
        lift = cfg.positions[i] + sides[i] * frame.offset * frame.normal
        bars.append(lift - frame.half_width * frame.axis)
        bars.append(lift + frame.half_width * frame.axis)
    return np.vstack([lead, np.array(bars), tail])


def seed_path(q_minus, q_plus, target: ParityClass, cfg: ProblemConfig,
              settings: Optional[MinimizeSettings] = None,
              allow_inadmissible: bool = False) -> DiscretePath:
    """
    Polyline in the requested parity class.

    The path runs along the endpoint circle to a diameter chosen to separate
    the centres' projections, then passes each centre on the side its bit
    asks for. Flipping one side toggles exactly that centre's parity, so the
    sides are read off a reference routing; Gray-code side flips are the
    fallback.
    """
    settings = settings or MinimizeSettings()
    q_minus = np.asarray(q_minus, dtype=float)
    q_plus = np.asarray(q_plus, dtype=float)
    _check_target(target, cfg, allow_inadmissible)
    radius = float(np.linalg.norm(q_minus))
    if radius <= cfg.reach + 1.0:
        raise DomainError(f"Endpoint radius {radius:.6g} does not clear the centres")
    barrier_radius = settings.resolved_barrier_radius(cfg)

    for frame in _routing_frames(q_minus, q_plus, cfg, barrier_radius):
        reference = np.full(cfg.n_centres, -1)
        try:
            base = parity_class(_route(q_minus, q_plus, frame, cfg, reference), cfg,
                                settings.arc_nodes)
        except (PointOnPathError, IllConditionedWindingError):
            continue
        flips = np.array(target.bits) ^ np.array(base.bits)
        attempts = [np.where(flips, 1, -1)] + [np.where(np.array(g), 1, -1)
                                               for g in gray_codes(cfg.n_centres)]
        for sides in attempts:
            vertices = _route(q_minus, q_plus, frame, cfg, sides)
            clearance = polyline_clearance(vertices, cfg)
            if clearance <= barrier_radius:
                logging.debug(f"Routing passes {clearance:.3g} from a centre; trying another")
                continue
            try:
                if parity_class(vertices, cfg, settings.arc_nodes) != target:
                    continue
            except (PointOnPathError, IllConditionedWindingError):
                continue
            path = path_from_polyline(vertices, cfg, settings.nodes, settings.graded)
            logging.debug(f"Seed for class {target} with sides {sides.tolist()}, "
                          f"clearance {clearance:.3g}")
            return path
    raise NoRoutingError(f"No routing realizes class {target}", bits=list(target.bits))


def perturb(path: DiscretePath, cfg: ProblemConfig, rng: np.random.Generator,
            scale: float = 0.2, modes: int = 4, attempts: int = 8,
            arc_nodes: int = ARC_NODES) -> DiscretePath:
    """Smooth random deformation of the interior that keeps the parity class."""
    target = parity_class(path, cfg, arc_nodes)
    rho = centre_distances(cfg, path.nodes).min(axis=1)[1:-1]
    phase = 0.5 * (path.times[1:-1] + 1.0)
    basis = np.stack([np.sin((k + 1) * np.pi * phase) for k in range(modes)], axis=1)
    for _ in range(attempts):
        coefficients = rng.normal(size=(modes, 2))
        shift = (basis @ coefficients) * (scale * rho)[:, None] / np.sqrt(modes)
        candidate = path.with_interior(path.nodes[1:-1] + shift)
        try:
            if parity_class(candidate, cfg, arc_nodes) == target:
                return candidate
        except ParashootError:
            continue
        scale *= 0.5
    return path


# Minimization

def _check_target(target, cfg, allow_inadmissible):
    if len(target.bits) != cfg.n_centres:
        raise ClassMismatchError(
            f"Class {target} has {len(target.bits)} bits for {cfg.n_centres} centres")
    if not target.admissible and not allow_inadmissible:
        raise InadmissibleClassError(f"Class {target} does not separate any two centres",
                                     bits=list(target.bits))


def keeps_class(nodes, target: ParityClass, cfg: ProblemConfig, arc_nodes: int = ARC_NODES) -> bool:
    """Whether a polyline is in ``target``; a path through a centre belongs to no class."""
    try:
        return parity_class(nodes, cfg, arc_nodes) == target
    except (PointOnPathError, IllConditionedWindingError):
        return False


def _laplacian_bands(dt):
    inv = 1.0 / dt
    bands = np.zeros((2, len(dt) - 1))
    bands[1] = inv[:-1] + inv[1:]
    bands[0, 1:] = -inv[1:-1]
    return bands


def _descend(path, target, cfg, settings, plan, radius):
    dt = path.steps
    bands = _laplacian_bands(dt)
    strength = settings.barrier_strength

    def evaluate(x):
        nodes = path.nodes.copy()
        nodes[1:-1] = x.reshape(-1, 2)
        kinetic = _kinetic(nodes, dt)
        potential, grad_p = _potential(nodes, dt, cfg, plan)
        penalty, grad_b = _barrier(nodes, cfg, strength, radius)
        grad = potential * _kinetic_gradient(nodes, dt) + kinetic * grad_p + grad_b
        return kinetic * potential + penalty, grad[1:-1].ravel(), potential

    def precondition(v, potential):
        z = solveh_banded(bands, v.reshape(-1, 2))
        return z.ravel() / (2.0 * potential)

    def in_class(x):
        nodes = path.nodes.copy()
        nodes[1:-1] = x.reshape(-1, 2)
        return keeps_class(nodes, target, cfg, settings.arc_nodes)

    x = path.nodes[1:-1].ravel().copy()
    f, g, potential = evaluate(x)
    memory = deque(maxlen=settings.memory)
    history = [f]
    iterations, evaluations, rejections = 0, 1, 0

    while True:
        gnorm = float(np.linalg.norm(g))
        threshold = settings.gradient_tolerance * (1.0 + abs(f))
        if gnorm <= threshold:
            break
        if iterations >= settings.max_iterations:
            raise MaxIterationsError(
                f"No convergence after {iterations} iterations (|g| = {gnorm:.3g})",
                gradient_norm=gnorm, iterations=iterations)

        # Two-loop recursion with the kinetic Hessian as initial inverse
        q = g.copy()
        alphas = []
        for s, y, rho in reversed(memory):
            a = rho * (s @ q)
            q -= a * y
            alphas.append(a)
        r = precondition(q, potential)
        if memory:
            s, y, _ = memory[-1]
            r *= (s @ y) / (y @ precondition(y, potential))
        for (s, y, rho), a in zip(memory, reversed(alphas)):
            b = rho * (y @ r)
            r += s * (a - b)
        direction = -r
        slope = float(g @ direction)
        if slope >= 0.0:
            memory.clear()
            direction = -precondition(g, potential)
            slope = float(g @ direction)

        step, flipped, accepted = 1.0, False, False
        while step >= MIN_STEP:
            trial = x + step * direction
            try:
                f_trial, g_trial, p_trial = evaluate(trial)
            except SingularityError:
                step *= 0.5
                continue
            evaluations += 1
            if not np.isfinite(f_trial) or not np.all(np.isfinite(g_trial)):
                step *= 0.5
                continue
            if f_trial > f + ARMIJO * step * slope + 1e-14 * abs(f):
                # Near the minimum f changes below its rounding; judge the step by its slope
                slope_trial = float(g_trial @ direction)
                flat = f_trial <= f + FLAT_RTOL * abs(f)
                if not (flat and CURVATURE * slope <= slope_trial <= (2.0 * ARMIJO - 1.0) * slope):
                    flipped = False
                    step *= 0.5
                    continue
            if not in_class(trial):
                rejections += 1
                if not settings.step_shrink_on_class_change:
                    raise ClassChangeError(f"Step left class {target}", iterations=iterations)
                logging.warning(f"Step {step:.3g} left class {target}, shrinking")
                flipped = True
                step *= 0.5
                continue
            accepted = True
            break

        if not accepted:
            if flipped:
                raise ClassChangeError(
                    f"Every step down to {MIN_STEP} leaves class {target}", iterations=iterations)
            if memory:
                logging.warning(
                    f"Line search stalled at |g| = {gnorm:.3g}; restarting from the preconditioned gradient")
                memory.clear()
                continue
            raise LineSearchError(f"Line search stalled at |g| = {gnorm:.3g}",
                                  gradient_norm=gnorm, iterations=iterations)

        s = trial - x
        y = g_trial - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            memory.append((s, y, 1.0 / sy))
        x, f, g, potential = trial, f_trial, g_trial, p_trial
        history.append(f)
        iterations += 1
        if iterations % LOG_EVERY == 0:
            logging.debug(f"Iteration {iterations}: M = {f:.12g}, |g| = {gnorm:.3g}")

    return MinimizeResult(
        path=path.with_interior(x), value=f, gradient_norm=float(np.linalg.norm(g)),
        iterations=iterations, evaluations=evaluations, class_rejections=rejections,
        passes=1, history=tuple(history))


def minimize_in_class(seed: DiscretePath, target: ParityClass, cfg: ProblemConfig,
                      settings: Optional[MinimizeSettings] = None,
                      allow_inadmissible: bool = False) -> MinimizeResult:
    """
    Local minimizer of M inside the parity class of ``seed``.

    L-BFGS with backtracking Armijo steps; the quadrature plan is frozen for
    each pass and passes repeat until it stops changing. A step that changes
    the parity class is halved until it keeps the class.

    :param seed: Starting path, already in ``target``
    :param allow_inadmissible: Accept classes where all bits agree (single-centre problems)

    :return: MinimizeResult whose ``path`` is the minimizer
    """
    settings = settings or MinimizeSettings()
    _check_target(target, cfg, allow_inadmissible)
    start = parity_class(seed, cfg, settings.arc_nodes)
    if start != target:
        raise ClassMismatchError(f"Seed is in class {start}, not {target}")
    radius = settings.resolved_barrier_radius(cfg)

    path = seed
    iterations, evaluations, rejections, passes = 0, 0, 0, 0
    history = []
    for shrinks in range(settings.barrier_shrinks + 1):
        for _ in range(MAX_PASSES):
            plan = plan_quadrature(path, cfg)
            result = _descend(path, target, cfg, settings, plan, radius)
            path = result.path
            passes += 1
            iterations += result.iterations
            evaluations += result.evaluations
            rejections += result.class_rejections
            history.extend(result.history)
            if plan_quadrature(path, cfg).same_as(plan):
                break
        distances = centre_distances(cfg, path.nodes[1:-1])
        if not np.any(distances < radius):
            break
        if shrinks == settings.barrier_shrinks:
            raise BarrierSaturatedError(
                f"Minimizer rests {distances.min():.3g} from a centre, inside the barrier radius {radius:.3g}",
                distance=float(distances.min()))
        logging.warning(f"Minimizer rests {distances.min():.3g} from a centre; "
                        f"shrinking the barrier radius to {radius / BARRIER_SHRINK:.3g}")
        radius /= BARRIER_SHRINK

    logging.info(
        f"Class {target}: M = {result.value:.12g} after {iterations} iterations, {passes} passes")
    return replace(result, iterations=iterations, evaluations=evaluations,
                   class_rejections=rejections, passes=passes, history=tuple(history),
                   barrier_radius=radius)


def _rescale(path, cfg, plan):
    omega = omega_of(path, cfg, plan)
    times = omega * path.times
    velocities = np.gradient(path.nodes, times, axis=0, edge_order=2)
    potential_at = eval_potential(cfg, path.nodes)
    residuals = 0.5 * np.sum(velocities ** 2, axis=1) - potential_at
    return omega, times, velocities, potential_at, residuals


def energy_residuals(path: DiscretePath, cfg: ProblemConfig) -> np.ndarray:
    """|v^2/2 - U| / max U at each node of the rescaled path."""
    _, _, _, potential_at, residuals = _rescale(path, cfg, plan_quadrature(path, cfg))
    return np.abs(residuals) / potential_at.max()


def to_trajectory(path: DiscretePath, cfg: ProblemConfig, energy_tolerance: float = 1e-3,
                  arc_nodes: int = ARC_NODES) -> BolzaSolution:
    """
    Rescale a minimizer to the zero-energy trajectory x(t) = u(t / omega).

    Velocities come from second-order differences on the rescaled times. The
    action is the trapezoid integral of v^2/2 + U over the samples, so
    ``identity_gap`` compares it with the discrete sqrt(2 M).

    :raises EnergyResidualError: when max |v^2/2 - U| exceeds
        ``energy_tolerance`` * max U
    """
    plan = plan_quadrature(path, cfg)
    kinetic = kinetic_integral(path)
    potential = potential_integral(path, cfg, plan)
    omega, times, velocities, potential_at, residuals = _rescale(path, cfg, plan)
    worst = float(np.abs(residuals).max() / potential_at.max())
    if worst > energy_tolerance:
        raise EnergyResidualError(
            f"Energy residual {worst:.3g} of max U at M = {path.node_count}",
            residual=worst, nodes=path.node_count)

    value = kinetic * potential
    action = trapezoid(0.5 * np.sum(velocities ** 2, axis=1) + potential_at, times)
    gap = abs(action / np.sqrt(2.0) - np.sqrt(value)) / np.sqrt(value)
    trajectory = assemble_trajectory(times, path.nodes.copy(), velocities, cfg, residuals)
    return BolzaSolution(
        path=path, omega=omega, action=float(action),
        parity=parity_class(path, cfg, arc_nodes), trajectory=trajectory,
        value=float(value), identity_gap=float(gap), energy_residual=worst)


def solve_bolza(q_minus, q_plus, target: ParityClass, cfg: ProblemConfig,
                settings: Optional[MinimizeSettings] = None,
                warm: Optional[DiscretePath] = None,
                rng: Optional[np.random.Generator] = None,
                allow_inadmissible: bool = False) -> BolzaSolution:
    """
    Seed, minimize and rescale. While the zero-energy residual is too large,
    segments around the offending nodes are split and the path is minimized again.

    :param warm: Starting path used instead of a fresh seed when it lies in ``target``
    :param rng: Source of the restart perturbations (``settings.restarts``)
    """
    settings = settings or MinimizeSettings()
    start = None
    if warm is not None:
        if parity_class(warm, cfg, settings.arc_nodes) == target:
            start = warm
        else:
            logging.warning(f"Warm path is not in class {target}; seeding afresh")
    if start is None:
        start = seed_path(q_minus, q_plus, target, cfg, settings, allow_inadmissible)

    result = minimize_in_class(start, target, cfg, settings, allow_inadmissible)
    iterations = result.iterations
    values = [result.value]
    if settings.restarts:
        rng = rng if rng is not None else np.random.default_rng(0)
        for k in range(settings.restarts):
            trial_seed = perturb(start, cfg, rng, arc_nodes=settings.arc_nodes)
            try:
                trial = minimize_in_class(trial_seed, target, cfg, settings, allow_inadmissible)
            except ParashootError as e:
                logging.warning(f"Restart {k + 1} failed: {e.code}: {e}")
                continue
            iterations += trial.iterations
            values.append(trial.value)
            if trial.value < result.value:
                result = trial
    spread = float(max(values) - min(values))
    if spread > 1e-4 * abs(min(values)):
        logging.warning(f"Restarts disagree in class {target}: M spread {spread:.3g}")

    while True:
        try:
            solution = to_trajectory(result.path, cfg, settings.energy_tolerance, settings.arc_nodes)
            break
        except EnergyResidualError as e:
            split = split_mask(energy_residuals(result.path, cfg), settings.energy_tolerance)
            if result.path.node_count + int(split.sum()) > settings.max_nodes:
                raise
            logging.info(f"{e}; splitting {int(split.sum())} of {result.path.node_count} segments")
            result = minimize_in_class(refine(result.path, split), target, cfg, settings,
                                       allow_inadmissible)
            iterations += result.iterations
    return replace(solution, gradient_norm=result.gradient_norm, iterations=iterations,
                   restart_spread=spread)
