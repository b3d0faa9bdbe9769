"""Entire parabolic solutions as limits of Bolza solutions on growing circles.

Endpoints q± = R xi± are pushed out along a radius schedule, each solve
warm-started from the previous minimizer extended radially. Solutions are
time-centred on their K-ring crossings and compared on a fixed window.
The largest-R solution, extended by integrating its tails, stands in for the
entire solution in the asymptotic checks.
"""
import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import quad, trapezoid

from parashoot.homotopy import (
    Partition, ParityClass, crossing_pairs, parity_class, partition_to_class, separates
)
from parashoot.integrator import (
    State, Trajectory, concatenate, crossing_kinds, integrate_cartesian
)
from parashoot.potentials import Centre, ProblemConfig, eval_potential
from parashoot.types.enums import CrossingKind
from parashoot.types.errors import (
    DomainError, InsufficientDataError, InsufficientSpanError, ParashootError,
    RingCrossingError, ScheduleError, TailTooShortError, WindowTooShortError
)
from parashoot.variational import (
    BolzaSolution, DiscretePath, MinimizeSettings, path_from_polyline, solve_bolza
)

WINDOW_SAMPLES = 401
ACTION_SAMPLES = 2001
FIT_SAMPLES = 200
EXTENSION_NODES = 24
# Deviations below K times the larger of NOISE_FLOOR and the two solutions'
# energy residuals count as converged regardless of trend
NOISE_FLOOR = 1e-6
KEPLER_BUDGET = 1e-6


@dataclass(frozen=True, eq=False)
class ScatteringProblem:
    dir_minus: np.ndarray
    dir_plus: np.ndarray
    partition: Partition
    cfg: ProblemConfig

    def __post_init__(self):
        for name in ("dir_minus", "dir_plus"):
            v = np.array(getattr(self, name), dtype=float).reshape(2)
            if abs(np.linalg.norm(v) - 1.0) > 1e-9:
                raise DomainError(f"{name} must be a unit vector, got {v.tolist()}")
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if np.linalg.norm(self.dir_minus - self.dir_plus) <= 1e-12:
            raise DomainError("Asymptotic directions must differ")
        self.partition.validate(self.cfg.n_centres)

    @classmethod
    def from_angles(cls, theta_minus: float, theta_plus: float, partition: Partition,
                    cfg: ProblemConfig) -> "ScatteringProblem":
        return cls(np.array([np.cos(theta_minus), np.sin(theta_minus)]),
                   np.array([np.cos(theta_plus), np.sin(theta_plus)]), partition, cfg)

    @property
    def target(self) -> ParityClass:
        return partition_to_class(self.partition, self.cfg.n_centres)

    @property
    def scattering_angle(self) -> float:
        """Angle from xi- to xi+ in [0, pi]."""
        return float(np.arccos(np.clip(self.dir_minus @ self.dir_plus, -1.0, 1.0)))

    def endpoints(self, radius: float) -> tuple[np.ndarray, np.ndarray]:
        return radius * self.dir_minus, radius * self.dir_plus

    def __repr__(self):
        return (f"<ScatteringProblem xi-={self.dir_minus.tolist()} "
                f"xi+={self.dir_plus.tolist()} P={self.partition}>")


@dataclass(frozen=True, eq=False)
class ContinuationResult:
    radii: tuple[float, ...]
    solutions: tuple[BolzaSolution, ...]
    window: tuple[float, float]
    sup_deviations: tuple[float, ...]
    inside_actions: tuple[float, ...]
    separated: tuple[bool, ...]
    converged: bool


@dataclass(frozen=True)
class AsymptoticFit:
    exponent: float
    coefficient: float
    fit_window: tuple[float, float]
    residual: float


@dataclass(frozen=True, eq=False)
class AsymptoticDirections:
    minus: np.ndarray
    plus: np.ndarray
    angle_error_minus: float
    angle_error_plus: float
    # None when the tail is radial (no angular motion to fit)
    decay_minus: Optional[AsymptoticFit]
    decay_plus: Optional[AsymptoticFit]


@dataclass(frozen=True)
class ActionScaling:
    coefficient: float
    offset: float
    exponent: float
    residual: float
    target: float

    @property
    def relative_error(self) -> float:
        return abs(self.coefficient - self.target) / self.target


@dataclass(frozen=True)
class CollapseRow:
    eps: float
    deviation: float
    energy_residual: float


@dataclass(frozen=True)
class CollapseTable:
    rows: tuple[CollapseRow, ...]

    @property
    def decreasing(self) -> bool:
        """Deviation falls strictly as eps shrinks."""
        ordered = sorted(self.rows, key=lambda row: -row.eps)
        return all(b.deviation < a.deviation for a, b in zip(ordered, ordered[1:]))


def radius_law_coefficient(alpha: float, mass: float) -> float:
    return float((np.sqrt(mass / (2.0 * alpha)) * (2.0 + alpha)) ** (2.0 / (2.0 + alpha)))


def action_coefficient(alpha: float, mass: float) -> float:
    return float(np.sqrt(2.0 * mass / alpha) * 4.0 / (2.0 - alpha))


def default_schedule(cfg: ProblemConfig) -> tuple[float, ...]:
    return tuple(cfg.ring_radius * k for k in (4.0, 8.0, 16.0, 32.0))


def extend_radially(warm: DiscretePath, radius: float, prob: ScatteringProblem,
                    nodes: int, graded: bool = True) -> Optional[DiscretePath]:
    """
    Push the endpoints of ``warm`` out to ``radius`` along xi-/xi+.

    :return: The extended path resampled to ``nodes`` segments, or None when
        the extension does not keep the target class
    """
    cfg = prob.cfg
    inner = float(np.linalg.norm(warm.q_minus))
    if radius < inner:
        raise DomainError(f"Cannot extend a path at radius {inner:.6g} inwards to {radius:.6g}")
    if np.linalg.norm(warm.q_minus / inner - prob.dir_minus) > 1e-9 \
            or np.linalg.norm(warm.q_plus / inner - prob.dir_plus) > 1e-9:
        raise DomainError("Warm path endpoints do not lie on the problem's directions")
    if radius == inner:
        return warm
    radial = np.geomspace(radius, inner, EXTENSION_NODES)[:-1]
    lead = radial[:, None] * prob.dir_minus
    tail = radial[::-1, None] * prob.dir_plus
    vertices = np.vstack([lead, warm.nodes, tail])
    path = path_from_polyline(vertices, cfg, max(nodes, warm.node_count), graded,
                              keep_vertices=False)
    try:
        if parity_class(path, cfg) == prob.target:
            return path
    except ParashootError as e:
        logging.warning(f"Radial extension to R={radius:.6g} is ill-posed: {e}")
        return None
    logging.warning(f"Radial extension to R={radius:.6g} changed the class; seeding afresh")
    return None


def time_centre(sol: BolzaSolution) -> BolzaSolution:
    """Shift time so that the two K-ring crossings sit at -t+ and t+."""
    crossings = sol.trajectory.ring_crossings
    kinds = crossing_kinds(sol.trajectory)
    if len(crossings) != 2 or kinds != [CrossingKind.INBOUND, CrossingKind.OUTBOUND]:
        raise RingCrossingError(
            f"Expected one inbound and one outbound ring crossing, found {len(crossings)}",
            crossings=list(crossings))
    shift = -0.5 * (crossings[0] + crossings[1])
    return replace(sol, trajectory=sol.trajectory.shifted(shift), time_shift=sol.time_shift + shift)


def solve_bolza_at(radius: float, prob: ScatteringProblem, warm: Optional[DiscretePath] = None,
                   settings: Optional[MinimizeSettings] = None,
                   rng: Optional[np.random.Generator] = None) -> BolzaSolution:
    """
    Bolza solution with q± = R xi±, time-centred on its ring crossings.

    :param warm: Minimizer at a smaller (or the same) radius, extended radially
    """
    cfg = prob.cfg
    settings = settings or MinimizeSettings()
    if radius <= cfg.ring_radius:
        raise DomainError(f"R = {radius:.6g} must exceed the ring radius {cfg.ring_radius:.6g}")
    q_minus, q_plus = prob.endpoints(radius)
    start = None
    if warm is not None:
        start = extend_radially(warm, radius, prob, settings.nodes, settings.graded)
    sol = solve_bolza(q_minus, q_plus, prob.target, cfg, settings, warm=start, rng=rng)
    sol = time_centre(sol)
    logging.info(f"R={radius:.6g}: omega={sol.omega:.6g}, A={sol.action:.12g}, "
                 f"{sol.iterations} iterations")
    return sol


def inside_ring_action(traj: Trajectory, t_minus: float, t_plus: float,
                       cfg: ProblemConfig, samples: int = ACTION_SAMPLES) -> float:
    """Action integral of |v|^2/2 + U over [t-, t+], on the dense interpolant."""
    spline = traj.dense()
    t = np.linspace(t_minus, t_plus, samples)
    v = spline(t, 1)
    integrand = 0.5 * np.sum(v ** 2, axis=1) + eval_potential(cfg, spline(t))
    return float(trapezoid(integrand, t))


def window_deviation(a: Trajectory, b: Trajectory, half_width: float,
                     samples: int = WINDOW_SAMPLES) -> float:
    """Sup-norm distance between two trajectories on [-T_w, T_w]."""
    for traj in (a, b):
        if traj.times[0] > -half_width or traj.times[-1] < half_width:
            raise WindowTooShortError(
                f"Trajectory on [{traj.times[0]:.6g}, {traj.times[-1]:.6g}] "
                f"does not cover [-{half_width:.6g}, {half_width:.6g}]")
    t = np.linspace(-half_width, half_width, samples)
    return float(np.max(np.linalg.norm(a.dense()(t) - b.dense()(t), axis=1)))


def noise_floors(solutions: Sequence[BolzaSolution], cfg: ProblemConfig) -> tuple[float, ...]:
    """Discretization noise level of each window deviation between neighbouring solutions."""
    return tuple(
        cfg.ring_radius * max(NOISE_FLOOR, a.energy_residual, b.energy_residual)
        for a, b in zip(solutions, solutions[1:]))


def deviations_settle(deviations: Sequence[float], floors: Sequence[float]) -> bool:
    """The last (up to three) deviations do not grow, except by steps under their noise floor."""
    if len(deviations) < 2:
        return False
    last = tuple(zip(deviations, floors))[-3:]
    return all(b <= a or b <= floor for (a, _), (b, floor) in zip(last, last[1:]))


def continue_in_radius(prob: ScatteringProblem, schedule: Optional[Sequence[float]] = None,
                       settings: Optional[MinimizeSettings] = None,
                       rng: Optional[np.random.Generator] = None) -> ContinuationResult:
    """
    Chain of warm-started Bolza solves along an increasing radius schedule.

    The window half-width is half the shortest time any solution spends
    inside the ring. The run counts as converged when the last (up to three)
    window deviations do not increase, or an increase stays below the
    discretization noise of the two solutions involved.
    """
    cfg = prob.cfg
    schedule = tuple(float(r) for r in (schedule or default_schedule(cfg)))
    if not schedule or any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ScheduleError(f"Radius schedule must increase: {schedule}")
    if schedule[0] <= 2.0 * cfg.ring_radius:
        raise ScheduleError(
            f"First radius {schedule[0]:.6g} must exceed twice the ring radius {cfg.ring_radius:.6g}")

    solutions = []
    warm = None
    for radius in schedule:
        sol = solve_bolza_at(radius, prob, warm, settings, rng)
        solutions.append(sol)
        warm = sol.path

    crossings = [s.trajectory.ring_crossings for s in solutions]
    half_width = 0.5 * min(c[1] - c[0] for c in crossings)
    deviations = tuple(
        window_deviation(a.trajectory, b.trajectory, half_width)
        for a, b in zip(solutions, solutions[1:]))
    actions = tuple(
        inside_ring_action(s.trajectory, c[0], c[1], cfg) for s, c in zip(solutions, crossings))
    separated = tuple(separates(s.path, prob.partition, cfg) for s in solutions)

    converged = deviations_settle(deviations, noise_floors(solutions, cfg))
    if not converged:
        logging.warning(f"Continuation deviations {deviations} are not settling")
    if not all(separated):
        logging.error(f"Solutions at radii {schedule} separate the partition: {separated}")
    return ContinuationResult(
        radii=schedule, solutions=tuple(solutions), window=(-half_width, half_width),
        sup_deviations=deviations, inside_actions=actions, separated=separated,
        converged=converged)


def extend_tails(sol: BolzaSolution, cfg: ProblemConfig, extent: float = 1e5,
                 tol: float = 1e-10) -> Trajectory:
    """
    Continue a Bolza solution outward from both endpoints to |t| = extent.

    Endpoint speeds are reset to the zero-energy value sqrt(2U) before
    integrating, keeping the direction of motion.
    """
    core = sol.trajectory
    t0, t1 = core.span
    if extent <= max(abs(t0), abs(t1)):
        raise TailTooShortError(f"Extent {extent:.6g} does not reach past the Bolza interval")

    def launch(index, t):
        x = core.positions[index]
        v = core.velocities[index]
        speed = np.sqrt(2.0 * float(eval_potential(cfg, x)))
        return State(t, x, speed * v / np.linalg.norm(v))

    forward = integrate_cartesian(launch(-1, t1), extent, tol, cfg)
    backward = integrate_cartesian(launch(0, t0), -extent, tol, cfg)
    return concatenate([backward, core, forward], cfg)


def _tail_samples(traj: Trajectory, side: int, t_lo: Optional[float], t_hi: Optional[float],
                  decades: float):
    times = side * traj.times
    end = float(times.max())
    t_hi = end if t_hi is None else t_hi
    t_lo = t_hi / 10.0 ** decades if t_lo is None else t_lo
    if t_lo <= 0.0 or t_hi > end or t_hi / t_lo < 10.0 * (1.0 - 1e-12):
        raise InsufficientSpanError(
            f"Fit window [{t_lo:.6g}, {t_hi:.6g}] needs a decade of t within (0, {end:.6g}]")
    t = np.geomspace(t_lo, t_hi, FIT_SAMPLES)
    spline = traj.dense()
    return t, spline(side * t), spline(side * t, 1) * side


def fit_radius_law(traj: Trajectory, t_lo: Optional[float] = None, t_hi: Optional[float] = None,
                   side: int = 1) -> AsymptoticFit:
    """
    Least-squares fit of log r against log |t| on a tail.

    :param side: 1 for the forward tail, -1 for the backward one
    :param t_lo: Defaults to a decade below ``t_hi``
    :param t_hi: Defaults to the end of the tail
    """
    t, x, _ = _tail_samples(traj, side, t_lo, t_hi, decades=1.0)
    r = np.linalg.norm(x, axis=1)
    (exponent, intercept), residuals, *_ = np.polyfit(np.log(t), np.log(r), 1, full=True)
    residual = float(np.sqrt(residuals[0] / len(t))) if len(residuals) else 0.0
    return AsymptoticFit(exponent=float(exponent), coefficient=float(np.exp(intercept)),
                         fit_window=(float(t[0]), float(t[-1])), residual=residual)


def _angular_decay(traj: Trajectory, side: int) -> Optional[AsymptoticFit]:
    t, x, v = _tail_samples(traj, side, None, None, decades=2.0)
    r2 = np.sum(x ** 2, axis=1)
    momentum = np.abs(x[:, 0] * v[:, 1] - x[:, 1] * v[:, 0])
    if np.all(momentum <= 1e-12 * np.sqrt(r2) * np.linalg.norm(v, axis=1)):
        return None
    rate = momentum / r2
    (exponent, intercept), residuals, *_ = np.polyfit(np.log(t), np.log(rate), 1, full=True)
    residual = float(np.sqrt(residuals[0] / len(t))) if len(residuals) else 0.0
    return AsymptoticFit(exponent=float(-exponent), coefficient=float(np.exp(intercept)),
                         fit_window=(float(t[0]), float(t[-1])), residual=residual)


def asymptotic_directions(sol: BolzaSolution, prob: ScatteringProblem,
                          tails: Optional[Trajectory] = None, extent: float = 1e5,
                          tol: float = 1e-10) -> AsymptoticDirections:
    """
    Directions x/|x| at the ends of the extended solution, their angles to
    xi-/xi+, and the decay rate of |ds/dt| = |x ^ v| / r^2 on each tail.

    :param tails: Already extended trajectory; computed with ``extend_tails`` when omitted
    """
    cfg = prob.cfg
    traj = tails if tails is not None else extend_tails(sol, cfg, extent, tol)
    radii = traj.radii
    if radii[0] <= cfg.ring_radius or radii[-1] <= cfg.ring_radius:
        raise TailTooShortError("Trajectory ends inside the ring")
    if traj.times[-1] < 100.0 * abs(sol.trajectory.times[-1]) \
            or -traj.times[0] < 100.0 * abs(sol.trajectory.times[0]):
        raise TailTooShortError("Tails must run two decades of t past the Bolza interval")
    minus = traj.positions[0] / radii[0]
    plus = traj.positions[-1] / radii[-1]

    def angle(a, b):
        return float(np.arccos(np.clip(a @ b, -1.0, 1.0)))

    return AsymptoticDirections(
        minus=minus, plus=plus,
        angle_error_minus=angle(minus, prob.dir_minus),
        angle_error_plus=angle(plus, prob.dir_plus),
        decay_minus=_angular_decay(traj, -1), decay_plus=_angular_decay(traj, 1))


def action_scaling(result: ContinuationResult, cfg: ProblemConfig) -> ActionScaling:
    """Fit the total Bolza actions against c R^(1 - alpha/2) + d."""
    if len(result.radii) < 4:
        raise InsufficientDataError(f"Action scaling needs four radii, got {len(result.radii)}")
    exponent = 1.0 - 0.5 * cfg.alpha
    radii = np.array(result.radii)
    actions = np.array([s.action for s in result.solutions])
    design = np.stack([radii ** exponent, np.ones_like(radii)], axis=1)
    (coefficient, offset), *_ = np.linalg.lstsq(design, actions, rcond=None)
    residual = float(np.sqrt(np.mean((design @ np.array([coefficient, offset]) - actions) ** 2)))
    return ActionScaling(coefficient=float(coefficient), offset=float(offset), exponent=exponent,
                         residual=residual, target=action_coefficient(cfg.alpha, cfg.far_mass))


def rectilinear_limit(t, alpha: float, mass: float, dir_minus, dir_plus) -> np.ndarray:
    """Collapsed limit: coef |t|^(2/(2+alpha)) along xi- for t < 0, xi+ for t > 0."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    r = radius_law_coefficient(alpha, mass) * np.abs(t) ** (2.0 / (2.0 + alpha))
    direction = np.where((t < 0.0)[:, None], np.asarray(dir_minus)[None, :],
                         np.asarray(dir_plus)[None, :])
    return r[:, None] * direction


def collapse_experiment(traj: Trajectory, prob: ScatteringProblem, eps_list: Sequence[float],
                        probe_times=None, probe_count: int = 10) -> CollapseTable:
    """
    Compare y_eps(t) = eps x(t / eps^((2+alpha)/2)) with the rectilinear limit.

    :param traj: Entire-solution surrogate (extended tails)
    :param probe_times: Defaults to ``probe_count + 1`` points evenly spaced on [-1, 1]
    """
    cfg = prob.cfg
    a = cfg.alpha
    power = 0.5 * (2.0 + a)
    probes = np.linspace(-1.0, 1.0, probe_count + 1) if probe_times is None \
        else np.asarray(probe_times, dtype=float)
    spline = traj.dense()
    rows = []
    for eps in eps_list:
        s = probes / eps ** power
        if s.min() < traj.times[0] or s.max() > traj.times[-1]:
            raise WindowTooShortError(
                f"eps={eps} needs x on [{s.min():.6g}, {s.max():.6g}]", eps=float(eps))
        y = eps * spline(s)
        y_dot = eps ** (1.0 - power) * spline(s, 1)
        limit = rectilinear_limit(probes, a, cfg.far_mass, prob.dir_minus, prob.dir_plus)
        deviation = float(np.max(np.linalg.norm(y - limit, axis=1)))
        scaled = cfg.scaled(eps)
        u = eval_potential(scaled, y)
        residual = float(np.max(np.abs(0.5 * np.sum(y_dot ** 2, axis=1) - u) / np.maximum(1.0, u)))
        rows.append(CollapseRow(eps=float(eps), deviation=deviation, energy_residual=residual))
        logging.info(f"eps={eps}: deviation {deviation:.6g}, energy residual {residual:.3g}")
    return CollapseTable(tuple(rows))


def kepler_parabolic_angle(alpha: float, mass: float = 1.0, growth: float = 1e4,
                           tol: float = 1e-10) -> float:
    """
    Angle swept by a single-centre zero-energy orbit, pericentre at r = 1.

    The orbit is integrated from pericentre until r = growth; the remaining
    half-angle out to infinity is added in closed quadrature, and the
    half-angle doubled by symmetry.
    """
    cfg = ProblemConfig(alpha=alpha, centres=(Centre(position=(0.0, 0.0), mass=mass),))
    speed = np.sqrt(2.0 * mass / alpha)
    start = State(0.0, [1.0, 0.0], [0.0, speed])
    r_end = growth
    t_end = 1.5 * (r_end / radius_law_coefficient(alpha, mass)) ** (0.5 * (2.0 + alpha))
    traj = integrate_cartesian(start, t_end, tol, cfg, energy_budget=KEPLER_BUDGET)
    radii = traj.radii
    if radii[-1] < r_end:
        raise TailTooShortError(f"Orbit reached r = {radii[-1]:.6g} short of {r_end:.6g}")
    theta = np.unwrap(np.arctan2(traj.positions[:, 1], traj.positions[:, 0]))
    k = int(np.argmax(radii >= r_end))
    lam = (r_end - radii[k - 1]) / (radii[k] - radii[k - 1])
    swept = theta[k - 1] + lam * (theta[k] - theta[k - 1])
    momentum = speed

    def dtheta_dr(r):
        return momentum / (r * r * np.sqrt(2.0 * mass / (alpha * r ** alpha) - momentum ** 2 / r ** 2))

    tail, _ = quad(dtheta_dr, r_end, np.inf, epsabs=1e-13, epsrel=1e-12, limit=200)
    angle = 2.0 * (swept + tail)
    logging.info(f"alpha={alpha}: spanned angle {angle:.12g} "
                 f"(closed form {2.0 * np.pi / (2.0 - alpha):.12g})")
    return float(angle)


def self_intersection_check(traj) -> list[tuple[int, int]]:
    """Transversal self-crossings of a trajectory's polyline (or any vertex array)."""
    positions = traj.positions if isinstance(traj, Trajectory) else traj
    return crossing_pairs(positions)
