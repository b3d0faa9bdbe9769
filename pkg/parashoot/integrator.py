"""Zero-energy integration of x'' = grad U(x).

Cartesian stepping uses the Dormand-Prince 5(4) pair of ``solve_ivp``. Close
approaches to a centre switch to Levi-Civita variables (alpha = 1 only):
w^2 = x - c, fictitious time ds = dt / |x - c|, in which the collision is a
regular point of the flow.
"""
import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid, solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import bisect

from parashoot.potentials import (
    ProblemConfig, centre_distances, eval_gradient, eval_potential,
    regular_gradient, regular_part
)
from parashoot.types.enums import CrossingKind
from parashoot.types.errors import (
    CloseEncounterError, DegeneratePathError, DomainError, EnergyDriftError,
    NonZeroEnergyError, OverlappingRegularizationError, SingularityError,
    StepUnderflowError, WrongAlphaError
)

SWITCH_FRACTION = 1e-2
# Regularized passes hand back control slightly outside the switch radius
EXIT_FACTOR = 1.05
EVENT_XTOL = 1e-10
MAX_SEGMENTS = 1000
_TINY = np.finfo(float).tiny


@dataclass(frozen=True, eq=False)
class State:
    time: float
    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "time", float(self.time))
        object.__setattr__(self, "position", np.array(self.position, dtype=float).reshape(2))
        object.__setattr__(self, "velocity", np.array(self.velocity, dtype=float).reshape(2))

    def energy(self, cfg: ProblemConfig) -> float:
        return 0.5 * float(self.velocity @ self.velocity) - float(eval_potential(cfg, self.position))

    def __repr__(self):
        return f"<State t={self.time:.6g} x={self.position.tolist()}>"


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-stamped samples with energy and centre-distance diagnostics."""
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    energy_residuals: np.ndarray
    min_distances: np.ndarray
    nearest_centres: np.ndarray
    ring_crossings: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0.0):
            raise DegeneratePathError("Trajectory times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    @property
    def samples(self) -> list[State]:
        return [State(t, x, v) for t, x, v in zip(self.times, self.positions, self.velocities)]

    @property
    def span(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    @property
    def radii(self) -> np.ndarray:
        return np.linalg.norm(self.positions, axis=1)

    def dense(self) -> CubicHermiteSpline:
        return CubicHermiteSpline(self.times, self.positions, self.velocities, axis=0)

    def shifted(self, dt: float) -> "Trajectory":
        return replace(self, times=self.times + dt,
                       ring_crossings=tuple(t + dt for t in self.ring_crossings))

    def window(self, t0: float, t1: float) -> "Trajectory":
        keep = (self.times >= t0) & (self.times <= t1)
        return replace(
            self, times=self.times[keep], positions=self.positions[keep],
            velocities=self.velocities[keep], energy_residuals=self.energy_residuals[keep],
            min_distances=self.min_distances[keep], nearest_centres=self.nearest_centres[keep],
            ring_crossings=tuple(t for t in self.ring_crossings if t0 <= t <= t1))

    def __repr__(self):
        return f"<Trajectory n={len(self)} t=[{self.times[0]:.6g}, {self.times[-1]:.6g}]>"


@dataclass(frozen=True, eq=False)
class LeviCivitaState:
    w: np.ndarray
    w_prime: np.ndarray
    fictitious_time: float
    centre_index: int
    physical_time: float

    @property
    def w_complex(self) -> complex:
        return complex(self.w[0], self.w[1])

    @property
    def w_prime_complex(self) -> complex:
        return complex(self.w_prime[0], self.w_prime[1])

    def invariant_residual(self, cfg: ProblemConfig) -> float:
        """|w'|^2 - m/2 - |w|^2 U_1 / 2, zero on the zero-energy surface."""
        w = self.w_complex
        x = cfg.positions[self.centre_index] + np.array([(w * w).real, (w * w).imag])
        u1 = float(regular_part(cfg, x, self.centre_index))
        m = cfg.masses[self.centre_index]
        return abs(self.w_prime_complex) ** 2 - 0.5 * m - 0.5 * abs(w) ** 2 * u1


def default_switch_radius(cfg: ProblemConfig) -> float:
    if cfg.n_centres > 1:
        return SWITCH_FRACTION * cfg.min_gap
    return SWITCH_FRACTION * max(1.0, float(np.linalg.norm(cfg.positions[0])))


def assemble_trajectory(times, positions, velocities, cfg: ProblemConfig,
                        residuals=None) -> Trajectory:
    """Package sample arrays with their diagnostics and ring crossings."""
    times = np.asarray(times, dtype=float)
    positions = np.asarray(positions, dtype=float)
    velocities = np.asarray(velocities, dtype=float)
    distances = centre_distances(cfg, positions)
    nearest = np.argmin(distances, axis=1)
    if residuals is None:
        residuals = 0.5 * np.sum(velocities ** 2, axis=1) - eval_potential(cfg, positions)
    traj = Trajectory(
        times=times, positions=positions, velocities=velocities,
        energy_residuals=np.asarray(residuals, dtype=float),
        min_distances=distances[np.arange(len(times)), nearest],
        nearest_centres=nearest)
    if len(times) < 2:
        return traj
    return replace(traj, ring_crossings=detect_ring_crossings(traj, cfg.ring_radius))


def concatenate(parts: Sequence[Trajectory], cfg: ProblemConfig) -> Trajectory:
    """Join trajectories in time order, dropping samples that repeat a seam."""
    times, positions, velocities, residuals = [], [], [], []
    last = -np.inf
    for part in parts:
        keep = part.times > last
        times.append(part.times[keep])
        positions.append(part.positions[keep])
        velocities.append(part.velocities[keep])
        residuals.append(part.energy_residuals[keep])
        if keep.any():
            last = part.times[keep][-1]
    return assemble_trajectory(np.concatenate(times), np.concatenate(positions),
                               np.concatenate(velocities), cfg, np.concatenate(residuals))


def detect_ring_crossings(traj: Trajectory, K: float) -> tuple[float, ...]:
    """Times where |x(t)| = K, located by bisection on the Hermite interpolant."""
    if len(traj) < 2:
        return ()
    outside = traj.radii >= K
    changes = np.nonzero(outside[:-1] != outside[1:])[0]
    if len(changes) == 0:
        return ()
    spline = traj.dense()

    def gap(t):
        return float(np.linalg.norm(spline(t))) - K

    return tuple(
        float(bisect(gap, traj.times[k], traj.times[k + 1], xtol=EVENT_XTOL))
        for k in changes)


def crossing_kinds(traj: Trajectory) -> list[CrossingKind]:
    if not traj.ring_crossings:
        return []
    spline = traj.dense()
    kinds = []
    for t in traj.ring_crossings:
        x, v = spline(t), spline(t, 1)
        kinds.append(CrossingKind.from_radial_velocity(float(x @ v)))
    return kinds


def _cartesian_rhs(cfg):
    def rhs(t, y):
        return np.concatenate([y[2:], eval_gradient(cfg, y[:2])])
    return rhs


def _approach_event(centre, radius):
    def event(t, y):
        return np.hypot(y[0] - centre[0], y[1] - centre[1]) - radius
    event.terminal = True
    event.direction = -1
    return event


def _check_overlap(cfg: ProblemConfig, index: int, switch_radius: float):
    if cfg.n_centres < 2:
        return
    others = np.delete(cfg.positions, index, axis=0)
    gap = np.linalg.norm(others - cfg.positions[index], axis=1).min()
    if gap < 2.0 * EXIT_FACTOR * switch_radius:
        raise OverlappingRegularizationError(
            f"Switch regions of centre {index} and a neighbour overlap",
            centre=index, gap=float(gap))


def integrate_cartesian(start: State, t_end: float, tol: float, cfg: ProblemConfig,
                        switch_radius: Optional[float] = None,
                        energy_budget: Optional[float] = None) -> Trajectory:
    """
    Integrate a zero-energy orbit from ``start`` to ``t_end`` (either direction).

    :param tol: Relative local error per step; absolute error is tol * 1e-2
    :param switch_radius: Centre distance below which stepping is regularized
    :param energy_budget: Allowed |energy residual| per unit max(1, U)

    :return: Trajectory with samples in increasing time
    """
    switch = default_switch_radius(cfg) if switch_radius is None else switch_radius
    budget = 100.0 * tol if energy_budget is None else energy_budget
    u0 = float(eval_potential(cfg, start.position))
    h0 = 0.5 * float(start.velocity @ start.velocity) - u0
    if abs(h0) > 10.0 * tol * max(1.0, u0):
        raise NonZeroEnergyError(f"Start energy {h0:.3g} is not zero", energy=h0)

    direction = np.sign(t_end - start.time)
    rhs = _cartesian_rhs(cfg)
    events = [_approach_event(c, switch) for c in cfg.positions]
    chunks = []
    state = start
    phases = dict(enumerate(_polar_angles(cfg, start.position)))
    regularize = float(centre_distances(cfg, state.position).min()) < switch
    segments = 0
    while direction != 0 and direction * (t_end - state.time) > 1e-12 * max(1.0, abs(t_end)):
        segments += 1
        if segments > MAX_SEGMENTS:
            raise StepUnderflowError(f"No progress after {MAX_SEGMENTS} segments", time=state.time)
        if regularize:
            index = int(np.argmin(centre_distances(cfg, state.position)))
            if cfg.alpha != 1.0:
                raise CloseEncounterError(
                    f"Approach within {switch:.3g} of centre {index} at alpha = {cfg.alpha}",
                    centre=index, time=state.time)
            _check_overlap(cfg, index, switch)
            lc = levi_civita_lift(state, index, cfg, phase=phases[index])
            exit_radius = EXIT_FACTOR * switch
            s_span = direction * 100.0 * np.sqrt(exit_radius / (0.5 * cfg.masses[index]))
            segment, lc = integrate_regularized(lc, s_span, tol, cfg,
                                                exit_radius=exit_radius, t_stop=t_end)
            arrays = (segment.times, segment.positions, segment.velocities,
                      segment.energy_residuals)
            chunks.append(arrays if direction > 0 else tuple(a[::-1] for a in arrays))
            advance_phases(phases, chunks[-1][1], cfg)
            state = levi_civita_drop(lc, cfg)
            regularize = float(np.linalg.norm(state.position - cfg.positions[index])) < switch
            logging.debug(f"Regularized pass at centre {index} ended at t={state.time:.6g}")
            continue

        y0 = np.concatenate([state.position, state.velocity])
        sol = solve_ivp(rhs, (state.time, t_end), y0, method="RK45",
                        rtol=tol, atol=tol * 1e-2, events=events)
        if sol.status == -1:
            raise StepUnderflowError(sol.message, time=float(sol.t[-1]))
        velocities = sol.y[2:].T
        positions = sol.y[:2].T
        residuals = 0.5 * np.sum(velocities ** 2, axis=1) - eval_potential(cfg, positions)
        chunks.append((sol.t, positions, velocities, residuals))
        advance_phases(phases, positions, cfg)
        state = State(sol.t[-1], positions[-1], velocities[-1])
        regularize = sol.status == 1

    if not chunks:
        residual = np.array([h0])
        return assemble_trajectory([start.time], start.position[None], start.velocity[None],
                                   cfg, residual)
    times, positions, velocities, residuals = _join_chunks(chunks)
    if direction < 0:
        times, positions, velocities, residuals = (
            times[::-1], positions[::-1], velocities[::-1], residuals[::-1])
    scale = np.maximum(1.0, 0.5 * np.sum(velocities ** 2, axis=1))
    drift = np.abs(residuals) / scale
    if drift.max() > budget:
        worst = int(np.argmax(drift))
        raise EnergyDriftError(
            f"Energy residual {residuals[worst]:.3g} at t={times[worst]:.6g} exceeds budget",
            residual=float(residuals[worst]), time=float(times[worst]))
    return assemble_trajectory(times, positions, velocities, cfg, residuals)


def _join_chunks(chunks):
    times, positions, velocities, residuals = [], [], [], []
    for k, chunk in enumerate(chunks):
        start = 1 if k > 0 else 0
        times.append(chunk[0][start:])
        positions.append(chunk[1][start:])
        velocities.append(chunk[2][start:])
        residuals.append(chunk[3][start:])
    return (np.concatenate(times), np.concatenate(positions),
            np.concatenate(velocities), np.concatenate(residuals))


def _polar_angles(cfg, position):
    offsets = np.asarray(position, dtype=float) - cfg.positions
    return np.arctan2(offsets[:, 1], offsets[:, 0])


def advance_phases(phases: dict[int, float], positions, cfg: ProblemConfig) -> dict[int, float]:
    """
    Carry the continuous polar angle of x - c_i along a run of positions.

    ``phases`` holds the angle at the first position and is updated in place
    to the angle at the last one, on the same branch.
    """
    offsets = np.asarray(positions, dtype=float)[:, None, :] - cfg.positions[None]
    angles = np.unwrap(np.arctan2(offsets[..., 1], offsets[..., 0]), axis=0)
    for i, track in enumerate(angles.T):
        turns = np.round((phases[i] - track[0]) / (2.0 * np.pi))
        phases[i] = float(track[-1] + 2.0 * np.pi * turns)
    return phases


def levi_civita_lift(state: State, centre_index: int, cfg: ProblemConfig,
                     phase: Optional[float] = None,
                     switch_radius: Optional[float] = None) -> LeviCivitaState:
    """
    Lift a Cartesian state near c_i to Levi-Civita variables.

    :param phase: Continuously unwrapped polar angle of x - c_i; defaults to atan2
    :param switch_radius: When given, the state must lie inside it
    """
    if cfg.alpha != 1.0:
        raise WrongAlphaError(f"Levi-Civita variables need alpha = 1, got {cfg.alpha}")
    z = complex(*(state.position - cfg.positions[centre_index]))
    rho = abs(z)
    if rho == 0.0:
        raise SingularityError(f"State sits on centre {centre_index}")
    if switch_radius is not None and rho >= switch_radius:
        raise DomainError(f"State is {rho:.3g} from centre {centre_index}, outside {switch_radius:.3g}")
    phi = np.angle(z) if phase is None else phase
    if phase is not None and abs(rho * np.exp(1j * phi) - z) > 1e-9 * rho:
        raise DomainError(f"Phase {phase} does not match the state's polar angle")
    w = np.sqrt(rho) * np.exp(0.5j * phi)
    w_prime = complex(*state.velocity) * np.conj(w) / 2.0
    return LeviCivitaState(
        w=np.array([w.real, w.imag]), w_prime=np.array([w_prime.real, w_prime.imag]),
        fictitious_time=0.0, centre_index=centre_index, physical_time=state.time)


def levi_civita_drop(lc: LeviCivitaState, cfg: ProblemConfig) -> State:
    w, wp = lc.w_complex, lc.w_prime_complex
    x = cfg.positions[lc.centre_index] + np.array([(w * w).real, (w * w).imag])
    v = 2.0 * w * wp / max(abs(w) ** 2, _TINY)
    return State(lc.physical_time, x, np.array([v.real, v.imag]))


def integrate_regularized(lc: LeviCivitaState, s_span: float, tol: float, cfg: ProblemConfig,
                          exit_radius: Optional[float] = None,
                          t_stop: Optional[float] = None) -> tuple[Trajectory, LeviCivitaState]:
    """
    Integrate w'' = (w/2) U_1 + (conj(w)/2) |w|^2 grad U_1 in fictitious time.

    Physical time follows dt/ds = |w|^2. The pass ends after ``s_span``, when
    |w|^2 grows through ``exit_radius`` or when physical time reaches ``t_stop``.
    """
    if cfg.alpha != 1.0:
        raise WrongAlphaError(f"Levi-Civita variables need alpha = 1, got {cfg.alpha}")
    index = lc.centre_index
    centre = cfg.positions[index]
    mass = cfg.masses[index]

    def rhs(s, y):
        w = complex(y[0], y[1])
        wp = complex(y[2], y[3])
        w2 = w * w
        x = centre + np.array([w2.real, w2.imag])
        u1 = float(regular_part(cfg, x, index))
        g = regular_gradient(cfg, x, index)
        acc = 0.5 * w * u1 + 0.5 * np.conj(w) * abs(w) ** 2 * complex(g[0], g[1])
        return [wp.real, wp.imag, acc.real, acc.imag, abs(w) ** 2]

    events = []
    if exit_radius is not None:
        def leave(s, y):
            return y[0] ** 2 + y[1] ** 2 - exit_radius
        leave.terminal = True
        leave.direction = 1
        events.append(leave)
    if t_stop is not None:
        def stop(s, y):
            return y[4] - t_stop
        stop.terminal = True
        events.append(stop)

    y0 = np.concatenate([lc.w, lc.w_prime, [lc.physical_time]])
    s0 = lc.fictitious_time
    sol = solve_ivp(rhs, (s0, s0 + s_span), y0, method="RK45",
                    rtol=tol, atol=tol * 1e-2, events=events or None)
    if sol.status == -1:
        raise StepUnderflowError(sol.message, fictitious_time=float(sol.t[-1]))

    w = sol.y[0] + 1j * sol.y[1]
    wp = sol.y[2] + 1j * sol.y[3]
    w2 = w * w
    positions = centre + np.stack([w2.real, w2.imag], axis=1)
    modulus = np.maximum(np.abs(w) ** 2, _TINY)
    v = 2.0 * w * wp / modulus
    velocities = np.stack([v.real, v.imag], axis=1)
    u1 = regular_part(cfg, positions, index)
    residuals = 2.0 * (np.abs(wp) ** 2 - 0.5 * mass - 0.5 * np.abs(w) ** 2 * u1) / modulus
    times = sol.y[4]

    end = LeviCivitaState(
        w=sol.y[:2, -1].copy(), w_prime=sol.y[2:4, -1].copy(),
        fictitious_time=float(sol.t[-1]), centre_index=index, physical_time=float(times[-1]))
    exited = exit_radius is not None and abs(w[-1]) ** 2 >= exit_radius * (1.0 - 1e-9)
    if exited:
        scale = max(1.0, 0.5 * abs(v[-1]) ** 2)
        if abs(residuals[-1]) > 10.0 * tol * scale:
            raise EnergyDriftError(
                f"Energy residual {residuals[-1]:.3g} on leaving centre {index}",
                residual=float(residuals[-1]))

    if s_span < 0:
        times, positions, velocities, residuals = (
            times[::-1], positions[::-1], velocities[::-1], residuals[::-1])
    return assemble_trajectory(times, positions, velocities, cfg, residuals), end


@dataclass(frozen=True, eq=False)
class VirialReport:
    times: np.ndarray
    second_derivative: np.ndarray
    identity: np.ndarray
    residual: np.ndarray
    # second_derivative minus the convexity bound at samples with r >= K, nan elsewhere
    convexity_margin: np.ndarray
    violations: tuple[int, ...]

    @property
    def convex(self) -> bool:
        return not self.violations


def convexity_bound(cfg: ProblemConfig, radius):
    a = cfg.alpha
    return (2.0 - a) * cfg.far_mass / (2.0 * a * np.asarray(radius) ** a)


def virial_residual(traj: Trajectory, cfg: ProblemConfig) -> VirialReport:
    """
    Compare the second difference of r^2 / 2 with 2U + grad U . x.

    Samples with r >= K where the identity falls below the convexity bound
    are reported by index.
    """
    t, x = traj.times, traj.positions
    f = 0.5 * np.sum(x ** 2, axis=1)
    h_minus = t[1:-1] - t[:-2]
    h_plus = t[2:] - t[1:-1]
    second = 2.0 * ((f[2:] - f[1:-1]) / h_plus - (f[1:-1] - f[:-2]) / h_minus) / (h_plus + h_minus)
    inner = x[1:-1]
    identity = 2.0 * eval_potential(cfg, inner) + np.sum(eval_gradient(cfg, inner) * inner, axis=1)
    radius = np.linalg.norm(inner, axis=1)
    far = radius >= cfg.ring_radius
    bound = convexity_bound(cfg, radius)
    margin = np.where(far, second - bound, np.nan)
    violations = tuple(int(k) + 1 for k in np.nonzero(far & (identity < bound))[0])
    if violations:
        logging.warning(f"Virial convexity fails at {len(violations)} samples outside the ring")
    return VirialReport(times=t[1:-1], second_derivative=second, identity=identity,
                        residual=second - identity, convexity_margin=margin,
                        violations=violations)


def sundman_time(traj: Trajectory, centre_index: int, t0: float, cfg: ProblemConfig,
                 oversample: int = 1) -> np.ndarray:
    """
    s(t) = integral of dt / |x - c_i| from t0, at the trajectory's sample times.

    :param oversample: Trapezoid sub-steps per sample interval, read off the
        Hermite interpolant
    """
    centre = cfg.positions[centre_index]
    if oversample > 1:
        frac = np.arange(oversample) / oversample
        fine = (traj.times[:-1, None] + frac[None, :] * np.diff(traj.times)[:, None]).ravel()
        fine = np.append(fine, traj.times[-1])
        points = traj.dense()(fine)
    else:
        fine, points = traj.times, traj.positions
    integrand = 1.0 / np.linalg.norm(points - centre, axis=1)
    s = cumulative_trapezoid(integrand, fine, initial=0.0)[::oversample]
    return s - np.interp(t0, traj.times, s)


def angular_momentum(traj: Trajectory) -> np.ndarray:
    x, v = traj.positions, traj.velocities
    return x[:, 0] * v[:, 1] - x[:, 1] * v[:, 0]


def radial_lower_bound(traj: Trajectory, cfg: ProblemConfig, t_plus: float) -> np.ndarray:
    """r(t) minus the growth floor ((2-a)m/(2a))^(1/(a+2)) (t - t+)^(2/(a+2)), for t >= t+."""
    a = cfg.alpha
    later = traj.times >= t_plus
    floor = ((2.0 - a) * cfg.far_mass / (2.0 * a)) ** (1.0 / (a + 2.0)) \
        * (traj.times[later] - t_plus) ** (2.0 / (a + 2.0))
    return traj.radii[later] - floor
