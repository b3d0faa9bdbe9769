"""Invariant suite behind ``solve.py validate``.

Each check returns a CheckResult; a solver error inside a check fails that
check only.
"""
import logging
from dataclasses import dataclass

import numpy as np
from deepdiff import DeepDiff

from parashoot.artifacts import bolza_summary
from parashoot.entire import (
    ScatteringProblem, action_scaling, asymptotic_directions, collapse_experiment,
    continue_in_radius, extend_tails, fit_radius_law, kepler_parabolic_angle,
    radius_law_coefficient, self_intersection_check, solve_bolza_at
)
from parashoot.homotopy import Partition, parity_class
from parashoot.integrator import (
    State, integrate_cartesian, integrate_regularized, levi_civita_lift, virial_residual
)
from parashoot.potentials import (
    Centre, ProblemConfig, eval_gradient, eval_hessian, eval_potential, far_field_constant
)
from parashoot.types.enums import CheckStatus
from parashoot.types.errors import ParashootError
from parashoot.variational import (
    maupertuis, maupertuis_gradient, minimize_in_class, perturb, plan_quadrature, refine,
    seed_path, solve_bolza
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    status: CheckStatus
    detail: str

    @property
    def passed(self) -> bool:
        return self.status == CheckStatus.PASS


def _result(name, passed, detail):
    return CheckResult(name, CheckStatus.PASS if passed else CheckStatus.FAIL, detail)


def _guard(name, check, *args):
    try:
        return check(name, *args)
    except ParashootError as e:
        logging.error(f"Check {name} raised {e.code}: {e}")
        return CheckResult(name, CheckStatus.FAIL, f"{e.code}: {e}")


def _single_centre(alpha, mass=1.0):
    return ProblemConfig(alpha=alpha, centres=(Centre(position=(0.0, 0.0), mass=mass),))


def _sample_points(cfg, rng, count=25):
    K = cfg.ring_radius
    points = []
    while len(points) < count:
        x = rng.uniform(-K, K, size=2)
        if np.min(np.linalg.norm(cfg.positions - x, axis=1)) > 0.05:
            points.append(x)
    return np.array(points)


def check_potential_derivatives(name, cfg, rng):
    points = _sample_points(cfg, rng)
    h = 1e-6
    worst_grad, worst_hess = 0.0, 0.0
    for x in points:
        fd_grad = np.array([
            (eval_potential(cfg, x + h * e) - eval_potential(cfg, x - h * e)) / (2.0 * h)
            for e in np.eye(2)])
        grad = eval_gradient(cfg, x)
        worst_grad = max(worst_grad, np.linalg.norm(grad - fd_grad) / np.linalg.norm(grad))
        fd_hess = np.stack([
            (eval_gradient(cfg, x + h * e) - eval_gradient(cfg, x - h * e)) / (2.0 * h)
            for e in np.eye(2)], axis=1)
        hess = eval_hessian(cfg, x)
        worst_hess = max(worst_hess, np.linalg.norm(hess - fd_hess) / np.linalg.norm(hess))
    return _result(name, worst_grad <= 1e-6 and worst_hess <= 1e-5,
                   f"gradient {worst_grad:.2e}, hessian {worst_hess:.2e}")


def check_far_field(name, cfg):
    near = far_field_constant(cfg, span=10.0)
    far = far_field_constant(cfg, span=100.0)
    bounded = all(np.isfinite(v) for v in near + far) and far[0] <= 2.0 * near[0]
    return _result(name, bounded, f"sup |W| |x|^beta = {far[0]:.4g}, gradient {far[1]:.4g}")


def check_arc_doubling(name, cfg, prob, settings):
    q_minus, q_plus = prob.endpoints(2.0 * cfg.ring_radius)
    seed = seed_path(q_minus, q_plus, prob.target, cfg, settings)
    coarse = parity_class(seed, cfg, settings.arc_nodes)
    fine = parity_class(seed, cfg, 2 * settings.arc_nodes)
    return _result(name, coarse == fine == prob.target, f"{coarse} vs {fine}")


def check_gradient(name, cfg, prob, settings, rng, paths=20, nodes=32):
    q_minus, q_plus = prob.endpoints(2.0 * cfg.ring_radius)
    seed = seed_path(q_minus, q_plus, prob.target, cfg, settings.model_copy(update={"nodes": nodes}))
    worst = 0.0
    h = 1e-5
    for _ in range(paths):
        path = perturb(seed, cfg, rng, arc_nodes=settings.arc_nodes)
        plan = plan_quadrature(path, cfg)
        grad = maupertuis_gradient(path, cfg, plan)
        fd = np.zeros_like(grad)
        for k in range(1, path.node_count):
            for i in range(2):
                step = np.zeros_like(path.nodes)
                step[k, i] = h
                up = maupertuis(path.with_interior((path.nodes + step)[1:-1]), cfg, plan)
                down = maupertuis(path.with_interior((path.nodes - step)[1:-1]), cfg, plan)
                fd[k, i] = (up - down) / (2.0 * h)
        worst = max(worst, np.linalg.norm(grad - fd) / np.linalg.norm(grad))
    return _result(name, worst <= 1e-6, f"max relative error {worst:.2e} over {paths} paths")


def check_kepler_angle(name, alpha, tol):
    angle = kepler_parabolic_angle(alpha, tol=tol)
    target = 2.0 * np.pi / (2.0 - alpha)
    error = abs(angle - target) / target
    return _result(name, error <= 1e-2, f"{angle:.8f} vs {target:.8f} ({error:.2e})")


def check_radial_escape(name, alpha, tol, mass=1.0, r0=2.0, t_end=100.0):
    cfg = _single_centre(alpha, mass)
    speed = np.sqrt(2.0 * mass / (alpha * r0 ** alpha))
    traj = integrate_cartesian(State(0.0, [r0, 0.0], [speed, 0.0]), t_end, tol, cfg)
    power = 1.0 + 0.5 * alpha
    exact = (power * np.sqrt(2.0 * mass / alpha) * traj.times + r0 ** power) ** (1.0 / power)
    error = float(np.max(np.abs(traj.radii - exact) / exact))
    drift = float(np.max(np.abs(traj.energy_residuals)))
    return _result(name, error <= 1e-6 and drift <= 1e-8,
                   f"radius error {error:.2e}, energy drift {drift:.2e}")


def check_pure_collision(name, tol, rho0=0.5):
    cfg = _single_centre(1.0)
    start = State(0.0, [rho0, 0.0], [-np.sqrt(2.0 / rho0), 0.0])
    lc = levi_civita_lift(start, 0, cfg)
    traj, end = integrate_regularized(lc, 2.0 * np.sqrt(2.0 * rho0), tol, cfg)
    tau = np.sqrt(2.0) * rho0 ** 1.5 / 3.0
    exact = (1.5 * np.sqrt(2.0) * np.abs(traj.times - tau)) ** (2.0 / 3.0)
    error = float(np.max(np.abs(traj.positions[:, 0] - exact)) + np.max(np.abs(traj.positions[:, 1])))
    returned = abs(end.physical_time - 2.0 * tau)
    return _result(name, error <= 1e-8 and returned <= 1e-8,
                   f"reflection error {error:.2e}, return time error {returned:.2e}")


def check_close_encounter(name, cfg, tol, pericentre=1e-6, offset=0.1):
    if cfg.alpha != 1.0:
        return _result(name, True, "regularization applies to alpha = 1 only")
    centre, mass = cfg.positions[0], cfg.masses[0]
    x0 = centre + np.array([offset, 0.0])
    speed = np.sqrt(2.0 * float(eval_potential(cfg, x0)))
    tangential = np.sqrt(2.0 * mass * pericentre) / offset
    v0 = np.array([-np.sqrt(speed ** 2 - tangential ** 2), tangential])
    traj = integrate_cartesian(State(0.0, x0, v0), 2.0 * offset ** 1.5, tol, cfg,
                               energy_budget=1e-8)
    scale = np.maximum(1.0, 0.5 * np.sum(traj.velocities ** 2, axis=1))
    drift = float(np.max(np.abs(traj.energy_residuals) / scale))
    closest = float(traj.min_distances.min())
    return _result(name, drift <= 1e-8 and closest < 100.0 * pericentre,
                   f"closest approach {closest:.2e}, relative drift {drift:.2e}")


def check_bolza(name, cfg, prob, settings, rng, radius):
    sol = solve_bolza_at(radius, prob, settings=settings, rng=rng)
    crossings = self_intersection_check(sol.path.nodes)
    fine = minimize_in_class(refine(sol.path), prob.target, cfg, settings)
    change = abs(fine.value - sol.value) / sol.value
    passed = (sol.parity == prob.target and sol.energy_residual <= settings.energy_tolerance
              and sol.identity_gap <= settings.energy_tolerance and not crossings and change < 5e-3)
    return _result(name, passed,
                   f"class {sol.parity}, residual {sol.energy_residual:.2e}, "
                   f"identity gap {sol.identity_gap:.2e}, {len(crossings)} crossings, "
                   f"M change on refinement {change:.2e}")


def check_determinism(name, cfg, prob, settings, seed, radius, stamp):
    runs = []
    for _ in range(2):
        sol = solve_bolza(*prob.endpoints(radius), prob.target, cfg, settings,
                          rng=np.random.default_rng(seed))
        runs.append(bolza_summary(sol, stamp))
    diff = DeepDiff(runs[0], runs[1])
    return _result(name, not diff, "identical summaries" if not diff else str(diff))


def continuation_checks(cfg, prob, run, settings, rng):
    """Checks sharing one continuation run and its extended tails."""
    names = ("continuation-converges", "radius-law", "action-scaling", "inside-ring-action",
             "virial-convexity", "collapse-limit", "self-intersection")
    try:
        result = continue_in_radius(prob, run.schedule(), settings, rng)
        tails = extend_tails(result.solutions[-1], cfg, run.continuation.tail_extent,
                             run.integration.tolerance)
    except ParashootError as e:
        logging.error(f"Continuation failed with {e.code}: {e}")
        return [CheckResult(name, CheckStatus.FAIL, f"{e.code}: {e}") for name in names]

    def converged(name):
        return _result(name, result.converged and all(result.separated),
                       f"deviations {[f'{d:.3g}' for d in result.sup_deviations]}, "
                       f"separated {result.separated}")

    def radius_law(name):
        fit = fit_radius_law(tails)
        exponent = 2.0 / (2.0 + cfg.alpha)
        coefficient = radius_law_coefficient(cfg.alpha, cfg.far_mass)
        e_err = abs(fit.exponent - exponent) / exponent
        c_err = abs(fit.coefficient - coefficient) / coefficient
        return _result(name, e_err <= 0.02 and c_err <= 0.05,
                       f"exponent {fit.exponent:.5f} ({e_err:.2e}), "
                       f"coefficient {fit.coefficient:.5f} ({c_err:.2e})")

    def scaling(name):
        fit = action_scaling(result, cfg)
        return _result(name, fit.relative_error <= 0.05,
                       f"c = {fit.coefficient:.5f} vs {fit.target:.5f}, residual {fit.residual:.2e}")

    def inside_action(name):
        actions = np.array(result.inside_actions)
        return _result(name, actions.max() < 2.0 * np.median(actions),
                       f"inside-ring actions {[f'{a:.4g}' for a in actions]}")

    def virial(name):
        report = virial_residual(tails, cfg)
        return _result(name, report.convex, f"{len(report.violations)} violating samples")

    def collapse(name):
        table = collapse_experiment(tails, prob, run.collapse.eps,
                                    probe_count=run.collapse.probe_count)
        return _result(name, table.decreasing,
                       ", ".join(f"eps={r.eps}: {r.deviation:.3g}" for r in table.rows))

    def self_intersection(name):
        crossings = sum(len(self_intersection_check(s.path.nodes)) for s in result.solutions)
        return _result(name, crossings == 0, f"{crossings} crossings")

    checks = (converged, radius_law, scaling, inside_action, virial, collapse, self_intersection)
    return [_guard(name, check) for name, check in zip(names, checks)]


def check_angular_decay(name, cfg, settings, rng, run):
    """Decay of |ds/dt| on an asymmetric scattering problem (symmetric tails are radial)."""
    partition = Partition(frozenset([0])) if cfg.n_centres > 1 else None
    if partition is None:
        return _result(name, True, "single centre: tails are radial")
    prob = ScatteringProblem.from_angles(-0.5 * np.pi, np.pi / 3.0, partition, cfg)
    sol = solve_bolza_at(4.0 * cfg.ring_radius, prob, settings=settings, rng=rng)
    directions = asymptotic_directions(sol, prob, extent=run.continuation.tail_extent,
                                       tol=run.integration.tolerance)
    target = 4.0 / (cfg.alpha + 2.0)
    fits = [f for f in (directions.decay_minus, directions.decay_plus) if f is not None]
    if not fits:
        return _result(name, False, "no angular motion on either tail")
    errors = [abs(f.exponent - target) / target for f in fits]
    return _result(name, max(errors) <= 0.1,
                   f"exponents {[round(f.exponent, 4) for f in fits]} vs {target:.4f}")


def run_suite(run, continuation: bool = True) -> list[CheckResult]:
    """
    Run every invariant check for the configured problem.

    :param run: RunConfig supplying the problem, solver settings and tolerance
    :param continuation: Include the radius-continuation checks (the slow part)
    """
    cfg = run.problem
    prob = run.scattering_problem()
    settings = run.solver
    tol = run.integration.tolerance
    rng = run.rng()
    benchmark_radius = 2.0 * cfg.ring_radius

    results = [
        _guard("potential-derivatives", check_potential_derivatives, cfg, rng),
        _guard("far-field-decay", check_far_field, cfg),
        _guard("arc-doubling", check_arc_doubling, cfg, prob, settings),
        _guard("gradient-finite-differences", check_gradient, cfg, prob, settings, rng),
        _guard("kepler-angle-alpha-1", check_kepler_angle, 1.0, tol),
        _guard("kepler-angle-alpha-1.5", check_kepler_angle, 1.5, tol),
        _guard("radial-escape", check_radial_escape, cfg.alpha, tol),
        _guard("pure-collision-reflection", check_pure_collision, 1e-12),
        _guard("close-encounter-drift", check_close_encounter, cfg, 1e-12),
        _guard("bolza-benchmark", check_bolza, cfg, prob, settings, rng, benchmark_radius),
        _guard("determinism", check_determinism, cfg, prob, settings, run.seed,
               benchmark_radius, run.stamp()),
    ]
    if continuation:
        results.extend(continuation_checks(cfg, prob, run, settings, rng))
        results.append(_guard("angular-decay", check_angular_decay, cfg, settings, rng, run))
    for r in results:
        logging.info(f"{r.status.value} {r.name}: {r.detail}")
    return results
