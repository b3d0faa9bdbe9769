"""The N-centre potential, its derivatives and the far-field decomposition.

U(x) = sum_i m_i / (alpha |x - c_i|^alpha) with 1 <= alpha < 2. Every
evaluator accepts a single point of shape ``(2,)`` or a stack of points of
shape ``(..., 2)``.
"""
import logging
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, model_validator

from parashoot.types.errors import DomainError, SingularityError

# |x - c_i| below SINGULAR_SCALE * (1 + |c_i|) is a collision
SINGULAR_SCALE = 1e-12


class Centre(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    position: tuple[float, float]
    mass: PositiveFloat

    def __repr__(self):
        return f"<Centre {self.position} m={self.mass}>"


def _raw_position(centre):
    if isinstance(centre, Centre):
        return centre.position
    return centre["position"]


class ProblemConfig(BaseModel):
    """
    Exponent and centres of one N-centre problem.

    ``ring_radius`` (K) defaults to max|c_i| + 2 and must exceed
    max|c_i| + 1.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha: float = Field(ge=1.0, lt=2.0)
    centres: tuple[Centre, ...] = Field(min_length=1)
    ring_radius: Optional[PositiveFloat] = None

    @model_validator(mode="before")
    @classmethod
    def default_ring_radius(cls, data):
        if not isinstance(data, dict) or data.get("ring_radius") is not None:
            return data
        try:
            reach = max(float(np.hypot(*_raw_position(c)))
                        for c in data.get("centres") or [])
        except (KeyError, TypeError, ValueError):
            # Field validation reports the malformed centres
            return data
        return {**data, "ring_radius": reach + 2.0}

    @model_validator(mode="after")
    def check_geometry(self):
        positions = np.array([c.position for c in self.centres], dtype=float)
        if len(positions) > 1:
            gaps = np.linalg.norm(
                positions[:, None, :] - positions[None, :, :], axis=-1)
            gaps[np.diag_indices(len(positions))] = np.inf
            if gaps.min() <= 0.0:
                raise ValueError("centre positions must be pairwise distinct")
        reach = float(np.max(np.linalg.norm(positions, axis=1)))
        if self.ring_radius <= reach + 1.0:
            raise ValueError(
                f"ring_radius {self.ring_radius} must exceed max|c_i| + 1 = {reach + 1.0}")
        return self

    @property
    def positions(self) -> np.ndarray:
        return np.array([c.position for c in self.centres], dtype=float)

    @property
    def masses(self) -> np.ndarray:
        return np.array([c.mass for c in self.centres], dtype=float)

    @property
    def n_centres(self) -> int:
        return len(self.centres)

    @property
    def far_mass(self) -> float:
        return float(sum(c.mass for c in self.centres))

    @property
    def decay_beta(self) -> float:
        return self.alpha + 1.0

    @property
    def reach(self) -> float:
        """Largest centre distance from the origin."""
        return float(np.max(np.linalg.norm(self.positions, axis=1)))

    @property
    def min_gap(self) -> float:
        """Smallest pairwise centre distance; infinite for a single centre."""
        positions = self.positions
        if len(positions) < 2:
            return float("inf")
        gaps = np.linalg.norm(
            positions[:, None, :] - positions[None, :, :], axis=-1)
        gaps[np.diag_indices(len(positions))] = np.inf
        return float(gaps.min())

    def scaled(self, eps: float) -> "ProblemConfig":
        """The same problem with every centre moved to eps * c_i."""
        centres = tuple(
            Centre(position=(eps * c.position[0], eps * c.position[1]), mass=c.mass)
            for c in self.centres)
        return ProblemConfig(alpha=self.alpha, centres=centres,
                             ring_radius=max(eps * self.ring_radius,
                                             eps * self.reach + 2.0))

    def __repr__(self):
        return f"<ProblemConfig alpha={self.alpha} N={self.n_centres} K={self.ring_radius}>"


def _offsets(cfg: ProblemConfig, x, only=None, exclude=None):
    x = np.asarray(x, dtype=float)
    positions = cfg.positions
    masses = cfg.masses
    keep = np.ones(len(positions), dtype=bool)
    if only is not None:
        keep[:] = False
        keep[only] = True
    if exclude is not None:
        keep[exclude] = False
    d = x[..., None, :] - positions[keep]
    r = np.linalg.norm(d, axis=-1)
    return d, r, masses[keep], positions[keep]


def _check_singular(r, positions):
    threshold = SINGULAR_SCALE * (1.0 + np.linalg.norm(positions, axis=-1))
    if np.any(r < threshold):
        raise SingularityError(
            f"Point within {threshold.max():.3g} of a centre",
            distance=float(np.min(r)))


def centre_distances(cfg: ProblemConfig, x) -> np.ndarray:
    """Distances from x to every centre, shape ``(..., N)``."""
    _, r, _, _ = _offsets(cfg, x)
    return r


def eval_potential(cfg: ProblemConfig, x):
    _, r, m, positions = _offsets(cfg, x)
    _check_singular(r, positions)
    return np.sum(m / (cfg.alpha * r ** cfg.alpha), axis=-1)


def eval_gradient(cfg: ProblemConfig, x) -> np.ndarray:
    d, r, m, positions = _offsets(cfg, x)
    _check_singular(r, positions)
    weight = m / r ** (cfg.alpha + 2.0)
    return -np.sum(weight[..., None] * d, axis=-2)


def eval_hessian(cfg: ProblemConfig, x) -> np.ndarray:
    d, r, m, positions = _offsets(cfg, x)
    _check_singular(r, positions)
    a = cfg.alpha
    outer = d[..., :, None] * d[..., None, :]
    iso = (m / r ** (a + 2.0))[..., None, None] * np.eye(2)
    aniso = ((a + 2.0) * m / r ** (a + 4.0))[..., None, None] * outer
    return -np.sum(iso - aniso, axis=-3)


def regular_part(cfg: ProblemConfig, x, index: int):
    """Potential of every centre except ``index`` (smooth near c_index)."""
    if cfg.n_centres == 1:
        return np.zeros(np.shape(x)[:-1])
    _, r, m, positions = _offsets(cfg, x, exclude=index)
    _check_singular(r, positions)
    return np.sum(m / (cfg.alpha * r ** cfg.alpha), axis=-1)


def regular_gradient(cfg: ProblemConfig, x, index: int) -> np.ndarray:
    if cfg.n_centres == 1:
        return np.zeros(np.shape(x))
    d, r, m, positions = _offsets(cfg, x, exclude=index)
    _check_singular(r, positions)
    weight = m / r ** (cfg.alpha + 2.0)
    return -np.sum(weight[..., None] * d, axis=-2)


def far_field_remainder(cfg: ProblemConfig, x):
    """W(x) = U(x) - m / (alpha |x|^alpha), defined outside the centres' disc."""
    x = np.asarray(x, dtype=float)
    radius = np.linalg.norm(x, axis=-1)
    if np.any(radius <= cfg.reach):
        raise DomainError(
            f"|x| = {np.min(radius):.6g} is not beyond max|c_i| = {cfg.reach:.6g}")
    return eval_potential(cfg, x) - cfg.far_mass / (cfg.alpha * radius ** cfg.alpha)


def far_field_gradient(cfg: ProblemConfig, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    radius = np.linalg.norm(x, axis=-1)
    if np.any(radius <= cfg.reach):
        raise DomainError(
            f"|x| = {np.min(radius):.6g} is not beyond max|c_i| = {cfg.reach:.6g}")
    far = cfg.far_mass * x / radius[..., None] ** (cfg.alpha + 2.0)
    return eval_gradient(cfg, x) + far


def far_field_constant(cfg: ProblemConfig, rays: int = 16, span: float = 100.0,
                       samples: int = 400) -> tuple[float, float]:
    """
    Empirical bounds on the far-field remainder outside the ring.

    :param rays: Number of equally spaced directions scanned
    :param span: Scan radii from K to span * K

    :return: sup |W(x)| |x|^beta and sup |grad W(x)| |x|^(beta + 1)
    """
    beta = cfg.decay_beta
    angles = np.linspace(0.0, 2.0 * np.pi, rays, endpoint=False)
    radii = np.geomspace(cfg.ring_radius, span * cfg.ring_radius, samples)
    directions = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    points = radii[:, None, None] * directions[None, :, :]
    radius = np.linalg.norm(points, axis=-1)
    remainder = np.abs(far_field_remainder(cfg, points)) * radius ** beta
    gradient = np.linalg.norm(far_field_gradient(cfg, points), axis=-1) * radius ** (beta + 1.0)
    logging.debug(f"Far-field bounds over {rays} rays: {remainder.max():.6g}, {gradient.max():.6g}")
    return float(remainder.max()), float(gradient.max())


def min_centre_distance(cfg: ProblemConfig, x) -> tuple[float, int]:
    """Smallest |x - c_i| and its index, ties going to the lowest index."""
    r = centre_distances(cfg, np.asarray(x, dtype=float).reshape(2))
    index = int(np.argmin(r))
    return float(r[index]), index
