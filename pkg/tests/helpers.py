"""Shared problem fixtures."""
import numpy as np

from parashoot.potentials import Centre, ProblemConfig


def benchmark():
    """Two unit masses at (+-0.5, 0), alpha = 1, K = 2.5."""
    return ProblemConfig(alpha=1.0, centres=(
        Centre(position=(-0.5, 0.0), mass=1.0),
        Centre(position=(0.5, 0.0), mass=1.0)))


def single(alpha=1.0, mass=1.0, position=(0.0, 0.0)):
    return ProblemConfig(alpha=alpha, centres=(Centre(position=position, mass=mass),))


def three_centres():
    return ProblemConfig(alpha=1.0, centres=(
        Centre(position=(-1.0, 0.0), mass=1.0),
        Centre(position=(1.0, 0.0), mass=1.0),
        Centre(position=(0.0, 1.2), mass=0.5)), ring_radius=3.5)


def circle_points(radius, start, end, count):
    angles = np.linspace(start, end, count)
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def pair():
    """Unit masses at (+-1, 0), alpha = 1."""
    return ProblemConfig(alpha=1.0, centres=(
        Centre(position=(-1.0, 0.0), mass=1.0),
        Centre(position=(1.0, 0.0), mass=1.0)))
