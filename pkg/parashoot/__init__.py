"""Zero-energy orbits of the planar N-centre problem by Maupertuis minimization."""

__version__ = "0.1.0"
