"""Numerical lab for volume-preserving harmonic mean curvature flow in asymptotically Schwarzschild 3-manifolds."""

__version__ = "0.1.0"
