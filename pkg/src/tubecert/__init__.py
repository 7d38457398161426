"""Tube-based safety certification for learning controllers."""

from tubecert.geometry import Ellipsoid, Polytope

__version__ = "0.1.0"

__all__ = ["Ellipsoid", "Polytope", "__version__"]
