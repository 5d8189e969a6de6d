"""Convexification with viscosity for 2D electrical impedance tomography."""

__version__ = "0.1.0"

from .functional import ConvexParams, PairField  # noqa: E402
from .geometry import GeometryConfig  # noqa: E402

__all__ = ["__version__", "ConvexParams", "PairField", "GeometryConfig"]
