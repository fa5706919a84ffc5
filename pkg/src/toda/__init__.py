"""Loop-group toolkit for the A2(2) Toda family of surfaces."""
from . import algebra, cli, factorization, fields, frames, geometry, pde, realforms
from .errors import *  # noqa: F401,F403
from .fields import Grid, Poly, ScalarField
from .geometry import GeometrySpec, PointData

__version__ = "0.1.0"
