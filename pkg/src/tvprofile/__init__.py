"""Total-variation isoperimetric profiles of rasters, volumes and graphs."""

__version__ = "0.1.0"

from .field import DomainError, DomainMask, GradientStencil, ScalarField, gradient, mass, tv, tv_to_perimeter
from .profile import ProfileCurve, cheeger_estimate, derivative, sample_profile, sample_weighted_profile
from .solver import SolveOptions, SolveReport, solve

__all__ = [
    "DomainError", "DomainMask", "GradientStencil", "ScalarField", "gradient", "mass", "tv",
    "tv_to_perimeter", "ProfileCurve", "cheeger_estimate", "derivative", "sample_profile",
    "sample_weighted_profile", "SolveOptions", "SolveReport", "solve",
]
