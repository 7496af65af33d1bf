"""Multivariate fractal interpolation on box domains: construction, box dimension, fractional integrals."""

from .fif import AlphaSpec, FifSpec, InterpolationData, build
from .field import SampledSurface, parse
from .net import Net

__version__ = "0.1.0"

__all__ = ["AlphaSpec", "FifSpec", "InterpolationData", "Net", "SampledSurface", "build", "parse"]
