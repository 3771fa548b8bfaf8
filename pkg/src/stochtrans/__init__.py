"""Toolkit for simulating and predicting noise-induced transitions between
attractors of multiscale stochastic dynamical systems."""

__version__ = "0.1.0"

from . import action, analysis, dynamics, landscape, minact, models, pathsampler, quasipotential

__all__ = [
    "__version__",
    "action",
    "analysis",
    "dynamics",
    "landscape",
    "minact",
    "models",
    "pathsampler",
    "quasipotential",
]
