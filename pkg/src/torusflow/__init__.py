"""Symbolic regularity-structure toolkit and pseudo-spectral Monte-Carlo
harness for stochastic Navier-Stokes on the 2- and 3-torus."""

__version__ = "0.1.0"

from . import ensemble, fields, gridio, harness, kernels, noise, solver, structure

__all__ = ["ensemble", "fields", "gridio", "harness", "kernels", "noise",
           "solver", "structure", "__version__"]
