"""Invariant densities of piecewise expanding unimodal maps and their derivatives."""
__version__ = "0.1.0"
