"""Numerical laboratory for a half-line SPDE with an absorbing boundary.

Subpackages cover particle simulation of the measure-valued solution,
a pathwise finite-difference solver, planar-cone analytics for the
corner decay, and exponent-measurement experiments.
"""

__version__ = "0.1.0"
