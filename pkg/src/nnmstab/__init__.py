"""Stability of forced-damped periodic orbits perturbed from conservative families."""

__version__ = "0.1.0"
