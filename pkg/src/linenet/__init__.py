"""Finite-buffer erasure line networks: exact capacity, bounds,
iterative estimates, delay profiles, and validating simulators."""

__version__ = "0.1.0"

from .model import NetworkSpec  # noqa: F401
