"""Frequency-constrained microgrid scheduling with a ReLU nadir surrogate."""

__version__ = "0.1.0"
