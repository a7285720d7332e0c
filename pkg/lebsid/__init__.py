"""Kernel-based identification of continuous-time systems from Lebesgue-sampled data."""

__version__ = "0.1.0"
