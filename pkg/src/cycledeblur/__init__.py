"""Cycle-consistent adversarial motion deblurring toolkit."""

__version__ = "0.1.0"
