"""Desk-scale visual-search RL: a tiny stochastic policy learns to crop into
high-resolution synthetic images, trained with group-relative policy gradients
from a binary answer reward alone."""

__version__ = "0.1.0"
