"""Moreau-envelope regularization of Gaussian chance constraints."""

__version__ = "0.1.0"
