"""Coercivity of nonlocal quadratic forms with degenerate kernels, on a grid."""

__version__ = "0.1.0"
