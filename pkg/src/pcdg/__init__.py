"""Laplace-Beltrami problems on point clouds with discontinuous Galerkin methods.

Local polynomial patches are reconstructed from raw surface samples over a
flat reference mesh; an interior penalty DG method is then assembled on the
(possibly mutually discontinuous) patches.
"""
__version__ = "0.1.0"
