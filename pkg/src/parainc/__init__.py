"""Numerical laboratory for parabolic equations with piecewise-smooth
coefficients and (possibly touching) inclusions.

Library layout:

- ``geometry``: domains, elliptical inclusions, interface-conforming meshes
- ``coefficients``: piecewise SPD coefficient fields and source data
- ``solver``: P1 finite elements, theta-scheme stepping, CG
- ``norms``: the scalar functionals of the gradient-estimate theory
- ``iteration``: level-set truncation and the geometric-decay iteration
- ``kernels``: fundamental-solution approximation and Gaussian-bound fits
- ``experiments``: reproducible experiment drivers (CSV + SVG), CLI
"""

from . import geometry, coefficients, solver, norms, iteration, kernels

__version__ = "0.1.0"
