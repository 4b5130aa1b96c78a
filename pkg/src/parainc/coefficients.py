"""Piecewise matrix-valued coefficient fields and ellipticity diagnostics.

A coefficient field maps points to symmetric positive definite 2x2 matrices,
constant or smooth per material region.  Includes the classical anisotropic
radial field (parametrised by a contrast M > 1) whose exact solution has
Hoelder exponent 1/sqrt(M), and the constant extension used to pose kernel
problems on an enlarged box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import InclusionLayout


class CoefficientError(ValueError):
    pass


def _eig2_sym(mats):
    """Eigenvalues of symmetric 2x2 matrices, shape (..., 2, 2) -> (..., 2)."""
    a = mats[..., 0, 0]
    b = mats[..., 0, 1]
    d = mats[..., 1, 1]
    tr = 0.5 * (a + d)
    disc = np.sqrt(np.maximum(0.25 * (a - d) ** 2 + b**2, 0.0))
    return np.stack([tr - disc, tr + disc], axis=-1)


@dataclass(frozen=True)
class CoefficientField:
    """Per-region coefficient evaluators with declared ellipticity pair.

    ``region_evaluators[m]`` maps points (N, 2) to matrices (N, 2, 2) for
    region index m (1-based; the background is region L).  ``exterior``
    optionally supplies the matrix outside the outer domain.
    """

    layout: InclusionLayout
    region_evaluators: dict
    lam: float
    Lam: float
    smoothness: float = 0.9  # Hoelder exponent of the per-region branches, metadata
    exterior: np.ndarray | None = None

    def evaluate(self, points, regions=None):
        """Matrices a(x) at ``points`` (N, 2); regions may be precomputed tags."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty((len(pts), 2, 2))
        inside = self.layout.outer.contains(pts, tol=1e-12)
        if regions is None:
            regions = np.full(len(pts), -1, dtype=int)
            if np.any(inside):
                regions[inside] = self.layout.classify(pts[inside])
        else:
            regions = np.where(inside, regions, -1)
        for m, ev in self.region_evaluators.items():
            sel = regions == m
            if np.any(sel):
                out[sel] = ev(pts[sel])
        outside = regions == -1
        if np.any(outside):
            if self.exterior is None:
                raise CoefficientError("field queried outside the outer domain")
            out[outside] = self.exterior
        return out

    def __call__(self, points, regions=None):
        return self.evaluate(points, regions)


def _constant_evaluator(mat):
    mat = np.asarray(mat, dtype=float)

    def ev(points):
        return np.broadcast_to(mat, (len(points), 2, 2)).copy()

    return ev


def piecewise_contrast_field(layout, per_region):
    """Region-wise constant SPD matrices; (lam, Lam) from their eigenvalues.

    ``per_region`` lists one 2x2 SPD matrix per region 1..L.
    """
    if len(per_region) != layout.region_count:
        raise CoefficientError(
            f"need {layout.region_count} matrices, got {len(per_region)}")
    evaluators = {}
    eigs = []
    for m, mat in enumerate(per_region, start=1):
        mat = np.asarray(mat, dtype=float)
        if mat.shape != (2, 2) or abs(mat[0, 1] - mat[1, 0]) > 1e-14:
            raise CoefficientError(f"region {m} matrix is not symmetric 2x2")
        ev = _eig2_sym(mat)
        if ev[0] <= 0:
            raise CoefficientError(f"region {m} matrix is not positive definite")
        eigs.append(ev)
        evaluators[m] = _constant_evaluator(mat)
    eigs = np.asarray(eigs)
    return CoefficientField(layout, evaluators,
                            float(eigs[:, 0].min()), float(eigs[:, 1].max()))


def identity_field(layout, scale=1.0):
    return piecewise_contrast_field(
        layout, [scale * np.eye(2)] * layout.region_count)


def meyers_field(layout, M):
    """The radially anisotropic field I + (M-1) xx^T/|x|^2, eigenvalues {1, M}.

    The value at the origin is set to I (the singularity is removable for
    the PDE).  Requires M > 1.
    """
    if not M > 1.0:
        raise CoefficientError("M must exceed 1")

    def ev(points):
        pts = np.atleast_2d(points)
        r2 = np.einsum("ij,ij->i", pts, pts)
        out = np.broadcast_to(np.eye(2), (len(pts), 2, 2)).copy()
        ok = r2 > 0
        xn = pts[ok] / np.sqrt(r2[ok])[:, None]
        out[ok] += (M - 1.0) * np.einsum("ij,ik->ijk", xn, xn)
        return out

    evaluators = {m: ev for m in range(1, layout.region_count + 1)}
    return CoefficientField(layout, evaluators, 1.0, float(M), smoothness=1.0)


def meyers_solution(x, M):
    """|x|^(1/sqrt(M)) * x1/|x|, extended by 0 at the origin.

    This is the classical example showing the Hoelder exponent 1/sqrt(M) is
    attained for merely bounded measurable coefficients; it solves the
    stationary equation for :func:`meyers_field` exactly.
    """
    if not M > 1.0:
        raise CoefficientError("M must exceed 1")
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    r = np.linalg.norm(pts, axis=1)
    out = np.zeros(len(pts))
    ok = r > 0
    out[ok] = r[ok] ** (1.0 / math.sqrt(M)) * pts[ok, 0] / r[ok]
    if np.asarray(x).ndim == 1:
        return float(out[0])
    return out


def meyers_gradient(x, M):
    """Exact gradient of :func:`meyers_solution` (zero at the origin)."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    g = 1.0 / math.sqrt(M)
    r = np.linalg.norm(pts, axis=1)
    out = np.zeros_like(pts)
    ok = r > 0
    rr, xx, yy = r[ok], pts[ok, 0], pts[ok, 1]
    # u = r^g cos(theta): du/dx = r^(g-2) * (g x^2 + y^2) / r ... via polar chain rule
    ct, st = xx / rr, yy / rr
    ur = g * rr ** (g - 1) * ct
    ut = -(rr ** (g - 1)) * st
    out[ok, 0] = ur * ct - ut * st
    out[ok, 1] = ur * st + ut * ct
    return out


def extend_outside(base: CoefficientField, Lam):
    """Extend a field by Lam*I beyond the outer domain (ellipticity preserved)."""
    if Lam < base.Lam - 1e-12:
        raise CoefficientError("extension constant must dominate the field's Lam")
    return CoefficientField(base.layout, base.region_evaluators,
                            base.lam, base.Lam, base.smoothness,
                            exterior=float(Lam) * np.eye(2))


def _halton(count, base, start=1):
    out = np.empty(count)
    for i in range(count):
        n, f, r = start + i, 1.0, 0.0
        while n > 0:
            f /= base
            r += f * (n % base)
            n //= base
        out[i] = r
    return out


def ellipticity_sample_points(layout, count):
    """Deterministic low-discrepancy points in the outer domain."""
    xl, xh, yl, yh = layout.outer.bounds
    pts = np.column_stack([
        xl + (xh - xl) * _halton(2 * count, 2),
        yl + (yh - yl) * _halton(2 * count, 3),
    ])
    pts = pts[layout.outer.contains(pts)]
    return pts[:count]


def ellipticity_bounds(field, sample_count=2048):
    """Sampled (lam_hat, Lam_hat): extreme eigenvalues of a(x) over the domain."""
    if sample_count < 1:
        raise CoefficientError("sample_count must be at least 1")
    pts = ellipticity_sample_points(field.layout, sample_count)
    mats = field.evaluate(pts)
    asym = np.abs(mats[:, 0, 1] - mats[:, 1, 0]).max()
    if asym > 1e-13:
        raise CoefficientError(f"sampled matrix asymmetry {asym:.2e}")
    eigs = _eig2_sym(mats)
    lam_hat, Lam_hat = float(eigs[:, 0].min()), float(eigs[:, 1].max())
    if lam_hat < field.lam - 1e-10 or Lam_hat > field.Lam + 1e-10:
        raise CoefficientError(
            "declared ellipticity pair does not bracket the sampled eigenvalues")
    return lam_hat, Lam_hat


@dataclass(frozen=True)
class SourceData:
    """Right-hand side data: a scalar source f and a flux-type vector (f_1, f_2).

    All callables take (points (N, 2), t) and return (N,) arrays; ``None``
    means identically zero.  Time derivatives may be supplied in closed form;
    otherwise they are approximated by central differences with lag ``fd_lag``.
    ``p`` is the integrability exponent (p > n + 2 = 4 in two dimensions) and
    ``kappa = p (n + 2) / (n + 2 + p)``.
    """

    f: Callable | None = None
    f_i: tuple = (None, None)
    df_dt: Callable | None = None
    dfi_dt: tuple = (None, None)
    p: float = 6.0
    dimension: int = 2
    fd_lag: float = 1e-4

    def __post_init__(self):
        if not self.p > self.dimension + 2:
            raise CoefficientError("p must exceed n + 2")

    @property
    def kappa(self):
        n = self.dimension
        return self.p * (n + 2) / (n + 2 + self.p)

    def eval_f(self, points, t):
        if self.f is None:
            return np.zeros(len(points))
        return np.asarray(self.f(points, t), dtype=float)

    def eval_fi(self, i, points, t):
        fi = self.f_i[i]
        if fi is None:
            return np.zeros(len(points))
        return np.asarray(fi(points, t), dtype=float)

    def eval_df_dt(self, points, t):
        if self.df_dt is not None:
            return np.asarray(self.df_dt(points, t), dtype=float)
        if self.f is None:
            return np.zeros(len(points))
        lag = self.fd_lag
        return (self.eval_f(points, t + lag) - self.eval_f(points, t - lag)) / (2 * lag)

    def eval_dfi_dt(self, i, points, t):
        d = self.dfi_dt[i]
        if d is not None:
            return np.asarray(d(points, t), dtype=float)
        if self.f_i[i] is None:
            return np.zeros(len(points))
        lag = self.fd_lag
        return (self.eval_fi(i, points, t + lag) - self.eval_fi(i, points, t - lag)) / (2 * lag)

    @property
    def is_zero(self):
        return self.f is None and all(fi is None for fi in self.f_i)


ZERO_SOURCES = SourceData()
