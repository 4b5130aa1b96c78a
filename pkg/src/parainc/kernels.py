"""Fundamental-solution approximation and Gaussian-bound fitting.

Point sources are realised as normalised discrete Gaussians (width a few
mesh cells) evolved with backward Euler and lumped mass on a padded box, so
the discrete kernel stays nonnegative and conserves mass until boundary
outflow.  Fits of the value and gradient envelopes run in log space inside
the window |x - xi|^2 + (t - tau) <= 16.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.linalg as sla

from .geometry import InclusionLayout, OuterDomain, graded_axis, mesh_from_axes
from .coefficients import CoefficientField, extend_outside
from .solver import ParabolicProblem, SpaceTimeField, solve_parabolic
from .norms import ParabolicCylinder, window_indices, _trapezoid_weights, _tri_mask


class KernelError(RuntimeError):
    pass


class FitError(KernelError):
    pass


FIT_WINDOW = 16.0  # the |x - xi|^2 + (t - tau) constraint of the gradient bound


@dataclass
class KernelEstimate:
    """Sampled approximation of the kernel started at (xi, tau).

    ``values`` holds nodal samples (times x value points), ``grad_norms``
    elementwise gradient magnitudes (times x gradient points).  For t < tau
    the kernel vanishes identically (the scheme never looks backward).
    """

    dimension: int
    xi: np.ndarray
    tau: float
    sigma: float
    times: np.ndarray
    value_points: np.ndarray   # (Nv, n)
    values: np.ndarray         # (T, Nv)
    grad_points: np.ndarray    # (Ng, n)
    grad_norms: np.ndarray     # (T, Ng)
    mass_weights: np.ndarray   # lumped weights at the value points
    mesh: object = None        # 2D only
    coeff: CoefficientField | None = None
    meta: dict = dc_field(default_factory=dict)

    @property
    def peak(self):
        return float(self.values.max())

    def value_at(self, x, t):
        """Nearest-sample lookup (diagnostics only)."""
        if t < self.tau:
            return 0.0
        k = int(np.argmin(np.abs(self.times - t)))
        j = int(np.argmin(np.linalg.norm(self.value_points - np.asarray(x), axis=1)))
        return float(self.values[k, j])

    def _samples(self, points, data, burn_in):
        burn = 10.0 * self.sigma**2 if burn_in is None else burn_in
        d2 = ((points - self.xi) ** 2).sum(axis=1)
        dts = self.times - self.tau
        sel = dts >= max(burn, 1e-12)
        dt = np.repeat(dts[sel], len(points))
        d2r = np.tile(d2, sel.sum())
        return d2r, dt, data[sel].ravel()

    def value_samples(self, burn_in=None):
        return self._samples(self.value_points, self.values, burn_in)

    def gradient_samples(self, burn_in=None):
        return self._samples(self.grad_points, self.grad_norms, burn_in)

    def on_axis_gradient(self, burn_in=None):
        """Per-time maxima of |grad Gamma| past the burn-in."""
        burn = 10.0 * self.sigma**2 if burn_in is None else burn_in
        dts = self.times - self.tau
        sel = dts >= max(burn, 1e-12)
        return dts[sel], self.grad_norms[sel].max(axis=1)

    def mass_history(self):
        return self.values @ self.mass_weights

    def positivity_defect(self):
        """min value / peak; 0 when the discrete kernel is nonnegative."""
        return min(float(self.values.min()) / self.peak, 0.0)


@dataclass(frozen=True)
class KernelGrid:
    """Discretisation request for a kernel evolution."""

    h: float                    # spacing in the finely resolved window
    fine_halfwidth: float       # half-width of the fine window around xi
    box_halfwidth: float | None = None   # padded box; None = derived from T
    tau_step: float = 1e-3
    growth: float = 1.3


def required_padding(Lam, T, ratio=1e-6):
    """Half-width so the comparison Gaussian tail at the boundary is < ratio."""
    return math.sqrt(4.0 * Lam * T * (math.log(1.0 / ratio) + 2.0))


def mollified_source(points, xi, sigma):
    d2 = ((points - np.asarray(xi)) ** 2).sum(axis=1)
    return np.exp(-d2 / (2.0 * sigma**2))


def approximate_kernel(coeff: CoefficientField, xi, tau, grid: KernelGrid,
                       T, sigma=None, dimension=2) -> KernelEstimate:
    """Evolve a mass-1 mollified source and sample the kernel and its gradient.

    ``coeff`` must carry the exterior extension when the box exceeds its
    layout (see :func:`parainc.coefficients.extend_outside`).  ``sigma``
    defaults to 4 grid cells.  Emits a boundary-contamination warning when
    the final boundary values exceed 1e-6 of the peak.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    sigma = 4.0 * grid.h if sigma is None else sigma
    if sigma < 2.0 * grid.h:
        raise KernelError("mollifier width must be at least two cells")
    if dimension == 1:
        return _kernel_1d(coeff, xi, tau, grid, T, sigma)
    return _kernel_2d(coeff, xi, tau, grid, T, sigma)


def _graded_1d(center, fine_hw, box_hw, h, growth):
    pts = [np.arange(center - fine_hw, center + fine_hw + 0.5 * h, h)]
    step, lo, hi = h, pts[0][0], pts[0][-1]
    left, right = [], []
    while hi < center + box_hw:
        step_r = min(step * growth, 8 * h * growth ** 6)
        hi += step_r
        right.append(hi)
        step = step_r
    step = h
    while lo > center - box_hw:
        step_l = min(step * growth, 8 * h * growth ** 6)
        lo -= step_l
        left.append(lo)
        step = step_l
    return np.concatenate([left[::-1], pts[0], right])


def _kernel_1d(coeff, xi, tau, grid, T, sigma):
    """Tridiagonal fast path: P1 elements on a graded line, lumped mass."""
    lam_eff = coeff.Lam
    box = grid.box_halfwidth or required_padding(lam_eff, T)
    xs = _graded_1d(xi[0], grid.fine_halfwidth, box, grid.h, grid.growth)
    n = len(xs)
    dx = np.diff(xs)
    mids = 0.5 * (xs[:-1] + xs[1:])
    # 1D coefficient: evaluate the 2x2 field on the line y = xi_y (or 0)
    pts = np.column_stack([mids, np.zeros_like(mids)])
    a_cells = _scalar_diffusivity(coeff, pts)

    # lumped mass and stiffness (tridiagonal)
    lump = np.zeros(n)
    lump[:-1] += 0.5 * dx
    lump[1:] += 0.5 * dx
    k_off = -a_cells / dx
    k_diag = np.zeros(n)
    k_diag[:-1] += a_cells / dx
    k_diag[1:] += a_cells / dx

    tau_t = grid.tau_step
    nsteps = int(round(T / tau_t))
    times = tau + tau_t * np.arange(nsteps + 1)

    ab = np.zeros((3, n))
    ab[0, 1:] = tau_t * k_off
    ab[1] = lump + tau_t * k_diag
    ab[2, :-1] = tau_t * k_off
    # zero Dirichlet at the ends
    ab[1, 0] = ab[1, -1] = 1.0
    ab[0, 1] = ab[2, -2] = 0.0

    u = mollified_source(xs[:, None], xi[:1], sigma)
    u[0] = u[-1] = 0.0
    u /= lump @ u

    values = np.empty((nsteps + 1, n))
    grads = np.empty((nsteps + 1, n - 1))
    values[0] = u
    grads[0] = np.abs(np.diff(u) / dx)
    for k in range(nsteps):
        rhs = lump * u
        rhs[0] = rhs[-1] = 0.0
        u = sla.solve_banded((1, 1), ab, rhs)
        values[k + 1] = u
        grads[k + 1] = np.abs(np.diff(u) / dx)

    est = KernelEstimate(1, xi[:1], tau, sigma, times, xs[:, None], values,
                         mids[:, None], grads, lump, coeff=coeff,
                         meta={"xs": xs, "tau_step": tau_t})
    _contamination_check(est)
    return est


def _scalar_diffusivity(coeff, pts):
    try:
        mats = coeff.evaluate(pts)
        return mats[:, 0, 0]
    except Exception:
        return np.ones(len(pts)) * coeff.Lam


def _kernel_2d(coeff, xi, tau, grid, T, sigma):
    layout = coeff.layout
    base_outer = layout.outer
    box = grid.box_halfwidth or required_padding(coeff.Lam, T)
    big_outer = OuterDomain("square", tuple(np.asarray(base_outer.center)), box)
    big_layout = InclusionLayout(big_outer, layout.inclusions, layout.gap_pair,
                                 layout.gap, layout.boundary_smoothness)
    cx, cy = big_outer.center
    fx = (max(cx - box, xi[0] - grid.fine_halfwidth),
          min(cx + box, xi[0] + grid.fine_halfwidth))
    fy = (max(cy - box, xi[1] - grid.fine_halfwidth),
          min(cy + box, xi[1] + grid.fine_halfwidth))
    xs = graded_axis(cx - box, cx + box, _far_step(grid), [(fx[0], fx[1], grid.h)])
    ys = graded_axis(cy - box, cy + box, _far_step(grid), [(fy[0], fy[1], grid.h)])
    mesh = mesh_from_axes(big_layout, xs, ys, grid.h)

    ext = coeff if coeff.exterior is not None else extend_outside(coeff, coeff.Lam)
    u0 = mollified_source(mesh.vertices, xi, sigma)
    u0[mesh.boundary_vertices] = 0.0
    from .solver import lumped_mass
    lump = lumped_mass(mesh).diagonal()
    u0 = u0 / (lump @ u0)
    problem = ParabolicProblem(mesh, ext, initial=u0, T=T, tau=grid.tau_step,
                               theta=1.0, mass="lumped", cg_tol=1e-10)
    fld = solve_parabolic(problem)
    times = tau + fld.times
    grads = np.empty((len(times), mesh.triangle_count))
    for k in range(len(times)):
        grads[k] = np.linalg.norm(fld.gradients(k), axis=1)
    est = KernelEstimate(2, xi, tau, sigma, times, mesh.vertices, fld.values,
                         mesh.barycenters, grads, lump, mesh=mesh, coeff=ext,
                         meta={"field": fld, "tau_step": grid.tau_step})
    _contamination_check(est)
    return est


def _far_step(grid):
    return min(16.0 * grid.h, 0.5)


def _contamination_check(est):
    if est.dimension == 1:
        edge = max(abs(est.values[-1, 0]), abs(est.values[-1, -1]))
    else:
        edge = float(np.abs(est.values[-1][est.mesh.boundary_vertices]).max())
    if edge > 1e-6 * est.peak:
        warnings.warn(f"boundary contamination {edge / est.peak:.1e} of peak",
                      RuntimeWarning)


def exact_gaussian_estimate(lam=1.0, dimension=1, xi=None, tau=0.0,
                            extent=6.0, h=0.02, times=None) -> KernelEstimate:
    """Closed-form constant-coefficient kernel sampled on a grid (test oracle)."""
    xi = np.zeros(dimension) if xi is None else np.asarray(xi, dtype=float)
    times = np.linspace(0.05, 2.0, 40) + tau if times is None else np.asarray(times)
    if dimension == 1:
        xs = np.arange(xi[0] - extent, xi[0] + extent + 0.5 * h, h)
        pts = xs[:, None]
        mids = 0.5 * (xs[:-1] + xs[1:])
        gpts = mids[:, None]
        lump = np.full(len(xs), h)
        lump[0] = lump[-1] = 0.5 * h
    else:
        axis = np.arange(-extent, extent + 0.5 * h, h)
        gx, gy = np.meshgrid(axis + xi[0], axis + xi[1], indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        gpts = pts
        lump = np.full(len(pts), h * h)
    vals = np.empty((len(times), len(pts)))
    gvals = np.empty((len(times), len(gpts)))
    for k, t in enumerate(times):
        dt = t - tau
        if dt <= 0:
            vals[k] = 0.0
            gvals[k] = 0.0
            continue
        vals[k] = heat_kernel_value(pts, dt, xi, lam, dimension)
        gvals[k] = heat_kernel_gradnorm(gpts, dt, xi, lam, dimension)
    return KernelEstimate(dimension, xi, tau, math.sqrt(h), times, pts, vals,
                          gpts, gvals, lump, meta={"exact": True, "lam": lam})


def heat_kernel_value(points, dt, xi, lam=1.0, dimension=None):
    pts = np.atleast_2d(points)
    n = pts.shape[1] if dimension is None else dimension
    d2 = ((pts - np.asarray(xi)) ** 2).sum(axis=1)
    return (4.0 * math.pi * lam * dt) ** (-n / 2.0) * np.exp(-d2 / (4.0 * lam * dt))


def heat_kernel_gradnorm(points, dt, xi, lam=1.0, dimension=None):
    pts = np.atleast_2d(points)
    d = np.linalg.norm(pts - np.asarray(xi), axis=1)
    return d / (2.0 * lam * dt) * heat_kernel_value(points, dt, xi, lam, dimension)


@dataclass
class GaussianFit:
    """Least-squares Gaussian envelope parameters in log space."""

    C_hat: float
    c_hat: float
    exponent: float
    residual: float
    window: float
    samples: int
    envelope_constant: float = 0.0
    on_axis_exponent: float | None = None


def _fit(d2, dt, vals, peak, n, window, floor):
    sel = (vals > floor * peak) & (d2 + dt <= window) & (dt > 0)
    if sel.sum() < 50:
        raise FitError(f"only {int(sel.sum())} usable samples inside the window")
    d2, dt, vals = d2[sel], dt[sel], vals[sel]
    y = np.log(vals)
    X = np.column_stack([np.ones_like(dt), -np.log(dt), -d2 / dt])
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < 3:
        raise FitError("degenerate fit: rank-deficient design matrix")
    resid = float(np.abs(y - X @ coef).max())
    C_hat = math.exp(coef[0])
    e_hat, c_hat = float(coef[1]), float(coef[2])
    env = float((vals * dt ** (n / 2.0) * np.exp(c_hat * d2 / dt)).max())
    return GaussianFit(C_hat, c_hat, e_hat, resid, window, int(sel.sum()),
                       envelope_constant=env)


def gaussian_fit(est: KernelEstimate, burn_in=None, window=FIT_WINDOW,
                 floor=1e-12) -> GaussianFit:
    """Fit log G ~ log C - e log(t-tau) - c |x-xi|^2/(t-tau) on the window."""
    d2, dt, vals = est.value_samples(burn_in)
    return _fit(d2, dt, vals, est.peak, est.dimension, window, floor)


def gradient_gaussian_fit(est: KernelEstimate, burn_in=None, window=FIT_WINDOW,
                          floor=1e-12) -> GaussianFit:
    """Same fit on |grad G|, plus the on-axis decay exponent of max_x |grad G|."""
    d2, dt, vals = est.gradient_samples(burn_in)
    peak = float(vals.max())
    fit = _fit(d2, dt, vals, peak, est.dimension, window, floor)
    dts, maxg = est.on_axis_gradient(burn_in)
    ok = maxg > 0
    if ok.sum() >= 3:
        slope = np.polyfit(np.log(dts[ok]), np.log(maxg[ok]), 1)[0]
        fit.on_axis_exponent = float(-slope)
    return fit


def fit_summary_text(fit: GaussianFit):
    """Structured text summary (deterministic key order)."""
    lines = [
        f"C_hat = {fit.C_hat!r}",
        f"c_hat = {fit.c_hat!r}",
        f"exponent = {fit.exponent!r}",
        f"residual = {fit.residual!r}",
        f"window = {fit.window!r}",
        f"samples = {fit.samples}",
        f"envelope_constant = {fit.envelope_constant!r}",
    ]
    if fit.on_axis_exponent is not None:
        lines.append(f"on_axis_exponent = {fit.on_axis_exponent!r}")
    return "\n".join(lines) + "\n"


def cylinder_l2(est: KernelEstimate, x0, t0, c_hat=None):
    """L2 mass of the kernel on the cylinder pinned at (x0, t0).

    Uses rho = (|x0 - xi|^2 + t0 - tau)^(1/2) / 4; returns (lhs, rhs_shape)
    with rhs_shape = rho^n (t0-tau)^-(n-1) exp(-2 c |x0-xi|^2/(t0-tau)).
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    d2 = float(((x0 - est.xi) ** 2).sum())
    dt0 = t0 - est.tau
    if dt0 <= 0:
        raise KernelError("t0 must exceed the source time")
    rho = math.sqrt(d2 + dt0) / 4.0
    lhs = _l2sq_cylinder(est, x0, t0, rho)
    if c_hat is None:
        c_hat = gaussian_fit(est).c_hat
    n = est.dimension
    rhs = rho**n * dt0 ** (-(n - 1)) * math.exp(-2.0 * c_hat * d2 / dt0)
    return lhs, rhs


def _l2sq_cylinder(est, x0, t0, rho):
    t_lo = t0 - rho**2
    times = est.times
    if t0 > times[-1] + 1e-12:
        raise KernelError("cylinder exits the sampled time range")
    if est.dimension == 1:
        xs = est.value_points[:, 0]
        if x0[0] - rho < xs[0] - 1e-12 or x0[0] + rho > xs[-1] + 1e-12:
            raise KernelError("cylinder exits the sampled grid")
        inside = np.abs(xs - x0[0]) <= rho
        sub = est.values[:, inside]
        w = np.zeros(inside.sum())
        dxs = np.diff(xs[inside])
        w[:-1] += 0.5 * dxs
        w[1:] += 0.5 * dxs
        per_slice = (sub**2) @ w
    else:
        mesh = est.mesh
        cyl = ParabolicCylinder(tuple(x0), t0, rho)
        if mesh.layout.outer.boundary_distance(x0[None, :])[0] < rho:
            raise KernelError("cylinder exits the sampled grid")
        mask = _tri_mask(mesh, ball=cyl)
        per_slice = np.empty(len(times))
        for k in range(len(times)):
            v = est.values[k][mesh.triangles[mask]]
            s = v.sum(axis=1)
            per_slice[k] = float((mesh.areas[mask] / 12.0 * (s * s + (v * v).sum(axis=1))).sum())
    lo = max(t_lo, times[0])
    i0, i1 = window_indices(times, lo, min(t0, times[-1]))
    w = _trapezoid_weights(times, i0, i1)
    return float((w * per_slice[i0:i1 + 1]).sum())


# --- the scale-invariance ratio ------------------------------------------------

def scaling_check(u_value, u_grad, x0, t0, rho_list, dimension=2,
                  quad=(12, 24, 64)):
    """R(rho) = sup_{Q_{rho/2}} |grad u| * rho^(n/2+2) / |u|_{L2(Q_rho)}.

    ``u_value``/``u_grad`` are callables (points, t); the caller asserts that
    u solves the homogeneous equation on each cylinder.  Quadrature is
    Gauss-Legendre in time and radius and trapezoid in angle, so polynomial
    caloric functions are integrated essentially exactly.
    """
    x0 = np.asarray(x0, dtype=float)
    nt, nr, na = quad
    gl_t, gw_t = np.polynomial.legendre.leggauss(nt)
    gl_r, gw_r = np.polynomial.legendre.leggauss(nr)
    out = {}
    for rho in rho_list:
        t_lo = t0 - rho**2
        ts = t_lo + (gl_t + 1.0) * 0.5 * rho**2
        wt = gw_t * 0.5 * rho**2
        rs = (gl_r + 1.0) * 0.5 * rho
        wr = gw_r * 0.5 * rho
        th = np.linspace(0.0, 2.0 * math.pi, na, endpoint=False)
        ring = np.column_stack([np.cos(th), np.sin(th)])
        pts = (rs[:, None, None] * ring[None, :, :]).reshape(-1, 2) + x0
        wsp = np.repeat(wr * rs, na) * (2.0 * math.pi / na)
        l2sq = 0.0
        for t, w in zip(ts, wt):
            vals = np.asarray(u_value(pts, t), dtype=float)
            l2sq += w * float((wsp * vals**2).sum())
        if l2sq <= 0:
            raise KernelError("u vanishes on the cylinder")
        # sup |grad u| on Q_{rho/2}: dense sampling, center included
        half = rho / 2.0
        rs2 = np.linspace(0.0, half, 24)
        th2 = np.linspace(0.0, 2.0 * math.pi, 48, endpoint=False)
        ring2 = np.column_stack([np.cos(th2), np.sin(th2)])
        pts2 = (rs2[:, None, None] * ring2[None, :, :]).reshape(-1, 2) + x0
        sup = 0.0
        for t in np.linspace(t0 - half**2, t0, 12):
            g = np.asarray(u_grad(pts2, t), dtype=float)
            sup = max(sup, float(np.linalg.norm(g, axis=1).max()))
        out[rho] = sup * rho ** (dimension / 2.0 + 2.0) / math.sqrt(l2sq)
    return out


def scaling_check_field(u: SpaceTimeField, x0, t0, rho_list, dimension=2):
    """Same ratio for a discrete field: P1-exact L2, elementwise sup gradient."""
    from .norms import l2_space_time
    mesh = u.mesh
    out = {}
    for rho in rho_list:
        cyl = ParabolicCylinder(tuple(x0), t0, rho)
        l2 = l2_space_time(u, cylinder=cyl)
        if l2 <= 0:
            raise KernelError("u vanishes on the cylinder")
        half = cyl.scaled(0.5)
        i0, i1 = window_indices(u.times, half.t_lo, half.top_time)
        mask = _tri_mask(mesh, ball=half)
        sup = 0.0
        for k in range(i0, i1 + 1):
            g = u.gradients(k)[mask]
            if len(g):
                sup = max(sup, float(np.linalg.norm(g, axis=1).max()))
        out[rho] = sup * rho ** (dimension / 2.0 + 2.0) / l2
    return out
