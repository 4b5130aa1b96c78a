"""Discrete norm functionals used by the gradient-estimate experiments.

Everything operates on P1 space-time fields: exact per-element integration
in space, trapezoid rule in time.  Parabolic cylinders snap outward to whole
time steps; spatial balls select whole triangles by barycenter membership;
the shrunk region D_eps selects triangles whose three vertices satisfy the
distance predicate (conservative inclusion).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .geometry import InclusionLayout, ShrunkRegion
from .coefficients import SourceData
from .solver import SpaceTimeField, quadrature_points


class NormError(ValueError):
    pass


@dataclass(frozen=True)
class ParabolicCylinder:
    """Q_rho = B_rho(x0) x (t0 - rho^2, t0]."""

    center: tuple[float, float]
    top_time: float
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise NormError("cylinder radius must be positive")

    @property
    def t_lo(self):
        return self.top_time - self.radius**2

    def scaled(self, factor):
        return ParabolicCylinder(self.center, self.top_time, factor * self.radius)

    def ball_mask(self, points, radius=None):
        r = self.radius if radius is None else radius
        rel = np.atleast_2d(points) - np.asarray(self.center)
        return np.einsum("ij,ij->i", rel, rel) <= r * r * (1.0 + 1e-12)


def window_indices(times, t_lo, t_hi, outward=True):
    """Contiguous slice indices covering (t_lo, t_hi], snapped to the grid.

    ``outward=True`` rounds the lower end down and the upper end up (whole
    steps); otherwise only slices strictly inside are kept.
    """
    times = np.asarray(times)
    if t_hi <= t_lo:
        raise NormError("empty time window")
    if outward:
        i0 = int(np.searchsorted(times, t_lo, side="right")) - 1
        i0 = max(i0, 0)
        i1 = int(np.searchsorted(times, t_hi, side="left"))
        i1 = min(i1, len(times) - 1)
    else:
        i0 = int(np.searchsorted(times, t_lo, side="left"))
        i1 = int(np.searchsorted(times, t_hi, side="right")) - 1
    if i1 <= i0:
        i1 = min(i0 + 1, len(times) - 1)
    if i1 == i0:
        raise NormError("time window contains no step")
    return i0, i1


def _trapezoid_weights(times, i0, i1):
    t = times[i0:i1 + 1]
    w = np.zeros(len(t))
    dt = np.diff(t)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def _tri_mask(mesh, region_pred=None, shrunk: ShrunkRegion | None = None,
              ball: ParabolicCylinder | None = None, ball_radius=None):
    mask = np.ones(mesh.triangle_count, dtype=bool)
    if region_pred is not None:
        mask &= np.asarray([region_pred(m) for m in mesh.region_tag])
    if shrunk is not None:
        d = shrunk.base.outer.boundary_distance(mesh.vertices)
        inside = d > shrunk.epsilon
        mask &= inside[mesh.triangles].all(axis=1)
    if ball is not None:
        mask &= ball.ball_mask(mesh.barycenters, ball_radius)
    return mask


def _slice_l2sq(mesh, nodal, mask):
    """Exact integral of the square of a P1 slice over masked triangles."""
    v = nodal[mesh.triangles[mask]]
    s = v.sum(axis=1)
    return float((mesh.areas[mask] / 12.0 * (s * s + (v * v).sum(axis=1))).sum())


def l2_space_time(u: SpaceTimeField, region_pred=None, window=None,
                  shrunk=None, cylinder: ParabolicCylinder | None = None):
    """L2 norm of u over Q (optionally restricted in space and time)."""
    mesh = u.mesh
    if cylinder is not None:
        window = (cylinder.t_lo, cylinder.top_time)
    if window is None:
        window = (u.times[0], u.times[-1])
    i0, i1 = window_indices(u.times, *window)
    w = _trapezoid_weights(u.times, i0, i1)
    mask = _tri_mask(mesh, region_pred, shrunk, cylinder)
    total = 0.0
    for j, k in enumerate(range(i0, i1 + 1)):
        total += w[j] * _slice_l2sq(mesh, u.values[k], mask)
    return math.sqrt(total)


def slice_l2(u: SpaceTimeField, k, region_pred=None, shrunk=None):
    mask = _tri_mask(u.mesh, region_pred, shrunk)
    return math.sqrt(_slice_l2sq(u.mesh, u.values[k], mask))


def sup_l2_slices(u: SpaceTimeField, shrunk: ShrunkRegion, eps=None):
    """sup over discrete t > eps^2 of the slice L2 norm on D_eps."""
    eps = shrunk.epsilon if eps is None else eps
    if eps**2 >= u.times[-1]:
        raise NormError("eps^2 must be smaller than the final time")
    mask = _tri_mask(u.mesh, shrunk=shrunk)
    if not np.any(mask):
        raise NormError("the shrunk region contains no whole triangle")
    best = 0.0
    for k in range(len(u.times)):
        if u.times[k] <= eps**2:
            continue
        best = max(best, math.sqrt(_slice_l2sq(u.mesh, u.values[k], mask)))
    return best


def linf_interior(u: SpaceTimeField, shrunk: ShrunkRegion, eps=None):
    """sup |u| over nodes of D_eps triangles and slices t > eps^2."""
    eps = shrunk.epsilon if eps is None else eps
    mask = _tri_mask(u.mesh, shrunk=shrunk)
    nodes = np.unique(u.mesh.triangles[mask].ravel())
    sel = u.times > eps**2
    if not sel.any() or len(nodes) == 0:
        raise NormError("empty interior window")
    return float(np.abs(u.values[np.ix_(sel, nodes)]).max())


def piecewise_grad_sup(u: SpaceTimeField, layout: InclusionLayout,
                       shrunk: ShrunkRegion | None, t_window=None):
    """Per-region sup of elementwise |grad u| on D_eps over the time window."""
    mesh = u.mesh
    if t_window is None:
        t_window = (u.times[0], u.times[-1])
    base = _tri_mask(mesh, shrunk=shrunk)
    out = []
    ks = [k for k in range(len(u.times)) if t_window[0] <= u.times[k] <= t_window[1]]
    if len(u.times) == 1:
        ks = [0]
    gnorms = [np.linalg.norm(u.gradients(k), axis=1) for k in ks]
    for m in range(1, layout.region_count + 1):
        mask = base & (mesh.region_tag == m)
        if not np.any(mask):
            out.append(0.0)
            continue
        out.append(float(max(g[mask].max() for g in gnorms)))
    return out


def holder_seminorm_grad(u: SpaceTimeField, region, alpha_prime, t_slice=None,
                         pair_budget=4000, seed=0, shrunk=None, min_sep=None):
    """Sampled Hoelder quotient of the elementwise gradient within one region.

    Pairs of element barycenters (same region, separation >= 2h) are drawn
    deterministically; the maximum of |grad u(x) - grad u(y)| / |x-y|^a' is
    returned.
    """
    if not 0 < alpha_prime < 1:
        raise NormError("alpha' must lie in (0, 1)")
    mesh = u.mesh
    k = len(u.times) - 1 if t_slice is None else int(np.argmin(np.abs(u.times - t_slice)))
    mask = _tri_mask(mesh, shrunk=shrunk) & (mesh.region_tag == region)
    idx = np.where(mask)[0]
    if len(idx) < 2:
        return 0.0
    grads = u.gradients(k)[idx]
    bary = mesh.barycenters[idx]
    sep = 2.0 * mesh.h if min_sep is None else min_sep
    rng = np.random.default_rng(seed)
    n = len(idx)
    ia = rng.integers(0, n, size=pair_budget)
    ib = rng.integers(0, n, size=pair_budget)
    d = np.linalg.norm(bary[ia] - bary[ib], axis=1)
    ok = d >= sep
    if not np.any(ok):
        return 0.0
    dg = np.linalg.norm(grads[ia[ok]] - grads[ib[ok]], axis=1)
    return float((dg / d[ok] ** alpha_prime).max())


def piecewise_c1alpha(u, layout, shrunk, alpha_prime, t_window=None, pair_budget=4000):
    """Discrete C^{1,a'} norm per region: sup|u| + sup|grad u| + Hoelder quotient."""
    mesh = u.mesh
    sups = piecewise_grad_sup(u, layout, shrunk, t_window)
    if t_window is None:
        t_window = (u.times[0], u.times[-1])
    ks = [k for k in range(len(u.times)) if t_window[0] <= u.times[k] <= t_window[1]]
    if not ks:
        ks = [len(u.times) - 1]
    out = []
    base = _tri_mask(mesh, shrunk=shrunk)
    for m in range(1, layout.region_count + 1):
        mask = base & (mesh.region_tag == m)
        if not np.any(mask):
            out.append(0.0)
            continue
        nodes = np.unique(mesh.triangles[mask].ravel())
        supu = float(max(np.abs(u.values[k][nodes]).max() for k in ks))
        hq = max(holder_seminorm_grad(u, m, alpha_prime, u.times[k],
                                      pair_budget, seed=m, shrunk=shrunk)
                 for k in ks[-1:])  # quotient on the final slice of the window
        out.append(supu + sups[m - 1] + hq)
    return out


def osc(u: SpaceTimeField, cylinder: ParabolicCylinder):
    """max - min of nodal values over B_rho(x0) nodes and the snapped window."""
    mesh = u.mesh
    i0, i1 = window_indices(u.times, cylinder.t_lo, cylinder.top_time)
    rel = mesh.vertices - np.asarray(cylinder.center)
    nodes = np.where(np.einsum("ij,ij->i", rel, rel)
                     <= cylinder.radius**2 * (1.0 + 1e-12))[0]
    if len(nodes) == 0:
        raise NormError("cylinder contains no mesh node")
    vals = u.values[i0:i1 + 1][:, nodes]
    return float(vals.max() - vals.min())


def steklov_mean(u: SpaceTimeField, h_lag):
    """Forward time average (1/h) integral_t^{t+h} u; defined for t + h <= T."""
    tau = u.tau
    steps = h_lag / tau
    if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
        raise NormError("h_lag must be a positive multiple of the time step")
    s = int(round(steps))
    if s >= len(u.times):
        raise NormError("lag window exceeds the time range")
    n = len(u.times) - s
    out = np.empty((n, u.mesh.vertex_count))
    for k in range(n):
        seg = u.values[k:k + s + 1]
        w = np.full(s + 1, tau)
        w[0] = w[-1] = 0.5 * tau
        out[k] = (w[:, None] * seg).sum(axis=0) / h_lag
    return SpaceTimeField(u.mesh, u.times[:n], out,
                          {**u.meta, "steklov_lag": h_lag})


def dt_field(u: SpaceTimeField):
    """Backward-difference time derivative on the shifted grid."""
    if len(u.times) < 2:
        raise NormError("need at least two slices for a time derivative")
    vals = (u.values[1:] - u.values[:-1]) / u.tau
    return SpaceTimeField(u.mesh, u.times[1:], vals, {**u.meta, "derived": "dt"})


# --- source norms ------------------------------------------------------------

def lq_space_time(func, mesh, times, q, window=None, cylinder=None, order=2):
    """L^q norm of a callable (points, t) over Q: element quadrature + trapezoid."""
    if window is None:
        window = (times[0], times[-1])
    if cylinder is not None:
        window = (cylinder.t_lo, cylinder.top_time)
    i0, i1 = window_indices(times, *window)
    w = _trapezoid_weights(times, i0, i1)
    mask = _tri_mask(mesh, ball=cylinder)
    qpts, qw = quadrature_points(mesh, order)
    pts = qpts[mask].reshape(-1, 2)
    aw = (mesh.areas[mask][:, None] * qw[None, :]).ravel()
    total = 0.0
    for j, k in enumerate(range(i0, i1 + 1)):
        vals = np.abs(np.asarray(func(pts, times[k]), dtype=float))
        total += w[j] * float((aw * vals**q).sum())
    return total ** (1.0 / q)


def linf_space_time(func, mesh, times, window=None, cylinder=None):
    if window is None:
        window = (times[0], times[-1])
    if cylinder is not None:
        window = (cylinder.t_lo, cylinder.top_time)
    i0, i1 = window_indices(times, *window)
    mask = _tri_mask(mesh, ball=cylinder)
    qpts, _ = quadrature_points(mesh)
    pts = qpts[mask].reshape(-1, 2)
    best = 0.0
    for k in range(i0, i1 + 1):
        best = max(best, float(np.abs(np.asarray(func(pts, times[k]))).max()))
    return best


def holder_norm_spatial(func, mesh, region, alpha_prime, t, pair_budget=2000, seed=1):
    """sup|g| + sampled Hoelder quotient of g(., t) on one region."""
    mask = mesh.region_tag == region
    idx = np.where(mask)[0]
    if len(idx) == 0:
        return 0.0
    bary = mesh.barycenters[idx]
    vals = np.asarray(func(bary, t), dtype=float)
    sup = float(np.abs(vals).max())
    rng = np.random.default_rng(seed)
    n = len(idx)
    ia = rng.integers(0, n, size=pair_budget)
    ib = rng.integers(0, n, size=pair_budget)
    d = np.linalg.norm(bary[ia] - bary[ib], axis=1)
    ok = d > 0
    if np.any(ok):
        quot = float((np.abs(vals[ia[ok]] - vals[ib[ok]]) / d[ok] ** alpha_prime).max())
    else:
        quot = 0.0
    return sup + quot


@dataclass
class NormReport:
    """All scalar functionals of one solve, plus measured inequality ratios."""

    F0: float = 0.0
    F1: float = 0.0
    Fstar: float = 0.0
    Fstarstar: float = 0.0
    F0_rho: float = 0.0
    sup_l2_slice: float = 0.0
    linf_interior: float = 0.0
    piecewise_c1alpha: list = dc_field(default_factory=list)
    osc: float = 0.0
    empirical_constants: dict = dc_field(default_factory=dict)

    CSV_FIELDS = ("F0", "F1", "Fstar", "Fstarstar", "F0_rho",
                  "sup_l2_slice", "linf_interior", "osc")

    def validate(self):
        vals = [self.F0, self.F1, self.Fstar, self.Fstarstar, self.F0_rho,
                self.sup_l2_slice, self.linf_interior, self.osc]
        vals += list(self.piecewise_c1alpha) + list(self.empirical_constants.values())
        if any(v < 0 for v in vals):
            raise NormError("norm report contains a negative entry")
        return self


def source_norms(sources: SourceData, layout, mesh, times,
                 alpha_prime=0.2, cylinder=None) -> NormReport:
    """The F functionals: F0, F1, F*, F**, and F_{0,rho} when a cylinder is given.

    F0   = |f|_kappa + sum_i |f_i|_p
    F1   = |f|_max(2,kappa) + sum_i (|f_i|_p + |df_i/dt|_2)
    F*   = |f|_kappa + |f|_max(2,kappa) + |f|_inf + |df/dt|_kappa
    F**  = sum_i (|f_i|_p + |df_i/dt|_2 + |df_i/dt|_p
                  + sum_m sup_t |f_i(.,t)|_{C^a'(region m)})
    """
    p = sources.p
    n = sources.dimension
    if not p > n + 2:
        raise NormError("p must exceed n + 2")
    kappa = sources.kappa
    rep = NormReport()
    if sources.f is not None:
        f = sources.eval_f
        rep_f_kappa = lq_space_time(f, mesh, times, kappa)
        rep_f_maxk = lq_space_time(f, mesh, times, max(2.0, kappa))
        rep_f_inf = linf_space_time(f, mesh, times)
        dfdt_kappa = lq_space_time(sources.eval_df_dt, mesh, times, kappa)
    else:
        rep_f_kappa = rep_f_maxk = rep_f_inf = dfdt_kappa = 0.0
    fi_p, dfi_2, dfi_p, fi_holder = [], [], [], []
    for i in range(n):
        if sources.f_i[i] is None:
            fi_p.append(0.0); dfi_2.append(0.0); dfi_p.append(0.0); fi_holder.append(0.0)
            continue
        fi = lambda pts, t, _i=i: sources.eval_fi(_i, pts, t)
        dfi = lambda pts, t, _i=i: sources.eval_dfi_dt(_i, pts, t)
        fi_p.append(lq_space_time(fi, mesh, times, p))
        dfi_2.append(lq_space_time(dfi, mesh, times, 2.0))
        dfi_p.append(lq_space_time(dfi, mesh, times, p))
        hn = 0.0
        for k in range(0, len(times), max(1, len(times) // 8)):
            hn = max(hn, sum(
                holder_norm_spatial(fi, mesh, m, alpha_prime, times[k])
                for m in range(1, layout.region_count + 1)))
        fi_holder.append(hn)
    rep.F0 = rep_f_kappa + sum(fi_p)
    rep.F1 = rep_f_maxk + sum(fi_p) + sum(dfi_2)
    rep.Fstar = rep_f_kappa + rep_f_maxk + rep_f_inf + dfdt_kappa
    rep.Fstarstar = sum(fi_p) + sum(dfi_2) + sum(dfi_p) + sum(fi_holder)
    if cylinder is not None:
        if sources.f is not None:
            fk = lq_space_time(sources.eval_f, mesh, times, kappa, cylinder=cylinder)
        else:
            fk = 0.0
        fip = 0.0
        for i in range(n):
            if sources.f_i[i] is not None:
                fi = lambda pts, t, _i=i: sources.eval_fi(_i, pts, t)
                fip += lq_space_time(fi, mesh, times, p, cylinder=cylinder)
        rep.F0_rho = fk + fip
    return rep


# --- cutoff functions ---------------------------------------------------------

def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x**3 * (10.0 - 15.0 * x + 6.0 * x * x)


def _smoothstep_d(x):
    inside = (x > 0) & (x < 1)
    out = np.zeros_like(x)
    xi = x[inside]
    out[inside] = 30.0 * xi**2 * (1.0 - xi) ** 2
    return out


@dataclass(frozen=True)
class CutoffFunction:
    """Space-time cutoff: 1 on the inner cylinder, 0 near the parabolic boundary.

    Built from quintic smoothsteps; the certified bound
    |dz/dt| + |grad z|^2 <= C_z / rho^2 is measured by :meth:`bound_constant`.
    """

    cylinder: ParabolicCylinder  # the outer cylinder Q_rho_out
    inner_radius: float
    zero_radius: float

    def __post_init__(self):
        if not 0 < self.inner_radius < self.zero_radius <= self.cylinder.radius + 1e-14:
            raise NormError("need 0 < inner < zero <= outer radius")

    def _space(self, points):
        r = np.linalg.norm(np.atleast_2d(points) - np.asarray(self.cylinder.center), axis=1)
        return _smoothstep((self.zero_radius - r) / (self.zero_radius - self.inner_radius))

    def _time(self, t):
        t0 = self.cylinder.top_time
        lo = t0 - self.zero_radius**2
        hi = t0 - self.inner_radius**2
        return _smoothstep((np.asarray(t, dtype=float) - lo) / (hi - lo))

    def __call__(self, points, t):
        return self._space(points) * self._time(t)

    def grad(self, points, t):
        pts = np.atleast_2d(points)
        rel = pts - np.asarray(self.cylinder.center)
        r = np.linalg.norm(rel, axis=1)
        width = self.zero_radius - self.inner_radius
        sprime = -_smoothstep_d((self.zero_radius - r) / width) / width
        with np.errstate(invalid="ignore", divide="ignore"):
            direction = np.where(r[:, None] > 0, rel / np.maximum(r, 1e-300)[:, None], 0.0)
        return (sprime * self._time(t))[:, None] * direction

    def dt(self, points, t):
        t0 = self.cylinder.top_time
        lo = t0 - self.zero_radius**2
        hi = t0 - self.inner_radius**2
        sd = _smoothstep_d((np.asarray(t, dtype=float) - lo) / (hi - lo)) / (hi - lo)
        return self._space(points) * sd

    def bound_constant(self, mesh, times):
        """Recorded C_z with |dz/dt| + |grad z|^2 <= C_z rho^-2 at quadrature points."""
        qpts, _ = quadrature_points(mesh)
        pts = qpts.reshape(-1, 2)
        i0, i1 = window_indices(times, self.cylinder.t_lo, self.cylinder.top_time)
        worst = 0.0
        for k in range(i0, i1 + 1):
            g2 = (self.grad(pts, times[k]) ** 2).sum(axis=1)
            zt = np.abs(self.dt(pts, times[k]))
            worst = max(worst, float((zt + g2).max()))
        return worst * self.cylinder.radius**2


def make_cutoff(cylinder: ParabolicCylinder, inner_frac=0.5, zero_frac=0.75):
    """The standard cutoff: 1 on Q_{rho/2}, 0 outside Q_{3 rho/4} (inside Q_rho)."""
    return CutoffFunction(cylinder, inner_frac * cylinder.radius,
                          zero_frac * cylinder.radius)


# --- inequality ratios --------------------------------------------------------

def grad_l2(u: SpaceTimeField, cylinder: ParabolicCylinder):
    """L2 norm of grad u over the snapped cylinder."""
    mesh = u.mesh
    i0, i1 = window_indices(u.times, cylinder.t_lo, cylinder.top_time)
    w = _trapezoid_weights(u.times, i0, i1)
    mask = _tri_mask(mesh, ball=cylinder)
    total = 0.0
    for j, k in enumerate(range(i0, i1 + 1)):
        g = u.gradients(k)[mask]
        total += w[j] * float((mesh.areas[mask] * (g * g).sum(axis=1)).sum())
    return math.sqrt(total)


def inequality_ratio(name, u: SpaceTimeField, sources: SourceData,
                     layout=None, epsilon=None, cylinder=None,
                     r_exponent=2.0, alpha_prime=0.2):
    """Measured LHS/RHS of one of the named estimates (the RHS has constant 1).

    Names: 'sup_l2' (slice L2 bound), 'linf' (interior sup bound),
    'dudt_l2' (time-derivative bound on the shrunk cylinder),
    'grad_cylinder' (local gradient L2 vs oscillation),
    'dudt_cylinder' (local time-derivative bound), and
    'main' (the piecewise C^{1,a'} estimate).
    """
    layout = layout if layout is not None else u.mesh.layout
    mesh, times = u.mesh, u.times

    def f_or_zero():
        return source_norms(sources, layout, mesh, times, alpha_prime, cylinder)

    if name in ("sup_l2", "linf", "dudt_l2", "main"):
        if epsilon is None:
            raise NormError(f"{name} needs epsilon")
        shr = ShrunkRegion(layout, epsilon)
        rep = f_or_zero()
        l2Q = l2_space_time(u)
        if name == "sup_l2":
            lhs = sup_l2_slices(u, shr)
            rhs = l2Q + rep.F0
        elif name == "linf":
            lhs = linf_interior(u, shr)
            rhs = l2Q + rep.F0
        elif name == "dudt_l2":
            du = dt_field(u)
            lhs = l2_space_time(du, shrunk=shr, window=(epsilon**2, times[-1]))
            rhs = l2Q + rep.F1
        else:  # main
            lhs = sum(piecewise_c1alpha(u, layout, shr, alpha_prime,
                                        t_window=(epsilon**2, times[-1])))
            rhs = l2Q + rep.Fstar + rep.Fstarstar
    elif name == "grad_cylinder":
        if cylinder is None:
            raise NormError("grad_cylinder needs a cylinder")
        rho = cylinder.radius
        big = cylinder.scaled(2.0)
        rp = r_exponent / (r_exponent - 1.0)
        oscu = osc(u, big)
        lhs = grad_l2(u, cylinder)
        f_r = (lq_space_time(sources.eval_f, mesh, times, r_exponent, cylinder=big)
               if sources.f is not None else 0.0)
        fi_2 = sum(lq_space_time(lambda p, t, _i=i: sources.eval_fi(_i, p, t),
                                 mesh, times, 2.0, cylinder=big)
                   for i in range(2) if sources.f_i[i] is not None)
        rhs = (rho ** (sources.dimension / 2.0) + rho ** ((sources.dimension + 2) / rp)) * oscu + f_r + fi_2
    elif name == "dudt_cylinder":
        if cylinder is None:
            raise NormError("dudt_cylinder needs a cylinder")
        rho = cylinder.radius
        big = cylinder.scaled(2.0)
        du = dt_field(u)
        lhs = l2_space_time(du, cylinder=cylinder)
        f_2 = (lq_space_time(sources.eval_f, mesh, times, 2.0, cylinder=big)
               if sources.f is not None else 0.0)
        term_i = 0.0
        for i in range(2):
            if sources.f_i[i] is None:
                continue
            term_i += (lq_space_time(lambda p, t, _i=i: sources.eval_fi(_i, p, t),
                                     mesh, times, 2.0, cylinder=big) / rho
                       + lq_space_time(lambda p, t, _i=i: sources.eval_dfi_dt(_i, p, t),
                                       mesh, times, 2.0, cylinder=big))
        rhs = grad_l2(u, big) / rho + f_2 + term_i
    else:
        raise NormError(f"unknown inequality name {name!r}")

    if rhs == 0.0:
        if lhs == 0.0:
            return 0.0
        raise NormError("zero RHS with nonzero LHS")
    return lhs / rhs


INEQUALITY_NAMES = ("sup_l2", "linf", "dudt_l2", "grad_cylinder",
                    "dudt_cylinder", "main")
