"""Level-truncation machinery: embedding checks, the geometric-decay
iteration, and the explicit sup-bound cascade on shrinking cylinders."""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .coefficients import SourceData
from .solver import SpaceTimeField, quadrature_points
from .norms import (ParabolicCylinder, window_indices, _trapezoid_weights,
                    _tri_mask, l2_space_time, grad_l2, source_norms, NormError)


class IterationError(ValueError):
    pass


_FLUSH = 1e-300  # below this the sequence is numerically zero (denormal guard)


def theta0(C_tilde, b, eps):
    """The decay threshold C~^(-1/eps) * b^(-1/eps^2)."""
    if C_tilde <= 0 or eps <= 0:
        raise IterationError("C_tilde and eps must be positive")
    if b <= 1:
        raise IterationError("b must exceed 1")
    return C_tilde ** (-1.0 / eps) * b ** (-1.0 / (eps * eps))


@dataclass(frozen=True)
class IterationParams:
    """Parameters of the recursion y_{m+1} <= C~ b^m y_m^{1+eps}."""

    C_tilde: float
    b: float
    eps: float

    def __post_init__(self):
        if self.C_tilde <= 0 or self.eps <= 0:
            raise IterationError("C_tilde and eps must be positive")
        if self.b <= 1:
            raise IterationError("b must exceed 1")

    @property
    def theta0(self):
        return theta0(self.C_tilde, self.b, self.eps)

    @property
    def r(self):
        return self.b ** (1.0 / self.eps)


def degiorgi_sequence(y0, params: IterationParams, m_max=60):
    """Iterate the extremal recursion y_{m+1} = C~ b^m y_m^(1+eps).

    The iteration is carried in the normalised variable
    z_m = y_m / (theta0 r^-m), which obeys z_{m+1} = z_m^(1+eps) exactly;
    this keeps the knife-edge equality case y0 = theta0 on its trajectory
    instead of amplifying rounding noise by (1+eps) per step.

    Returns (sequence including y0, decays flag).  ``decays`` holds when the
    final iterate sits below theta0 * r^-m_max (with 1e-9 relative slack);
    the iteration aborts with ``decays=False`` once y exceeds 1e12.
    """
    if y0 < 0:
        raise IterationError("y0 must be nonnegative")
    th0, r = params.theta0, params.r
    seq = [float(y0)]
    if y0 == 0.0:
        return np.zeros(m_max + 1), True
    log_z = math.log(y0 / th0)  # exactly 0.0 in the equality case y0 == theta0
    log_th0 = math.log(th0)
    log_r = math.log(r)
    for m in range(1, m_max + 1):
        log_z = (1.0 + params.eps) * log_z
        log_y = log_th0 + log_z - m * log_r
        if log_y > 27.7:  # past the 1e12 overflow guard
            seq.append(math.inf)
            return np.asarray(seq), False
        y = th0 * math.exp(log_z) * r ** (-float(m)) if log_y > -745.0 else 0.0
        seq.append(y)
        if y > 1e12:
            return np.asarray(seq), False
    bounds = sequence_bounds(params, m_max)
    decays = seq[-1] <= bounds[-1] * (1.0 + 1e-9) or seq[-1] == 0.0
    return np.asarray(seq), decays


def sequence_bounds(params: IterationParams, m_max=60):
    """The proved envelope theta0 * r^-m (underflow flushes to zero)."""
    ms = np.arange(m_max + 1, dtype=float)
    with np.errstate(under="ignore"):
        return params.theta0 * params.r**-ms


@dataclass(frozen=True)
class GNParams:
    """Exponent bookkeeping for the interpolation inequality.

    The relation 1/q = j/n + gamma (1/s - k/n) + (1-gamma)/r must hold to
    1e-12, gamma must lie in [j/k, 1], and when k - j - n/s is a nonnegative
    integer the endpoint gamma = 1 is excluded.
    """

    n: int
    j: int
    k: int
    q: float
    r: float
    s: float
    gamma: float

    def __post_init__(self):
        if not (0 <= self.j < self.k):
            raise IterationError("need 0 <= j < k")
        lhs = 1.0 / self.q
        rhs = (self.j / self.n + self.gamma * (1.0 / self.s - self.k / self.n)
               + (1.0 - self.gamma) / self.r)
        if abs(lhs - rhs) > 1e-12:
            raise IterationError(f"exponent relation violated by {abs(lhs - rhs):.2e}")
        if not (self.j / self.k - 1e-12 <= self.gamma <= 1.0 + 1e-12):
            raise IterationError("gamma outside [j/k, 1]")
        excep = self.k - self.j - self.n / self.s
        if abs(excep - round(excep)) < 1e-12 and round(excep) >= 0:
            if self.gamma >= 1.0 - 1e-12:
                raise IterationError(
                    "gamma = 1 excluded when k - j - n/s is a nonnegative integer")

    @classmethod
    def parabolic_embedding(cls, n):
        """The instance used by the space-time embedding: j=0, k=1, r=s=2."""
        q = 2.0 * (n + 2) / n
        gamma = n / (n + 2.0)
        return cls(n, 0, 1, q, 2.0, 2.0, gamma)


@dataclass
class LevelSetData:
    """A truncation (u - k)_+/- with its active-set measure."""

    level: float
    sign: str
    field: SpaceTimeField
    active_measure: float

    def __post_init__(self):
        if self.sign not in ("+", "-"):
            raise IterationError("sign must be '+' or '-'")
        if self.active_measure < -1e-14:
            raise IterationError("negative active-set measure")


def level_truncate(u: SpaceTimeField, k, sign="+",
                   cylinder: ParabolicCylinder | None = None) -> LevelSetData:
    """Nodal truncation max(+-(u - k), 0) and its space-time active measure.

    The measure uses per-triangle barycenter membership (area x time step),
    restricted to the snapped cylinder when one is supplied.
    """
    s = 1.0 if sign == "+" else -1.0
    vals = np.maximum(s * (u.values - k), 0.0)
    trunc = SpaceTimeField(u.mesh, u.times, vals, {**u.meta, "level": k, "sign": sign})

    mesh = u.mesh
    if cylinder is not None:
        i0, i1 = window_indices(u.times, cylinder.t_lo, cylinder.top_time)
        mask = _tri_mask(mesh, ball=cylinder)
    else:
        i0, i1 = 0, len(u.times) - 1
        mask = np.ones(mesh.triangle_count, dtype=bool)
    w = _trapezoid_weights(u.times, i0, i1) if i1 > i0 else np.array([1.0])
    areas = mesh.areas[mask]
    tris = mesh.triangles[mask]
    measure = 0.0
    for j, kk in enumerate(range(i0, i1 + 1)):
        bvals = u.values[kk][tris].mean(axis=1)
        active = (s * (bvals - k)) > 0
        measure += w[j] * float(areas[active].sum())
    return LevelSetData(float(k), sign, trunc, measure)


def gn_check(v: SpaceTimeField, params: GNParams | None = None):
    """Measured constant of the space-time embedding for a field vanishing on
    the boundary: returns (lhs, rhs_factor, C1_hat) with

    lhs        = |v|_{L^{2(n+2)/n}(Q)}
    rhs_factor = |v|_{L^inf(0,T;L^2)}^{2/(n+2)} * |grad v|_{L^2(Q)}^{n/(n+2)}
    """
    n = 2
    params = params or GNParams.parabolic_embedding(n)
    if params.j != 0 or params.k != 1 or params.r != 2.0 or params.s != 2.0:
        raise IterationError("only the (j=0, k=1, r=s=2) instance is evaluated")
    bvals = np.abs(v.values[:, v.mesh.boundary_vertices])
    if bvals.size and bvals.max() > 1e-10 * max(1.0, np.abs(v.values).max()):
        raise IterationError("field must vanish on the outer boundary")
    mesh = v.mesh
    q = params.q
    # L^q with q = 2(n+2)/n: integrate |v|^q with the degree-5 rule
    i0, i1 = 0, len(v.times) - 1
    w = _trapezoid_weights(v.times, i0, i1)
    qpts, qw = quadrature_points(mesh, order=5)
    from .solver import _QP5
    hat = np.column_stack([1.0 - _QP5[:, 0] - _QP5[:, 1], _QP5[:, 0], _QP5[:, 1]])
    lhs_q = 0.0
    sup_l2 = 0.0
    grad_sq = 0.0
    for j, k in enumerate(range(i0, i1 + 1)):
        nodal = v.values[k]
        tv = nodal[mesh.triangles]           # (M, 3)
        qvals = tv @ hat.T                   # (M, nq)
        lhs_q += w[j] * float((mesh.areas[:, None] * qw[None, :] * np.abs(qvals) ** q).sum())
        s = tv.sum(axis=1)
        sl2 = float((mesh.areas / 12.0 * (s * s + (tv * tv).sum(axis=1))).sum())
        sup_l2 = max(sup_l2, sl2)
        g = mesh.gradients(nodal)
        grad_sq += w[j] * float((mesh.areas * (g * g).sum(axis=1)).sum())
    lhs = lhs_q ** (1.0 / q)
    rhs_factor = (math.sqrt(sup_l2)) ** (2.0 / (n + 2)) * (math.sqrt(grad_sq)) ** (n / (n + 2.0))
    if rhs_factor == 0.0:
        return lhs, rhs_factor, 0.0
    return lhs, rhs_factor, lhs / rhs_factor


@dataclass
class CascadeResult:
    level: float
    verified: bool
    sup_u: float
    levels: np.ndarray
    phi: np.ndarray
    radii: np.ndarray
    theta0: float

    @property
    def ratio(self):
        return self.sup_u / (2.0 * self.level) if self.level > 0 else 0.0


def degiorgi_cascade(u: SpaceTimeField, cylinder: ParabolicCylinder,
                     sources: SourceData = None, p=6.0, C_tilde=1.0,
                     depth=8, sign="+", k_override=None, slack=0.05):
    """The explicit sup bound: level k from the L2 mass and source norms.

    Builds the cascade phi_m = |(u - k_m)_+|^2 on Q_{rho_m} with
    rho_m = (1 + 2^-m) rho and k_m = k (2 - 2^-m); ``verified`` requires the
    discrete max of u on Q_rho to sit below 2k (1 + slack) and phi to be
    nonincreasing beyond m = 2.
    """
    sources = sources if sources is not None else SourceData(p=p)
    n = 2
    mesh = u.mesh
    rho = cylinder.radius
    big = cylinder.scaled(2.0)
    # geometry check: Q_{2 rho} must fit the discretised domain
    if big.t_lo < u.times[0] - 1e-12:
        raise NormError("Q_{2 rho} exits the time range")
    bb = mesh.layout.outer.boundary_distance(np.asarray([cylinder.center]))[0]
    if bb < 2 * rho:
        raise NormError("Q_{2 rho} exits the spatial domain")

    su = u if sign == "+" else u.scaled(-1.0)
    b = 2.0 ** (2.0 * (1.0 + 2.0 / (n + 2)))
    eps = 2.0 / (n + 2) - 2.0 / p
    th0 = theta0(C_tilde, b, eps)

    l2_big = l2_space_time(su, cylinder=big)
    i0, i1 = window_indices(u.times, big.t_lo, big.top_time)
    mask = _tri_mask(mesh, ball=big)
    vol = float(mesh.areas[mask].sum()) * float(u.times[i1] - u.times[i0])
    if k_override is not None:
        k = float(k_override)
    else:
        rep = source_norms(sources, mesh.layout, mesh, u.times, cylinder=big)
        f0_big = rep.F0_rho
        k = l2_big / math.sqrt(th0 * vol) + rho ** (1.0 - (n + 2.0) / p) * f0_big

    ms = np.arange(depth + 1)
    radii = (1.0 + 0.5**ms) * rho
    levels = k * (2.0 - 0.5**ms)
    phi = np.empty(depth + 1)
    for m in range(depth + 1):
        cyl_m = ParabolicCylinder(cylinder.center, cylinder.top_time, radii[m])
        data = level_truncate(su, levels[m], "+", cyl_m)
        phi[m] = l2_space_time(data.field, cylinder=cyl_m) ** 2

    # discrete max of u over the snapped Q_rho
    i0, i1 = window_indices(u.times, cylinder.t_lo, cylinder.top_time)
    nodes_rel = mesh.vertices - np.asarray(cylinder.center)
    nodes = np.einsum("ij,ij->i", nodes_rel, nodes_rel) <= rho * rho * (1 + 1e-12)
    sup_u = float(su.values[i0:i1 + 1][:, nodes].max()) if nodes.any() else 0.0

    monotone = all(phi[m + 1] <= phi[m] * (1.0 + 1e-12) + 1e-30
                   for m in range(2, depth))
    verified = (sup_u <= 2.0 * k * (1.0 + slack) or k == 0.0 and sup_u <= 0.0) and monotone
    if k == 0.0:
        verified = sup_u <= 0.0 and monotone
    return CascadeResult(k, bool(verified), sup_u, levels, phi, radii, th0)


def cascade_step_constants(result: CascadeResult, u, cylinder, sources, p=6.0):
    """Measured constants of the one-step cascade inequality.

    For each m: phi_{m+1} <= c_m * 2^{2m(1+2/(n+2))} * RHS_m with
    RHS_m = |A_m|^{2/(n+2)} (rho^-2 phi_m + k^2 rho^{-2(1-(n+2)/p)} |A_m|^{1-2/p}).
    Returns the list of measured c_m (entries are nan where RHS vanishes).
    """
    n = 2
    rho = cylinder.radius
    k = result.level
    out = []
    for m in range(len(result.phi) - 1):
        cyl_m = ParabolicCylinder(cylinder.center, cylinder.top_time, result.radii[m])
        data = level_truncate(u, result.levels[m + 1], "+", cyl_m)
        A = data.active_measure
        rhs = A ** (2.0 / (n + 2)) * (
            rho**-2 * result.phi[m]
            + k**2 * rho ** (-2.0 * (1.0 - (n + 2.0) / p)) * A ** (1.0 - 2.0 / p))
        growth = 2.0 ** (2 * m * (1.0 + 2.0 / (n + 2)))
        if rhs <= 0:
            out.append(float("nan"))
        else:
            out.append(result.phi[m + 1] / (growth * rhs))
    return out
