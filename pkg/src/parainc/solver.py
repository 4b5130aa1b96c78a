"""P1 finite elements for the divergence-form parabolic equation.

Assembles stiffness/mass matrices with per-region coefficient branches
(each element integrates a single smooth branch; no averaging across
interfaces), steps in time with the theta scheme, and solves the linear
systems with Jacobi-preconditioned conjugate gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .geometry import Mesh
from .coefficients import CoefficientField, SourceData, ZERO_SOURCES

# 3-point Gauss rule on the reference triangle (edge midpoints, degree 2)
_QP = np.array([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])
_QW = np.array([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0])

# degree-5 rule (7 points) for powered integrands
_QP5 = np.array([
    [1 / 3, 1 / 3],
    [0.0597158717, 0.4701420641], [0.4701420641, 0.0597158717],
    [0.4701420641, 0.4701420641],
    [0.7974269853, 0.1012865073], [0.1012865073, 0.7974269853],
    [0.1012865073, 0.1012865073],
])
_QW5 = np.array([0.225, 0.1323941527, 0.1323941527, 0.1323941527,
                 0.1259391805, 0.1259391805, 0.1259391805])


class SolverError(RuntimeError):
    pass


class ConvergenceError(SolverError):
    def __init__(self, residual, iterations):
        super().__init__(f"CG failed to converge: residual {residual:.3e} "
                         f"after {iterations} iterations")
        self.residual = residual
        self.iterations = iterations


def quadrature_points(mesh, order=2):
    """Physical quadrature points (M, nq, 2) and weights (nq,) scaled by area."""
    ref_p, ref_w = (_QP, _QW) if order <= 2 else (_QP5, _QW5)
    p = mesh.vertices[mesh.triangles]
    v0 = p[:, 0]
    e1 = p[:, 1] - v0
    e2 = p[:, 2] - v0
    pts = (v0[:, None, :]
           + ref_p[None, :, 0, None] * e1[:, None, :]
           + ref_p[None, :, 1, None] * e2[:, None, :])
    return pts, ref_w


def assemble(mesh, coeff: CoefficientField):
    """Stiffness K and consistent mass B as CSR matrices.

    Coefficients are evaluated at the 3-point Gauss nodes of each element
    using the element's own region branch.
    """
    n = mesh.vertex_count
    tris = mesh.triangles
    areas = mesh.areas
    if np.any(areas <= 0):
        raise SolverError("degenerate element in mesh")
    b, c = mesh.gradient_operators()
    grads = np.stack([b, c], axis=2)  # (M, 3, 2)

    qpts, qw = quadrature_points(mesh)
    flat = qpts.reshape(-1, 2)
    regions = np.repeat(mesh.region_tag, len(qw))
    mats = coeff.evaluate(flat, regions).reshape(len(tris), len(qw), 2, 2)
    a_avg = np.einsum("q,mqij->mij", qw, mats)  # area-weighted mean of a per element

    # K_e[i,j] = area * grad_i . (a_avg grad_j)
    ag = np.einsum("mij,mkj->mki", a_avg, grads)  # (M, 3, 2)
    ke = np.einsum("mki,mli->mkl", grads, ag) * areas[:, None, None]

    me = (np.ones((3, 3)) + np.eye(3)) / 12.0
    me = me[None, :, :] * areas[:, None, None]

    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    K = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    B = sp.coo_matrix((me.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return K, B


def lumped_mass(mesh):
    """Row-sum lumped mass matrix (diagonal, CSR)."""
    n = mesh.vertex_count
    vals = np.repeat(mesh.areas / 3.0, 3)
    diag = np.zeros(n)
    np.add.at(diag, mesh.triangles.ravel(), vals)
    return sp.diags(diag).tocsr()


def assemble_load(mesh, sources: SourceData, t):
    """Load vector: integral of f phi_k plus sum_i integral of f_i d phi_k/dx_i."""
    n = mesh.vertex_count
    load = np.zeros(n)
    if sources.is_zero:
        return load
    tris = mesh.triangles
    areas = mesh.areas
    qpts, qw = quadrature_points(mesh)
    flat = qpts.reshape(-1, 2)
    nq = len(qw)

    if sources.f is not None:
        fvals = sources.eval_f(flat, t).reshape(len(tris), nq)
        # hat function values at the reference quadrature points
        hat = np.column_stack([1.0 - _QP[:, 0] - _QP[:, 1], _QP[:, 0], _QP[:, 1]])
        contrib = np.einsum("mq,qk,q->mk", fvals, hat, qw) * areas[:, None]
        np.add.at(load, tris.ravel(), contrib.ravel())

    b, c = mesh.gradient_operators()
    for i, comp in enumerate((b, c)):
        if sources.f_i[i] is None:
            continue
        fivals = sources.eval_fi(i, flat, t).reshape(len(tris), nq)
        fmean = np.einsum("mq,q->m", fivals, qw)
        contrib = fmean[:, None] * comp * areas[:, None]
        np.add.at(load, tris.ravel(), contrib.ravel())
    return load


@dataclass
class SparseSystem:
    """Symmetric sparse system after Dirichlet elimination."""

    matrix: sp.csr_matrix
    rhs: np.ndarray

    @property
    def dimension(self):
        return self.matrix.shape[0]


def cg_solve(system: SparseSystem, tol=1e-10, max_iter=20000, x0=None):
    """Jacobi-preconditioned conjugate gradients, deterministic iteration.

    Converges to relative residual <= tol (measured against |rhs|); raises
    :class:`ConvergenceError` otherwise.
    """
    A, rhs = system.matrix, system.rhs
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0:
        return np.zeros_like(rhs)
    x = np.zeros_like(rhs) if x0 is None else x0.copy()
    r = rhs - A @ x
    dinv = 1.0 / A.diagonal()
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for it in range(max_iter):
        res = np.linalg.norm(r)
        if res <= tol * bnorm:
            return x
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = np.linalg.norm(rhs - A @ x)
    if res <= tol * bnorm:
        return x
    raise ConvergenceError(res / bnorm, max_iter)


def _interior_mask(mesh):
    mask = np.ones(mesh.vertex_count, dtype=bool)
    mask[mesh.boundary_vertices] = False
    return mask


def eliminate_dirichlet(matrix, rhs, mesh, boundary_values=None):
    """Row/column elimination; returns the interior SparseSystem and scatter info."""
    mask = _interior_mask(mesh)
    idx = np.where(mask)[0]
    bidx = np.where(~mask)[0]
    A_ii = matrix[idx][:, idx].tocsr()
    rhs_i = rhs[idx]
    if boundary_values is not None and len(bidx):
        rhs_i = rhs_i - matrix[idx][:, bidx] @ boundary_values[bidx]
    return SparseSystem(A_ii, rhs_i), idx, bidx


@dataclass
class SpaceTimeField:
    """Nodal values on a mesh at a uniform time grid; P1 in space."""

    mesh: Mesh
    times: np.ndarray
    values: np.ndarray  # (len(times), vertex_count)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.times), self.mesh.vertex_count):
            raise SolverError("value array shape does not match mesh/time grid")

    @property
    def tau(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def final(self):
        return self.values[-1]

    def slice(self, k):
        return self.values[k]

    def slice_at(self, t):
        k = int(np.argmin(np.abs(self.times - t)))
        return self.values[k]

    def gradients(self, k):
        """Elementwise gradients of slice k, shape (M, 2)."""
        return self.mesh.gradients(self.values[k])

    def evaluate(self, points, t):
        """P1 interpolation at arbitrary points of the linear-in-time field."""
        k = np.searchsorted(self.times, t, side="right") - 1
        k = int(np.clip(k, 0, len(self.times) - 2)) if len(self.times) > 1 else 0
        if len(self.times) == 1:
            vals = self.values[0]
        else:
            t0, t1 = self.times[k], self.times[k + 1]
            w = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
            vals = (1 - w) * self.values[k] + w * self.values[k + 1]
        return _p1_interpolate(self.mesh, vals, points)

    def scaled(self, factor):
        out = SpaceTimeField(self.mesh, self.times, factor * self.values, dict(self.meta))
        return out

    def export_slices(self, path_prefix):
        for k, t in enumerate(self.times):
            np.savetxt(f"{path_prefix}_{k:05d}.txt", self.values[k],
                       header=f"t = {t!r}", comments="# ")


def _p1_interpolate(mesh, nodal, points):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    from scipy.spatial import cKDTree
    if not hasattr(mesh, "_bary_tree"):
        mesh._bary_tree = cKDTree(mesh.barycenters)
    out = np.empty(len(pts))
    # candidate elements by barycenter proximity
    _, cand = mesh._bary_tree.query(pts, k=min(12, mesh.triangle_count))
    cand = np.atleast_2d(cand)
    tri_pts = mesh.vertices[mesh.triangles]
    for i, x in enumerate(pts):
        found = False
        for t in cand[i]:
            p = tri_pts[t]
            lam = _barycentric(p, x)
            if lam is not None and np.all(lam >= -1e-10):
                out[i] = lam @ nodal[mesh.triangles[t]]
                found = True
                break
        if not found:
            t = cand[i][0]
            p = tri_pts[t]
            lam = _barycentric(p, x)
            lam = np.clip(lam, 0, None)
            lam = lam / lam.sum()
            out[i] = lam @ nodal[mesh.triangles[t]]
    return out


def _barycentric(p, x):
    T = np.array([[p[0, 0] - p[2, 0], p[1, 0] - p[2, 0]],
                  [p[0, 1] - p[2, 1], p[1, 1] - p[2, 1]]])
    det = T[0, 0] * T[1, 1] - T[0, 1] * T[1, 0]
    if abs(det) < 1e-300:
        return None
    rel = x - p[2]
    l0 = (T[1, 1] * rel[0] - T[0, 1] * rel[1]) / det
    l1 = (-T[1, 0] * rel[0] + T[0, 0] * rel[1]) / det
    return np.array([l0, l1, 1.0 - l0 - l1])


@dataclass
class ParabolicProblem:
    """Initial/boundary value problem d/dt u - div(a grad u) = f - div(f_i)."""

    mesh: Mesh
    coeff: CoefficientField
    sources: SourceData = ZERO_SOURCES
    initial: Callable | np.ndarray | None = None
    dirichlet: Callable | None = None  # spatial trace; None = homogeneous
    T: float = 1.0
    tau: float = 0.01
    theta: float = 1.0
    mass: str = "consistent"  # or "lumped"
    cg_tol: float = 1e-10

    def __post_init__(self):
        if self.tau <= 0 or self.T <= 0:
            raise SolverError("T and tau must be positive")
        if not 0.5 <= self.theta <= 1.0:
            raise SolverError("theta must lie in [1/2, 1]")


def _initial_values(problem):
    mesh = problem.mesh
    if problem.initial is None:
        return np.zeros(mesh.vertex_count)
    if callable(problem.initial):
        return np.asarray(problem.initial(mesh.vertices), dtype=float)
    return np.asarray(problem.initial, dtype=float).copy()


def solve_parabolic(problem: ParabolicProblem) -> SpaceTimeField:
    """Theta-scheme time stepping with CG solves, warm-started per step."""
    mesh = problem.mesh
    K, B = assemble(mesh, problem.coeff)
    if problem.mass == "lumped":
        B = lumped_mass(mesh)
    tau, theta = problem.tau, problem.theta
    nsteps = int(round(problem.T / tau))
    times = tau * np.arange(nsteps + 1)

    u = _initial_values(problem)
    lift = np.zeros(mesh.vertex_count)
    if problem.dirichlet is not None:
        lift[mesh.boundary_vertices] = np.asarray(
            problem.dirichlet(mesh.vertices[mesh.boundary_vertices]), dtype=float)
        u[mesh.boundary_vertices] = lift[mesh.boundary_vertices]

    A = (B + theta * tau * K).tocsr()
    Bex = (B - (1.0 - theta) * tau * K).tocsr()
    mask = _interior_mask(mesh)
    idx = np.where(mask)[0]
    bidx = np.where(~mask)[0]
    A_ii = A[idx][:, idx].tocsr()
    A_ib = A[idx][:, bidx].tocsr() if len(bidx) else None

    values = np.empty((nsteps + 1, mesh.vertex_count))
    values[0] = u
    load_prev = assemble_load(mesh, problem.sources, times[0])
    x_prev = u[idx]
    for k in range(nsteps):
        load_next = assemble_load(mesh, problem.sources, times[k + 1])
        rhs = Bex @ u + tau * (theta * load_next + (1 - theta) * load_prev)
        rhs_i = rhs[idx]
        if A_ib is not None and problem.dirichlet is not None:
            rhs_i = rhs_i - A_ib @ lift[bidx]
        sol = cg_solve(SparseSystem(A_ii, rhs_i), tol=problem.cg_tol, x0=x_prev)
        u = lift.copy()
        u[idx] = sol
        values[k + 1] = u
        load_prev = load_next
        x_prev = sol
    return SpaceTimeField(mesh, times, values,
                          {"problem": "parabolic", "theta": theta, "tau": tau})


def solve_elliptic(mesh, coeff, h_source=None, g_i=(None, None),
                   dirichlet=None, cg_tol=1e-10, p=6.0) -> SpaceTimeField:
    """Stationary solve: stiffness system with the same load convention.

    Solves the weak problem  (a grad u, grad phi) = (h, phi) + (g_i, d_i phi),
    which is the long-time limit of the parabolic problem with static sources
    f = h, f_i = g_i.  Returns a single-slice field (t = 0).
    """
    K, _ = assemble(mesh, coeff)
    sources = SourceData(f=h_source, f_i=tuple(g_i), p=p)
    load = assemble_load(mesh, sources, 0.0)
    lift = np.zeros(mesh.vertex_count)
    if dirichlet is not None:
        lift[mesh.boundary_vertices] = np.asarray(
            dirichlet(mesh.vertices[mesh.boundary_vertices]), dtype=float)
    system, idx, bidx = eliminate_dirichlet(K, load, mesh, lift if dirichlet is not None else None)
    sol = cg_solve(system, tol=cg_tol)
    u = lift.copy()
    u[idx] = sol
    return SpaceTimeField(mesh, np.array([0.0]), u[None, :], {"problem": "elliptic"})
