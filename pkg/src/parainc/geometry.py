"""Domains with elliptical inclusions and interface-conforming triangulations.

The outer domain is an axis-aligned square or a disk; inclusions are
ellipses (disks as a special case) that may touch each other (gap 0).
Meshes are built from a graded tensor grid whose triangles are then snapped
and cut so that every element lies in a single material region and the
polygonal interface vertices sit exactly on the ellipse boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    """Invalid layout or point query (overlap, containment, outside-domain)."""


class MeshError(RuntimeError):
    """Mesh generation failure (degenerate elements, budget exceeded)."""


class InfeasibleResolutionError(MeshError):
    """The gap between inclusions cannot be resolved within the element budget."""


_ZERO_LEVEL = 1e-13


def _rotation(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Ellipse:
    """One inclusion: an ellipse with half-axes ``radii`` rotated by ``rotation``."""

    center: tuple[float, float]
    radii: tuple[float, float]
    rotation: float = 0.0
    region: int = 1

    def __post_init__(self):
        if min(self.radii) <= 0:
            raise GeometryError("ellipse radii must be positive")

    def level(self, points):
        """Quadratic level function: negative inside, 0 on the boundary.

        Computed in the scaled frame, so ``level = |S R (x-c)|^2 - 1``.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        rel = pts - np.asarray(self.center)
        rot = _rotation(-self.rotation)
        local = rel @ rot.T
        w = local / np.asarray(self.radii)
        return np.einsum("ij,ij->i", w, w) - 1.0

    def approx_distance(self, points):
        """Signed distance estimate |L| / |grad L| (negative inside)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        rel = pts - np.asarray(self.center)
        rot = _rotation(-self.rotation)
        local = rel @ rot.T
        w = local / np.asarray(self.radii)
        lev = np.einsum("ij,ij->i", w, w) - 1.0
        grad = 2.0 * w / np.asarray(self.radii)
        gnorm = np.maximum(np.linalg.norm(grad, axis=1), 1e-300)
        return lev / gnorm

    def project(self, points):
        """Map points onto the ellipse by normalising in the scaled frame."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        rot = _rotation(-self.rotation)
        local = (pts - np.asarray(self.center)) @ rot.T
        w = local / np.asarray(self.radii)
        norm = np.linalg.norm(w, axis=1, keepdims=True)
        norm[norm == 0] = 1.0
        w = w / norm
        local = w * np.asarray(self.radii)
        return local @ _rotation(self.rotation).T + np.asarray(self.center)

    def boundary_points(self, count):
        th = np.linspace(0.0, 2.0 * math.pi, count, endpoint=False)
        local = np.column_stack([self.radii[0] * np.cos(th), self.radii[1] * np.sin(th)])
        return local @ _rotation(self.rotation).T + np.asarray(self.center)

    @property
    def area(self):
        return math.pi * self.radii[0] * self.radii[1]

    def is_circle(self):
        return abs(self.radii[0] - self.radii[1]) < 1e-14


@dataclass(frozen=True)
class OuterDomain:
    """Axis-aligned square (``kind='square'``) or disk (``kind='disk'``)."""

    kind: str = "square"
    center: tuple[float, float] = (0.5, 0.5)
    size: float = 0.5  # half-width of the square / radius of the disk

    def __post_init__(self):
        if self.kind not in ("square", "disk"):
            raise GeometryError(f"unknown outer domain kind {self.kind!r}")
        if self.size <= 0:
            raise GeometryError("outer domain size must be positive")

    def boundary_distance(self, points):
        """Distance to the outer boundary, positive inside."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        rel = pts - np.asarray(self.center)
        if self.kind == "square":
            return self.size - np.max(np.abs(rel), axis=1)
        return self.size - np.linalg.norm(rel, axis=1)

    def contains(self, points, tol=0.0):
        return self.boundary_distance(points) >= -tol

    @property
    def area(self):
        if self.kind == "square":
            return (2.0 * self.size) ** 2
        return math.pi * self.size**2

    @property
    def bounds(self):
        cx, cy = self.center
        return (cx - self.size, cx + self.size, cy - self.size, cy + self.size)

    @property
    def inradius(self):
        return self.size


def unit_square(center=(0.5, 0.5)):
    return OuterDomain("square", center, 0.5)


def unit_disk(center=(0.0, 0.0)):
    return OuterDomain("disk", center, 1.0)


@dataclass(frozen=True)
class InclusionLayout:
    """The domain, its inclusions, and the designated gap pair.

    Region indices: inclusions carry 1..L-1, the background is L.
    ``gap`` is the boundary-to-boundary distance of ``gap_pair`` (0 allowed:
    touching inclusions).
    """

    outer: OuterDomain
    inclusions: tuple[Ellipse, ...] = ()
    gap_pair: tuple[int, int] | None = None
    gap: float | None = None
    boundary_smoothness: float = 0.9  # the Hoelder exponent of the interface, metadata only

    @property
    def region_count(self):
        return len(self.inclusions) + 1

    @property
    def background_region(self):
        return self.region_count

    def classify(self, points):
        """Region index per point; boundary points go to the smallest adjacent index."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if np.any(self.outer.boundary_distance(pts) < -_ZERO_LEVEL):
            raise GeometryError("point outside the outer domain")
        out = np.full(len(pts), self.background_region, dtype=int)
        # iterate high-to-low so the smallest adjacent region index wins ties
        for inc in sorted(self.inclusions, key=lambda e: -e.region):
            inside = inc.approx_distance(pts) <= _ZERO_LEVEL
            out[inside] = inc.region
        return out

    def shrunk(self, epsilon):
        return ShrunkRegion(self, epsilon)


def classify_point(layout, x):
    """Region index of a single point (see :meth:`InclusionLayout.classify`)."""
    return int(layout.classify(np.asarray(x, dtype=float)[None, :])[0])


@dataclass(frozen=True)
class ShrunkRegion:
    """The eps-shrunk interior {x in D : dist(x, boundary of D) > eps}."""

    base: InclusionLayout
    epsilon: float

    def __post_init__(self):
        if self.epsilon < 0:
            raise GeometryError("epsilon must be nonnegative")
        if self.epsilon >= self.base.outer.inradius:
            raise GeometryError("epsilon exceeds the inradius of the outer domain")

    def contains(self, points):
        return self.base.outer.boundary_distance(points) > self.epsilon


def _pair_boundary_distance(a: Ellipse, b: Ellipse, samples=720):
    """Boundary-to-boundary distance. Exact for circles, sampled+polished otherwise."""
    if a.is_circle() and b.is_circle():
        d = np.linalg.norm(np.asarray(a.center) - np.asarray(b.center))
        return d - a.radii[0] - b.radii[0]
    pa = a.boundary_points(samples)
    db = b.approx_distance(pa)
    i = int(np.argmin(db))
    # one Newton-ish polish: project the closest sample back and forth
    p = pa[i]
    for _ in range(30):
        q = b.project(p[None, :])[0]
        p = a.project(q[None, :])[0]
    q = b.project(p[None, :])[0]
    sign = -1.0 if (a.approx_distance(np.asarray(b.center)[None, :])[0] < 0
                    or db[i] < 0) else 1.0
    return sign * float(np.linalg.norm(p - q))


def build_layout(outer, inclusions, gap_pair=None, gap=None,
                 boundary_smoothness=0.9):
    """Assemble a layout, translating the gap pair to the requested distance.

    When ``gap_pair=(i, j)`` and ``gap`` are given, inclusions ``i`` and ``j``
    (0-based positions in ``inclusions``) are moved symmetrically along their
    center line until their boundary distance equals ``gap`` (relative
    accuracy 1e-12).  Raises :class:`GeometryError` on interior overlap of any
    pair or if an inclusion exits the outer domain.
    """
    incs = list(inclusions)
    for k, inc in enumerate(incs):
        if inc.region != k + 1:
            incs[k] = Ellipse(inc.center, inc.radii, inc.rotation, k + 1)

    if gap_pair is not None:
        if gap is None or gap < 0:
            raise GeometryError("gap must be a nonnegative real when gap_pair is given")
        i, j = gap_pair
        a, b = incs[i], incs[j]
        ca = np.asarray(a.center, dtype=float)
        cb = np.asarray(b.center, dtype=float)
        axis = cb - ca
        norm = np.linalg.norm(axis)
        if norm == 0:
            raise GeometryError("gap pair centers coincide")
        axis = axis / norm
        for _ in range(80):
            d = _pair_boundary_distance(a, b)
            err = d - gap
            if abs(err) <= 1e-12 * max(1.0, abs(gap)) + 1e-15:
                break
            ca = ca + 0.5 * err * axis
            cb = cb - 0.5 * err * axis
            a = Ellipse(tuple(ca), a.radii, a.rotation, a.region)
            b = Ellipse(tuple(cb), b.radii, b.rotation, b.region)
        incs[i], incs[j] = a, b

    layout = InclusionLayout(outer, tuple(incs), gap_pair,
                             gap if gap_pair is not None else None,
                             boundary_smoothness)
    _validate_layout(layout)
    return layout


def _validate_layout(layout):
    for inc in layout.inclusions:
        pts = inc.boundary_points(256)
        if np.any(layout.outer.boundary_distance(pts) <= 1e-12):
            raise GeometryError(f"inclusion {inc.region} exits the outer domain")
    incs = layout.inclusions
    for i in range(len(incs)):
        for j in range(i + 1, len(incs)):
            d = _pair_boundary_distance(incs[i], incs[j])
            if d < -1e-10:
                raise GeometryError(
                    f"inclusions {incs[i].region} and {incs[j].region} overlap")


@dataclass
class Mesh:
    """Conforming triangulation with per-triangle region tags.

    ``vertices`` is (N, 2), ``triangles`` (M, 3) with positive orientation,
    ``region_tag`` (M,), ``boundary_vertices`` the indices on the outer
    boundary.  Arrays are frozen after construction.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    region_tag: np.ndarray
    boundary_vertices: np.ndarray
    h: float
    layout: InclusionLayout | None = None
    _areas: np.ndarray | None = field(default=None, repr=False)
    _bary: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        for arr in (self.vertices, self.triangles, self.region_tag,
                    self.boundary_vertices):
            arr.setflags(write=False)

    @property
    def areas(self):
        if self._areas is None:
            p = self.vertices[self.triangles]
            self._areas = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                                 - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
            self._areas.setflags(write=False)
        return self._areas

    @property
    def barycenters(self):
        if self._bary is None:
            self._bary = self.vertices[self.triangles].mean(axis=1)
            self._bary.setflags(write=False)
        return self._bary

    @property
    def vertex_count(self):
        return len(self.vertices)

    @property
    def triangle_count(self):
        return len(self.triangles)

    def gradients(self, nodal_values):
        """Elementwise constant gradient of a P1 field, shape (M, 2)."""
        b, c = self.gradient_operators()
        vals = nodal_values[self.triangles]
        return np.stack([(b * vals).sum(axis=1), (c * vals).sum(axis=1)], axis=1)

    def gradient_operators(self):
        """Coefficients (b, c) with grad u|_T = (sum b_k u_k, sum c_k u_k)."""
        if not hasattr(self, "_grad_ops"):
            p = self.vertices[self.triangles]
            x, y = p[..., 0], p[..., 1]
            two_a = 2.0 * self.areas[:, None]
            b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
            c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
            self._grad_ops = (b / two_a, c / two_a)
        return self._grad_ops


def graded_axis(lo, hi, h, specials=()):
    """1D grid on [lo, hi]: uniform step h plus graded ladders near specials.

    ``specials`` is a sequence of (interval_lo, interval_hi, step) requests;
    the interval gets uniform spacing ``step`` and a geometric ladder (ratio
    1.5) grows outward until the base spacing takes over.  Base points closer
    than 0.6x the local ladder spacing are dropped.
    """
    n = max(1, round((hi - lo) / h))
    base = np.linspace(lo, hi, n + 1)
    ladder_pts = []
    ladder_spacing = []
    for (a, b, step) in specials:
        a, b = max(a, lo), min(b, hi)
        if b < a:
            continue
        step = min(step, h)
        if b > a:
            m = max(1, round((b - a) / step))
            seg = np.linspace(a, b, m + 1)
        else:
            seg = np.array([a])
        ladder_pts.extend(seg)
        ladder_spacing.extend([step] * len(seg))
        for start, direction in ((a, -1.0), (b, 1.0)):
            s, pos = step, start
            while s < h:
                pos = pos + direction * s
                if lo + 0.3 * h < pos < hi - 0.3 * h:
                    ladder_pts.append(pos)
                    ladder_spacing.append(s)
                s *= 1.5
    if not ladder_pts:
        return base
    ladder_pts = np.asarray(ladder_pts)
    ladder_spacing = np.asarray(ladder_spacing)
    keep = np.ones(len(base), dtype=bool)
    for p, s in zip(ladder_pts, ladder_spacing):
        keep &= np.abs(base - p) > 0.6 * s
    keep[0] = keep[-1] = True
    pts = np.concatenate([base[keep], ladder_pts])
    pts = np.sort(pts)
    # drop near-duplicates without perturbing the surviving coordinates
    mask = np.concatenate([[True], np.diff(pts) > 1e-13])
    return pts[mask]


def _closest_boundary_points(a: Ellipse, b: Ellipse):
    """The closest boundary point pair of two inclusions."""
    if a.is_circle() and b.is_circle():
        ca, cb = np.asarray(a.center), np.asarray(b.center)
        axis = cb - ca
        axis = axis / np.linalg.norm(axis)
        return ca + a.radii[0] * axis, cb - b.radii[0] * axis
    pa = a.boundary_points(720)
    i = int(np.argmin(b.approx_distance(pa)))
    p = pa[i]
    for _ in range(30):
        q = b.project(p[None, :])[0]
        p = a.project(q[None, :])[0]
    return p, b.project(p[None, :])[0]


def build_mesh(layout, h, element_budget=1_500_000, gap_floor_factor=8.0):
    """Interface-conforming triangulation with target edge length ``h``.

    The gap between the designated pair is resolved with at least two element
    layers (grid lines at both near-poles and the gap midpoint, local spacing
    ``max(gap/2, h/gap_floor_factor)``).  For touching inclusions the tangency
    point becomes a mesh vertex.
    """
    if h <= 0:
        raise MeshError("h must be positive")
    for inc in layout.inclusions:
        if h >= min(inc.radii):
            raise MeshError("h must be smaller than the smallest inclusion radius")

    xlo, xhi, ylo, yhi = layout.outer.bounds
    specials_x, specials_y = [], []
    tangency = None
    if layout.gap_pair is not None:
        i, j = layout.gap_pair
        pa, pb = _closest_boundary_points(layout.inclusions[i], layout.inclusions[j])
        gap = float(np.linalg.norm(pa - pb))
        if gap <= 1e-9:  # built to touch; kill the float residue
            gap = 0.0
        step = max(gap / 2.0, h / gap_floor_factor)
        if 0 < gap < h / 4.0:
            # the layer condition forces spacing gap/2 below the grading floor
            step = gap / 2.0
        specials_x.append((min(pa[0], pb[0]), max(pa[0], pb[0]), step))
        specials_y.append((min(pa[1], pb[1]), max(pa[1], pb[1]), step))
        if gap == 0.0:
            tangency = 0.5 * (pa + pb)

    xs = graded_axis(xlo, xhi, h, specials_x)
    ys = graded_axis(ylo, yhi, h, specials_y)
    projected = 2 * (len(xs) - 1) * (len(ys) - 1)
    if projected > element_budget:
        raise InfeasibleResolutionError(
            f"projected {projected} elements exceed the budget {element_budget}")
    if tangency is not None:
        # make sure the tangency point is a grid node (skip float-duplicates)
        xs = _insert_coord(xs, tangency[0])
        ys = _insert_coord(ys, tangency[1])
    return mesh_from_axes(layout, xs, ys, h)


def _insert_coord(axis, value, tol=1e-12):
    if np.abs(axis - value).min() <= tol:
        return axis
    return np.sort(np.append(axis, value))


def mesh_from_axes(layout, xs, ys, h):
    """Triangulate the tensor grid ``xs x ys`` and conform it to the layout."""
    nx, ny = len(xs), len(ys)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([gx.ravel(), gy.ravel()])

    def vid(i, j):
        return i * ny + j

    ii, jj = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    v00, v10 = vid(ii, jj), vid(ii + 1, jj)
    v01, v11 = vid(ii, jj + 1), vid(ii + 1, jj + 1)
    tris = np.concatenate([
        np.column_stack([v00, v10, v11]),
        np.column_stack([v00, v11, v01]),
    ])

    verts_arr = vertices.copy()
    triangles = tris.tolist()

    on_interface = np.zeros(len(verts_arr), dtype=bool)
    on_outer = np.zeros(len(verts_arr), dtype=bool)
    od = layout.outer.boundary_distance(verts_arr)
    on_outer[np.abs(od) < 1e-12] = True

    curves = list(layout.inclusions)
    if layout.outer.kind == "disk":
        oc = layout.outer
        curves.append(Ellipse(oc.center, (oc.size, oc.size), 0.0, region=0))

    for curve in curves:
        verts_arr, triangles, on_interface, on_outer = _conform_to_curve(
            verts_arr, triangles, curve, on_interface, on_outer, is_outer=(curve.region == 0))

    if layout.outer.kind == "disk":
        # drop elements outside the disk
        bary = verts_arr[np.asarray(triangles)].mean(axis=1)
        keep = layout.outer.boundary_distance(bary) > 0
        triangles = [t for t, k in zip(triangles, keep) if k]
        used = np.unique(np.asarray(triangles).ravel())
        remap = -np.ones(len(verts_arr), dtype=int)
        remap[used] = np.arange(len(used))
        triangles = remap[np.asarray(triangles)].tolist()
        verts_arr = verts_arr[used]
        on_outer = np.abs(layout.outer.boundary_distance(verts_arr)) < 1e-9

    tri_arr = np.asarray(triangles, dtype=int)
    verts_arr, tri_arr, on_interface, on_outer = _weld_vertices(
        verts_arr, tri_arr, h, on_interface, on_outer)
    p = verts_arr[tri_arr]
    signed = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                    - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
    flip = signed < 0
    tri_arr[flip] = tri_arr[flip][:, [0, 2, 1]]
    signed = np.abs(signed)
    if np.any(signed <= 0):
        raise MeshError("degenerate element produced during interface cutting")

    locked = on_interface | on_outer
    tri_arr = _flip_pass(verts_arr, tri_arr, locked)
    verts_arr = _smooth_pass(verts_arr, tri_arr, locked)
    tri_arr = _flip_pass(verts_arr, tri_arr, locked)

    bary = verts_arr[tri_arr].mean(axis=1)
    tags = layout.classify(bary)
    if layout.outer.kind == "square":
        boundary = np.where(np.abs(layout.outer.boundary_distance(verts_arr)) < 1e-12)[0]
    else:
        boundary = np.where(np.abs(layout.outer.boundary_distance(verts_arr)) < 1e-9)[0]
    return Mesh(verts_arr, tri_arr, tags, boundary, float(h), layout)


def _weld_vertices(verts, tris, h, on_interface, on_outer, tol=None):
    """Merge near-coincident vertices (snap collapse at cusps) and drop the
    resulting sliver triangles; total dropped area stays below 1e-11."""
    from scipy.spatial import cKDTree
    tol = 1e-7 * h if tol is None else tol
    pairs = cKDTree(verts).query_pairs(tol, output_type="ndarray")
    target = np.arange(len(verts))
    if len(pairs):
        for a, b in pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]:
            ra, rb = target[a], target[b]
            while target[ra] != ra:
                ra = target[ra]
            while target[rb] != rb:
                rb = target[rb]
            lo, hi = min(ra, rb), max(ra, rb)
            target[hi] = lo
        for i in range(len(target)):
            r = i
            while target[r] != r:
                r = target[r]
            target[i] = r
        # representatives inherit the lock flags of everything they absorbed
        on_interface = on_interface.copy()
        on_outer = on_outer.copy()
        np.logical_or.at(on_interface, target, on_interface)
        np.logical_or.at(on_outer, target, on_outer)
    tris = target[tris]
    # drop triangles that collapsed (repeated vertex or ~zero area)
    p = verts[tris]
    area2 = np.abs((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                   - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
    distinct = ((tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2])
                & (tris[:, 0] != tris[:, 2]))
    keep_tri = distinct & (area2 > 2e-13 * h * h)
    tris = tris[keep_tri]
    used = np.unique(tris.ravel())
    remap = -np.ones(len(verts), dtype=int)
    remap[used] = np.arange(len(used))
    return verts[used], remap[tris], on_interface[used], on_outer[used]


def _conform_to_curve(verts, triangles, curve, on_interface, on_outer, is_outer=False):
    """Snap near-curve vertices onto the curve, then cut crossed triangles."""
    verts = np.asarray(verts, dtype=float)
    tri_arr = np.asarray(triangles, dtype=int)

    # local length scale per vertex: shortest adjacent edge
    local_h = np.full(len(verts), np.inf)
    for k in range(3):
        a, b = tri_arr[:, k], tri_arr[:, (k + 1) % 3]
        el = np.linalg.norm(verts[a] - verts[b], axis=1)
        np.minimum.at(local_h, a, el)
        np.minimum.at(local_h, b, el)

    dist = curve.approx_distance(verts)
    snap = (np.abs(dist) < 0.25 * local_h) & ~on_interface
    if not is_outer:
        snap &= ~on_outer
    idx = np.where(snap)[0]
    if len(idx):
        verts = verts.copy()
        verts[idx] = curve.project(verts[idx])
    level = curve.level(verts)
    level[idx] = 0.0
    level[np.abs(level) < _ZERO_LEVEL] = 0.0
    on_interface = on_interface.copy()
    on_interface[idx] = True
    if is_outer:
        on_outer = on_outer.copy()
        on_outer[idx] = True

    extra = []
    crossing_cache: dict[tuple[int, int], int] = {}
    next_id = len(verts)

    def crossing(a, b):
        nonlocal next_id
        key = (a, b) if a < b else (b, a)
        got = crossing_cache.get(key)
        if got is not None:
            return got
        pa, pb = verts[key[0]], verts[key[1]]
        t = _segment_curve_root(curve, pa, pb)
        # absorb near-endpoint crossings into the endpoint (chordal-level move)
        if t < 0.05:
            level[key[0]] = 0.0
            crossing_cache[key] = -1 - key[0]
            return crossing_cache[key]
        if t > 0.95:
            level[key[1]] = 0.0
            crossing_cache[key] = -1 - key[1]
            return crossing_cache[key]
        pt = curve.project(((1 - t) * pa + t * pb)[None, :])[0]
        extra.append(pt)
        crossing_cache[key] = next_id
        next_id += 1
        return crossing_cache[key]

    out = []
    pending = tri_arr.tolist()
    # extra passes: endpoint absorption can reclassify edges of other triangles
    for _ in range(4):
        deferred = []
        for tri in pending:
            cross_edges = [k for k in range(3)
                           if level[tri[k]] * level[tri[(k + 1) % 3]] < 0]
            if not cross_edges:
                out.append(tri)
                continue
            ids = [crossing(tri[k], tri[(k + 1) % 3]) for k in cross_edges]
            if any(i < 0 for i in ids):
                deferred.append(tri)  # an endpoint was absorbed; reclassify next pass
                continue
            out.extend(_split_triangle(tri, cross_edges, ids))
        pending = deferred
        if not pending:
            break
    out.extend(pending)

    if extra:
        verts = np.vstack([verts, np.asarray(extra)])
        on_interface = np.concatenate([on_interface, np.ones(len(extra), dtype=bool)])
        on_outer = np.concatenate([on_outer, np.full(len(extra), is_outer)])
    return verts, out, on_interface, on_outer


def _segment_curve_root(curve, pa, pb):
    """Parameter t in (0,1) where the segment crosses the (quadratic) curve."""
    la = float(curve.level(pa[None, :])[0])
    lb = float(curve.level(pb[None, :])[0])
    # quadratic along the segment: L(t) = A t^2 + B t + C
    mid = float(curve.level((0.5 * (pa + pb))[None, :])[0])
    C = la
    A = 2.0 * (la + lb) - 4.0 * mid
    B = lb - la - A
    roots = []
    if abs(A) < 1e-300:
        if B != 0:
            roots = [-C / B]
    else:
        disc = B * B - 4 * A * C
        if disc >= 0:
            sq = math.sqrt(disc)
            roots = [(-B - sq) / (2 * A), (-B + sq) / (2 * A)]
    roots = [t for t in roots if 0.0 < t < 1.0]
    if not roots:
        # fall back to bisection on the sampled level
        t0, t1, l0 = 0.0, 1.0, la
        for _ in range(80):
            tm = 0.5 * (t0 + t1)
            lm = float(curve.level(((1 - tm) * pa + tm * pb)[None, :])[0])
            if l0 * lm <= 0:
                t1 = tm
            else:
                t0, l0 = tm, lm
        return 0.5 * (t0 + t1)
    return roots[0]


def _split_triangle(tri, cross_edges, ids):
    """Split one triangle along its crossing points (conforming)."""
    if len(cross_edges) == 1:
        k = cross_edges[0]
        a, b, c = tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]
        q = ids[0]
        return [[a, q, c], [q, b, c]]
    # two crossed edges: the vertex they share is cut off
    k0, k1 = cross_edges
    e0 = (tri[k0], tri[(k0 + 1) % 3])
    e1 = (tri[k1], tri[(k1 + 1) % 3])
    iso = (set(e0) & set(e1)).pop()
    qa, qb = ids[0], ids[1]
    va = e0[0] if e0[1] == iso else e0[1]
    vb = e1[0] if e1[1] == iso else e1[1]
    return [[iso, qa, qb], [qa, va, vb], [qa, vb, qb]]


def _flip_pass(verts, tris, locked_vertex, max_rounds=8):
    """Delaunay-style edge flips away from interfaces (improves angles)."""
    tris = [list(t) for t in tris]
    for _ in range(max_rounds):
        edge_map: dict[tuple[int, int], list[int]] = {}
        for t, tri in enumerate(tris):
            for k in range(3):
                a, b = tri[k], tri[(k + 1) % 3]
                key = (a, b) if a < b else (b, a)
                edge_map.setdefault(key, []).append(t)
        dirty = set()
        flips = 0
        for key, owners in edge_map.items():
            if len(owners) != 2:
                continue
            a, b = key
            if locked_vertex[a] and locked_vertex[b]:
                continue  # never flip a (potential) interface edge
            t0, t1 = owners
            if t0 in dirty or t1 in dirty:
                continue
            c = next(v for v in tris[t0] if v != a and v != b)
            d = next(v for v in tris[t1] if v != a and v != b)
            if c == d:
                continue
            if not _in_circumcircle(verts[a], verts[b], verts[c], verts[d]):
                continue
            new0, new1 = [c, d, b], [d, c, a]
            if _signed_area(verts, new0) <= 0 or _signed_area(verts, new1) <= 0:
                continue
            tris[t0], tris[t1] = new0, new1
            dirty.update(owners)
            flips += 1
        if flips == 0:
            break
    return np.asarray(tris, dtype=int)


def _smooth_pass(verts, tris, locked, rounds=2, relax=0.5):
    """Damped Laplacian smoothing of unlocked vertices with an inversion guard."""
    verts = verts.copy()
    tris = np.asarray(tris)
    free = ~locked

    def signed_areas(v):
        p = v[tris]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))

    min_area = np.abs(signed_areas(verts)).min()
    for _ in range(rounds):
        nbr_sum = np.zeros_like(verts)
        nbr_cnt = np.zeros(len(verts))
        for k in range(3):
            a, b = tris[:, k], tris[:, (k + 1) % 3]
            np.add.at(nbr_sum, a, verts[b])
            np.add.at(nbr_cnt, a, 1.0)
            np.add.at(nbr_sum, b, verts[a])
            np.add.at(nbr_cnt, b, 1.0)
        target = nbr_sum / np.maximum(nbr_cnt, 1.0)[:, None]
        prop = verts.copy()
        mask = free & (nbr_cnt > 0)
        prop[mask] = (1 - relax) * verts[mask] + relax * target[mask]
        for _ in range(10):
            bad = signed_areas(prop) <= 0.2 * min_area
            if not np.any(bad):
                break
            revert = np.unique(tris[bad].ravel())
            prop[revert] = verts[revert]
        verts = prop
    return verts


def _signed_area(verts, tri):
    p0, p1, p2 = verts[tri[0]], verts[tri[1]], verts[tri[2]]
    return 0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))


def _in_circumcircle(pa, pb, pc, pd):
    """True if pd is strictly inside the circumcircle of (pa, pb, pc)."""
    m = np.array([
        [pa[0] - pd[0], pa[1] - pd[1], (pa[0] - pd[0]) ** 2 + (pa[1] - pd[1]) ** 2],
        [pb[0] - pd[0], pb[1] - pd[1], (pb[0] - pd[0]) ** 2 + (pb[1] - pd[1]) ** 2],
        [pc[0] - pd[0], pc[1] - pd[1], (pc[0] - pd[0]) ** 2 + (pc[1] - pd[1]) ** 2],
    ])
    ccw = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1])
    return np.linalg.det(m) * np.sign(ccw) > 1e-14


# --- serialization -----------------------------------------------------------

def save_layout(layout, path):
    lines = [
        f"outer.kind = {layout.outer.kind}",
        f"outer.center = {layout.outer.center[0]!r},{layout.outer.center[1]!r}",
        f"outer.size = {layout.outer.size!r}",
    ]
    for k, inc in enumerate(layout.inclusions):
        p = f"inclusion[{k}]"
        lines.append(f"{p}.center = {inc.center[0]!r},{inc.center[1]!r}")
        lines.append(f"{p}.radii = {inc.radii[0]!r},{inc.radii[1]!r}")
        lines.append(f"{p}.rotation = {inc.rotation!r}")
        lines.append(f"{p}.region = {inc.region}")
    if layout.gap_pair is not None:
        lines.append(f"gap_pair = {layout.gap_pair[0]},{layout.gap_pair[1]}")
        lines.append(f"delta = {layout.gap!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_layout(path):
    data = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            data[key.strip()] = val.strip()
    outer = OuterDomain(
        data["outer.kind"],
        tuple(float(v) for v in data["outer.center"].split(",")),
        float(data["outer.size"]),
    )
    incs = []
    k = 0
    while f"inclusion[{k}].center" in data:
        p = f"inclusion[{k}]"
        incs.append(Ellipse(
            tuple(float(v) for v in data[f"{p}.center"].split(",")),
            tuple(float(v) for v in data[f"{p}.radii"].split(",")),
            float(data[f"{p}.rotation"]),
            int(data[f"{p}.region"]),
        ))
        k += 1
    gap_pair = None
    gap = None
    if "gap_pair" in data:
        gap_pair = tuple(int(v) for v in data["gap_pair"].split(","))
        gap = float(data["delta"])
    return InclusionLayout(outer, tuple(incs), gap_pair, gap)


def save_mesh(mesh, path):
    """Plain-text node/element/tag export: one record per line."""
    with open(path, "w") as fh:
        fh.write(f"nodes {mesh.vertex_count}\n")
        for i, (x, y) in enumerate(mesh.vertices):
            fh.write(f"{i} {x!r} {y!r}\n")
        fh.write(f"elements {mesh.triangle_count}\n")
        for i, (t, tag) in enumerate(zip(mesh.triangles, mesh.region_tag)):
            fh.write(f"{i} {t[0]} {t[1]} {t[2]} {tag}\n")
        fh.write(f"boundary {len(mesh.boundary_vertices)}\n")
        fh.write(" ".join(str(v) for v in mesh.boundary_vertices) + "\n")
