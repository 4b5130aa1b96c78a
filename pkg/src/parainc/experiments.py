"""Named, reproducible experiments over the library: the gap sweep, the
anisotropic-field exponent fits, the scale-invariance ratios, the kernel
Gaussian fits, the truncation cascade, and the convergence studies.

Each runner emits RFC-4180 CSV (header row mandatory, deterministic float
rendering) plus optional SVG plots, and returns a list of named checks so
the command line can exit 0 (all pass), 2 (a check failed), or 1 (error).
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import geometry as geo
from . import coefficients as co
from . import solver as sv
from . import norms as nr
from . import iteration as it
from . import kernels as ke
from .config import ExperimentConfig, default_config
from .svgplot import render_line_plot, PlotError


class ExperimentError(RuntimeError):
    pass


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: {self.detail}"


@dataclass
class ExperimentResult:
    name: str
    checks: list = dc_field(default_factory=list)
    tables: dict = dc_field(default_factory=dict)
    outputs: list = dc_field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)


def _fmt_cell(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, header, rows):
    """RFC-4180-style CSV with deterministic float rendering."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt_cell(v) for v in row])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise ExperimentError(f"{path}: empty CSV")
    return rows[0], rows[1:]


MARKER_ROW = "ABORTED"


# --- sweep ---------------------------------------------------------------------

def _sweep_layout(cfg, delta):
    r = cfg["geometry.radius"]
    cy = cfg["geometry.center_y"]
    return geo.build_layout(
        geo.unit_square(),
        [geo.Ellipse((0.5 - r - 0.05, cy), (r, r)),
         geo.Ellipse((0.5 + r + 0.05, cy), (r, r))],
        gap_pair=(0, 1), gap=delta)


def _sweep_instance(cfg, delta):
    lay = _sweep_layout(cfg, delta)
    mesh = geo.build_mesh(lay, cfg["discretization.h"])
    c = cfg["field.contrast"]
    field = co.piecewise_contrast_field(
        lay, [c * np.eye(2), c * np.eye(2), np.eye(2)])
    sources = co.SourceData(f=lambda p, t: np.ones(len(p)), p=6.0)
    problem = sv.ParabolicProblem(
        mesh, field, sources=sources,
        T=cfg["discretization.T"], tau=cfg["discretization.tau"], theta=1.0)
    u = sv.solve_parabolic(problem)
    eps = cfg["sweep.epsilon"]
    ap = cfg["sweep.alpha_prime"]
    shr = geo.ShrunkRegion(lay, eps)
    window = (eps**2, cfg["discretization.T"])
    sups = nr.piecewise_grad_sup(u, lay, shr, window)
    c1a = nr.piecewise_c1alpha(u, lay, shr, ap, window, pair_budget=2000)
    rho = cfg["sweep.cylinder_radius"]
    cyl = nr.ParabolicCylinder((0.5, cfg["geometry.center_y"]),
                               cfg["discretization.T"], rho)
    ratios = {}
    for name in ("sup_l2", "linf", "dudt_l2", "main"):
        ratios[name] = nr.inequality_ratio(name, u, sources, lay, epsilon=eps,
                                           alpha_prime=ap)
    for name in ("grad_cylinder", "dudt_cylinder"):
        ratios[name] = nr.inequality_ratio(name, u, sources, lay, cylinder=cyl)
    return sups, c1a, ratios


def run_sweep(cfg: ExperimentConfig, out_dir=None, threads=1) -> ExperimentResult:
    """Gradient sups on a fixed shrunk interior across the gap sweep.

    The shrunk margin eps stays fixed while the gap closes; the plateau
    statistic is max/min of each region's gradient sup over the small-gap
    tail, asserted against ``sweep.plateau_max``.
    """
    out_dir = out_dir or cfg.get("out", "out")
    deltas = sorted(cfg["sweep.deltas"], reverse=True)
    if len(deltas) < 1 or deltas[-1] != 0.0:
        raise ExperimentError("the sweep needs a delta list ending at 0")
    res = ExperimentResult("sweep")
    header = (["delta", "h", "tau"]
              + [f"grad_sup_region{m}" for m in (1, 2, 3)]
              + [f"c1alpha_region{m}" for m in (1, 2, 3)]
              + ["ratio_" + n for n in ("sup_l2", "linf", "dudt_l2", "main",
                                        "grad_cylinder", "dudt_cylinder")])
    rows = []
    path = os.path.join(out_dir, "sweep.csv")
    try:
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                futs = [pool.submit(_sweep_instance, cfg, d) for d in deltas]
                outs = [f.result() for f in futs]
        else:
            outs = [_sweep_instance(cfg, d) for d in deltas]
    except Exception as exc:
        rows.append([MARKER_ROW, repr(exc)] + [""] * (len(header) - 2))
        write_csv(path, header, rows)
        raise
    for d, (sups, c1a, ratios) in zip(deltas, outs):
        rows.append([d, cfg["discretization.h"], cfg["discretization.tau"]]
                    + list(sups) + list(c1a)
                    + [ratios[n] for n in ("sup_l2", "linf", "dudt_l2", "main",
                                           "grad_cylinder", "dudt_cylinder")])
    res.outputs.append(write_csv(path, header, rows))

    tail = [i for i, d in enumerate(deltas) if d <= cfg["sweep.delta_tail"] + 1e-15]
    plateau = 0.0
    for m in range(3):
        vals = [outs[i][0][m] for i in tail]
        if min(vals) > 0:
            plateau = max(plateau, max(vals) / min(vals))
    res.tables["plateau"] = plateau
    res.tables["rows"] = rows
    res.checks.append(Check(
        "gap sweep plateau",
        plateau <= cfg["sweep.plateau_max"],
        f"max/min over tail = {plateau:.4f} (limit {cfg['sweep.plateau_max']})"))
    res.checks.append(Check(
        "touching case completes", True,
        f"delta = 0 solved; grad sups {['%.4f' % s for s in outs[-1][0]]}"))
    try:
        svg = render_line_plot(
            [(f"region {m+1}", [r[0] for r in rows], [r[3 + m] for r in rows])
             for m in range(3)],
            xlabel="delta", ylabel="sup |grad u|",
            title="gradient sup vs inclusion gap")
        spath = os.path.join(out_dir, "sweep.svg")
        with open(spath, "w") as fh:
            fh.write(svg)
        res.outputs.append(spath)
    except PlotError:
        pass
    return res


# --- the anisotropic-field exponent fits ----------------------------------------

def analytic_ray_exponent(M, radii=None):
    """Log-log slope of |u(s,0) - u(0)| against s (exact power law)."""
    radii = np.geomspace(1e-3, 0.3, 12) if radii is None else np.asarray(radii)
    pts = np.column_stack([radii, np.zeros_like(radii)])
    vals = co.meyers_solution(pts, M)
    return float(np.polyfit(np.log(radii), np.log(np.abs(vals)), 1)[0])


def fem_blowup_slope(M, h, tau, T, annulus_outer=0.3):
    """Annulus fit of max elementwise |grad u| for the stationary oracle."""
    lay = geo.build_layout(geo.OuterDomain("square", (0.0, 0.0), 0.5), [])
    mesh = geo.build_mesh(lay, h)
    field = co.meyers_field(lay, M)
    trace = lambda pts: co.meyers_solution(pts, M)
    problem = sv.ParabolicProblem(mesh, field, initial=trace, dirichlet=trace,
                                  T=T, tau=tau, theta=1.0)
    u = sv.solve_parabolic(problem)
    gn = np.linalg.norm(u.gradients(len(u.times) - 1), axis=1)
    r = np.linalg.norm(mesh.barycenters, axis=1)
    edges = np.geomspace(4 * h, annulus_outer, 13)
    mids, vals = [], []
    for i in range(len(edges) - 1):
        sel = (r >= edges[i]) & (r < edges[i + 1])
        if sel.any():
            mids.append(math.sqrt(edges[i] * edges[i + 1]))
            vals.append(float(gn[sel].max()))
    if len(mids) < 5:
        raise ExperimentError("fewer than 5 annuli resolved for the slope fit")
    slope = float(np.polyfit(np.log(mids), np.log(vals), 1)[0])
    return slope, list(zip(mids, vals))


def run_meyers(cfg: ExperimentConfig, out_dir=None, threads=1) -> ExperimentResult:
    out_dir = out_dir or cfg.get("out", "out")
    res = ExperimentResult("meyers")
    rows = []
    for M in cfg["meyers.M_values"]:
        expo = analytic_ray_exponent(M)
        want = 1.0 / math.sqrt(M)
        rows.append([M, expo, want, abs(expo - want)])
        res.checks.append(Check(
            f"ray exponent M={M:g}",
            abs(expo - want) <= cfg["meyers.ray_tolerance"],
            f"fit {expo:.6f} vs 1/sqrt(M) = {want:.6f}"))
    res.outputs.append(write_csv(os.path.join(out_dir, "meyers_ray.csv"),
                                 ["M", "fit_exponent", "exact_exponent", "abs_error"],
                                 rows))
    M = cfg["meyers.fem_M"]
    slope, annuli = fem_blowup_slope(M, cfg["discretization.h"],
                                     cfg["discretization.tau"],
                                     cfg["discretization.T"],
                                     cfg["meyers.annulus_outer"])
    want = 1.0 / math.sqrt(M) - 1.0
    res.checks.append(Check(
        f"gradient blowup slope M={M:g}",
        abs(slope - want) <= cfg["meyers.slope_tolerance"],
        f"fit {slope:.4f} vs {want:.4f} +- {cfg['meyers.slope_tolerance']}"))
    apath = write_csv(os.path.join(out_dir, "meyers_annuli.csv"),
                      ["radius", "max_grad"], annuli)
    res.outputs.append(apath)
    res.tables["fem_slope"] = slope
    try:
        svg = render_line_plot(
            [("max |grad u|", [a[0] for a in annuli], [a[1] for a in annuli])],
            xlabel="annulus radius", ylabel="max |grad u|",
            xscale="log", yscale="log",
            title="gradient growth toward the singular point",
            annotations=[f"slope = {slope:.4f}"])
        spath = os.path.join(out_dir, "meyers_blowup.svg")
        with open(spath, "w") as fh:
            fh.write(svg)
        res.outputs.append(spath)
    except PlotError:
        pass
    return res


# --- scale-invariance ratios -----------------------------------------------------

def _dipole(z, s0):
    z = np.asarray(z, dtype=float)

    def val(p, t):
        dt = t - s0
        if dt <= 0:
            return np.zeros(len(p))
        return -(p[:, 0] - z[0]) / (2 * dt) * ke.heat_kernel_value(p, dt, z, 1.0, 2)

    def grad(p, t):
        dt = t - s0
        if dt <= 0:
            return np.zeros((len(p), 2))
        G = ke.heat_kernel_value(p, dt, z, 1.0, 2)
        rel = p - z
        out = np.empty_like(p)
        out[:, 0] = (-1.0 / (2 * dt) + rel[:, 0] ** 2 / (4 * dt * dt)) * G
        out[:, 1] = rel[:, 0] * rel[:, 1] / (4 * dt * dt) * G
        return out

    return val, grad


def _offset_kernel(z, s0):
    z = np.asarray(z, dtype=float)

    def val(p, t):
        dt = t - s0
        if dt <= 0:
            return np.zeros(len(p))
        return ke.heat_kernel_value(p, dt, z, 1.0, 2)

    def grad(p, t):
        dt = t - s0
        if dt <= 0:
            return np.zeros((len(p), 2))
        return -(p - z) / (2 * dt) * ke.heat_kernel_value(p, dt, z, 1.0, 2)[:, None]

    return val, grad


def run_scaling(cfg: ExperimentConfig, out_dir=None, threads=1) -> ExperimentResult:
    out_dir = out_dir or cfg.get("out", "out")
    res = ExperimentResult("scaling")
    rhos = list(cfg["scaling.rhos"])
    rows = []

    # stationary linear: ratio must be rho-independent to quadrature accuracy
    R = ke.scaling_check(lambda p, t: p[:, 0],
                         lambda p, t: np.tile([1.0, 0.0], (len(p), 1)),
                         (0.0, 0.0), 0.0, rhos)
    vals = [R[r] for r in rhos]
    spread_lin = max(vals) / min(vals) - 1.0
    rows += [["linear", r, R[r]] for r in rhos]
    res.checks.append(Check("linear caloric ratio exactly constant",
                            spread_lin <= 1e-6,
                            f"relative spread {spread_lin:.2e} (limit 1e-6)"))

    # bilinear stationary caloric (also exactly scale-invariant)
    R = ke.scaling_check(lambda p, t: p[:, 0] * p[:, 1],
                         lambda p, t: np.column_stack([p[:, 1], p[:, 0]]),
                         (0.0, 0.0), 0.0, rhos)
    rows += [["bilinear", r, R[r]] for r in rhos]
    vals = [R[r] for r in rhos]
    spreads = {"bilinear": max(vals) / min(vals)}

    # kernel dipole vanishing at the cylinder center: the bound is exercised
    val, grad = _dipole((0.0, 2.0), -1.5)
    R = ke.scaling_check(val, grad, (0.0, 0.0), 0.0, rhos)
    rows += [["dipole", r, R[r]] for r in rhos]
    vals = [R[r] for r in rhos]
    spreads["dipole"] = max(vals) / min(vals)
    worst = max(spreads.values())
    res.checks.append(Check(
        "caloric family spread",
        worst <= cfg["scaling.spread_max"],
        f"max spread {worst:.3f} over {sorted(spreads)} (limit {cfg['scaling.spread_max']})"))

    # positive kernel offset: the ratio decays with rho; per-halving factor stays bounded
    val, grad = _offset_kernel((1.05, 0.0), -0.8)
    R = ke.scaling_check(val, grad, (0.0, 0.0), 0.0, rhos)
    rows += [["offset_kernel", r, R[r]] for r in rhos]
    vals = [R[r] for r in sorted(rhos, reverse=True)]
    halving = max(max(a / b, b / a) for a, b in zip(vals, vals[1:]))
    res.checks.append(Check(
        "offset kernel bounded across halvings",
        halving <= cfg["scaling.spread_max"],
        f"max per-halving factor {halving:.3f} (limit {cfg['scaling.spread_max']})"))

    if cfg["scaling.run_fem"]:
        for kind, delta in (("contrast", 0.1), ("touching", 0.0)):
            lay = geo.build_layout(
                geo.unit_square(),
                [geo.Ellipse((0.3, 0.5), (0.15, 0.15)),
                 geo.Ellipse((0.7, 0.5), (0.15, 0.15))],
                gap_pair=(0, 1), gap=delta)
            mesh = geo.build_mesh(lay, cfg["discretization.h"])
            field = co.piecewise_contrast_field(
                lay, [10 * np.eye(2), 10 * np.eye(2), np.eye(2)])
            # odd about the gap center line, so the ratio is scale-stable
            bump = lambda p: np.sin(2 * np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1])
            problem = sv.ParabolicProblem(mesh, field, initial=bump,
                                          T=cfg["discretization.T"],
                                          tau=cfg["discretization.tau"], theta=1.0)
            u = sv.solve_parabolic(problem)
            fem_rhos = list(cfg["scaling.fem_rhos"])
            R = ke.scaling_check_field(u, (0.5, 0.5), cfg["discretization.T"], fem_rhos)
            rows += [[kind, r, R[r]] for r in fem_rhos]
            vals = [R[r] for r in fem_rhos]
            spread = max(vals) / min(vals)
            res.tables[f"spread_{kind}"] = spread
            if kind == "touching":
                res.checks.append(Check(
                    "touching-contrast spread",
                    spread <= cfg["scaling.touching_spread_max"],
                    f"spread {spread:.3f} (limit {cfg['scaling.touching_spread_max']})"))
    res.outputs.append(write_csv(os.path.join(out_dir, "scaling.csv"),
                                 ["function", "rho", "ratio"], rows))
    return res


# --- kernel fits -----------------------------------------------------------------

def run_kernel(cfg: ExperimentConfig, out_dir=None, threads=1) -> ExperimentResult:
    out_dir = out_dir or cfg.get("out", "out")
    res = ExperimentResult("kernel")
    burn = cfg["kernel.burn_in"]
    fit_rows = []

    def emit(name, est, value_fit, grad_fit):
        path = os.path.join(out_dir, f"kernel_{name}_samples.csv")
        d2, dt, vals = est.value_samples(burn)
        gd2, gdt, gvals = est.gradient_samples(burn)
        lim = min(len(d2), 20000)
        rows = [[math.sqrt(d2[i]), dt[i], vals[i], ""] for i in range(0, len(d2), max(1, len(d2) // lim))]
        write_csv(path, ["dist", "dt", "value", "grad"], rows)
        res.outputs.append(path)
        for tag, fit in (("value", value_fit), ("gradient", grad_fit)):
            if fit is None:
                continue
            fit_rows.append([name, tag, fit.C_hat, fit.c_hat, fit.exponent,
                             fit.on_axis_exponent if fit.on_axis_exponent is not None else "",
                             fit.residual, fit.samples])
            fpath = os.path.join(out_dir, f"kernel_{name}_{tag}_fit.txt")
            with open(fpath, "w") as fh:
                fh.write(ke.fit_summary_text(fit))
            res.outputs.append(fpath)

    if cfg["kernel.run_1d"]:
        lay = geo.build_layout(geo.OuterDomain("square", (0.0, 0.0), 0.5), [])
        field = co.extend_outside(co.identity_field(lay), 1.0)
        grid = ke.KernelGrid(h=cfg["kernel.h_1d"], fine_halfwidth=4.0,
                             tau_step=cfg["kernel.tau_1d"])
        est = ke.approximate_kernel(field, (0.0,), 0.0, grid,
                                    T=cfg["kernel.T_1d"], dimension=1)
        fit = ke.gaussian_fit(est, burn_in=burn)
        gfit = ke.gradient_gaussian_fit(est, burn_in=burn)
        emit("1d_constant", est, fit, gfit)
        res.checks.append(Check(
            "1d decay exponent",
            abs(fit.exponent - 0.5) <= 0.02 * 0.5,
            f"fit {fit.exponent:.4f} vs 0.5 within 2%"))
        res.checks.append(Check(
            "1d gaussian rate",
            abs(fit.c_hat - 0.25) <= 0.05 * 0.25,
            f"fit {fit.c_hat:.4f} vs 0.25 within 5%"))
        res.tables["1d"] = (fit, gfit)

    if cfg["kernel.run_2d_constant"]:
        lay = geo.build_layout(geo.OuterDomain("square", (0.0, 0.0), 0.5), [])
        field = co.extend_outside(co.identity_field(lay), 1.0)
        grid = ke.KernelGrid(h=cfg["kernel.h_2d"],
                             fine_halfwidth=cfg["kernel.fine_halfwidth"],
                             tau_step=cfg["kernel.tau_2d"])
        est = ke.approximate_kernel(field, (0.0, 0.0), 0.0, grid,
                                    T=cfg["kernel.T_2d"], dimension=2)
        fit = ke.gaussian_fit(est, burn_in=burn, window=4.0)
        gfit = ke.gradient_gaussian_fit(est, burn_in=burn)
        emit("2d_constant", est, fit, gfit)
        res.checks.append(Check(
            "2d gradient exponent",
            abs(gfit.on_axis_exponent - 1.5) <= 0.05 * 1.5,
            f"on-axis {gfit.on_axis_exponent:.4f} vs 1.5 within 5%"))
        res.tables["2d"] = (fit, gfit)

    if cfg["kernel.run_2d_contrast"]:
        lay = geo.build_layout(geo.OuterDomain("square", (0.0, 0.0), 8.0),
                               [geo.Ellipse((0.7, 0.0), (0.5, 0.5))])
        field = co.extend_outside(
            co.piecewise_contrast_field(lay, [5 * np.eye(2), np.eye(2)]), 5.0)
        grid = ke.KernelGrid(h=cfg["kernel.h_2d"],
                             fine_halfwidth=cfg["kernel.fine_halfwidth"],
                             box_halfwidth=8.0, tau_step=cfg["kernel.tau_2d"])
        est = ke.approximate_kernel(field, (0.0, 0.0), 0.0, grid,
                                    T=cfg["kernel.T_2d"], dimension=2)
        fit = ke.gaussian_fit(est, burn_in=burn, window=4.0)
        gfit = ke.gradient_gaussian_fit(est, burn_in=burn)
        emit("2d_contrast", est, fit, gfit)
        res.checks.append(Check(
            "2d contrast gradient exponent",
            1.35 <= gfit.on_axis_exponent <= 1.65,
            f"on-axis {gfit.on_axis_exponent:.4f} in [1.35, 1.65]"))
        res.tables["2d_contrast"] = (fit, gfit)

    # cylinder L2 bound over the three proof cases (exact 1D kernel oracle)
    n_cfg = cfg["kernel.cylinder_configs"]
    est = ke.exact_gaussian_estimate(lam=1.0, dimension=1, extent=8.0, h=0.01,
                                     times=np.linspace(0.002, 1.2, 600))
    c_hat = ke.gaussian_fit(est, burn_in=0.0).c_hat
    configs = [(2.0, 0.2), (2.5, 0.3), (3.0, 0.5), (2.2, 0.25),
               (1.5, 0.25), (1.8, 0.3), (2.0, 0.4), (1.2, 0.15),
               (0.5, 0.5), (0.3, 0.4), (0.8, 0.6), (0.1, 0.3)][:n_cfg]
    ratios, cyl_rows = [], []
    for d, dt0 in configs:
        lhs, rhs = ke.cylinder_l2(est, (d,), dt0, c_hat=c_hat)
        case = "i" if d * d >= 15 * dt0 else ("ii" if d * d >= 7 * dt0 else "iii")
        ratios.append(lhs / rhs)
        cyl_rows.append([d, dt0, case, lhs, rhs, lhs / rhs])
    spread = max(ratios) / min(ratios)
    res.outputs.append(write_csv(os.path.join(out_dir, "kernel_cylinder_l2.csv"),
                                 ["dist", "dt", "case", "lhs", "rhs_shape", "ratio"],
                                 cyl_rows))
    res.checks.append(Check(
        "cylinder L2 ratio spread",
        spread <= 50.0,
        f"max/min over {len(configs)} configurations = {spread:.2f} (limit 50)"))
    res.outputs.append(write_csv(
        os.path.join(out_dir, "kernel_fits.csv"),
        ["instance", "kind", "C_hat", "c_hat", "exponent", "on_axis_exponent",
         "residual", "samples"],
        fit_rows))
    return res


# --- truncation cascade ------------------------------------------------------------

def _cascade_instances(cfg):
    h = cfg["discretization.h"]
    insts = []

    def solved(name, lay, mats, src=None, u0=None):
        mesh = geo.build_mesh(lay, h)
        field = co.piecewise_contrast_field(lay, mats)
        src_ = src or co.SourceData(p=cfg["degiorgi.p"])
        u0_ = u0 or (lambda p: np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1]))
        problem = sv.ParabolicProblem(mesh, field, sources=src_, initial=u0_,
                                      T=cfg["discretization.T"],
                                      tau=cfg["discretization.tau"], theta=1.0)
        return name, sv.solve_parabolic(problem), src_

    two_disks = [geo.Ellipse((0.3, 0.5), (0.15, 0.15)),
                 geo.Ellipse((0.7, 0.5), (0.15, 0.15))]
    plain = geo.build_layout(geo.unit_square(), [])
    insts.append(solved("constant", plain, [np.eye(2)]))
    lay = geo.build_layout(geo.unit_square(), two_disks, gap_pair=(0, 1), gap=0.1)
    insts.append(solved("contrast_gap_0.1", lay,
                        [10 * np.eye(2), 10 * np.eye(2), np.eye(2)]))
    lay = geo.build_layout(geo.unit_square(), two_disks, gap_pair=(0, 1), gap=0.05)
    insts.append(solved("contrast_gap_0.05", lay,
                        [5 * np.eye(2), 0.5 * np.eye(2), np.eye(2)]))
    lay = geo.build_layout(geo.unit_square(), two_disks, gap_pair=(0, 1), gap=0.0)
    insts.append(solved("touching", lay,
                        [10 * np.eye(2), 10 * np.eye(2), np.eye(2)]))
    src = co.SourceData(f=lambda p, t: np.ones(len(p)),
                        f_i=(lambda p, t: 0.1 * t * p[:, 0], None),
                        dfi_dt=(lambda p, t: 0.1 * p[:, 0], None),
                        p=cfg["degiorgi.p"])
    insts.append(solved("constant_sourced", plain, [np.eye(2)], src=src,
                        u0=lambda p: np.zeros(len(p))))
    return insts[:cfg["degiorgi.cascade_instances"]]


def run_degiorgi(cfg: ExperimentConfig, out_dir=None, threads=1) -> ExperimentResult:
    out_dir = out_dir or cfg.get("out", "out")
    res = ExperimentResult("degiorgi")

    params = it.IterationParams(cfg["degiorgi.C_tilde"], cfg["degiorgi.b"],
                                cfg["degiorgi.eps"])
    m_max = cfg["degiorgi.m_max"]
    seq, decays = it.degiorgi_sequence(params.theta0, params, m_max)
    bounds = it.sequence_bounds(params, m_max)
    res.outputs.append(write_csv(
        os.path.join(out_dir, "degiorgi_sequence.csv"),
        ["m", "y_m", "bound_m"],
        [[m, seq[m], bounds[m]] for m in range(len(seq))]))
    res.checks.append(Check("decay sequence stays under its envelope", decays,
                            f"m_max = {m_max}, y_final = {seq[-1]:.3e}"))

    rng = np.random.default_rng(cfg["seed"])
    ok = True
    worst = 0.0
    for _ in range(cfg["degiorgi.random_triples"]):
        pa = it.IterationParams(rng.uniform(0.5, 10.0),
                                rng.uniform(1.0 + 1e-6, 16.0),
                                rng.uniform(0.1, 2.0))
        s, dec = it.degiorgi_sequence(pa.theta0, pa, m_max)
        bb = it.sequence_bounds(pa, m_max)
        good = dec and np.all((s <= bb * (1.0 + 1e-9)) | (s == 0.0))
        ok = ok and good
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(bb > 0, s / bb, 1.0).max()
        worst = max(worst, ratio)
    res.checks.append(Check(
        f"{cfg['degiorgi.random_triples']} random triples decay",
        ok, f"worst y/bound ratio = {worst:.12f}"))

    cascade_rows = []
    all_verified = True
    for name, u, src in _cascade_instances(cfg):
        cyl = nr.ParabolicCylinder((0.5, 0.5), cfg["discretization.T"],
                                   cfg["degiorgi.rho"])
        out = it.degiorgi_cascade(u, cyl, src, p=cfg["degiorgi.p"],
                                  slack=cfg["degiorgi.slack"])
        mirror = it.degiorgi_cascade(u, cyl, src, p=cfg["degiorgi.p"],
                                     sign="-", slack=cfg["degiorgi.slack"])
        for m in range(len(out.phi)):
            cascade_rows.append([name, m, out.levels[m], out.phi[m]])
        res.checks.append(Check(
            f"sup bound: {name}",
            out.verified and mirror.verified,
            f"max u = {out.sup_u:.4f}, 2k = {2 * out.level:.4e}, "
            f"ratio {out.ratio:.2e}"))
        all_verified = all_verified and out.verified and mirror.verified
    res.outputs.append(write_csv(os.path.join(out_dir, "degiorgi_cascade.csv"),
                                 ["instance", "m", "k_m", "phi_m"], cascade_rows))
    res.tables["all_verified"] = all_verified
    return res


# --- convergence studies -----------------------------------------------------------

def spatial_convergence(h_values):
    """L2 errors of the stationary manufactured solution on square meshes."""
    lay = geo.build_layout(geo.unit_square(), [])
    errs = []
    exact = lambda p: p[:, 0] * (1 - p[:, 0]) * p[:, 1] * (1 - p[:, 1])
    rhs = lambda p, t: 2 * (p[:, 1] * (1 - p[:, 1]) + p[:, 0] * (1 - p[:, 0]))
    for h in h_values:
        mesh = geo.build_mesh(lay, h)
        field = co.identity_field(lay)
        u = sv.solve_elliptic(mesh, field, h_source=rhs)
        ue = exact(mesh.vertices)
        diff = sv.SpaceTimeField(mesh, np.array([0.0]), (u.final - ue)[None, :])
        errs.append(nr.slice_l2(diff, 0))
    slopes = [math.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]
    return errs, slopes


def temporal_convergence(theta, h, T, taus=None, ref_div=64):
    """Error at T against a fine-step reference on the same mesh."""
    lay = geo.build_layout(geo.unit_square(), [])
    mesh = geo.build_mesh(lay, h)
    field = co.identity_field(lay)
    u0 = lambda p: np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1])
    taus = [T / 4, T / 8, T / 16] if taus is None else taus
    ref = sv.solve_parabolic(sv.ParabolicProblem(
        mesh, field, initial=u0, T=T, tau=T / (ref_div * 16), theta=0.5))
    errs = []
    for tau in taus:
        u = sv.solve_parabolic(sv.ParabolicProblem(
            mesh, field, initial=u0, T=T, tau=tau, theta=theta))
        errs.append(float(np.abs(u.final - ref.final).max()))
    slopes = [math.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]
    return errs, slopes


def bnorm_monotone(h=1 / 32, T=0.1, tau=1 / 100):
    """Source-free backward Euler: the mass-matrix norm never grows."""
    lay = geo.build_layout(geo.unit_square(), [])
    mesh = geo.build_mesh(lay, h)
    field = co.identity_field(lay)
    rng = np.random.default_rng(3)
    u0 = rng.standard_normal(mesh.vertex_count)
    u0[mesh.boundary_vertices] = 0.0
    u = sv.solve_parabolic(sv.ParabolicProblem(mesh, field, initial=u0,
                                               T=T, tau=tau, theta=1.0))
    _, B = sv.assemble(mesh, field)
    norms = [float(v @ (B @ v)) for v in u.values]
    drops = [norms[i + 1] <= norms[i] * (1.0 + 1e-12) for i in range(len(norms) - 1)]
    return all(drops), norms


def run_convergence(cfg: ExperimentConfig, out_dir=None, threads=1) -> ExperimentResult:
    out_dir = out_dir or cfg.get("out", "out")
    res = ExperimentResult("convergence")
    hs = list(cfg["convergence.h_values"])
    errs, slopes = spatial_convergence(hs)
    lo, hi = cfg["convergence.space_slope_range"]
    res.checks.append(Check(
        "spatial order", all(lo <= s <= hi for s in slopes),
        f"slopes {['%.3f' % s for s in slopes]} in [{lo}, {hi}]"))
    rows = [[h, e] for h, e in zip(hs, errs)]
    res.outputs.append(write_csv(os.path.join(out_dir, "convergence_space.csv"),
                                 ["h", "l2_error"], rows))

    trows = []
    for theta, key in ((1.0, "convergence.be_slope_range"),
                       (0.5, "convergence.cn_slope_range")):
        errs_t, slopes_t = temporal_convergence(theta, cfg["convergence.time_h"],
                                                cfg["convergence.time_T"])
        lo, hi = cfg[key]
        res.checks.append(Check(
            f"temporal order theta={theta:g}",
            all(lo <= s <= hi for s in slopes_t),
            f"slopes {['%.3f' % s for s in slopes_t]} in [{lo}, {hi}]"))
        trows += [[theta, cfg["convergence.time_T"] / (4 * 2**i), e]
                  for i, e in enumerate(errs_t)]
    res.outputs.append(write_csv(os.path.join(out_dir, "convergence_time.csv"),
                                 ["theta", "tau", "max_error"], trows))

    mono, _ = bnorm_monotone()
    res.checks.append(Check("mass-norm monotone decay", mono,
                            "backward Euler, source-free"))
    return res


# --- plotting from CSV --------------------------------------------------------------

def emit_plot(csv_path, spec, output):
    """Render a CSV into a deterministic SVG per the plot spec dict."""
    header, rows = read_csv(csv_path)
    rows = [r for r in rows if r and r[0] != MARKER_ROW]
    if not rows:
        raise ExperimentError(f"{csv_path}: no data rows")
    cols = {name: i for i, name in enumerate(header)}
    xcol = spec["x"]
    ycols = [c.strip() for c in spec["y"].split(",")]
    for c in [xcol] + ycols:
        if c not in cols:
            raise ExperimentError(f"{csv_path}: missing column {c!r}")
    xs = [float(r[cols[xcol]]) for r in rows]
    series = []
    ann = []
    for c in ycols:
        ys = [float(r[cols[c]]) for r in rows]
        series.append((c, xs, ys))
        if spec.get("annotate_slope") and len(xs) >= 2:
            lx = np.log(np.abs(xs))
            ly = np.log(np.abs(ys))
            ann.append(f"{c}: slope = {np.polyfit(lx, ly, 1)[0]:.4f}")
    svg = render_line_plot(series, xlabel=xcol, ylabel=",".join(ycols),
                           title=spec.get("title", ""),
                           xscale=spec.get("xscale", "linear"),
                           yscale=spec.get("yscale", "linear"),
                           annotations=ann)
    os.makedirs(os.path.dirname(output) or ".", exist_ok=True)
    with open(output, "w") as fh:
        fh.write(svg)
    return output


def run_plot(cfg: ExperimentConfig, out_dir=None, threads=1) -> ExperimentResult:
    out_dir = out_dir or cfg.get("out", "out")
    res = ExperimentResult("plot")
    spec = {
        "x": cfg["plot.x"],
        "y": cfg["plot.y"],
        "xscale": cfg["plot.xscale"],
        "yscale": cfg["plot.yscale"],
        "title": cfg["plot.title"],
        "annotate_slope": cfg["plot.annotate_slope"],
    }
    out = emit_plot(cfg["plot.csv"], spec, os.path.join(out_dir, cfg["plot.output"]))
    res.outputs.append(out)
    res.checks.append(Check("plot written", True, out))
    return res


RUNNERS = {
    "sweep": run_sweep,
    "meyers": run_meyers,
    "scaling": run_scaling,
    "kernel": run_kernel,
    "degiorgi": run_degiorgi,
    "convergence": run_convergence,
    "plot": run_plot,
}


def run_experiment(cfg: ExperimentConfig, out_dir=None, threads=1) -> ExperimentResult:
    runner = RUNNERS.get(cfg.experiment)
    if runner is None:
        raise ExperimentError(f"no runner for experiment {cfg.experiment!r}")
    return runner(cfg, out_dir=out_dir, threads=threads)
