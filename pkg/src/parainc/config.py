"""Flat key = value configuration files with dotted sections.

One experiment per file.  Values are typed by a per-experiment schema;
unknown keys are rejected.  ``parse(serialize(cfg))`` is the identity on
canonical form (sorted keys, repr-rendered floats).
"""

from __future__ import annotations

import numpy as np


class ConfigError(ValueError):
    pass


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _parse_floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip() != "")


def _parse_matrices(text):
    out = []
    for block in text.split(";"):
        vals = [float(v) for v in block.replace(",", " ").split()]
        if len(vals) != 4:
            raise ConfigError("matrices need 4 row-major entries per block")
        out.append(np.array(vals).reshape(2, 2))
    return tuple(out)


_PARSERS = {
    "str": lambda s: s.strip(),
    "float": lambda s: float(s),
    "int": lambda s: int(s),
    "bool": _parse_bool,
    "floats": _parse_floats,
    "matrices": _parse_matrices,
}


def _render(kind, value):
    if kind == "floats":
        return ", ".join(repr(float(v)) for v in value)
    if kind == "matrices":
        return " ; ".join(" ".join(repr(float(x)) for x in np.asarray(m).ravel())
                          for m in value)
    if kind == "bool":
        return "true" if value else "false"
    if kind == "float":
        return repr(float(value))
    return str(value)


# key -> (type tag, default); None default means required
SCHEMAS = {
    "common": {
        "experiment": ("str", None),
        "out": ("str", "out"),
        "seed": ("int", 0),
    },
    "sweep": {
        "geometry.radius": ("float", 0.15),
        "geometry.center_y": ("float", 0.5),
        "field.contrast": ("float", 10.0),
        "discretization.h": ("float", 1.0 / 128),
        "discretization.tau": ("float", 1.0 / 400),
        "discretization.T": ("float", 0.1),
        "sweep.deltas": ("floats", (0.2, 0.1, 0.05, 0.025, 0.0)),
        "sweep.epsilon": ("float", 0.05),
        "sweep.delta_tail": ("float", 0.05),
        "sweep.plateau_max": ("float", 1.5),
        "sweep.alpha_prime": ("float", 0.2),
        "sweep.cylinder_radius": ("float", 0.12),
    },
    "meyers": {
        "meyers.M_values": ("floats", (2.0, 4.0, 9.0)),
        "meyers.fem_M": ("float", 4.0),
        "discretization.h": ("float", 1.0 / 256),
        "discretization.tau": ("float", 0.002),
        "discretization.T": ("float", 0.01),
        "meyers.annulus_outer": ("float", 0.3),
        "meyers.ray_tolerance": ("float", 1e-4),
        "meyers.slope_tolerance": ("float", 0.1),
    },
    "scaling": {
        "scaling.rhos": ("floats", (1.0, 0.5, 0.25, 0.125)),
        "scaling.spread_max": ("float", 4.0),
        "scaling.touching_spread_max": ("float", 10.0),
        "scaling.fem_rhos": ("floats", (0.2, 0.1, 0.05)),
        "discretization.h": ("float", 1.0 / 96),
        "discretization.tau": ("float", 1.0 / 400),
        "discretization.T": ("float", 0.15),
        "scaling.run_fem": ("bool", True),
    },
    "kernel": {
        "kernel.run_1d": ("bool", True),
        "kernel.run_2d_constant": ("bool", True),
        "kernel.run_2d_contrast": ("bool", True),
        "kernel.h_1d": ("float", 0.005),
        "kernel.tau_1d": ("float", 2e-4),
        "kernel.T_1d": ("float", 1.0),
        "kernel.h_2d": ("float", 0.02),
        "kernel.tau_2d": ("float", 2e-3),
        "kernel.T_2d": ("float", 0.5),
        "kernel.fine_halfwidth": ("float", 1.6),
        "kernel.burn_in": ("float", 0.1),
        "kernel.cylinder_configs": ("int", 12),
    },
    "degiorgi": {
        "degiorgi.C_tilde": ("float", 1.0),
        "degiorgi.b": ("float", 4.0),
        "degiorgi.eps": ("float", 1.0),
        "degiorgi.m_max": ("int", 60),
        "degiorgi.random_triples": ("int", 200),
        "degiorgi.p": ("float", 6.0),
        "degiorgi.cascade_instances": ("int", 5),
        "discretization.h": ("float", 1.0 / 64),
        "discretization.tau": ("float", 1.0 / 256),
        "discretization.T": ("float", 0.25),
        "degiorgi.rho": ("float", 0.15),
        "degiorgi.slack": ("float", 0.05),
    },
    "convergence": {
        "convergence.h_values": ("floats", (1/8, 1/16, 1/32, 1/64)),
        "convergence.space_slope_range": ("floats", (1.8, 2.2)),
        "convergence.be_slope_range": ("floats", (0.9, 1.1)),
        "convergence.cn_slope_range": ("floats", (1.8, 2.2)),
        "convergence.time_h": ("float", 1.0 / 16),
        "convergence.time_T": ("float", 0.1),
    },
    "plot": {
        "plot.csv": ("str", None),
        "plot.x": ("str", None),
        "plot.y": ("str", None),
        "plot.xscale": ("str", "linear"),
        "plot.yscale": ("str", "linear"),
        "plot.title": ("str", ""),
        "plot.output": ("str", "plot.svg"),
        "plot.annotate_slope": ("bool", False),
    },
}

EXPERIMENTS = tuple(k for k in SCHEMAS if k != "common")


class ExperimentConfig(dict):
    """Typed, validated configuration for a single experiment run."""

    @property
    def experiment(self):
        return self["experiment"]


def default_config(experiment):
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    cfg = ExperimentConfig()
    for key, (kind, default) in SCHEMAS["common"].items():
        if default is not None:
            cfg[key] = default
    cfg["experiment"] = experiment
    for key, (kind, default) in SCHEMAS[experiment].items():
        if default is not None:
            cfg[key] = default
    return cfg


def parse_text(text):
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, _, val = stripped.partition("=")
        key = key.strip()
        if key in raw:
            raise ConfigError(f"duplicate key {key!r}")
        raw[key] = val.strip()
    if "experiment" not in raw:
        raise ConfigError("missing required key 'experiment'")
    experiment = raw["experiment"]
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    schema = {**SCHEMAS["common"], **SCHEMAS[experiment]}
    cfg = default_config(experiment)
    for key, text_val in raw.items():
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} for experiment {experiment!r}")
        kind, _ = schema[key]
        try:
            cfg[key] = _PARSERS[kind](text_val)
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from exc
    for key, (kind, default) in schema.items():
        if default is None and key not in cfg:
            raise ConfigError(f"missing required key {key!r}")
    return cfg


def parse_file(path):
    with open(path) as fh:
        return parse_text(fh.read())


def serialize(cfg: ExperimentConfig):
    experiment = cfg.experiment
    schema = {**SCHEMAS["common"], **SCHEMAS[experiment]}
    lines = [f"experiment = {experiment}"]
    for key in sorted(k for k in cfg if k != "experiment"):
        kind, _ = schema[key]
        lines.append(f"{key} = {_render(kind, cfg[key])}")
    return "\n".join(lines) + "\n"


def save_file(cfg, path):
    with open(path, "w") as fh:
        fh.write(serialize(cfg))
