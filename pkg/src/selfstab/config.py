"""Declarative scenario configs: sectioned key-value text.

A config has a [model] section, usually a [domain] section, and any
number of run sections named ``<kind>.<label>`` (label optional) where
kind is one of flow, drift, simulate, action, quasipotential, exit,
kramers, or check. Every key is schema-checked; unknown keys are
rejected with their full key path, and every run section must name its
output file. Expressions are parsed at load time so syntax errors
surface with positions before any computation starts.

Built-in scenario names (``paper-5.1``, ``paper-5.2``) resolve to
packaged config files.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import expr as _expr
from .domain import Ball, Ellipse, Implicit, Interval
from .model import ModelSpec, RadialProfile

__all__ = ["ScenarioConfig", "RunSection", "ConfigError", "load_config",
           "builtin_config_names", "render_config"]

BUILTIN_CONFIGS = {
    "paper-5.1": "paper-5.1.cfg",
    "paper-5.2": "paper-5.2.cfg",
}


class ConfigError(ValueError):
    def __init__(self, keypath, message):
        self.keypath = keypath
        super().__init__("%s: %s" % (keypath, message))


def _parse_float(s):
    return float(s)


def _parse_int(s):
    v = float(s)
    if v != int(v):
        raise ValueError("expected an integer, got %r" % s)
    return int(v)


def _parse_floats(s):
    return tuple(float(p) for p in s.split(",") if p.strip())


def _parse_str(s):
    return s.strip()


def _parse_bool(s):
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean, got %r" % s)


def _parse_points(s):
    return tuple(tuple(float(v) for v in grp.split(",")) for grp in s.split(";") if grp.strip())


_TYPES = {
    "float": _parse_float,
    "int": _parse_int,
    "floats": _parse_floats,
    "str": _parse_str,
    "bool": _parse_bool,
    "points": _parse_points,
}

_REQUIRED = object()

# key -> (type name, default); _REQUIRED means the key must be present
_MODEL_SCHEMA = {
    "dim": ("int", _REQUIRED),
    "u": ("str", None),
    "phi": ("str", None),
    "phi_poly": ("floats", None),
    "growth_order": ("int", 0),
    "weight_order": ("int", 0),
    # v1..v9 handled dynamically
}

_DOMAIN_SCHEMA = {
    "kind": ("str", _REQUIRED),
    "a": ("float", None),
    "b": ("float", None),
    "center": ("floats", None),
    "radius": ("float", None),
    "semi_axes": ("floats", None),
    "g": ("str", None),
    "boundary_samples": ("points", None),
}

_RUN_SCHEMAS = {
    "check": {
        "box": ("floats", _REQUIRED),       # lo1, hi1, lo2, hi2, ...
        "r0": ("float", 1.0),
        "output": ("str", _REQUIRED),
    },
    "flow": {
        "kind": ("str", "plain"),           # plain | relaxed
        "x_init": ("floats", _REQUIRED),
        "horizon": ("float", _REQUIRED),
        "dt": ("float", 1e-3),
        "output": ("str", _REQUIRED),
    },
    "drift": {
        "epsilon": ("float", _REQUIRED),
        "horizon": ("float", _REQUIRED),
        "x_init": ("floats", _REQUIRED),
        "m_trajectories": ("int", 10000),
        "n_times": ("int", 41),
        "nodes_per_axis": ("int", 33),
        "dt": ("float", 1e-3),
        "seed": ("int", 0),
        "tol": ("float", 1e-3),
        "max_iter": ("int", 20),
        "output": ("str", _REQUIRED),
    },
    "simulate": {
        "mode": ("str", "classical"),
        "epsilon": ("float", _REQUIRED),
        "horizon": ("float", _REQUIRED),
        "x_init": ("floats", _REQUIRED),
        "dt": ("float", 1e-3),
        "trials": ("int", 1),
        "seed": ("int", 0),
        "n_particles": ("int", 1),
        "keep_every": ("int", 1),
        "output": ("str", _REQUIRED),
    },
    "action": {
        "variant": ("str", "limiting"),     # classical | limiting
        "path_file": ("str", _REQUIRED),    # PathSample dump to evaluate
        "output": ("str", _REQUIRED),
    },
    "quasipotential": {
        "method": ("str", "both"),          # closed-form | numeric | both
        "variant": ("str", "both"),         # classical | stabilized | both
        "n_scan": ("int", 512),
        "n_nodes": ("int", 200),
        "t_max": ("float", 50.0),
        "seed": ("int", 0),
        "output": ("str", _REQUIRED),
    },
    "exit": {
        "mode": ("str", "classical"),       # classical | limiting | particle
        "epsilon": ("float", _REQUIRED),
        "dt": ("float", 0.01),
        "trials": ("int", 200),
        "max_horizon": ("float", _REQUIRED),
        "seed": ("int", 0),
        "x_init": ("floats", _REQUIRED),
        "n_particles": ("int", 100),
        "output": ("str", _REQUIRED),
    },
    "kramers": {
        "mode": ("str", "classical"),
        "epsilons": ("floats", _REQUIRED),
        "dt": ("float", 0.01),
        "trials": ("int", 200),
        "max_horizon": ("float", _REQUIRED),
        "seed": ("int", 0),
        "x_init": ("floats", _REQUIRED),
        "input": ("str", None),             # fit an existing series instead
        "output": ("str", _REQUIRED),
    },
}


@dataclass(frozen=True)
class RunSection:
    kind: str
    label: str
    params: dict

    @property
    def name(self):
        return "%s.%s" % (self.kind, self.label) if self.label else self.kind


@dataclass
class ScenarioConfig:
    model_params: dict
    domain_params: dict | None
    runs: list = field(default_factory=list)
    source_path: str | None = None

    def run_sections(self, kind=None):
        return [r for r in self.runs if kind is None or r.kind == kind]

    def build_model(self):
        p = self.model_params
        dim = p["dim"]
        if p.get("phi_poly") is not None:
            profile = RadialProfile.polynomial(p["phi_poly"])
        elif p.get("phi"):
            profile = RadialProfile.from_expression(p["phi"])
        else:
            raise ConfigError("model.phi", "need phi expression or phi_poly coefficients")
        kwargs = dict(growth_order=p["growth_order"], weight_order=p["weight_order"])
        if p.get("u"):
            return ModelSpec.from_potential_expression(dim, p["u"], profile, **kwargs)
        v_sources = [p.get("v%d" % (i + 1)) for i in range(dim)]
        if any(s is None for s in v_sources):
            raise ConfigError("model", "need either u or all of v1..v%d" % dim)
        return ModelSpec.from_drift_expressions(dim, v_sources, profile, **kwargs)

    def build_domain(self):
        if self.domain_params is None:
            return None
        p = self.domain_params
        kind = p["kind"]
        dim = self.model_params["dim"]
        try:
            if kind == "interval":
                return Interval(p["a"], p["b"])
            if kind == "ball":
                return Ball(p["center"], p["radius"])
            if kind == "ellipse":
                return Ellipse(p["center"], p["semi_axes"])
            if kind == "implicit":
                return Implicit(p["g"], dim, p["boundary_samples"])
        except (TypeError, ValueError) as e:
            raise ConfigError("domain", str(e)) from e
        raise ConfigError("domain.kind", "unknown kind %r" % kind)


def _validate_section(section, keys, schema, extra_ok=()):
    out = {}
    for key, raw in keys.items():
        if key in schema:
            typ, _ = schema[key]
        elif key in extra_ok:
            typ = "str"
        else:
            raise ConfigError("%s.%s" % (section, key), "unknown key")
        try:
            out[key] = _TYPES[typ](raw)
        except ValueError as e:
            raise ConfigError("%s.%s" % (section, key), str(e)) from e
    for key, (typ, default) in schema.items():
        if key not in out:
            if default is _REQUIRED:
                raise ConfigError("%s.%s" % (section, key), "required key missing")
            out[key] = default
    return out


def _read_parser(text):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError("<config>", "parse error: %s" % e) from e
    return parser


def load_config(path_or_name):
    """Load, schema-validate, and expression-check a scenario config.

    ``path_or_name`` is a filesystem path or a built-in scenario name.
    """
    name = str(path_or_name)
    if name in BUILTIN_CONFIGS:
        text = resources.files("selfstab.configs").joinpath(
            BUILTIN_CONFIGS[name]).read_text()
        source = name
    else:
        p = Path(name)
        if not p.exists():
            raise FileNotFoundError("no such config: %s" % name)
        text = p.read_text()
        source = str(p)
    parser = _read_parser(text)

    if not parser.has_section("model"):
        raise ConfigError("model", "section missing")
    dim_raw = parser.get("model", "dim", fallback=None)
    if dim_raw is None:
        raise ConfigError("model.dim", "required key missing")
    try:
        dim = _parse_int(dim_raw)
    except ValueError as e:
        raise ConfigError("model.dim", str(e)) from e
    v_keys = tuple("v%d" % (i + 1) for i in range(dim))
    model_params = _validate_section("model", dict(parser.items("model")),
                                     _MODEL_SCHEMA, extra_ok=v_keys)

    domain_params = None
    if parser.has_section("domain"):
        domain_params = _validate_section("domain", dict(parser.items("domain")),
                                          _DOMAIN_SCHEMA)

    runs = []
    for section in parser.sections():
        if section in ("model", "domain"):
            continue
        kind, _, label = section.partition(".")
        if kind not in _RUN_SCHEMAS:
            raise ConfigError(section, "unknown section kind %r" % kind)
        params = _validate_section(section, dict(parser.items(section)),
                                   _RUN_SCHEMAS[kind])
        runs.append(RunSection(kind=kind, label=label, params=params))

    cfg = ScenarioConfig(model_params=model_params, domain_params=domain_params,
                         runs=runs, source_path=source)
    _check_expressions(cfg, dim)
    return cfg


def _check_expressions(cfg, dim):
    """Parse every expression at load time so errors carry positions."""
    p = cfg.model_params
    if p.get("u"):
        _expr.parse(p["u"], dim)
    for i in range(dim):
        src = p.get("v%d" % (i + 1))
        if src:
            _expr.parse(src, dim)
    if p.get("phi"):
        _expr.parse(p["phi"], 1)
    if cfg.domain_params and cfg.domain_params.get("g"):
        _expr.parse(cfg.domain_params["g"], dim)


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return "; ".join(", ".join("%.17g" % x for x in grp) for grp in v)
        return ", ".join("%.17g" % x for x in v)
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def render_config(cfg):
    """Render the resolved config (defaults filled) back to text; used
    for the reproducibility sidecar."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["model"] = {k: _format_value(v) for k, v in sorted(cfg.model_params.items())
                       if v is not None and not (k == "weight_order" and v == 0)}
    if cfg.domain_params is not None:
        parser["domain"] = {k: _format_value(v)
                            for k, v in sorted(cfg.domain_params.items()) if v is not None}
    for run in cfg.runs:
        parser[run.name] = {k: _format_value(v)
                            for k, v in sorted(run.params.items()) if v is not None}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def builtin_config_names():
    return tuple(sorted(BUILTIN_CONFIGS))
