"""Sectioned key-value configuration files (INI syntax).

Sections: ``grid``, ``packet``, ``disorder``, ``dynamics``, ``run``,
``sweep`` and ``thouless``. Every key is optional; omitted keys take the
desk-scale defaults of :class:`~planckian.experiments.Scenario`.
"""
from __future__ import annotations

import configparser
import math
from importlib import resources
from typing import Iterable, List, Optional

from .core import M_E, Grid
from .disorder import ImpurityShape
from .errors import ConfigError
from .experiments import Scenario, SweepAxis, velocity_from_dict
from .thouless import ThoulessConfig

KNOWN_KEYS = {
    "grid": {"n", "L"},
    "packet": {"sigma0", "k0", "mass"},
    "disorder": {"V0", "r_core", "lambda", "r_cut", "density", "backend"},
    "dynamics": {"model", "v", "moving_fraction", "T", "M", "t_on"},
    "run": {"t_end", "theta", "observe_every", "boundary_margin", "boundary_threshold", "seeds", "n_seeds",
            "fit_window", "window_width", "settle"},
    "sweep": {"parameter", "values", "cross_section_locked"},
    "thouless": {"areas", "mass", "n_walkers", "n_hops", "seed"},
}

PRESETS = ("fig1_static", "fig1_moving", "fig2_activation", "fig3_velocity_sweep", "fig4_fraction_sweep",
           "fig5_maxwell", "fig6_resistivity", "thouless")

EXTENDED = {"grid.n": "512", "grid.L": "256", "run.t_end": "200000"}


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case sensitive (T vs t_on)
    return cp


def parse_config(text: str, overrides: Iterable[str] = ()) -> configparser.ConfigParser:
    cp = _parser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from None
    apply_overrides(cp, overrides)
    for section in cp.sections():
        if section not in KNOWN_KEYS:
            raise ConfigError(f"unknown config section [{section}]", key=section)
        for key in cp[section]:
            if key not in KNOWN_KEYS[section]:
                raise ConfigError(f"unknown config key {section}.{key}", key=f"{section}.{key}")
    return cp


def apply_overrides(cp: configparser.ConfigParser, overrides: Iterable[str]) -> None:
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value", key=item)
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        if not cp.has_section(section):
            cp.add_section(section)
        cp[section][key] = value.strip()


def load_preset(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}", key="preset")
    return resources.files("planckian.presets").joinpath(f"{name}.ini").read_text()


def to_text(cp: configparser.ConfigParser) -> str:
    lines = []
    for section in cp.sections():
        lines.append(f"[{section}]")
        for key, value in cp[section].items():
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


class _Reader:
    def __init__(self, cp: configparser.ConfigParser):
        self.cp = cp

    def raw(self, section: str, key: str) -> Optional[str]:
        if self.cp.has_section(section) and key in self.cp[section]:
            return self.cp[section][key]
        return None

    def number(self, section: str, key: str, default, kind=float):
        raw = self.raw(section, key)
        if raw is None:
            return default
        try:
            if kind is int:
                value = int(raw)
            else:
                value = float(raw)
        except ValueError:
            raise ConfigError(f"{section}.{key} must be a number, got {raw!r}", key=f"{section}.{key}") from None
        if kind is float and math.isnan(value):
            raise ConfigError(f"{section}.{key} is NaN", key=f"{section}.{key}")
        return value

    def floats(self, section: str, key: str) -> Optional[List[float]]:
        raw = self.raw(section, key)
        if raw is None:
            return None
        try:
            return [float(v) for v in raw.replace(";", ",").split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"{section}.{key} must be a comma-separated list of numbers",
                              key=f"{section}.{key}") from None

    def flag(self, section: str, key: str, default: bool) -> bool:
        raw = self.raw(section, key)
        if raw is None:
            return default
        if raw.strip().lower() in ("1", "true", "yes", "on"):
            return True
        if raw.strip().lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{section}.{key} must be a boolean, got {raw!r}", key=f"{section}.{key}")


def _wrap(key: str, fn, *args, **kwargs):
    """Re-raise construction errors with the config key they came from."""
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}", key=key) from None


def scenario_from_config(cp: configparser.ConfigParser, master_seed: Optional[int] = None) -> Scenario:
    r = _Reader(cp)
    d = Scenario()
    n = r.number("grid", "n", d.n, int)
    L = r.number("grid", "L", d.L)
    Grid(n, L)  # raises with grid.n / grid.L keys

    k0 = r.floats("packet", "k0") or list(d.k0)
    if len(k0) != 2:
        raise ConfigError("packet.k0 needs two components", key="packet.k0")
    rc = r.raw("disorder", "r_cut")
    shape = ImpurityShape(
        r.number("disorder", "V0", d.shape.V0),
        r.number("disorder", "r_core", d.shape.r_core),
        r.number("disorder", "lambda", d.shape.lam),
        None if rc is None or rc.strip().lower() in ("", "auto") else r.number("disorder", "r_cut", None),
    )
    vel = {"model": (r.raw("dynamics", "model") or "static").strip()}
    for key in ("v", "moving_fraction", "T", "M"):
        if r.raw("dynamics", key) is not None:
            vel[key] = r.number("dynamics", key, None)
    if vel["model"] == "fixed_speed" and "v" not in vel:
        raise ConfigError("dynamics.v is required for model fixed_speed", key="dynamics.v")
    if vel["model"] == "maxwell" and not {"T", "M"} <= vel.keys():
        raise ConfigError("dynamics.T and dynamics.M are required for model maxwell", key="dynamics.T")
    velocity = velocity_from_dict(vel)

    t_on_raw = r.raw("dynamics", "t_on")
    t_on = math.inf if t_on_raw is not None and t_on_raw.strip().lower() in ("inf", "never") \
        else r.number("dynamics", "t_on", d.t_on)

    base_seed = 0 if master_seed is None else int(master_seed)
    seeds_raw = r.raw("run", "seeds")
    if seeds_raw is not None and master_seed is None:
        try:
            seeds = tuple(int(s) for s in seeds_raw.replace(";", ",").split(",") if s.strip())
        except ValueError:
            raise ConfigError("run.seeds must be a comma-separated list of integers", key="run.seeds") from None
    else:
        count = r.number("run", "n_seeds", len(seeds_raw.split(",")) if seeds_raw else len(d.seeds), int)
        if count < 1:
            raise ConfigError("run.n_seeds must be >= 1", key="run.n_seeds")
        seeds = tuple(range(base_seed, base_seed + count))

    return _wrap("run", Scenario,
                 n=n, L=L,
                 mass=r.number("packet", "mass", d.mass),
                 sigma0=r.number("packet", "sigma0", d.sigma0),
                 k0=(k0[0], k0[1]),
                 shape=shape,
                 density=r.number("disorder", "density", d.density),
                 velocity=velocity,
                 t_on=t_on,
                 t_end=r.number("run", "t_end", d.t_end),
                 seeds=seeds,
                 theta=r.number("run", "theta", d.theta),
                 observe_every=r.number("run", "observe_every", d.observe_every),
                 boundary_margin=r.number("run", "boundary_margin", d.boundary_margin),
                 boundary_threshold=r.number("run", "boundary_threshold", d.boundary_threshold),
                 fit_window=r.number("run", "fit_window", d.fit_window),
                 window_width=r.number("run", "window_width", d.window_width),
                 settle=r.number("run", "settle", d.settle),
                 render_backend=(r.raw("disorder", "backend") or d.render_backend).strip())


def sweep_axis_from_config(cp: configparser.ConfigParser, spec: Optional[str] = None) -> SweepAxis:
    """Axis from the ``[sweep]`` section, or from a ``parameter=v1,v2,...`` string."""
    r = _Reader(cp)
    locked = r.flag("sweep", "cross_section_locked", False)
    if spec:
        if "=" not in spec:
            raise ConfigError("axis spec must look like parameter=v1,v2,...", key="sweep.values")
        name, vals = spec.split("=", 1)
        try:
            values = tuple(float(v) for v in vals.split(",") if v.strip())
        except ValueError:
            raise ConfigError("sweep.values must be numbers", key="sweep.values") from None
        return SweepAxis(name.strip(), values, locked)
    name = r.raw("sweep", "parameter")
    if name is None:
        raise ConfigError("sweep.parameter is missing", key="sweep.parameter")
    values = r.floats("sweep", "values")
    if not values:
        raise ConfigError("sweep.values is empty", key="sweep.values")
    return SweepAxis(name.strip(), tuple(values), locked)


def thouless_from_config(cp: configparser.ConfigParser, master_seed: Optional[int] = None):
    """Returns ``(areas, mass, n_walkers, n_hops, seed)``, validated."""
    r = _Reader(cp)
    areas = r.floats("thouless", "areas") or [25.0, 100.0, 2500.0]
    mass = r.number("thouless", "mass", 1.0) * M_E
    n_walkers = r.number("thouless", "n_walkers", 10_000, int)
    n_hops = r.number("thouless", "n_hops", 1_000, int)
    seed = master_seed if master_seed is not None else r.number("thouless", "seed", 0, int)
    for A in areas:
        ThoulessConfig(A, mass, n_walkers, n_hops, seed)
    return areas, mass, n_walkers, n_hops, seed
