"""Scenarios, ensembles, parameter sweeps and the Einstein-relation mapping."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import __version__
from .core import HBAR, K_B, M_E, gaussian_packet, make_grid
from .disorder import FixedSpeed, ImpurityShape, Maxwell, Static, VelocityModel, sample_impurities
from .errors import ConfigError, EstimationError, PlanckianError
from .observables import DiffusionEstimate, MsdSeries, ensemble_mean, fit_diffusion, windowed_diffusion
from .propagator import Propagator, PropagatorConfig, choose_timestep, initial_state, prepare_fft

log = logging.getLogger(__name__)

SWEEP_PARAMETERS = ("impurity_speed", "potential_height", "moving_fraction", "temperature", "impurity_mass")
SWEEP_COLUMNS = ("param", "D_nm2_fs", "alpha", "stderr", "n_seeds", "flags")


@dataclass(frozen=True)
class Scenario:
    """Everything needed to reproduce one ensemble of runs."""

    n: int = 256
    L: float = 128.0
    mass: float = 1.0  # carrier mass in units of m_e
    sigma0: float = 10.0
    k0: Tuple[float, float] = (0.0, 0.0)
    shape: ImpurityShape = ImpurityShape()
    density: float = 0.4
    velocity: VelocityModel = Static()
    t_on: float = 0.0
    t_end: float = 15_000.0
    seeds: Tuple[int, ...] = tuple(range(8))
    theta: float = 0.25
    observe_every: float = 10.0
    boundary_margin: float = 10.0
    boundary_threshold: float = 1e-3
    fit_window: float = 0.5
    window_width: float = 1000.0
    settle: float = 1000.0
    render_backend: str = "spectral"

    def __post_init__(self):
        make_grid(self.n, self.L)
        if not self.mass > 0:
            raise ConfigError("packet.mass must be positive", key="packet.mass")
        if not self.seeds:
            raise ConfigError("run.seeds must name at least one seed", key="run.seeds")
        if not self.t_end >= 0:
            raise ConfigError("run.t_end must be >= 0", key="run.t_end")
        if not self.observe_every > 0:
            raise ConfigError("run.observe_every must be positive", key="run.observe_every")
        if not 0 < self.fit_window <= 1:
            raise ConfigError("run.fit_window must lie in (0, 1]", key="run.fit_window")

    @property
    def m(self) -> float:
        return self.mass * M_E

    @property
    def grid(self):
        return make_grid(self.n, self.L)

    @property
    def timestep(self) -> float:
        """Largest stable dt that divides the observation interval evenly."""
        dt_max = choose_timestep(self.shape.V0, self.grid, self.m, self.theta)
        return self.observe_every / math.ceil(self.observe_every / dt_max - 1e-12)

    def propagator_config(self) -> PropagatorConfig:
        return PropagatorConfig(dt=self.timestep, t_end=self.t_end, theta=self.theta, t_on=self.t_on,
                                observe_every=self.observe_every, boundary_margin=self.boundary_margin,
                                boundary_threshold=self.boundary_threshold, mass=self.m)

    def estimated_steps(self) -> int:
        return int(round(self.t_end / self.timestep)) * len(self.seeds)

    def to_dict(self) -> Dict:
        d = asdict(self)
        d["k0"] = list(self.k0)
        d["seeds"] = list(self.seeds)
        d["shape"] = {"V0": self.shape.V0, "r_core": self.shape.r_core, "lambda": self.shape.lam,
                      "r_cut": self.shape.r_cut}
        d["velocity"] = velocity_to_dict(self.velocity)
        d["t_on"] = self.t_on if math.isfinite(self.t_on) else "inf"
        return d

    @classmethod
    def from_dict(cls, d: Dict) -> "Scenario":
        d = dict(d)
        sh = d.pop("shape")
        d["shape"] = ImpurityShape(sh["V0"], sh["r_core"], sh["lambda"], sh.get("r_cut"))
        d["velocity"] = velocity_from_dict(d.pop("velocity"))
        d["k0"] = tuple(d["k0"])
        d["seeds"] = tuple(int(s) for s in d["seeds"])
        d["t_on"] = float(d["t_on"])
        return cls(**d)

    def fingerprint(self, seed: Optional[int] = None) -> str:
        payload = self.to_dict()
        if seed is not None:
            payload["seeds"] = [seed]
        blob = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def velocity_to_dict(model: VelocityModel) -> Dict:
    if isinstance(model, FixedSpeed):
        return {"model": "fixed_speed", "v": model.v, "moving_fraction": model.moving_fraction}
    if isinstance(model, Maxwell):
        return {"model": "maxwell", "T": model.T, "M": model.M}
    return {"model": "static"}


def velocity_from_dict(d: Dict) -> VelocityModel:
    kind = d.get("model", "static")
    if kind == "static":
        return Static()
    if kind == "fixed_speed":
        return FixedSpeed(float(d["v"]), float(d.get("moving_fraction", 1.0)))
    if kind == "maxwell":
        return Maxwell(float(d["T"]), float(d["M"]))
    raise ConfigError(f"unknown velocity model {kind!r}", key="dynamics.model")


def code_fingerprint() -> str:
    """Hash of the package sources; cached runs are only reused for identical code."""
    h = hashlib.sha256()
    root = Path(__file__).parent
    for path in sorted(root.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


# --- single runs and ensembles ---------------------------------------------


def run_single(scenario: Scenario, seed: int) -> MsdSeries:
    """Propagate one disorder realization and return its observable series."""
    grid = scenario.grid
    psi = gaussian_packet(grid, None, scenario.sigma0, scenario.k0)
    impurities = sample_impurities(scenario.density, grid, scenario.velocity, seed)
    prop = Propagator(grid, scenario.shape, scenario.propagator_config(), render_backend=scenario.render_backend)
    manifest = {
        "seed": int(seed),
        "n_impurities": len(impurities),
        "scenario": scenario.to_dict(),
        "config_hash": scenario.fingerprint(seed),
        "tool_version": __version__,
        "code_fingerprint": code_fingerprint(),
        "V_max_eV": scenario.shape.V0,
        "r_cut_nm": prop.renderer.shape.r_cut,
    }
    return prop.evolve(initial_state(psi, impurities), manifest)


class RunCache:
    """Directory of finished runs keyed by scenario, seed and code fingerprint.

    Runs are deterministic, so a stored series is identical to what a fresh
    run would produce.
    """

    def __init__(self, directory: Union[str, os.PathLike]):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _key(self, scenario: Scenario, seed: int) -> Path:
        return self.directory / f"{scenario.fingerprint(seed)}-{code_fingerprint()}"

    def get(self, scenario: Scenario, seed: int) -> Optional[MsdSeries]:
        base = self._key(scenario, seed)
        csv, man = base.with_suffix(".csv"), base.with_suffix(".json")
        if not (csv.exists() and man.exists()):
            return None
        return MsdSeries.from_csv(csv.read_text(), json.loads(man.read_text()), str(csv))

    def put(self, scenario: Scenario, seed: int, series: MsdSeries) -> None:
        base = self._key(scenario, seed)
        tmp = base.with_suffix(".tmp")
        tmp.write_text(json.dumps(series.manifest, sort_keys=True, indent=1))
        os.replace(tmp, base.with_suffix(".json"))
        tmp.write_text(series.to_csv())
        os.replace(tmp, base.with_suffix(".csv"))


def _run_job(args):
    scenario, seed, cache_dir = args
    cache = RunCache(cache_dir) if cache_dir else None
    if cache is not None:
        hit = cache.get(scenario, seed)
        if hit is not None:
            return hit
    series = run_single(scenario, seed)
    if cache is not None:
        cache.put(scenario, seed, series)
    return series


def run_many(jobs: Sequence[Tuple[Scenario, int]], workers: int = 1,
             cache_dir: Optional[Union[str, os.PathLike]] = None) -> List[MsdSeries]:
    """Execute independent (scenario, seed) runs; results come back in job order."""
    payload = [(s, seed, str(cache_dir) if cache_dir else None) for s, seed in jobs]
    for n in sorted({s.n for s, _ in jobs}):
        prepare_fft(n)
    if workers <= 1 or len(payload) <= 1:
        return [_run_job(p) for p in payload]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, payload))


@dataclass
class ScenarioResult:
    scenario: Scenario
    series: List[MsdSeries]
    ensemble: MsdSeries
    estimate: Optional[DiffusionEstimate]
    windowed: np.ndarray  # (N, 2) of (t_center, D)
    flags: List[str] = field(default_factory=list)

    def windowed_alpha(self) -> np.ndarray:
        out = self.windowed.copy()
        out[:, 1] *= self.scenario.m / HBAR
        return out

    def mean_windowed_alpha(self, t_start: float, t_end: float) -> float:
        """Average windowed alpha over window centers in ``[t_start, t_end]``."""
        wa = self.windowed_alpha()
        sel = (wa[:, 0] >= t_start) & (wa[:, 0] <= t_end)
        if not sel.any():
            raise EstimationError(f"no windowed samples in [{t_start}, {t_end}] fs")
        return float(wa[sel, 1].mean())


def fit_window_for(scenario: Scenario, ensemble: MsdSeries):
    """Default fit window: post-settling tail for activated runs, trailing fraction otherwise."""
    if math.isfinite(scenario.t_on) and scenario.t_on > 0 and not isinstance(scenario.velocity, Static):
        return (scenario.t_on + scenario.settle, math.inf)
    return scenario.fit_window


def summarize(scenario: Scenario, series: List[MsdSeries]) -> ScenarioResult:
    flags = []
    if any(s.contaminated for s in series):
        flags.append("boundary-contaminated")
    ens = ensemble_mean(series)
    ens.manifest["scenario"] = scenario.to_dict()
    try:
        est = fit_diffusion(ens, fit_window_for(scenario, ens), m=scenario.m)
    except EstimationError as exc:
        raise EstimationError(f"ensemble fit failed: {exc} (clean span ends at {ens.times[-1]:.1f} fs)") from None
    try:
        wd = windowed_diffusion(ens, scenario.window_width)
    except EstimationError:
        wd = np.empty((0, 2))
        flags.append("no-windowed-D")
    return ScenarioResult(scenario, series, ens, est, wd, flags)


COST_BUDGET_STEPS = 5_000_000


def run_scenario(scenario: Scenario, workers: int = 1, cache_dir=None,
                 budget_steps: int = COST_BUDGET_STEPS) -> ScenarioResult:
    """Run every seed of a scenario and fit the ensemble-mean MSD."""
    steps = scenario.estimated_steps() * (scenario.n / 256) ** 2
    if steps > budget_steps:
        warnings.warn(f"scenario needs ~{steps:.3g} grid-256-equivalent steps (budget {budget_steps:.3g})",
                      RuntimeWarning, stacklevel=2)
    series = run_many([(scenario, s) for s in scenario.seeds], workers, cache_dir)
    return summarize(scenario, series)


# --- sweeps ----------------------------------------------------------------


@dataclass(frozen=True)
class SweepAxis:
    parameter: str
    values: Tuple[float, ...]
    cross_section_locked: bool = False

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"sweep.parameter must be one of {SWEEP_PARAMETERS}, got {self.parameter!r}",
                              key="sweep.parameter")
        if len(self.values) == 0:
            raise ConfigError("sweep.values is empty", key="sweep.values")
        if not all(np.isfinite(v) for v in self.values):
            raise ConfigError("sweep.values must be finite", key="sweep.values")


def apply_axis(base: Scenario, parameter: str, value: float, cross_section_locked: bool = False) -> Scenario:
    """Scenario with one sweep parameter replaced."""
    vel = base.velocity
    if parameter == "impurity_speed":
        p = vel.moving_fraction if isinstance(vel, FixedSpeed) else 1.0
        return replace(base, velocity=FixedSpeed(float(value), p))
    if parameter == "moving_fraction":
        v = vel.v if isinstance(vel, FixedSpeed) else 0.002
        return replace(base, velocity=FixedSpeed(v, float(value)))
    if parameter == "temperature":
        M = vel.M if isinstance(vel, Maxwell) else 100.0
        return replace(base, velocity=Maxwell(float(value), M))
    if parameter == "impurity_mass":
        T = vel.T if isinstance(vel, Maxwell) else 100.0
        return replace(base, velocity=Maxwell(T, float(value)))
    if parameter == "potential_height":
        shape = replace(base.shape, V0=float(value))
        density = base.density
        if cross_section_locked:
            density = base.shape.V0 * base.density / float(value)
        return replace(base, shape=shape, density=density)
    raise ConfigError(f"unknown sweep parameter {parameter!r}", key="sweep.parameter")


@dataclass
class SweepRow:
    value: float
    estimate: Optional[DiffusionEstimate]
    n_seeds: int
    flags: List[str]
    result: Optional[ScenarioResult] = None


def sweep(base: Scenario, axis: SweepAxis, workers: int = 1, cache_dir=None) -> List[SweepRow]:
    """One ensemble per axis value; failed points are flagged, not fatal."""
    scenarios = []
    rows: List[Optional[SweepRow]] = []
    for value in axis.values:
        try:
            scenarios.append(apply_axis(base, axis.parameter, value, axis.cross_section_locked))
            rows.append(None)
        except PlanckianError as exc:
            scenarios.append(None)
            rows.append(SweepRow(float(value), None, 0, [f"config-error: {exc}"]))
    jobs = [(s, seed) for s in scenarios if s is not None for seed in s.seeds]
    try:
        results = iter(run_many(jobs, workers, cache_dir))
    except PlanckianError:
        results = None
    out = []
    for value, scen, row in zip(axis.values, scenarios, rows):
        if row is not None:
            out.append(row)
            continue
        try:
            if results is None:
                series = [run_single(scen, seed) for seed in scen.seeds]
            else:
                series = [next(results) for _ in scen.seeds]
            res = summarize(scen, series)
            out.append(SweepRow(float(value), res.estimate, len(series), res.flags, res))
        except PlanckianError as exc:
            out.append(SweepRow(float(value), None, len(scen.seeds), [f"{type(exc).__name__}: {exc}"]))
    return out


def sweep_to_csv(rows: Sequence[SweepRow]) -> str:
    lines = [",".join(SWEEP_COLUMNS)]
    for r in rows:
        flags = ";".join(f.replace(",", " ") for f in r.flags)
        if r.estimate is None:
            lines.append(f"{r.value!r},nan,nan,nan,{r.n_seeds},{flags}")
        else:
            e = r.estimate
            lines.append(f"{r.value!r},{e.D!r},{e.alpha!r},{e.stderr!r},{r.n_seeds},{flags}")
    return "\n".join(lines) + "\n"


# --- Einstein relation -----------------------------------------------------


def einstein_rate(D: float, T: float, m: float = M_E) -> float:
    """Drude scattering rate ``1/tau = k_B T / (m D)`` in 1/fs."""
    if not D > 0:
        raise EstimationError(f"scattering rate undefined for D={D} (no diffusion)")
    if not T > 0:
        raise ValueError("T must be positive")
    return K_B * T / (m * D)


@dataclass
class EinsteinResult:
    temperatures: np.ndarray
    inv_tau: np.ndarray
    D_used: np.ndarray
    r_squared: float
    slope: float
    intercept: float

    def to_csv(self) -> str:
        lines = ["T_K,inv_tau_per_fs,D_nm2_fs"]
        for T, r, D in zip(self.temperatures, self.inv_tau, self.D_used):
            lines.append(f"{T!r},{r!r},{D!r}")
        return "\n".join(lines) + "\n"


def resistivity_table(points: Sequence[Tuple[float, Union[float, DiffusionEstimate]]],
                      m: float = M_E) -> EinsteinResult:
    """Map ``(T, D)`` pairs to scattering rates and report how linear ``1/tau(T)`` is."""
    if len(points) == 0:
        raise EstimationError("resistivity table needs at least one (T, D) point")
    T = np.array([float(p[0]) for p in points])
    D = np.array([float(p[1].D) if isinstance(p[1], DiffusionEstimate) else float(p[1]) for p in points])
    rate = np.array([einstein_rate(d, t, m) for d, t in zip(D, T)])
    if len(T) >= 2 and np.ptp(T) > 0:
        slope, intercept = np.polyfit(T, rate, 1)
        resid = rate - (slope * T + intercept)
        ss_tot = float(np.sum((rate - rate.mean()) ** 2))
        r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
        # rounding can push a perfect fit a few ulps past 1
        r2 = min(r2, 1.0)
    else:
        slope, intercept, r2 = float(rate[0] / T[0]), 0.0, 1.0
    return EinsteinResult(T, rate, D, r2, float(slope), float(intercept))
