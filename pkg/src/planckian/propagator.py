"""Split-operator propagation of the carrier through the moving medium."""
from __future__ import annotations

import json
import logging
import math
import os
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .core import HBAR, M_E, Grid, WaveField
from .disorder import ImpurityShape, ImpuritySet, PotentialField, PotentialRenderer, positions_at, refresh_interval
from .errors import ConfigError, NumericalError
from .observables import MsdSeries, measure

try:  # FFTW is optional; with measured plans it is about twice as fast as pocketfft
    import pyfftw
except ImportError:  # pragma: no cover - exercised only without the extra
    pyfftw = None

log = logging.getLogger(__name__)

NORM_TOLERANCE = 1e-6


def choose_timestep(V_max: float, grid: Grid, m: float = M_E, theta: float = 0.25) -> float:
    """Largest dt keeping both the potential and kinetic phase per step below ``theta``."""
    if not V_max > 0:
        raise ConfigError(f"V_max must be positive, got {V_max}")
    if not 0 < theta <= 0.5:
        raise ConfigError(f"run.theta must lie in (0, 0.5], got {theta}", key="run.theta")
    return theta * min(HBAR / V_max, 2.0 * m / (HBAR * grid.k_max ** 2))


@dataclass
class PropagatorConfig:
    dt: float
    t_end: float
    theta: float = 0.25
    t_on: float = 0.0  # motion starts here; math.inf keeps the medium frozen
    observe_every: float = 10.0
    boundary_margin: float = 10.0
    boundary_threshold: float = 1e-3
    mass: float = M_E

    def validate(self, grid: Grid, V_max: float) -> None:
        if not self.dt > 0:
            raise ConfigError(f"run.dt must be positive, got {self.dt}", key="run.dt")
        if not 0 < self.theta <= 0.5:
            raise ConfigError(f"run.theta must lie in (0, 0.5], got {self.theta}", key="run.theta")
        if self.t_end < 0:
            raise ConfigError("run.t_end must be >= 0", key="run.t_end")
        if self.observe_every < self.dt * (1 - 1e-12):
            raise ConfigError("run.observe_every must be >= dt", key="run.observe_every")
        slack = 1.0 + 1e-9
        if V_max * self.dt / HBAR > self.theta * slack:
            raise ConfigError(f"dt={self.dt} fs exceeds the potential phase bound for V_max={V_max} eV", key="run.dt")
        if HBAR * grid.k_max ** 2 * self.dt / (2.0 * self.mass) > self.theta * slack:
            raise ConfigError(f"dt={self.dt} fs exceeds the kinetic phase bound", key="run.dt")


WISDOM_ENV = "PLANCKIAN_FFTW_WISDOM"


def wisdom_path() -> Optional[Path]:
    """Where measured FFTW plans are kept; ``PLANCKIAN_FFTW_WISDOM=""`` disables the store."""
    env = os.environ.get(WISDOM_ENV)
    if env is not None:
        return Path(env) if env else None
    base = Path(os.environ.get("XDG_CACHE_HOME") or Path.home() / ".cache")
    return base / "planckian" / f"fftw-wisdom-{pyfftw.__version__}.json"


@contextmanager
def _locked(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path.with_name(path.name + ".lock"), "w") as fh:
        try:
            import fcntl
            fcntl.flock(fh, fcntl.LOCK_EX)
        except ImportError:  # pragma: no cover - non-POSIX
            pass
        yield


def _plan_pair(buf, spec, flags):
    fwd = pyfftw.FFTW(buf, spec, axes=(0, 1), flags=flags, threads=1)
    bwd = pyfftw.FFTW(spec, buf, axes=(0, 1), direction="FFTW_BACKWARD", flags=flags, threads=1)
    return fwd, bwd


def _stored_plans(buf, spec):
    """Measured plans replayed from the wisdom store, measuring once on first use.

    Timing-based planning alone could pick different algorithms in different
    processes and so different rounding; replaying one stored plan keeps every
    run on this machine bit-identical.
    """
    path = wisdom_path()
    if path is None:
        return None
    try:
        with _locked(path):
            if path.exists():
                pyfftw.import_wisdom(tuple(w.encode() for w in json.loads(path.read_text())))
            try:
                return _plan_pair(buf, spec, ("FFTW_MEASURE", "FFTW_WISDOM_ONLY"))
            except RuntimeError:
                plans = _plan_pair(buf, spec, ("FFTW_MEASURE",))
                tmp = path.with_name(path.name + ".tmp")
                tmp.write_text(json.dumps([w.decode() for w in pyfftw.export_wisdom()]))
                os.replace(tmp, path)
                return plans
    except (OSError, ValueError) as exc:
        log.warning("FFTW wisdom store unusable (%s); falling back to estimated plans", exc)
        return None


class _FFT:
    """In-place forward/backward 2D transforms of one complex buffer."""

    def __init__(self, n: int, backend: Optional[str] = None):
        if backend is None:
            backend = "fftw" if pyfftw is not None else "scipy"
        self.backend = backend
        self.plan = "pocketfft"
        if backend == "fftw":
            if pyfftw is None:
                raise ConfigError("pyfftw is not installed", key="run.fft")
            self.buf = pyfftw.empty_aligned((n, n), dtype=np.complex128)
            self._spec = pyfftw.empty_aligned((n, n), dtype=np.complex128)
            plans = _stored_plans(self.buf, self._spec)
            self.plan = "measured"
            if plans is None:
                # ESTIMATE planning is deterministic, so it is the safe fallback
                plans = _plan_pair(self.buf, self._spec, ("FFTW_ESTIMATE",))
                self.plan = "estimate"
            self._fwd, self._bwd = plans
        elif backend == "scipy":
            import scipy.fft
            self._sfft = scipy.fft
            self.buf = np.empty((n, n), dtype=np.complex128)
        else:
            raise ConfigError(f"unknown FFT backend {backend!r}", key="run.fft")

    def kinetic(self, phase: np.ndarray) -> None:
        """buf <- ifft(phase * fft(buf))."""
        if self.backend == "fftw":
            self._fwd()
            self._spec *= phase
            self._bwd()
        else:
            spec = self._sfft.fft2(self.buf, overwrite_x=True)
            spec *= phase
            self.buf[...] = self._sfft.ifft2(spec, overwrite_x=True)


class SplitOperator:
    """Strang-split propagator ``e^{-iV dt/2h} e^{-iT dt/h} e^{-iV dt/2h}``.

    A negative ``dt`` propagates backward in time.
    """

    def __init__(self, grid: Grid, dt: float, mass: float = M_E, fft_backend: Optional[str] = None):
        self.grid = grid
        self.dt = dt
        self.mass = mass
        self.fft = _FFT(grid.n, fft_backend)
        self.kinetic_phase = np.exp(-1j * HBAR * grid.k_squared() * dt / (2.0 * mass))
        self.half_potential = np.ones((grid.n, grid.n), dtype=np.complex128)
        self.full_potential = self.half_potential

    def set_potential(self, V: np.ndarray) -> None:
        self.half_potential = np.exp(-0.5j * self.dt / HBAR * V)
        self.full_potential = np.exp(-1j * self.dt / HBAR * V)

    def load(self, amplitudes: np.ndarray) -> None:
        self.fft.buf[...] = amplitudes

    def advance(self, nsteps: int = 1) -> None:
        buf = self.fft.buf
        if nsteps < 1:
            return
        # adjacent half-steps of a fixed potential fuse into one full step
        buf *= self.half_potential
        for _ in range(nsteps - 1):
            self.fft.kinetic(self.kinetic_phase)
            buf *= self.full_potential
        self.fft.kinetic(self.kinetic_phase)
        buf *= self.half_potential

    def step_field(self, psi: WaveField) -> WaveField:
        self.load(psi.amplitudes)
        self.advance(1)
        return WaveField(self.fft.buf.copy(), psi.grid, psi.time + self.dt)


@dataclass
class RunState:
    """Carrier plus medium at one instant.

    ``impurities`` holds the medium at the moment motion starts; current
    positions follow from it and the elapsed moving time.
    """

    psi: WaveField
    impurities: ImpuritySet
    potential: Optional[PotentialField] = None
    step_index: int = 0

    @property
    def time(self) -> float:
        return self.psi.time


class Propagator:
    """Drives a :class:`RunState` through time under a moving impurity medium."""

    def __init__(self, grid: Grid, shape: ImpurityShape, cfg: PropagatorConfig, V_max: Optional[float] = None,
                 fft_backend: Optional[str] = None, render_backend: str = "spectral"):
        V_max = shape.V0 if V_max is None else V_max
        cfg.validate(grid, V_max)
        self.grid = grid
        self.cfg = cfg
        self.renderer = PotentialRenderer(grid, shape)
        self.render_backend = render_backend
        self.split = SplitOperator(grid, cfg.dt, cfg.mass, fft_backend)

    @property
    def activation_step(self) -> Optional[int]:
        """First step index at which the medium moves, or None if it never does."""
        t_on = self.cfg.t_on
        if not math.isfinite(t_on):
            return None
        return max(0, int(math.ceil(t_on / self.cfg.dt - 1e-9)))

    def positions(self, impurities: ImpuritySet, k: int) -> np.ndarray:
        on = self.activation_step
        elapsed = 0.0 if on is None or k <= on else (k - on) * self.cfg.dt
        return positions_at(impurities, elapsed)

    def render(self, impurities: ImpuritySet, k: int) -> PotentialField:
        return PotentialField(self.renderer.render(self.positions(impurities, k), self.render_backend),
                              k * self.cfg.dt)

    def _next_render(self, k: int, refresh: int) -> float:
        on = self.activation_step
        if on is None or refresh == 0:
            return math.inf
        if k < on:
            return on + refresh
        return on + ((k - on) // refresh + 1) * refresh

    def step(self, state: RunState, nsteps: int = 1) -> RunState:
        """Advance by ``nsteps`` timesteps, re-rendering the medium on its refresh schedule."""
        refresh = refresh_interval(self.grid, state.impurities.max_speed, self.cfg.dt)
        k = state.step_index
        potential = state.potential
        if potential is None:
            potential = self.render(state.impurities, k)
        self.split.load(state.psi.amplitudes)
        self.split.set_potential(potential.values)
        end = k + nsteps
        while k < end:
            nxt = self._next_render(k, refresh)
            chunk = int(min(end, nxt) - k)
            self.split.advance(chunk)
            k += chunk
            if k == nxt:
                potential = self.render(state.impurities, k)
                self.split.set_potential(potential.values)
        psi = WaveField(self.split.fft.buf.copy(), self.grid, k * self.cfg.dt)
        return RunState(psi, state.impurities, potential, k)

    def evolve(self, state: RunState, manifest: Optional[Dict] = None) -> MsdSeries:
        """Run to ``t_end`` recording observables every ``observe_every`` fs.

        Sampling stops early once the boundary mass exceeds its threshold; the
        contaminated sample is dropped and the manifest flags the run.
        """
        cfg = self.cfg
        every = max(1, int(round(cfg.observe_every / cfg.dt)))
        total = int(round(cfg.t_end / cfg.dt))
        rows = []
        contaminated = False

        def record(st: RunState) -> bool:
            m2, xb, yb, nrm, ip, bm = measure(st.psi, cfg.boundary_margin)
            if not np.isfinite(nrm) or not np.isfinite(m2):
                raise NumericalError(f"non-finite wavefunction at t={st.time:.3f} fs (step {st.step_index})")
            if abs(nrm - 1.0) > NORM_TOLERANCE:
                raise NumericalError(f"norm drifted to {nrm!r} at t={st.time:.3f} fs")
            if bm > cfg.boundary_threshold:
                return False
            rows.append((st.time, m2, xb, yb, nrm, ip, bm))
            return True

        if not record(state):
            raise ConfigError("the initial packet already exceeds the boundary-mass threshold; enlarge the box "
                              "or shrink run.boundary_margin", key="run.boundary_margin")
        while state.step_index < total:
            state = self.step(state, min(every, total - state.step_index))
            if not record(state):
                contaminated = True
                log.info("boundary contact at t=%.1f fs; series truncated", state.time)
                break
        arr = np.array(rows, dtype=float).reshape(-1, 7)
        info = dict(manifest or {})
        info.update({
            "dt_fs": cfg.dt, "theta": cfg.theta, "t_on_fs": cfg.t_on if math.isfinite(cfg.t_on) else None,
            "t_end_fs": cfg.t_end, "observe_every_fs": every * cfg.dt,
            "boundary_margin_nm": cfg.boundary_margin, "boundary_threshold": cfg.boundary_threshold,
            "boundary_contaminated": contaminated, "t_last_clean_fs": float(arr[-1, 0]),
            "refresh_steps": refresh_interval(self.grid, state.impurities.max_speed, cfg.dt),
            "fft_backend": self.split.fft.backend, "fft_plan": self.split.fft.plan,
            "render_backend": self.render_backend,
        })
        self.final_state = state
        return MsdSeries(arr[:, 0], arr[:, 1], arr[:, 2:4], arr[:, 4], arr[:, 5], arr[:, 6], info)


def prepare_fft(n: int, backend: Optional[str] = None) -> str:
    """Plan (and store) the transforms for an ``n x n`` grid; returns the plan kind.

    Call before starting worker processes so they all replay one plan.
    """
    return _FFT(n, backend).plan


def initial_state(psi: WaveField, impurities: ImpuritySet) -> RunState:
    return RunState(psi.copy(), impurities, None, 0)


def step(state: RunState, propagator: Propagator) -> RunState:
    """Advance a run by a single timestep."""
    return propagator.step(state, 1)


def evolve(state: RunState, propagator: Propagator, manifest: Optional[Dict] = None) -> MsdSeries:
    return propagator.evolve(state, manifest)
