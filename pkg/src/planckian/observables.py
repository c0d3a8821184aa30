"""Wavefunction observables and diffusion-coefficient estimation."""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .core import HBAR, M_E, Grid, WaveField
from .errors import EstimationError

SERIES_COLUMNS = ("time_fs", "msd_nm2", "xbar_nm", "ybar_nm", "norm", "ipr", "boundary_mass")
MIN_FIT_SAMPLES = 10


def _periodic_moments(p: np.ndarray, grid: Grid):
    """Mean position and per-axis minimum-image displacements about it.

    The mean starts from the circular mean of each marginal, then is refined
    by the ordinary mean of the displacements, so a packet away from the
    seam gets its open-space mean exactly.
    """
    L = grid.L
    x = grid.x_axis
    total = p.sum()
    px = p.sum(axis=1) / total
    py = p.sum(axis=0) / total
    ang = 2.0 * np.pi * x / L
    out = []
    for marg in (px, py):
        c = np.arctan2(np.dot(marg, np.sin(ang)), np.dot(marg, np.cos(ang))) * L / (2.0 * np.pi)
        d = grid.wrap(x - c)
        shift = np.dot(marg, d)
        out.append(((c + shift) % L, d - shift, marg))
    return out


def mean_position(psi: WaveField) -> np.ndarray:
    (mx, _, _), (my, _, _) = _periodic_moments(psi.density(), psi.grid)
    return np.array([mx, my])


def msd(psi: WaveField) -> float:
    """Mean square radius about the packet's mean position (nm^2)."""
    p = psi.density()
    (_, dx_, px), (_, dy_, py) = _periodic_moments(p, psi.grid)
    return float(np.dot(px, dx_ ** 2) + np.dot(py, dy_ ** 2))


def ipr(psi: WaveField) -> float:
    """Inverse participation ratio ``sum |psi|^4 dx^2`` in nm^-2."""
    a2 = psi.amplitudes.real ** 2 + psi.amplitudes.imag ** 2
    return float(np.sum(a2 * a2) * psi.grid.cell_area)


def boundary_mass(psi: WaveField, margin: float) -> float:
    """Probability within ``margin`` of the seam opposite the packet's mean.

    The seam is the pair of lines at half a box from the mean position, so
    this is the mass at minimum-image distance ``> L/2 - margin`` along
    either axis.
    """
    g = psi.grid
    if not 0 < margin < 0.25 * g.L:
        raise ValueError(f"margin must lie in (0, L/4), got {margin}")
    p = psi.density()
    (mx, _, _), (my, _, _) = _periodic_moments(p, g)
    lim = 0.5 * g.L - margin
    x = g.x_axis
    fx = np.abs(g.wrap(x - mx)) > lim
    fy = np.abs(g.wrap(x - my)) > lim
    band = fx[:, None] | fy[None, :]
    return float(p[band].sum() / p.sum())


def measure(psi: WaveField, margin: float) -> Tuple[float, float, float, float, float, float]:
    """All per-sample observables in one pass: msd, xbar, ybar, norm, ipr, boundary mass."""
    g = psi.grid
    p = psi.density()
    total = float(p.sum())
    (mx, dx_, px), (my, dy_, py) = _periodic_moments(p, g)
    m2 = float(np.dot(px, dx_ ** 2) + np.dot(py, dy_ ** 2))
    lim = 0.5 * g.L - margin
    fx = np.abs(dx_) > lim
    fy = np.abs(dy_) > lim
    inner = p[~fx][:, ~fy].sum()
    bmass = float((total - inner) / total)
    return m2, float(mx), float(my), total, float(np.sum(p * p) / g.cell_area), bmass


@dataclass
class MsdSeries:
    """Observables sampled along one run (or an ensemble mean of runs)."""

    times: np.ndarray
    msd: np.ndarray
    mean_pos: np.ndarray  # (N, 2)
    norm: np.ndarray
    ipr: np.ndarray
    boundary_mass: np.ndarray
    manifest: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.msd = np.asarray(self.msd, dtype=float)
        self.mean_pos = np.asarray(self.mean_pos, dtype=float).reshape(-1, 2)
        self.norm = np.asarray(self.norm, dtype=float)
        self.ipr = np.asarray(self.ipr, dtype=float)
        self.boundary_mass = np.asarray(self.boundary_mass, dtype=float)
        n = len(self.times)
        for name in ("msd", "mean_pos", "norm", "ipr", "boundary_mass"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"series column {name} has length {len(getattr(self, name))}, expected {n}")
        if n > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("series times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    @property
    def contaminated(self) -> bool:
        return bool(self.manifest.get("boundary_contaminated", False))

    @classmethod
    def from_synthetic(cls, times, msd_values, manifest: Optional[Dict] = None) -> "MsdSeries":
        times = np.asarray(times, dtype=float)
        n = len(times)
        return cls(times, msd_values, np.zeros((n, 2)), np.ones(n), np.zeros(n), np.zeros(n), dict(manifest or {}))

    def slice(self, t_start: float = -np.inf, t_end: float = np.inf) -> "MsdSeries":
        sel = (self.times >= t_start) & (self.times <= t_end)
        return MsdSeries(self.times[sel], self.msd[sel], self.mean_pos[sel], self.norm[sel],
                         self.ipr[sel], self.boundary_mass[sel], dict(self.manifest))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(SERIES_COLUMNS) + "\n")
        for i in range(len(self)):
            row = (self.times[i], self.msd[i], self.mean_pos[i, 0], self.mean_pos[i, 1],
                   self.norm[i], self.ipr[i], self.boundary_mass[i])
            buf.write(",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, manifest: Optional[Dict] = None, source: str = "<series>") -> "MsdSeries":
        lines = text.splitlines()
        if not lines or tuple(c.strip() for c in lines[0].split(",")) != SERIES_COLUMNS:
            raise EstimationError(f"{source}: line 1: expected header {','.join(SERIES_COLUMNS)}")
        rows = []
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != len(SERIES_COLUMNS):
                raise EstimationError(
                    f"{source}: line {lineno}: expected {len(SERIES_COLUMNS)} fields, got {len(parts)}")
            try:
                rows.append([float(v) for v in parts])
            except ValueError:
                raise EstimationError(f"{source}: line {lineno}: non-numeric field") from None
        arr = np.array(rows, dtype=float).reshape(-1, len(SERIES_COLUMNS))
        try:
            return cls(arr[:, 0], arr[:, 1], arr[:, 2:4], arr[:, 4], arr[:, 5], arr[:, 6], dict(manifest or {}))
        except ValueError as exc:
            raise EstimationError(f"{source}: {exc}") from None


def ensemble_mean(series: Sequence[MsdSeries]) -> MsdSeries:
    """Average several runs on their common time prefix.

    Runs truncated by boundary contact are averaged only over the samples
    every member still has.
    """
    if not series:
        raise EstimationError("no series to average")
    n = min(len(s) for s in series)
    t0 = series[0].times[:n]
    for s in series[1:]:
        if not np.allclose(s.times[:n], t0, rtol=0, atol=1e-9):
            raise EstimationError("ensemble members have mismatched time axes")
    stack = lambda attr: np.mean([getattr(s, attr)[:n] for s in series], axis=0)
    manifest = {
        "ensemble_size": len(series),
        "seeds": [s.manifest.get("seed") for s in series],
        "boundary_contaminated": any(s.contaminated for s in series),
    }
    return MsdSeries(t0, stack("msd"), stack("mean_pos"), stack("norm"), stack("ipr"),
                     stack("boundary_mass"), manifest)


@dataclass(frozen=True)
class DiffusionEstimate:
    D: float  # nm^2/fs
    alpha: float  # D m / hbar
    window: Tuple[float, float]  # fs
    stderr: float  # nm^2/fs
    d: int = 2
    n_samples: int = 0
    mass: float = M_E

    def to_dict(self) -> Dict:
        return {"D_nm2_fs": self.D, "alpha": self.alpha, "stderr": self.stderr,
                "alpha_stderr": self.stderr * self.mass / HBAR, "window_fs": list(self.window),
                "d": self.d, "n_samples": self.n_samples, "mass": self.mass}


def _ols(t: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    """Least-squares slope and its standard error."""
    n = len(t)
    tm = t.mean()
    dt = t - tm
    sxx = float(np.dot(dt, dt))
    slope = float(np.dot(dt, y - y.mean()) / sxx)
    if n > 2:
        resid = y - y.mean() - slope * dt
        stderr = float(np.sqrt(np.dot(resid, resid) / (n - 2) / sxx))
    else:
        stderr = 0.0
    return slope, stderr


def fit_diffusion(
    series: MsdSeries,
    window: Union[float, Tuple[float, float], None] = None,
    d: int = 2,
    m: float = M_E,
) -> DiffusionEstimate:
    """Fit ``D = slope / (2 d)`` of the MSD over a time window.

    ``window`` is either a fraction (the trailing share of samples to use,
    default 0.5) or an explicit ``(t_start, t_end)`` pair in fs.
    """
    t, y = series.times, series.msd
    if window is None:
        window = 0.5
    if isinstance(window, (tuple, list)):
        lo, hi = float(window[0]), float(window[1])
        sel = (t >= lo) & (t <= hi)
    else:
        frac = float(window)
        if not 0 < frac <= 1:
            raise EstimationError(f"window fraction must lie in (0, 1], got {frac}")
        start = int(np.floor(len(t) * (1.0 - frac)))
        sel = np.zeros(len(t), dtype=bool)
        sel[start:] = True
    n = int(sel.sum())
    if n < MIN_FIT_SAMPLES:
        raise EstimationError(f"fit window holds {n} clean samples; at least {MIN_FIT_SAMPLES} are required")
    tw, yw = t[sel], y[sel]
    slope, se = _ols(tw, yw)
    D = slope / (2.0 * d)
    return DiffusionEstimate(D=D, alpha=D * m / HBAR, window=(float(tw[0]), float(tw[-1])),
                             stderr=se / (2.0 * d), d=d, n_samples=n, mass=m)


def windowed_diffusion(series: MsdSeries, width: float = 1000.0, d: int = 2) -> np.ndarray:
    """Sliding least-squares ``D(t)`` with centered windows of ``width`` fs.

    Returns an ``(N, 2)`` array of ``(t_center, D)``.
    """
    t, y = series.times, series.msd
    if len(t) < 2:
        raise EstimationError("series too short for windowed diffusion")
    spacing = float(np.median(np.diff(t)))
    if width < 5 * spacing - 1e-9:
        raise EstimationError(f"window width {width} fs is below 5 observation intervals ({5 * spacing} fs)")
    if width > t[-1] - t[0] + 1e-9:
        raise EstimationError(f"window width {width} fs exceeds the series span {t[-1] - t[0]} fs")
    k = int(round(width / spacing)) + 1
    out = []
    for i in range(0, len(t) - k + 1):
        tw, yw = t[i:i + k], y[i:i + k]
        slope, _ = _ols(tw, yw)
        out.append((0.5 * (tw[0] + tw[-1]), slope / (2.0 * d)))
    return np.array(out).reshape(-1, 2)


def series_manifest_json(series: MsdSeries) -> str:
    return json.dumps(series.manifest, indent=2, sort_keys=True, default=_json_default)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
