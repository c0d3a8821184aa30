"""Moving impurity medium: sampling, classical motion and potential rendering."""
from __future__ import annotations

import io
from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np
from scipy.special import j0, jn_zeros

from .core import K_B, M_E, Grid
from .errors import ConfigError

J01 = float(jn_zeros(0, 1)[0])

_TABLE_STEP = 2.0e-3  # nm; linear-interpolation error ~ step^2/8 * |V''| << 1e-3 V0
ENVELOPE_FLOOR = 1.0e-3  # eV; default truncation where V0 exp(-r/lambda) drops below this


@dataclass(frozen=True)
class ImpurityShape:
    """Radial bump ``V0 J0(j01 r / r_core) exp(-r / lam)``, zero beyond ``r_cut``.

    ``r_cut=None`` picks the radius where the exponential envelope falls
    below 1 meV; :meth:`resolved` caps it at half the box.
    """

    V0: float = 2.0
    r_core: float = 1.0
    lam: float = 10.0
    r_cut: Optional[float] = None

    def __post_init__(self):
        if not self.V0 > 0:
            raise ConfigError(f"disorder.V0 must be positive, got {self.V0}", key="disorder.V0")
        if not self.r_core > 0:
            raise ConfigError(f"disorder.r_core must be positive, got {self.r_core}", key="disorder.r_core")
        if not self.lam > 0:
            raise ConfigError(f"disorder.lambda must be positive, got {self.lam}", key="disorder.lambda")
        if self.r_cut is not None:
            if self.r_cut < self.lam:
                raise ConfigError("disorder.r_cut must be >= lambda", key="disorder.r_cut")
            if abs(self._raw(self.r_cut)) > 1e-3 * self.V0:
                raise ConfigError(
                    f"disorder.r_cut={self.r_cut} truncates the bump above 1e-3*V0", key="disorder.r_cut"
                )

    def _raw(self, r):
        r = np.asarray(r, dtype=float)
        return self.V0 * j0(J01 * r / self.r_core) * np.exp(-r / self.lam)

    @property
    def default_cutoff(self) -> float:
        return self.lam * np.log(self.V0 / ENVELOPE_FLOOR) if self.V0 > ENVELOPE_FLOOR else self.lam

    def resolved(self, L: float) -> "ImpurityShape":
        """Copy with a concrete cutoff valid for a box of side ``L``."""
        if self.r_cut is not None:
            return self
        rc = max(min(self.default_cutoff, 0.5 * L), self.lam)
        out = ImpurityShape(self.V0, self.r_core, self.lam)
        # a box-capped cutoff may truncate above 1e-3 V0 in small boxes; that is accepted
        object.__setattr__(out, "r_cut", rc)
        return out


def bump_profile(shape: ImpurityShape, r):
    """Impurity potential (eV) at distance ``r`` (nm) from its center."""
    r = np.asarray(r, dtype=float)
    rc = shape.r_cut if shape.r_cut is not None else shape.default_cutoff
    out = np.where(r < rc, shape._raw(r), 0.0)
    return float(out) if out.ndim == 0 else out


# --- velocity models -------------------------------------------------------


@dataclass(frozen=True)
class Static:
    name = "static"

    @property
    def max_speed(self) -> float:
        return 0.0


@dataclass(frozen=True)
class FixedSpeed:
    """Fraction ``moving_fraction`` of impurities moves at speed ``v`` (nm/fs)."""

    v: float
    moving_fraction: float = 1.0
    name = "fixed_speed"

    def __post_init__(self):
        if not (np.isfinite(self.v) and self.v >= 0):
            raise ConfigError(f"dynamics.v must be >= 0, got {self.v}", key="dynamics.v")
        if not 0.0 <= self.moving_fraction <= 1.0:
            raise ConfigError(
                f"dynamics.moving_fraction must lie in [0, 1], got {self.moving_fraction}",
                key="dynamics.moving_fraction",
            )


@dataclass(frozen=True)
class Maxwell:
    """Thermal velocities at temperature ``T`` (K) for impurity mass ``M`` (units of m_e)."""

    T: float
    M: float
    name = "maxwell"

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigError(f"dynamics.T must be positive, got {self.T}", key="dynamics.T")
        if not self.M > 0:
            raise ConfigError(f"dynamics.M must be positive, got {self.M}", key="dynamics.M")

    @property
    def sigma(self) -> float:
        """Per-component velocity standard deviation, nm/fs."""
        return float(np.sqrt(K_B * self.T / (self.M * M_E)))

    @property
    def most_probable_speed(self) -> float:
        # 2D speed distribution peaks at sigma
        return self.sigma


VelocityModel = Union[Static, FixedSpeed, Maxwell]


def maxwell_tail_fraction(v0: float, T: float, M: float) -> float:
    """Fraction of 2D Maxwell-distributed impurities faster than ``v0``."""
    if v0 < 0 or T <= 0 or M <= 0:
        raise ValueError("need v0 >= 0, T > 0, M > 0")
    return float(np.exp(-M * M_E * v0 ** 2 / (2.0 * K_B * T)))


def maxwell_speed_cdf(v, T: float, M: float):
    return 1.0 - np.exp(-M * M_E * np.asarray(v) ** 2 / (2.0 * K_B * T))


# --- impurity sets ---------------------------------------------------------


@dataclass(frozen=True)
class ImpuritySet:
    positions: np.ndarray  # (N, 2) nm
    velocities: np.ndarray  # (N, 2) nm/fs
    mobile: np.ndarray  # (N,) bool
    grid: Grid
    seed: Optional[int] = None

    def __len__(self):
        return len(self.positions)

    @property
    def max_speed(self) -> float:
        if len(self) == 0:
            return 0.0
        return float(np.max(np.hypot(self.velocities[:, 0], self.velocities[:, 1])))

    def frozen(self) -> "ImpuritySet":
        """Same positions with every impurity at rest."""
        return replace(self, velocities=np.zeros_like(self.velocities), mobile=np.zeros_like(self.mobile))

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write("x,y,vx,vy,mobile\n")
        for (x, y), (vx, vy), m in zip(self.positions, self.velocities, self.mobile):
            buf.write(f"{float(x)!r},{float(y)!r},{float(vx)!r},{float(vy)!r},{int(m)}\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str, grid: Grid, seed: Optional[int] = None) -> "ImpuritySet":
        lines = text.strip().splitlines()
        if not lines or lines[0].strip() != "x,y,vx,vy,mobile":
            raise ValueError("missing impurity header 'x,y,vx,vy,mobile'")
        rows = [ln.split(",") for ln in lines[1:]]
        arr = np.array([[float(v) for v in r[:4]] for r in rows]).reshape(-1, 4)
        mobile = np.array([bool(int(r[4])) for r in rows], dtype=bool)
        return cls(arr[:, :2].copy(), arr[:, 2:].copy(), mobile, grid, seed)


def sample_impurities(density: float, grid: Grid, model: VelocityModel, seed: int) -> ImpuritySet:
    """Draw a random impurity configuration.

    Positions come first from the generator, so every velocity model built
    on the same seed shares the same positions. Under ``FixedSpeed`` the
    mobile impurities are the first ``round(p N)`` of the set, which makes
    mobile subsets nested as ``p`` grows.
    """
    if not density > 0:
        raise ConfigError(f"disorder.density must be positive, got {density}", key="disorder.density")
    count = int(round(density * grid.L ** 2))
    if count < 1:
        raise ConfigError("disorder.density yields zero impurities in this box", key="disorder.density")
    rng = np.random.default_rng(seed)
    positions = rng.uniform(0.0, grid.L, size=(count, 2))
    positions %= grid.L  # guards the measure-zero x == L case
    velocities = np.zeros((count, 2))
    mobile = np.zeros(count, dtype=bool)
    if isinstance(model, FixedSpeed):
        theta = rng.uniform(0.0, 2.0 * np.pi, size=count)
        n_mobile = int(round(model.moving_fraction * count))
        mobile[:n_mobile] = True
        if model.v > 0:
            velocities[:n_mobile, 0] = model.v * np.cos(theta[:n_mobile])
            velocities[:n_mobile, 1] = model.v * np.sin(theta[:n_mobile])
        else:
            mobile[:] = False
    elif isinstance(model, Maxwell):
        velocities = rng.normal(0.0, model.sigma, size=(count, 2))
        mobile[:] = True
    elif not isinstance(model, Static):
        raise ConfigError(f"unknown velocity model {model!r}", key="dynamics.model")
    return ImpuritySet(positions, velocities, mobile, grid, seed)


def advance_impurities(impurities: ImpuritySet, dt: float) -> ImpuritySet:
    """Move every impurity ballistically by ``dt`` with periodic wrapping."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    pos = (impurities.positions + impurities.velocities * dt) % impurities.grid.L
    return replace(impurities, positions=pos)


def positions_at(impurities: ImpuritySet, elapsed: float) -> np.ndarray:
    """Positions after ``elapsed`` fs of motion, computed from the reference positions."""
    if elapsed <= 0:
        return impurities.positions
    return (impurities.positions + impurities.velocities * elapsed) % impurities.grid.L


# --- rendering -------------------------------------------------------------


@dataclass
class PotentialField:
    values: np.ndarray  # eV per grid cell
    time: float = 0.0


class PotentialRenderer:
    """Renders impurity sets to a grid for one ``(grid, shape)`` pair.

    Two backends share the same radial lookup table: ``"stamp"`` evaluates
    each bump directly around its center, ``"spectral"`` deposits bilinear
    weights and convolves with the tabulated bump by FFT.
    """

    def __init__(self, grid: Grid, shape: ImpurityShape, chunk_size: int = 512):
        shape = shape.resolved(grid.L)
        if shape.r_cut > 0.5 * grid.L + 1e-12:
            raise ConfigError(
                f"disorder.r_cut={shape.r_cut} exceeds half the box ({0.5 * grid.L})", key="disorder.r_cut"
            )
        self.grid = grid
        self.shape = shape
        self.chunk_size = chunk_size
        n_tab = int(np.ceil(shape.r_cut / _TABLE_STEP)) + 2
        self._table_r = np.arange(n_tab) * _TABLE_STEP
        self._table_v = shape._raw(self._table_r)
        self._kernel_hat = None

    def lookup(self, r: np.ndarray) -> np.ndarray:
        v = np.interp(r, self._table_r, self._table_v)
        return np.where(r < self.shape.r_cut, v, 0.0)

    @property
    def kernel(self) -> np.ndarray:
        """Bump centered on node (0, 0), sampled with minimum-image distances."""
        g = self.grid
        x, y = g.coordinates()
        r = np.hypot(g.wrap(x), g.wrap(y))
        return self.lookup(r)

    def _kernel_fft(self) -> np.ndarray:
        if self._kernel_hat is None:
            self._kernel_hat = np.fft.rfft2(self.kernel)
        return self._kernel_hat

    def deposit(self, positions: np.ndarray) -> np.ndarray:
        """Bilinear (cloud-in-cell) unit-mass deposit onto the grid nodes."""
        g = self.grid
        n = g.n
        s = positions / g.dx
        i = np.floor(s).astype(np.int64)
        f = s - i
        i %= n
        ip = (i + 1) % n
        wx0, wy0 = 1.0 - f[:, 0], 1.0 - f[:, 1]
        wx1, wy1 = f[:, 0], f[:, 1]
        idx = np.concatenate([
            i[:, 0] * n + i[:, 1],
            ip[:, 0] * n + i[:, 1],
            i[:, 0] * n + ip[:, 1],
            ip[:, 0] * n + ip[:, 1],
        ])
        w = np.concatenate([wx0 * wy0, wx1 * wy0, wx0 * wy1, wx1 * wy1])
        return np.bincount(idx, weights=w, minlength=n * n).reshape(n, n)

    def render_spectral(self, positions: np.ndarray) -> np.ndarray:
        n = self.grid.n
        if len(positions) == 0:
            return np.zeros((n, n))
        rho = self.deposit(np.asarray(positions, dtype=float))
        return np.fft.irfft2(np.fft.rfft2(rho) * self._kernel_fft(), s=(n, n))

    def render_stamp(self, positions: np.ndarray) -> np.ndarray:
        g = self.grid
        n = g.n
        out = np.zeros((n, n))
        positions = np.asarray(positions, dtype=float)
        if len(positions) == 0:
            return out
        half = int(np.ceil(self.shape.r_cut / g.dx)) + 1
        width = min(n, 2 * half + 1)
        offs = np.arange(width) - (half if width < n else n // 2)
        x = g.x_axis
        # fixed-size chunks summed in order keep the result independent of how chunks are scheduled
        for start in range(0, len(positions), self.chunk_size):
            buf = np.zeros((n, n))
            for px, py in positions[start:start + self.chunk_size]:
                ix = (int(np.floor(px / g.dx)) + offs) % n
                iy = (int(np.floor(py / g.dx)) + offs) % n
                ddx = g.wrap(x[ix] - px)
                ddy = g.wrap(x[iy] - py)
                r = np.hypot(ddx[:, None], ddy[None, :])
                buf[np.ix_(ix, iy)] += self.lookup(r)
            out += buf
        return out

    def render(self, positions: np.ndarray, backend: str = "spectral") -> np.ndarray:
        if backend == "spectral":
            return self.render_spectral(positions)
        if backend == "stamp":
            return self.render_stamp(positions)
        raise ConfigError(f"unknown rendering backend {backend!r}", key="disorder.backend")


def render_potential(
    impurities: ImpuritySet,
    grid: Grid,
    shape: ImpurityShape,
    backend: str = "spectral",
    time: float = 0.0,
) -> PotentialField:
    renderer = PotentialRenderer(grid, shape)
    return PotentialField(renderer.render(impurities.positions, backend), time)


def refresh_interval(grid: Grid, v_max: float, dt: float) -> int:
    """Steps between re-renders so no impurity moves more than a quarter cell."""
    if v_max <= 0:
        return 0
    return max(1, int(np.floor(0.25 * grid.dx / (v_max * dt))))
