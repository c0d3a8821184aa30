"""Units, periodic grids and initial wavepackets.

All quantities use the eV / fs / nm system: energies in eV, times in fs,
lengths in nm, so masses come out in eV*fs^2/nm^2.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigError

HBAR = 0.6582119569  # eV fs
K_B = 8.617333262e-5  # eV / K
M_E = 5.685630  # eV fs^2 / nm^2  (m_e c^2 / c^2 with c = 299.792458 nm/fs)
H_PLANCK = 2.0 * np.pi * HBAR


@dataclass(frozen=True)
class PhysicalConstants:
    """Constants in simulation units."""

    hbar: float = HBAR
    k_B: float = K_B
    m_e: float = M_E

    @property
    def planckian_unit(self) -> float:
        """hbar / m_e in nm^2/fs."""
        return self.hbar / self.m_e


CONSTANTS = PhysicalConstants()


def planckian_diffusion(m: float = M_E) -> float:
    """Return hbar/m in nm^2/fs."""
    return HBAR / m


def nm2_per_fs_to_cm2_per_s(value: float) -> float:
    # 1 nm^2/fs = 1e-18 m^2 / 1e-15 s = 1e-3 m^2/s = 10 cm^2/s
    return value * 10.0


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid:
    """Square periodic grid of ``n x n`` cells covering ``[0, L)^2``.

    Axis 0 is x and axis 1 is y. Wavenumbers follow the FFT ordering of
    :func:`numpy.fft.fftfreq`, so ``k_axis[n//2] == -pi/dx``.
    """

    n: int
    L: float

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or not _is_power_of_two(int(self.n)) or self.n < 16:
            raise ConfigError(f"grid.n must be a power of two >= 16, got {self.n!r}", key="grid.n")
        if not np.isfinite(self.L) or self.L <= 0:
            raise ConfigError(f"grid.L must be positive, got {self.L!r}", key="grid.L")

    @property
    def dx(self) -> float:
        return self.L / self.n

    @property
    def x_axis(self) -> np.ndarray:
        return np.arange(self.n) * self.dx

    @property
    def k_axis(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dx)

    @property
    def k_max(self) -> float:
        return np.pi / self.dx

    @property
    def cell_area(self) -> float:
        return self.dx * self.dx

    def coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        """Broadcastable x (column) and y (row) coordinate arrays."""
        x = self.x_axis
        return x[:, None], x[None, :]

    def k_squared(self) -> np.ndarray:
        k = self.k_axis
        return k[:, None] ** 2 + k[None, :] ** 2

    def wrap(self, d: np.ndarray) -> np.ndarray:
        """Minimum-image representative of a displacement, in ``[-L/2, L/2)``."""
        return (d + 0.5 * self.L) % self.L - 0.5 * self.L


def make_grid(n: int, L: float) -> Grid:
    return Grid(int(n) if isinstance(n, (int, np.integer)) else n, float(L))


@dataclass
class WaveField:
    """Carrier wavefunction sampled on a grid.

    ``amplitudes`` is owned by the field and mutated in place by the
    propagator.
    """

    amplitudes: np.ndarray
    grid: Grid
    time: float = 0.0

    def density(self) -> np.ndarray:
        """Probability per cell, ``|psi|^2 dx^2``."""
        return (self.amplitudes.real ** 2 + self.amplitudes.imag ** 2) * self.grid.cell_area

    def copy(self) -> "WaveField":
        return WaveField(self.amplitudes.copy(), self.grid, self.time)


def norm(psi: WaveField) -> float:
    """Total probability ``sum |psi|^2 dx^2``."""
    return float(np.sum(psi.density()))


def gaussian_packet(
    grid: Grid,
    center: Optional[Tuple[float, float]] = None,
    sigma0: float = 10.0,
    k0: Tuple[float, float] = (0.0, 0.0),
) -> WaveField:
    """Normalized Gaussian packet ``exp(-|r-c|^2/(4 sigma0^2)) exp(i k0.r)``.

    ``sigma0`` is the position standard deviation per axis, so the packet's
    mean square radius is ``2 sigma0^2``. Displacements use the minimum
    image, which keeps the sampled packet continuous across the seam.
    """
    if center is None:
        center = (0.5 * grid.L, 0.5 * grid.L)
    cx, cy = float(center[0]), float(center[1])
    if sigma0 < 2.0 * grid.dx:
        raise ConfigError(
            f"packet.sigma0={sigma0} nm is under-resolved (needs >= 2*dx = {2 * grid.dx} nm)",
            key="packet.sigma0",
        )
    reach = 4.0 * sigma0
    for c in (cx, cy):
        if c - reach < 0.0 or c + reach > grid.L:
            raise ConfigError(
                f"packet support (4*sigma0 = {reach} nm around {c} nm) is clipped by the box",
                key="packet.sigma0",
            )
    x, y = grid.coordinates()
    dx_ = grid.wrap(x - cx)
    dy_ = grid.wrap(y - cy)
    envelope = np.exp(-(dx_ ** 2 + dy_ ** 2) / (4.0 * sigma0 ** 2))
    phase = np.exp(1j * (k0[0] * (cx + dx_) + k0[1] * (cy + dy_)))
    amp = (envelope * phase).astype(np.complex128)
    amp /= np.sqrt(np.sum(np.abs(amp) ** 2) * grid.cell_area)
    return WaveField(amp, grid, 0.0)


def mean_momentum(psi: WaveField) -> np.ndarray:
    """Expectation of the wavevector, computed in momentum space."""
    g = psi.grid
    phi = np.fft.fft2(psi.amplitudes)
    w = np.abs(phi) ** 2
    w /= w.sum()
    k = g.k_axis
    return np.array([np.sum(w * k[:, None]), np.sum(w * k[None, :])])
