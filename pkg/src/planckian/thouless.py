"""Chamber model: chaotic boxes of area A joined by single-channel leaks.

Escape broadens each level by one level spacing, giving a dwell time
``hbar * rho`` per chamber. Treating hops between neighbouring chambers as a
classical 2D random walk with step ``sqrt(A)`` yields an area-independent
diffusion constant ``(pi/2) hbar/m``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .core import HBAR, M_E
from .errors import ConfigError

_STEPS = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], dtype=np.int64)
_CHUNK = 1000  # walkers per independently seeded block


@dataclass(frozen=True)
class ThoulessConfig:
    A: float  # chamber area, nm^2
    m: float = M_E
    n_walkers: int = 10_000
    n_hops: int = 1_000
    seed: int = 0

    def __post_init__(self):
        if not self.A > 0:
            raise ConfigError(f"thouless.A must be positive, got {self.A}", key="thouless.A")
        if not self.m > 0:
            raise ConfigError(f"thouless.mass must be positive, got {self.m}", key="thouless.mass")
        if self.n_walkers < 100:
            raise ConfigError(f"thouless.n_walkers must be >= 100, got {self.n_walkers}", key="thouless.n_walkers")
        if self.n_hops < 100:
            raise ConfigError(f"thouless.n_hops must be >= 100, got {self.n_hops}", key="thouless.n_hops")


@dataclass(frozen=True)
class WalkEstimate:
    D: float
    stderr: float
    alpha: float
    t_obs: float
    n_walkers: int


def dos_2d(m: float, A: float) -> float:
    """Density of states of a 2D box, ``m A / (2 pi hbar^2)`` in states/eV."""
    if not A > 0:
        raise ValueError("A must be positive")
    return m * A / (2.0 * np.pi * HBAR ** 2)


def dwell_time(m: float, A: float) -> float:
    """Lifetime ``hbar * rho`` (fs) of a chamber with one open channel."""
    return HBAR * dos_2d(m, A)


def analytic_diffusion(m: float = M_E, A: float = 1.0) -> float:
    """Random-walk diffusion constant ``A / (4 tau)``.

    ``A`` cancels against the dwell time, leaving ``(pi/2) hbar / m`` for
    every chamber size; the argument is accepted only for symmetry.
    """
    if not m > 0:
        raise ValueError("m must be positive")
    if not A > 0:
        raise ValueError("A must be positive")
    return 0.5 * np.pi * HBAR / m


def sample_dwell_times(m: float, A: float, size, rng: np.random.Generator) -> np.ndarray:
    return rng.exponential(dwell_time(m, A), size=size)


def walk_diffusion(A: float, m: float, n_walkers: int, n_hops: int, seed: int) -> WalkEstimate:
    """Monte Carlo estimate of D from continuous-time lattice walkers.

    Every walker makes ``n_hops`` hops with exponential waits. Displacements
    are read at ``t_obs``, the earliest time any walker exhausts its hops,
    so no walker is observed past the end of its own trajectory.
    """
    if n_hops == 0:
        return WalkEstimate(0.0, 0.0, 0.0, 0.0, n_walkers)
    pitch = np.sqrt(A)
    ss = np.random.SeedSequence(seed)
    blocks = []
    totals = []
    for block_seq, start in zip(ss.spawn((n_walkers + _CHUNK - 1) // _CHUNK), range(0, n_walkers, _CHUNK)):
        rng = np.random.default_rng(block_seq)
        nb = min(_CHUNK, n_walkers - start)
        waits = sample_dwell_times(m, A, (nb, n_hops), rng)
        dirs = rng.integers(0, 4, size=(nb, n_hops))
        hop_times = np.cumsum(waits, axis=1)
        steps = _STEPS[dirs]
        path = np.cumsum(steps, axis=1)
        blocks.append((hop_times, path))
        totals.append(hop_times[:, -1].min())
    t_obs = float(min(totals))
    r2 = []
    for hop_times, path in blocks:
        done = (hop_times <= t_obs).sum(axis=1)  # hops completed by t_obs
        pos = np.zeros((len(done), 2))
        moved = done > 0
        pos[moved] = path[moved, done[moved] - 1]
        r2.append((pos ** 2).sum(axis=1) * pitch ** 2)
    r2 = np.concatenate(r2)
    D = float(r2.mean() / (4.0 * t_obs))
    se = float(r2.std(ddof=1) / np.sqrt(len(r2)) / (4.0 * t_obs))
    return WalkEstimate(D, se, D * m / HBAR, t_obs, n_walkers)


def simulate_walk(cfg: ThoulessConfig) -> WalkEstimate:
    return walk_diffusion(cfg.A, cfg.m, cfg.n_walkers, cfg.n_hops, cfg.seed)


THOULESS_COLUMNS = ("A_nm2", "D_analytic", "D_empirical", "stderr", "n_walkers")


def thouless_table(areas: Sequence[float], m: float = M_E, n_walkers: int = 10_000, n_hops: int = 1_000,
                   seed: int = 0) -> List[tuple]:
    """Analytic vs Monte Carlo diffusion for each chamber area.

    Each area gets its own child seed of ``seed``.
    """
    rows = []
    children = np.random.SeedSequence(seed).spawn(len(areas))
    for A, child in zip(areas, children):
        cfg = ThoulessConfig(float(A), m, n_walkers, n_hops, int(child.generate_state(1)[0]))
        est = simulate_walk(cfg)
        rows.append((float(A), analytic_diffusion(m, A), est.D, est.stderr, n_walkers))
    return rows


def table_to_csv(rows) -> str:
    lines = [",".join(THOULESS_COLUMNS)]
    for A, Da, De, se, nw in rows:
        lines.append(f"{A!r},{Da!r},{De!r},{se!r},{int(nw)}")
    return "\n".join(lines) + "\n"
