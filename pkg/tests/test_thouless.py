import numpy as np
import pytest
from scipy import stats

from planckian.core import HBAR, M_E
from planckian.errors import ConfigError
from planckian.thouless import (ThoulessConfig, analytic_diffusion, dos_2d, dwell_time, sample_dwell_times,
                                simulate_walk, table_to_csv, thouless_table, walk_diffusion)


def test_density_of_states():
    assert dos_2d(M_E, 100.0) == pytest.approx(208.87, abs=0.01)
    assert dos_2d(2 * M_E, 100.0) == pytest.approx(417.75, abs=0.02)
    assert dos_2d(M_E, 200.0) == 2 * dos_2d(M_E, 100.0)


def test_dwell_time():
    assert dwell_time(M_E, 100.0) == pytest.approx(137.48, abs=0.01)
    assert dwell_time(M_E, 25.0) == pytest.approx(34.37, abs=0.01)
    for A in (1.0, 37.0, 1e4):
        assert dwell_time(M_E, A) / dos_2d(M_E, A) == pytest.approx(HBAR, rel=1e-15)


def test_analytic_diffusion_is_area_free():
    D = analytic_diffusion(M_E)
    assert D == pytest.approx(0.18185, abs=1e-5)
    assert D * M_E / HBAR == pytest.approx(np.pi / 2, rel=1e-12)
    for A in np.logspace(-1, 4, 11):
        assert A / (4 * dwell_time(M_E, A)) == pytest.approx(D, rel=1e-13)
    assert analytic_diffusion(M_E, 25.0) == analytic_diffusion(M_E, 2500.0)
    assert analytic_diffusion(10 * M_E) == pytest.approx(0.018185, abs=1e-6)


def test_config_validation():
    with pytest.raises(ConfigError, match="thouless.A"):
        ThoulessConfig(0.0)
    with pytest.raises(ConfigError, match="n_walkers"):
        ThoulessConfig(100.0, n_walkers=10)
    with pytest.raises(ConfigError, match="n_hops"):
        ThoulessConfig(100.0, n_hops=5)


def test_zero_hops():
    assert walk_diffusion(100.0, M_E, 500, 0, 1).D == 0.0


def test_dwell_times_are_exponential():
    rng = np.random.default_rng(7)
    tau = dwell_time(M_E, 100.0)
    w = sample_dwell_times(M_E, 100.0, 100_000, rng)
    n = len(w)
    assert abs(w.mean() - tau) < 3 * tau / np.sqrt(n)
    # variance of an exponential is tau^2; its sampling sd is sqrt(8) tau^2 / sqrt(n)
    assert abs(w.var() - tau ** 2) < 3 * np.sqrt(8) * tau ** 2 / np.sqrt(n)
    assert stats.kstest(w, "expon", args=(0, tau)).pvalue > 1e-3


def test_walk_matches_analytic():
    est = simulate_walk(ThoulessConfig(100.0, M_E, 10_000, 1_000, 3))
    assert est.D == pytest.approx(analytic_diffusion(M_E), rel=0.03)
    assert est.stderr > 0
    assert est.alpha == pytest.approx(est.D * M_E / HBAR)


def test_walk_deterministic():
    a = walk_diffusion(25.0, M_E, 1500, 200, 9)
    b = walk_diffusion(25.0, M_E, 1500, 200, 9)
    assert a == b


def test_error_shrinks_as_inverse_sqrt_n():
    Da = analytic_diffusion(M_E)
    sizes = np.array([200, 800, 3200])
    rms = []
    for n in sizes:
        errs = [walk_diffusion(100.0, M_E, int(n), 100, 1000 * int(n) + s).D - Da for s in range(24)]
        rms.append(np.sqrt(np.mean(np.square(errs))))
    slope = np.polyfit(np.log(sizes), np.log(rms), 1)[0]
    assert -0.75 < slope < -0.25


def test_table_and_csv():
    rows = thouless_table([25.0, 100.0], M_E, 500, 100, seed=4)
    assert [r[0] for r in rows] == [25.0, 100.0]
    text = table_to_csv(rows)
    lines = text.splitlines()
    assert lines[0] == "A_nm2,D_analytic,D_empirical,stderr,n_walkers"
    assert len(lines) == 3 and lines[1].endswith(",500")
    assert text == table_to_csv(thouless_table([25.0, 100.0], M_E, 500, 100, seed=4))
