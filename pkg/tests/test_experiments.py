import math
from dataclasses import replace

import numpy as np
import pytest

from planckian.core import HBAR, K_B, M_E
from planckian.disorder import FixedSpeed, ImpurityShape, Maxwell, Static
from planckian.errors import ConfigError, EstimationError
from planckian.experiments import (RunCache, Scenario, SweepAxis, apply_axis, einstein_rate, fit_window_for,
                                   resistivity_table, run_many, run_scenario, sweep, sweep_to_csv)
from planckian.observables import DiffusionEstimate

TINY = Scenario(n=64, L=32.0, sigma0=3.0, t_end=60.0, seeds=(0, 1, 2), window_width=20.0,
                velocity=FixedSpeed(0.01, 1.0), boundary_margin=3.0, observe_every=2.0)


def test_einstein_examples():
    assert einstein_rate(HBAR / M_E, 100.0) == pytest.approx(0.013092, abs=1e-6)
    assert einstein_rate(HBAR / M_E, 100.0) == pytest.approx(K_B * 100 / HBAR, rel=1e-14)
    assert einstein_rate(0.3 * HBAR / M_E, 10.0) == pytest.approx(4.364e-3, abs=1e-6)


@pytest.mark.parametrize("alpha", [0.3, 1.0, 2.0])
@pytest.mark.parametrize("T", [1.0, 100.0, 500.0])
def test_einstein_identity(alpha, T):
    got = einstein_rate(alpha * HBAR / M_E, T, M_E)
    assert abs(got / (K_B * T / (alpha * HBAR)) - 1) < 1e-12


def test_einstein_linear_in_T_and_errors():
    D = 0.1
    assert einstein_rate(D, 200.0) == 2 * einstein_rate(D, 100.0)
    with pytest.raises(EstimationError):
        einstein_rate(0.0, 100.0)


def test_resistivity_table():
    flat = resistivity_table([(T, 0.1) for T in (1.0, 100.0, 500.0)])
    assert flat.r_squared == 1.0
    np.testing.assert_array_equal(flat.inv_tau, [einstein_rate(0.1, T) for T in (1.0, 100.0, 500.0)])
    assert flat.intercept == pytest.approx(0.0, abs=1e-15)
    est = DiffusionEstimate(0.1, 0.1 * M_E / HBAR, (0, 1), 0.0)
    assert resistivity_table([(10.0, est)]).r_squared == 1.0
    # D within the Planckian band keeps 1/tau close to linear
    mixed = resistivity_table([(1.0, 0.08), (100.0, 0.12), (500.0, 0.1)])
    assert mixed.r_squared > 0.95
    assert mixed.to_csv().splitlines()[0] == "T_K,inv_tau_per_fs,D_nm2_fs"
    with pytest.raises(EstimationError):
        resistivity_table([])


def test_cross_section_lock():
    base = Scenario()
    for V0 in (1.0, 2.0, 4.0):
        s = apply_axis(base, "potential_height", V0, cross_section_locked=True)
        assert s.shape.V0 * s.density == pytest.approx(base.shape.V0 * base.density, rel=1e-15)
    assert apply_axis(base, "potential_height", 4.0, True).density == pytest.approx(0.2)
    assert apply_axis(base, "potential_height", 4.0, False).density == base.density


def test_apply_axis_models():
    base = Scenario(velocity=FixedSpeed(0.002, 0.5))
    assert apply_axis(base, "impurity_speed", 0.01).velocity == FixedSpeed(0.01, 0.5)
    assert apply_axis(base, "moving_fraction", 0.1).velocity == FixedSpeed(0.002, 0.1)
    assert apply_axis(Scenario(velocity=Maxwell(100.0, 10.0)), "temperature", 500.0).velocity == Maxwell(500.0, 10.0)
    assert apply_axis(Scenario(velocity=Maxwell(100.0, 10.0)), "impurity_mass", 1e4).velocity == Maxwell(100.0, 1e4)
    with pytest.raises(ConfigError):
        SweepAxis("speed", (1.0,))
    with pytest.raises(ConfigError):
        SweepAxis("temperature", ())
    with pytest.raises(ConfigError):
        SweepAxis("temperature", (float("nan"),))


def test_scenario_round_trip_and_fingerprint():
    s = replace(TINY, t_on=math.inf, velocity=Maxwell(100.0, 10.0))
    back = Scenario.from_dict(s.to_dict())
    assert back == s
    assert s.fingerprint(1) != s.fingerprint(2)
    assert s.fingerprint(1) == back.fingerprint(1)


def test_timestep_divides_observation_interval():
    s = Scenario()
    dt = s.timestep
    assert dt <= 0.0823
    assert 10.0 / dt == pytest.approx(round(10.0 / dt), abs=1e-9)


def test_scenario_validation():
    with pytest.raises(ConfigError, match="grid.n"):
        Scenario(n=100)
    with pytest.raises(ConfigError):
        Scenario(seeds=())
    with pytest.raises(ConfigError):
        Scenario(fit_window=0.0)


def test_fit_window_policy():
    assert fit_window_for(Scenario(), None) == 0.5
    act = Scenario(t_on=5000.0, velocity=FixedSpeed(0.002, 1.0), settle=1000.0)
    assert fit_window_for(act, None) == (6000.0, math.inf)


def test_run_scenario_and_cache(tmp_path):
    res = run_scenario(TINY, cache_dir=tmp_path)
    assert len(res.series) == 3
    assert len(list(tmp_path.glob("*.csv"))) == 3
    again = run_scenario(TINY, cache_dir=tmp_path)
    for a, b in zip(res.series, again.series):
        np.testing.assert_array_equal(a.msd, b.msd)
    assert again.estimate.D == res.estimate.D
    assert res.estimate.alpha == res.estimate.D * M_E / HBAR
    cache = RunCache(tmp_path)
    assert cache.get(TINY, 0).manifest["seed"] == 0
    assert cache.get(TINY, 99) is None


def test_ensemble_exchangeable():
    a = run_scenario(TINY)
    b = run_scenario(replace(TINY, seeds=(2, 0, 1)))
    np.testing.assert_allclose(a.ensemble.msd, b.ensemble.msd, rtol=1e-14)
    assert a.estimate.D == pytest.approx(b.estimate.D, rel=1e-12)


def test_parallel_matches_serial():
    jobs = [(TINY, s) for s in TINY.seeds]
    serial = run_many(jobs, workers=1)
    parallel = run_many(jobs, workers=2)
    for a, b in zip(serial, parallel):
        assert a.to_csv() == b.to_csv()


def test_sweep_flags_bad_points_and_writes_table():
    axis = SweepAxis("potential_height", (2.0, -1.0))
    rows = sweep(replace(TINY, seeds=(0,)), axis)
    assert rows[0].estimate is not None
    assert rows[1].estimate is None and rows[1].flags[0].startswith("config-error")
    text = sweep_to_csv(rows)
    lines = text.splitlines()
    assert lines[0] == "param,D_nm2_fs,alpha,stderr,n_seeds,flags"
    assert lines[2].startswith("-1.0,nan,nan,nan,")


def test_summarize_reports_contamination():
    base = replace(TINY, seeds=(0,), shape=ImpurityShape(1e-6, 1.0, 10.0), density=0.01, velocity=Static(),
                   t_end=1000.0, window_width=20.0)
    res = run_scenario(base)
    assert "boundary-contaminated" in res.flags


def test_initial_contact_is_a_config_error():
    with pytest.raises(ConfigError, match="boundary"):
        run_scenario(replace(TINY, seeds=(0,), sigma0=3.0, boundary_margin=7.9))
