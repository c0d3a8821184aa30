import json

import numpy as np
import pytest

from planckian import cli
from planckian.errors import NumericalError
from planckian.observables import MsdSeries, fit_diffusion

TINY = [
    "grid.n=64", "grid.L=32", "packet.sigma0=3", "run.t_end=40", "run.observe_every=2", "run.n_seeds=2",
    "run.window_width=20", "run.boundary_margin=3",
]


def _ov(extra=()):
    out = []
    for item in list(TINY) + list(extra):
        out += ["--override", item]
    return out


def _run(argv, capsys=None):
    code = cli.main(argv)
    err = capsys.readouterr().err if capsys is not None else ""
    return code, err


def test_run_writes_artifacts(tmp_path):
    out = tmp_path / "run"
    code = cli.main(["run", "--preset", "fig1_moving", "--out", str(out), "--workers", "1"] + _ov())
    assert code == 0
    names = {p.name for p in out.iterdir()}
    assert {"msd_seed0.csv", "msd_seed1.csv", "summary.json", "manifest.json", "ensemble_msd.csv",
            "windowed_D.csv", "config.ini"} <= names
    summary = json.loads((out / "summary.json").read_text())
    assert summary["n_seeds"] == 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert "[grid]" in manifest["config"]
    assert manifest["scenario"]["n"] == 64


def test_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    base = ["run", "--preset", "fig1_static", "--seed", "5"] + _ov()
    assert cli.main(base + ["--out", str(a), "--workers", "1"]) == 0
    assert cli.main(base + ["--out", str(b), "--workers", "2"]) == 0
    for name in ("msd_seed5.csv", "msd_seed6.csv", "ensemble_msd.csv", "windowed_D.csv", "summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_config_echo_replays(tmp_path):
    a = tmp_path / "a"
    assert cli.main(["run", "--preset", "fig1_moving", "--seed", "3", "--out", str(a), "--workers", "1"]
                    + _ov()) == 0
    cfg = tmp_path / "echo.ini"
    cfg.write_text(json.loads((a / "manifest.json").read_text())["config"])
    b = tmp_path / "b"
    assert cli.main(["run", "--config", str(cfg), "--seed", "3", "--out", str(b), "--workers", "1"]) == 0
    assert (a / "msd_seed3.csv").read_bytes() == (b / "msd_seed3.csv").read_bytes()


def test_bad_grid_is_config_error(tmp_path, capsys):
    code, err = _run(["run", "--preset", "fig1_static", "--out", str(tmp_path)] + _ov(["grid.n=100"]), capsys)
    assert code == 2
    assert "grid.n" in err


def test_unknown_key_is_config_error(tmp_path, capsys):
    code, err = _run(["run", "--preset", "fig1_static", "--out", str(tmp_path)] + _ov(["run.speed=3"]), capsys)
    assert code == 2 and "run.speed" in err


def test_numerical_failure_exit_code(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise NumericalError("non-finite wavefunction")

    monkeypatch.setattr(cli, "run_many", boom)
    code, err = _run(["run", "--preset", "fig1_static", "--out", str(tmp_path)] + _ov(), capsys)
    assert code == 3 and "non-finite" in err


def test_estimation_failure_exit_code(tmp_path, capsys):
    # a fit window holding fewer than 10 samples cannot be fitted
    code, err = _run(["run", "--preset", "fig1_static", "--out", str(tmp_path)]
                     + _ov(["run.observe_every=10", "run.t_end=60"]), capsys)
    assert code == 4 and "at least 10" in err


def test_sweep_empty_values(tmp_path, capsys):
    code, err = _run(["sweep", "--preset", "fig4_fraction_sweep", "--out", str(tmp_path)]
                     + _ov(["sweep.values="]), capsys)
    assert code == 2 and "sweep.values" in err


def test_sweep_table(tmp_path):
    out = tmp_path / "sw"
    code = cli.main(["sweep", "--preset", "fig4_fraction_sweep", "--out", str(out), "--workers", "1",
                     "--axis", "moving_fraction=0,1"] + _ov(["run.n_seeds=1"]))
    assert code == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "param,D_nm2_fs,alpha,stderr,n_seeds,flags"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["0.0", "1.0"]
    assert (out / "point01" / "summary.json").exists()


def test_temperature_sweep_writes_resistivity(tmp_path):
    out = tmp_path / "t"
    code = cli.main(["sweep", "--preset", "fig6_resistivity", "--out", str(out), "--workers", "1",
                     "--axis", "temperature=100,500"] + _ov(["run.n_seeds=1", "run.t_end=60"]))
    assert code == 0
    assert (out / "resistivity.csv").exists()


def test_thouless_replay_and_validation(tmp_path, capsys):
    ov = ["--override", "thouless.n_walkers=1000", "--override", "thouless.n_hops=200"]
    assert cli.main(["thouless", "--preset", "thouless", "--out", str(tmp_path / "a")] + ov) == 0
    assert cli.main(["thouless", "--preset", "thouless", "--out", str(tmp_path / "b")] + ov) == 0
    a = (tmp_path / "a" / "thouless.csv").read_text()
    assert a == (tmp_path / "b" / "thouless.csv").read_text()
    rows = [ln.split(",") for ln in a.splitlines()[1:]]
    assert [float(r[0]) for r in rows] == [25.0, 100.0, 2500.0]
    capsys.readouterr()
    code, err = _run(["thouless", "--preset", "thouless", "--out", str(tmp_path / "c"),
                      "--override", "thouless.n_walkers=10"], capsys)
    assert code == 2 and "n_walkers" in err


def _synthetic(tmp_path, n_files, noise=2.0):
    paths = []
    t = np.arange(0, 2000, 10.0)
    for i in range(n_files):
        y = 100 + 0.4 * t + np.random.default_rng(i).normal(0, noise, t.size)
        p = tmp_path / f"s{i}.csv"
        p.write_text(MsdSeries.from_synthetic(t, y).to_csv())
        paths.append(str(p))
    return paths


def test_analyze_single_matches_direct_fit(tmp_path, capsys):
    (path,) = _synthetic(tmp_path, 1)
    assert cli.main(["analyze", path, "--out", str(tmp_path / "an")]) == 0
    got = json.loads(capsys.readouterr().out)["estimate"]
    direct = fit_diffusion(MsdSeries.from_csv(open(path).read()))
    assert abs(got["D_nm2_fs"] - direct.D) <= 1e-12 * abs(direct.D)
    assert (tmp_path / "an" / "windowed_D.csv").exists()


def test_analyze_ensemble_reduces_stderr(tmp_path, capsys):
    paths = _synthetic(tmp_path, 8)
    singles = []
    for p in paths:
        cli.main(["analyze", p])
        singles.append(json.loads(capsys.readouterr().out)["estimate"]["stderr"])
    cli.main(["analyze", *paths])
    ens = json.loads(capsys.readouterr().out)["estimate"]["stderr"]
    assert ens < min(singles)


def test_analyze_run_output_round_trip(tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["run", "--preset", "fig1_moving", "--out", str(out), "--workers", "1"] + _ov()) == 0
    summary = json.loads((out / "summary.json").read_text())
    capsys.readouterr()
    assert cli.main(["analyze", str(out / "ensemble_msd.csv")]) == 0
    got = json.loads(capsys.readouterr().out)["estimate"]
    assert got["D_nm2_fs"] == summary["estimate"]["D_nm2_fs"]


def test_analyze_errors(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    (path,) = _synthetic(tmp_path, 1)
    lines = open(path).read().splitlines()
    lines[4] = "12,abc,0,0,1,0,0"
    bad.write_text("\n".join(lines) + "\n")
    code, err = _run(["analyze", str(bad)], capsys)
    assert code == 4 and "line 5" in err
    code, err = _run(["analyze", path, "--window", "100:150"], capsys)
    assert code == 4
    code, err = _run(["analyze", path, "--window", "abc"], capsys)
    assert code == 2


def test_missing_config_source(tmp_path, capsys):
    code, err = _run(["run", "--out", str(tmp_path)], capsys)
    assert code == 2
    code, err = _run(["run", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path)], capsys)
    assert code == 2


def test_workers_env(monkeypatch):
    monkeypatch.setenv(cli.WORKERS_ENV, "3")
    assert cli._workers(None) == 3
    assert cli._workers(1) == 1
    monkeypatch.setenv(cli.WORKERS_ENV, "x")
    with pytest.raises(Exception):
        cli._workers(None)
