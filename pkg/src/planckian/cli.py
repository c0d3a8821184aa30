"""Command-line entry point: ``planckian {run,sweep,thouless,analyze}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .config import (EXTENDED, PRESETS, load_preset, parse_config, scenario_from_config,
                     sweep_axis_from_config, thouless_from_config, to_text)
from .core import HBAR, M_E
from .errors import ConfigError, EstimationError, PlanckianError
from .experiments import (code_fingerprint, resistivity_table, run_many, summarize, sweep, sweep_to_csv)
from .observables import MsdSeries, ensemble_mean, fit_diffusion, windowed_diffusion
from .thouless import table_to_csv, thouless_table

log = logging.getLogger("planckian")

WORKERS_ENV = "PLANCKIAN_WORKERS"


def _workers(arg: Optional[int]) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}", key=WORKERS_ENV) from None
    return os.cpu_count() or 1


def _load(args):
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}", key="--config") from None
    elif args.preset:
        text = load_preset(args.preset)
    else:
        raise ConfigError("give --config or --preset", key="--config")
    overrides = list(args.override or [])
    if getattr(args, "extended", False):
        overrides = [f"{k}={v}" for k, v in EXTENDED.items()] + overrides
    return parse_config(text, overrides)


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n")


def _default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj).__name__)


def _windowed_csv(wd: np.ndarray, m: float) -> str:
    lines = ["t_center_fs,D_nm2_fs,alpha"]
    for t, D in wd:
        lines.append(f"{t!r},{D!r},{D * m / HBAR!r}")
    return "\n".join(lines) + "\n"


def _manifest(cp, scenario, seed, started, flags, extra=None) -> dict:
    out = {
        "tool_version": __version__,
        "code_fingerprint": code_fingerprint(),
        "config": to_text(cp),
        "scenario": scenario.to_dict() if scenario is not None else None,
        "master_seed": seed,
        "wall_clock_s": round(time.time() - started, 3),
        "flags": flags,
    }
    out.update(extra or {})
    return out


def _write_result(out: Path, res, cp) -> None:
    for s in res.series:
        (out / f"msd_seed{s.manifest['seed']}.csv").write_text(s.to_csv())
        _dump(out / f"msd_seed{s.manifest['seed']}.json", s.manifest)
    (out / "ensemble_msd.csv").write_text(res.ensemble.to_csv())
    (out / "windowed_D.csv").write_text(_windowed_csv(res.windowed, res.scenario.m))
    (out / "config.ini").write_text(to_text(cp))


def cmd_run(args) -> int:
    started = time.time()
    cp = _load(args)
    scenario = scenario_from_config(cp, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    series = run_many([(scenario, s) for s in scenario.seeds], _workers(args.workers))
    res = summarize(scenario, series)
    _write_result(out, res, cp)
    summary = {"estimate": res.estimate.to_dict(), "flags": res.flags, "n_seeds": len(series),
               "seeds": list(scenario.seeds)}
    _dump(out / "summary.json", summary)
    _dump(out / "manifest.json", _manifest(cp, scenario, args.seed, started, res.flags))
    print(json.dumps(summary["estimate"], sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    started = time.time()
    cp = _load(args)
    base = scenario_from_config(cp, args.seed)
    axis = sweep_axis_from_config(cp, args.axis)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = sweep(base, axis, _workers(args.workers))
    for i, row in enumerate(rows):
        if row.result is None:
            continue
        point = out / f"point{i:02d}"
        point.mkdir(exist_ok=True)
        _write_result(point, row.result, cp)
        _dump(point / "summary.json", {"param": row.value, "estimate": row.estimate.to_dict(), "flags": row.flags})
    (out / "sweep.csv").write_text(sweep_to_csv(rows))
    ok = [r for r in rows if r.estimate is not None]
    if axis.parameter == "temperature" and ok and all(r.estimate.D > 0 for r in ok):
        er = resistivity_table([(r.value, r.estimate) for r in ok], base.m)
        (out / "resistivity.csv").write_text(er.to_csv())
        _dump(out / "resistivity_summary.json", {"r_squared": er.r_squared, "slope_per_fs_K": er.slope,
                                                 "intercept_per_fs": er.intercept})
    flags = {f"{r.value!r}": r.flags for r in rows if r.flags}
    _dump(out / "manifest.json", _manifest(cp, base, args.seed, started, flags,
                                           {"axis": {"parameter": axis.parameter, "values": list(axis.values),
                                                     "cross_section_locked": axis.cross_section_locked}}))
    sys.stdout.write(sweep_to_csv(rows))
    return 0 if ok else EstimationError.exit_code


def cmd_thouless(args) -> int:
    started = time.time()
    cp = _load(args)
    areas, mass, n_walkers, n_hops, seed = thouless_from_config(cp, args.seed)
    rows = thouless_table(areas, mass, n_walkers, n_hops, seed)
    text = table_to_csv(rows)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "thouless.csv").write_text(text)
    _dump(out / "manifest.json", _manifest(cp, None, seed, started, [],
                                           {"n_walkers": n_walkers, "n_hops": n_hops}))
    sys.stdout.write(text)
    return 0


def _parse_window(spec: Optional[str]):
    if spec is None:
        return None
    try:
        if ":" in spec:
            lo, hi = spec.split(":", 1)
            return (float(lo) if lo else -np.inf, float(hi) if hi else np.inf)
        return float(spec)
    except ValueError:
        raise ConfigError(f"window must be a fraction or t_start:t_end, got {spec!r}", key="--window") from None


def cmd_analyze(args) -> int:
    series = []
    for path in args.files:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise EstimationError(f"cannot read {path}: {exc}") from None
        manifest = {}
        side = p.with_suffix(".json")
        if side.exists():
            manifest = json.loads(side.read_text())
        series.append(MsdSeries.from_csv(text, manifest, source=str(path)))
    ens = series[0] if len(series) == 1 else ensemble_mean(series)
    mass = float(args.mass) * M_E
    est = fit_diffusion(ens, _parse_window(args.window), m=mass)
    result = {"estimate": est.to_dict(), "n_files": len(series)}
    try:
        wd = windowed_diffusion(ens, args.width)
    except EstimationError as exc:
        wd = None
        result["windowed_error"] = str(exc)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _dump(out / "analysis.json", result)
        if wd is not None:
            (out / "windowed_D.csv").write_text(_windowed_csv(wd, mass))
    print(json.dumps(result, sort_keys=True, default=_default))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="planckian", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, sweepish=True):
        p.add_argument("--config", help="configuration file (INI)")
        p.add_argument("--preset", choices=PRESETS, help="bundled configuration")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--override", action="append", metavar="SECTION.KEY=VALUE")
        if sweepish:
            p.add_argument("--workers", type=int, default=None, help=f"worker processes (env {WORKERS_ENV})")
            p.add_argument("--extended", action="store_true", help="512-point, 256 nm grid run to 200 ps")

    p = sub.add_parser("run", help="run one scenario ensemble")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="sweep one scenario parameter")
    common(p)
    p.add_argument("--axis", help="parameter=v1,v2,... (overrides [sweep])")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("thouless", help="chamber-model random walks")
    common(p, sweepish=False)
    p.set_defaults(func=cmd_thouless)

    p = sub.add_parser("analyze", help="re-fit stored MSD series")
    p.add_argument("files", nargs="+")
    p.add_argument("--window", default=None, help="trailing fraction (0.5) or t_start:t_end in fs")
    p.add_argument("--width", type=float, default=1000.0, help="sliding window width, fs")
    p.add_argument("--mass", type=float, default=1.0, help="carrier mass in units of m_e")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PlanckianError as exc:
        key = getattr(exc, "key", None)
        where = f" [{key}]" if key else ""
        print(f"error{where}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
