"""
app/cli.py
Командная строка: python -m app.cli <команда> ...

Коды выхода: 0 — успех, 2 — ошибка конфигурации, 3 — ошибка метода
(во всех экспериментах хотя бы одного метода).
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
import yaml
from pydantic import ValidationError

from app.config import settings
from app.core import storage
from app.core.exceptions import ConfigurationError, RareEventError
from app.core.log_setup import configure_logging
from app.models.curve import Provenance, RankedPairs
from app.models.result import ControlResult, ResultBundle
from app.schemas.experiment import ExperimentConfig, Method
from app.services.experiment_service import ExperimentService
from app.services.gev_service import GevService
from app.services.preset_service import PresetService
from app.services.returns_service import ReturnsService

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_METHOD = 3


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.from_yaml(Path(args.config).read_text(encoding="utf-8"))
    update = {}
    if args.seed is not None:
        update["seed"] = args.seed
    if args.out is not None:
        update["output_dir"] = Path(args.out)
    return cfg.model_copy(update=update) if update else cfg


def _load_series(path: Path, column: Optional[str]) -> np.ndarray:
    if path.suffix == ".npy":
        return np.load(path)
    if path.suffix == ".csv":
        frame = pd.read_csv(path)
        return frame[column or frame.columns[0]].to_numpy(dtype=float)
    return np.loadtxt(path, dtype=float)


def _exit_code(results) -> int:
    bundles = [r for r in results if isinstance(r, ResultBundle)]
    failed = [b.config.name for b in bundles if b.all_failed]
    if failed:
        logger.error(f"All experiments failed for: {', '.join(failed)}")
        return EXIT_METHOD
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    if (args.preset is None) == (args.config is None):
        raise ConfigurationError("run needs exactly one of --preset or --config")
    if args.preset is not None:
        results = PresetService.run_preset(args.preset, seed=args.seed, workers=args.workers,
                                           out_dir=args.out, budget=args.budget)
        for name, result in results.items():
            cost = result.cost if isinstance(result, ControlResult) else result.ledger.total
            print(f"{name}: cost {cost:.6g} -> {result.output_dir}")
        return _exit_code(results.values())

    cfg = _load_config(args)
    if cfg.method == Method.CONTROL:
        result = ExperimentService.run_control(cfg, budget=args.budget)
        print(f"{cfg.name}: cost {result.cost:.6g} -> {result.output_dir}")
        return EXIT_OK
    bundle = ExperimentService.run_experiment(cfg, workers=args.workers)
    print(f"{cfg.name}: cost {bundle.ledger.total:.6g}, failed {len(bundle.failures)}/{len(bundle.outcomes)} "
          f"-> {bundle.output_dir}")
    return _exit_code([bundle])


def cmd_control(args: argparse.Namespace) -> int:
    if (args.preset is None) == (args.config is None):
        raise ConfigurationError("control needs exactly one of --preset or --config")
    if args.preset is not None:
        configs = [c for c in PresetService.get(args.preset, seed=args.seed, budget=args.budget)
                   if c.method == Method.CONTROL]
        if not configs:
            raise ConfigurationError(f"preset {args.preset} has no control run")
        cfg = configs[0]
        if args.out is not None:
            cfg = cfg.model_copy(update={"output_dir": Path(args.out)})
    else:
        cfg = _load_config(args)
    result = ExperimentService.run_control(cfg, budget=args.budget)
    print(f"{cfg.name}: {result.n_blocks} blocks, cost {result.cost:.6g}, "
          f"max return time {result.curve.max_return_time():.6g} -> {result.output_dir}")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    bundles = [ExperimentService.load_bundle(Path(d)) for d in args.bundles]
    control = storage.read_curve(Path(args.control) / "curve.csv") if args.control else None
    out = Path(args.out) if args.out else None
    report = ExperimentService.compare_methods(bundles, control=control, tolerance=args.tolerance, out_dir=out)
    print(report.resolved.to_string(index=False))
    print(f"longest return time: {report.longest()}")
    return EXIT_OK


def cmd_preset(args: argparse.Namespace) -> int:
    if args.action == "list":
        for summary in PresetService.list():
            total = sum(summary.cost.values())
            methods = ",".join(m.value for m in summary.methods)
            print(f"{summary.name:16s} {methods:20s} cost {total:10.4g}  {summary.description}")
        return EXIT_OK
    if not args.name:
        raise ConfigurationError("preset show needs a preset name")
    configs = PresetService.get(args.name, seed=args.seed)
    print(yaml.safe_dump_all([c.model_dump(mode="json", exclude_none=True) for c in configs],
                             sort_keys=False, allow_unicode=True), end="")
    return EXIT_OK


def cmd_fit_gev(args: argparse.Namespace) -> int:
    series = _load_series(Path(args.input), args.column)
    maxima = GevService.block_maxima(series, args.block_size)
    fit = GevService.fit_gev_mle(maxima, profile_ci=args.profile_ci)
    levels = [GevService.return_level(fit, r) for r in args.return_times]
    payload = {"fit": GevService.fit_to_dict(fit), "return_levels": [lv.model_dump() for lv in levels]}
    if args.out:
        out = storage.ensure_dir(Path(args.out))
        storage.write_json(payload, out / "fit.json")
        storage.write_rows([lv.model_dump() for lv in levels], out / "return_levels.csv",
                           columns=["return_time", "level", "lower", "upper"])
    print(json.dumps(payload, indent=2))
    return EXIT_OK


def cmd_curve(args: argparse.Namespace) -> int:
    path = Path(args.input)
    if args.delta_t is not None:
        series = _load_series(path, args.column)
        curve = ReturnsService.curve_from_block_series(series, args.delta_t, dt=args.dt, label="series")
    else:
        frame = pd.read_csv(path)
        pairs = RankedPairs(thresholds=frame["threshold"].to_numpy(dtype=float),
                            weights=frame["probability"].to_numpy(dtype=float))
        curve = ReturnsService.curve_from_ranked(pairs, Provenance(args.provenance), label="pairs")
    if args.out:
        storage.write_curves([curve], Path(args.out))
    else:
        curve.to_frame().to_csv(sys.stdout, index=False, float_format=settings.csv_float_format,
                                lineterminator="\n")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    from main import serve

    serve()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="app.cli", description="Rare event probabilities and return times")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ERROR")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=None, help="YAML experiment configuration")
        p.add_argument("--preset", default=None, choices=PresetService.names())
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="Output directory")
        p.add_argument("--budget", type=float, default=None, help="Control run cost in T_f units")

    run = sub.add_parser("run", help="Run an experiment configuration or a preset suite")
    experiment_flags(run)
    run.add_argument("--workers", type=int, default=None)
    run.set_defaults(func=cmd_run)

    control = sub.add_parser("control", help="Long control run at a given cost")
    experiment_flags(control)
    control.set_defaults(func=cmd_control)

    compare = sub.add_parser("compare", help="Compare result directories at matched cost")
    compare.add_argument("bundles", nargs="+", help="Result directories written by run")
    compare.add_argument("--control", default=None, help="Control result directory")
    compare.add_argument("--out", default=None)
    compare.add_argument("--tolerance", type=float, default=0.05)
    compare.set_defaults(func=cmd_compare)

    preset = sub.add_parser("preset", help="List presets or show their configurations")
    preset.add_argument("action", choices=["list", "show"])
    preset.add_argument("name", nargs="?", default=None)
    preset.add_argument("--seed", type=int, default=None)
    preset.set_defaults(func=cmd_preset)

    fit = sub.add_parser("fit-gev", help="Fit a GEV distribution to block maxima of a series")
    fit.add_argument("--input", required=True, help=".npy, .csv or whitespace-separated text")
    fit.add_argument("--column", default=None)
    fit.add_argument("--block-size", type=int, default=1)
    fit.add_argument("--profile-ci", action="store_true")
    fit.add_argument("--return-times", type=float, nargs="*", default=[])
    fit.add_argument("--out", default=None)
    fit.set_defaults(func=cmd_fit_gev)

    curve = sub.add_parser("curve", help="Return curve from ranked pairs or from a series")
    curve.add_argument("--input", required=True, help="CSV with threshold,probability or a series")
    curve.add_argument("--column", default=None)
    curve.add_argument("--delta-t", type=float, default=None, help="Block length for a series")
    curve.add_argument("--dt", type=float, default=1.0, help="Sampling step of the series")
    curve.add_argument("--provenance", default=Provenance.MC.value, choices=[p.value for p in Provenance])
    curve.add_argument("--out", default=None)
    curve.set_defaults(func=cmd_curve)

    serve = sub.add_parser("serve", help="Start the HTTP API")
    serve.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except ConfigurationError as e:
        logger.error(f"Configuration error: {e}")
        for problem in e.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValidationError, yaml.YAMLError, FileNotFoundError) as e:
        logger.error(f"Configuration error: {e}")
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except RareEventError as e:
        logger.error(f"Method failure: {e}")
        print(f"method error: {e}", file=sys.stderr)
        return EXIT_METHOD


if __name__ == "__main__":
    sys.exit(main())
