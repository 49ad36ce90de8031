"""
app/services/experiment_service.py
Оркестрация экспериментов: K экспериментов метода для всех C, учёт
стоимости, эталонные вероятности, контрольный прогон, сравнение методов
при равной стоимости и запись результатов.
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import numpy as np
import pandas as pd
from scipy.stats import linregress

from app.config import settings
from app.core import storage
from app.core.exceptions import (
    ConfigurationError,
    ConvergenceError,
    CostMismatchError,
    ExtinctionError,
    InsufficientDataError,
    WeightOverflowError,
)
from app.core.executor import map_ordered
from app.core.rng import StreamFactory
from app.models.curve import Provenance, ReturnCurve
from app.models.ensemble import EnsembleRun
from app.models.result import ComparisonReport, ControlResult, ExperimentOutcome, ResultBundle
from app.schemas.experiment import (
    AveragingGrid,
    ControlMode,
    CostLedger,
    ExperimentConfig,
    GkltMode,
    Method,
    Target,
)
from app.schemas.gev import BlockLayout
from app.schemas.system import ObservableKind, SystemKind
from app.schemas.tilt import TiltConfig, WeightForm
from app.services.dynamics_service import DynamicsService
from app.services.gev_service import GevService
from app.services.gklt_service import GkltService
from app.services.mc_service import McService
from app.services.resampler_service import ResamplerService
from app.services.returns_service import ReturnsService, TiltedFilter

logger = logging.getLogger(__name__)

# ошибки метода: эксперимент помечается неудачным, пакет продолжается
METHOD_ERRORS = (ExtinctionError, WeightOverflowError, ConvergenceError, InsufficientDataError)

MAX_CHUNK_POINTS = 5_000_000
GEV_CURVE_POINTS = 200
GEV_CURVE_FLOOR = 1e-8
COST_TOLERANCE = 0.05
STATIONARITY_ALPHA = 0.01


@dataclass(frozen=True)
class ExperimentTask:
    """Один эксперимент: номер k, значение C и индекс потока."""
    config: ExperimentConfig
    index: int
    stream_index: int
    C: Optional[float] = None


def _tilt(cfg: ExperimentConfig, C: float, form: WeightForm) -> TiltConfig:
    return TiltConfig(C=C, weight_form=form, tau=cfg.tau or cfg.T_f, T_f=cfg.T_f)


def _thresholds(cfg: ExperimentConfig) -> List[float]:
    return [float(a) for a in cfg.thresholds]


def _as_estimates(cfg: ExperimentConfig, gamma: np.ndarray) -> Dict[float, float]:
    return dict(zip(_thresholds(cfg), np.asarray(gamma, dtype=float).tolist()))


def _plain_run(task: ExperimentTask, streams: StreamFactory, record_segments: bool) -> EnsembleRun:
    cfg = task.config
    tilt = _tilt(cfg, 0.0, WeightForm.END_VALUE_DIFFERENCE)
    return ResamplerService.run_plain(cfg.system, cfg.observable, tilt, cfg.n_particles, streams,
                                      record_segments=record_segments)


def _observed_values(cfg: ExperimentConfig, run: EnsembleRun) -> np.ndarray:
    """φ(x_{T_f}) или максимум оконных средних для каждой траектории."""
    if cfg.target == Target.WINDOW_MAX:
        return GkltService.window_maxima(GkltService.backward_from_run(run), cfg.T)
    return run.final.end_observable.copy()


def _path_values(cfg: ExperimentConfig, path: np.ndarray) -> np.ndarray:
    if cfg.target == Target.WINDOW_MAX:
        return GkltService.window_averages_matrix(path, cfg.system.dt, cfg.T).max(axis=1)
    return path[:, -1].copy()


def _gpa_task(task: ExperimentTask, streams: StreamFactory, outcome: ExperimentOutcome) -> None:
    cfg = task.config
    tilt = _tilt(cfg, task.C, WeightForm.END_VALUE_DIFFERENCE)
    run = ResamplerService.run_gpa(cfg.system, cfg.observable, tilt, cfg.n_particles, streams)
    outcome.cost = run.cost
    pairs = ResamplerService.ranked_pairs_gpa(run)
    curve = ReturnsService.curve_from_ranked(pairs, Provenance.GPA, on_overflow="drop", label="gpa")
    curve.group = task.C
    curve.tilted_mean, curve.tilted_std = run.final.tilted_statistics()
    curve.block_length = cfg.T_f
    outcome.curves["gpa"] = curve
    if cfg.thresholds:
        gamma = ResamplerService.estimate_tail_gpa(run.final, run.ledger, cfg.observable, tilt, cfg.thresholds)
        outcome.estimates[f"gpa C={task.C:g}"] = _as_estimates(cfg, gamma)
    ancestors = ResamplerService.distinct_ancestors(run)
    outcome.diagnostics = {
        "log_z_sum": run.ledger.log_z_sum,
        "total_mass": pairs.total_mass,
        "min_distinct_ancestors": min(ancestors),
    }
    if cfg.save_ancestry:
        outcome.ancestry = run.ancestry.to_frame()


def _gklt_task(task: ExperimentTask, streams: StreamFactory, outcome: ExperimentOutcome) -> None:
    cfg = task.config
    tilt = _tilt(cfg, task.C, WeightForm.INTEGRATED_OBSERVABLE)
    run = GkltService.run_gklt(cfg.system, cfg.observable, tilt, cfg.n_particles, streams)
    outcome.cost = run.cost
    bts = GkltService.backward_from_run(run)
    if cfg.gklt_mode == GkltMode.PER_TRAJECTORY_MAX:
        pairs = GkltService.estimate_per_trajectory_max(bts, run.ledger, tilt, cfg.T)
        curve = ReturnsService.curve_from_ranked(pairs, Provenance.GKLT, on_overflow="drop", label="gklt")
        outcome.diagnostics["total_mass"] = pairs.total_mass
    else:
        gamma = GkltService.estimate_tail_fixed_thresholds(bts, run.ledger, tilt, cfg.T, cfg.thresholds)
        curve = ReturnsService.curve_from_thresholds(cfg.thresholds, gamma, Provenance.GKLT, label="gklt")
    maxima = GkltService.window_maxima(bts, cfg.T)
    curve.group = task.C
    curve.tilted_mean, curve.tilted_std = float(np.mean(maxima)), float(np.std(maxima))
    curve.block_length = cfg.T_f
    outcome.curves["gklt"] = curve
    if cfg.thresholds:
        gamma = GkltService.estimate_tail_fixed_thresholds(bts, run.ledger, tilt, cfg.T, cfg.thresholds)
        outcome.estimates[f"gklt C={task.C:g}"] = _as_estimates(cfg, gamma)
    outcome.diagnostics.update({
        "log_z_sum": run.ledger.log_z_sum,
        "max_boundary_gap": GkltService.continuity_audit(bts),
        "min_distinct_ancestors": min(ResamplerService.distinct_ancestors(run)),
    })
    if cfg.save_ancestry:
        outcome.ancestry = run.ancestry.to_frame()


def _mc_task(task: ExperimentTask, streams: StreamFactory, outcome: ExperimentOutcome) -> None:
    cfg = task.config
    run = _plain_run(task, streams, record_segments=cfg.target == Target.WINDOW_MAX)
    outcome.cost = run.cost
    values = _observed_values(cfg, run)
    outcome.curves["mc"] = ReturnsService.curve_from_block_maxima(values, cfg.T_f, Provenance.MC, label="mc")
    if cfg.thresholds:
        outcome.estimates["mc"] = _as_estimates(cfg, McService.tail_curve_mc(values, cfg.thresholds))


def _gev_grid(fit, source: np.ndarray) -> np.ndarray:
    """Пороги от медианы данных до уровня с вероятностью превышения GEV_CURVE_FLOOR."""
    lower = float(np.median(source))
    far = GevService.gev_quantile(fit.params, float(np.exp(fit.block_size * np.log1p(-GEV_CURVE_FLOOR))))
    upper = max(float(far), float(np.max(source)))
    return np.linspace(lower, upper, GEV_CURVE_POINTS)


def _gev_task(task: ExperimentTask, streams: StreamFactory, outcome: ExperimentOutcome) -> None:
    cfg = task.config
    per_step = cfg.layout == BlockLayout.PER_TIME_STEP_ACROSS_TRAJECTORIES
    run = _plain_run(task, streams, record_segments=per_step or cfg.target == Target.WINDOW_MAX)
    outcome.cost = run.cost
    if per_step:
        source = np.vstack([bt.series for bt in GkltService.backward_from_run(run)])
        if cfg.target == Target.WINDOW_MAX:
            # окно j каждой траектории играет роль момента j
            source = GkltService.window_averages_matrix(source, run.dt, cfg.T)
    else:
        source = _observed_values(cfg, run)
    for m in cfg.block_sizes:
        label = f"gev m={m}"
        maxima = GevService.block_maxima(source, m, cfg.layout)
        fit = GevService.fit_gev_mle(maxima, profile_ci=cfg.profile_ci)
        curve = GevService.return_curve(fit, _gev_grid(fit, source), label=label)
        curve.block_length = cfg.T_f
        outcome.curves[label] = curve
        outcome.fits[label] = GevService.fit_to_dict(fit)
        if cfg.thresholds:
            gamma = np.atleast_1d(GevService.tail_from_gev(fit, np.asarray(cfg.thresholds, dtype=float)))
            outcome.estimates[label] = _as_estimates(cfg, gamma)


_RUNNERS: Dict[Method, Callable[[ExperimentTask, StreamFactory, ExperimentOutcome], None]] = {
    Method.GPA: _gpa_task,
    Method.GKLT: _gklt_task,
    Method.MC: _mc_task,
    Method.GEV: _gev_task,
}


def _run_task(task: ExperimentTask) -> ExperimentOutcome:
    """Выполняет один эксперимент; функция уровня модуля для пула процессов."""
    cfg = task.config
    streams = StreamFactory(cfg.seed, task.stream_index)
    outcome = ExperimentOutcome(index=task.index, stream_index=task.stream_index,
                                method=cfg.method, C=task.C)
    try:
        _RUNNERS[cfg.method](task, streams, outcome)
    except METHOD_ERRORS as e:
        epoch = getattr(e, "epoch", None)
        tilt = _tilt(cfg, task.C or 0.0, WeightForm.END_VALUE_DIFFERENCE)
        outcome.cost = (cfg.n_particles * epoch * tilt.tau / cfg.T_f
                        if epoch is not None else float(cfg.n_particles))
        outcome.failure = f"{type(e).__name__}: {e}"
        outcome.curves, outcome.estimates, outcome.fits = {}, {}, {}
        logger.error(f"{cfg.name}: experiment {task.index} (C={task.C}) failed: {outcome.failure}")
    return outcome


def _tasks(cfg: ExperimentConfig) -> List[ExperimentTask]:
    if cfg.method in (Method.GPA, Method.GKLT):
        return [ExperimentTask(cfg, k, ci * cfg.K + k, float(C))
                for ci, C in enumerate(cfg.C) for k in range(cfg.K)]
    return [ExperimentTask(cfg, k, k) for k in range(cfg.K)]


def _resolve_out(cfg: ExperimentConfig, out_dir: Optional[Path]) -> Path:
    if out_dir is not None:
        return Path(out_dir)
    if cfg.output_dir is not None:
        return Path(cfg.output_dir)
    return settings.resolve_output_dir() / cfg.name


def _validate(cfg: ExperimentConfig, extra: Sequence[str] = ()) -> None:
    problems = cfg.problems() + list(extra)
    if problems:
        logger.error(f"Invalid configuration {cfg.name}: {len(problems)} problem(s)")
        raise ConfigurationError(f"invalid configuration {cfg.name}: " + "; ".join(problems), problems)


def _stationarity(block_means: np.ndarray) -> Optional[float]:
    """p-значение теста на линейный тренд средних по блокам."""
    if block_means.shape[0] < 3 or np.ptp(block_means) == 0:
        return None
    return float(linregress(np.arange(block_means.shape[0]), block_means).pvalue)


class ExperimentService:
    """Запуск экспериментов, контрольных прогонов и сравнение методов."""

    @staticmethod
    def reference_probabilities(cfg: ExperimentConfig, thresholds: Sequence[float]) -> Dict[float, float]:
        """
        Эталонные γ(a): из кривой контрольного прогона, если она указана,
        иначе аналитический хвост стационарного OU для конечного значения.
        """
        a = [float(x) for x in thresholds]
        if not a:
            return {}
        if cfg.reference_curve is not None:
            curve = storage.read_curve(cfg.reference_curve)
            r = ReturnsService.interpolate_log_return(curve, a)
            with np.errstate(invalid="ignore"):
                p = -np.expm1(-1.0 / r)
            missing = [x for x, v in zip(a, p) if not np.isfinite(v)]
            if missing:
                logger.warning(f"Reference curve does not cover thresholds {missing}")
            return {x: float(v) for x, v in zip(a, p) if np.isfinite(v)}
        if (cfg.system.kind == SystemKind.OU and cfg.target == Target.END_VALUE
                and cfg.observable.kind == ObservableKind.POSITION):
            variance = DynamicsService.stationary_variance(cfg.system)
            return {x: float(McService.gaussian_tail(x, 0.0, variance)) for x in a}
        logger.warning(f"{cfg.name}: no reference probabilities; relative errors are not computed")
        return {}

    @staticmethod
    def summarize(cfg: ExperimentConfig, outcomes: List[ExperimentOutcome]) -> ResultBundle:
        """Средние кривые, таблица ошибок и журнал стоимости по исходам экспериментов."""
        ledger = CostLedger()
        for o in outcomes:
            ledger.add(cfg.method.value, o.cost)
        succeeded = [o for o in outcomes if not o.failed]

        grouped: "OrderedDict[str, List[ReturnCurve]]" = OrderedDict()
        for o in succeeded:
            for label, curve in o.curves.items():
                grouped.setdefault(label, []).append(curve)
        tilted = TiltedFilter() if cfg.tilted_filter and cfg.method in (Method.GPA, Method.GKLT) else None
        average = (ReturnsService.average_on_return_times if cfg.averaging == AveragingGrid.RETURN_TIME
                   else ReturnsService.average_curves)
        averaged = {label: average(curves, tilted_filter=tilted) for label, curves in grouped.items()}

        reference = ExperimentService.reference_probabilities(cfg, cfg.thresholds)
        estimates: "OrderedDict[str, Dict[float, List[float]]]" = OrderedDict()
        for o in succeeded:
            for label, values in o.estimates.items():
                per = estimates.setdefault(label, {})
                for a, gamma in values.items():
                    per.setdefault(a, []).append(gamma)
        reports = []
        if reference:
            for label, per in estimates.items():
                if min(len(v) for v in per.values()) < 2:
                    logger.warning(f"{cfg.name}: {label} has fewer than 2 experiments; no relative error")
                    continue
                reports.append(McService.rel_err_report(label, per, reference))

        bundle = ResultBundle(config=cfg, outcomes=outcomes, averaged=averaged, rel_err=reports,
                              ledger=ledger, reference=reference)
        failed = len(outcomes) - len(succeeded)
        if failed:
            logger.warning(f"{cfg.name}: {failed} of {len(outcomes)} experiments failed")
        logger.info(f"{cfg.name}: cost {ledger.total:.6g} (planned {cfg.planned_cost():.6g}), "
                    f"curves {list(averaged)}")
        return bundle

    @staticmethod
    def run_experiment(cfg: ExperimentConfig, workers: Optional[int] = None,
                       out_dir: Optional[Path] = None, write: bool = True) -> ResultBundle:
        """
        K экспериментов метода для каждого C; эксперимент с номером k при
        константе с индексом i использует поток i·K + k.
        """
        extra = ["control runs are started with run_control"] if cfg.method == Method.CONTROL else []
        _validate(cfg, extra)
        tasks = _tasks(cfg)
        logger.info(f"Experiment {cfg.name} started: method={cfg.method.value}, runs={len(tasks)}, "
                    f"seed={cfg.seed}, planned cost {cfg.planned_cost():.6g}")
        outcomes = map_ordered(_run_task, tasks, workers)
        bundle = ExperimentService.summarize(cfg, outcomes)
        if write:
            ExperimentService.write_bundle(bundle, _resolve_out(cfg, out_dir))
        if bundle.all_failed:
            logger.error(f"Experiment {cfg.name}: all {len(outcomes)} experiments failed")
        else:
            logger.info(f"Experiment {cfg.name} finished")
        return bundle

    @staticmethod
    def write_bundle(bundle: ResultBundle, out_dir: Path) -> Path:
        cfg = bundle.config
        out = storage.ensure_dir(out_dir)
        storage.write_text(cfg.to_yaml(), out / "config.yaml")
        storage.write_curves(bundle.averaged.values(), out / "curve.csv")

        curves, extra = [], []
        for o in bundle.outcomes:
            for curve in o.curves.values():
                curves.append(curve)
                extra.append({"experiment": o.index, "C": o.C})
        storage.write_curves(curves, out / "curves_experiments.csv", extra)
        storage.write_frame(bundle.estimates_frame(), out / "estimates.csv")
        storage.write_frame(bundle.rel_err_frame(), out / "rel_err.csv")
        storage.write_rows(bundle.ledger.rows(), out / "ledger.csv", columns=["method", "cost", "experiments"])
        storage.write_json({f"exp_{o.stream_index:04d}": o.fits for o in bundle.outcomes if o.fits},
                           out / "fits.json")
        storage.write_json(bundle.failures, out / "failures.json")
        for o in bundle.outcomes:
            if o.ancestry is not None:
                storage.write_frame(o.ancestry, out / "ancestry" / f"exp_{o.stream_index:04d}.csv")

        storage.write_json({
            "name": cfg.name,
            "method": cfg.method.value,
            "seed": cfg.seed,
            "experiments": len(bundle.outcomes),
            "failed": len(bundle.failures),
            "planned_cost": cfg.planned_cost(),
            "cost": bundle.ledger.total,
            "max_return_time": bundle.max_return_times(),
            "reference": {f"{a:g}": g for a, g in bundle.reference.items()},
            "diagnostics": [{"experiment": o.index, "C": o.C, **o.diagnostics}
                            for o in bundle.outcomes if o.diagnostics],
        }, out / "summary.json")
        bundle.output_dir = out
        return out

    @staticmethod
    def load_bundle(path: Path) -> ResultBundle:
        """Пакет из каталога результатов (для сравнения уже выполненных запусков)."""
        path = Path(path)
        cfg = ExperimentConfig.from_yaml((path / "config.yaml").read_text(encoding="utf-8"))
        averaged: Dict[str, ReturnCurve] = {}
        frame = pd.read_csv(path / "curve.csv")
        for label, rows in frame.groupby("label", sort=False, dropna=False):
            curve = ReturnCurve.from_frame(rows.drop(columns="label"))
            curve.label = str(label)
            averaged[str(label)] = curve
        ledger = CostLedger()
        for row in pd.read_csv(path / "ledger.csv").itertuples():
            ledger.add(str(row.method), float(row.cost), int(row.experiments))
        rel = pd.read_csv(path / "rel_err.csv")
        reports = ResultBundle.reports_from_frame(rel) if not rel.empty else []
        return ResultBundle(config=cfg, averaged=averaged, rel_err=reports, ledger=ledger, output_dir=path)

    @staticmethod
    def _control_batch(cfg: ExperimentConfig, streams: StreamFactory,
                       archive: Optional[Path]) -> Tuple[np.ndarray, np.ndarray, float, List[Path]]:
        """Независимые траектории длины T_f; один блок — одна траектория."""
        spec = cfg.system
        steps = spec.steps_for(cfg.T_f)
        total = int(round(cfg.budget))
        if total < 1:
            raise ConfigurationError("control budget must cover at least one trajectory")
        chunk = max(1, min(settings.batch_chunk_size, MAX_CHUNK_POINTS // (steps + 1)))
        values = np.empty(total)
        for c, start in enumerate(range(0, total, chunk)):
            count = min(chunk, total - start)
            rng = streams.batch(c)
            x0 = DynamicsService.sample_initial_states(spec, count, rng)
            noise = rng.standard_normal((steps, count)) if spec.kind == SystemKind.OU else None
            _, path = DynamicsService.integrate(x0, spec, steps, cfg.observable, noise)
            values[start:start + count] = _path_values(cfg, path)
            logger.debug(f"control chunk {c}: {start + count}/{total} trajectories")
        paths = [storage.write_array(values, archive / "maxima.npy")] if archive is not None else []
        return values, values, float(total), paths

    @staticmethod
    def _control_long(cfg: ExperimentConfig, streams: StreamFactory,
                      archive: Optional[Path]) -> Tuple[np.ndarray, np.ndarray, float, List[Path]]:
        """
        Одна длинная траектория, прогоняемая кусками по целому числу блоков ΔT.

        Ряд — средние по окнам T (window_max) или значения φ с шагом T
        (или T_f, если T не задано); ряд сбрасывается в архив каждые
        archive_flush_chunks кусков.
        """
        spec = cfg.system
        unit = cfg.T if cfg.target == Target.WINDOW_MAX else (cfg.T or cfg.T_f)
        unit_steps = spec.steps_for(unit)
        block_steps = spec.steps_for(cfg.block_length)
        per_block = block_steps // unit_steps
        n_blocks = int(cfg.budget * cfg.T_f / cfg.block_length + 1e-9)
        if n_blocks < 1:
            raise ConfigurationError("control budget is shorter than one block")
        chunk_blocks = max(1, min(settings.batch_chunk_size, MAX_CHUNK_POINTS // block_steps))

        x = DynamicsService.sample_initial_states(spec, 1, streams.initial())
        maxima, means, buffer, paths = [], [], [], []
        for c, start in enumerate(range(0, n_blocks, chunk_blocks)):
            blocks = min(chunk_blocks, n_blocks - start)
            steps = blocks * block_steps
            noise = streams.batch(c).standard_normal((steps, 1)) if spec.kind == SystemKind.OU else None
            x, path = DynamicsService.integrate(x, spec, steps, cfg.observable, noise)
            if cfg.target == Target.WINDOW_MAX:
                series = GkltService.window_averages_matrix(path, spec.dt, cfg.T)[0]
            else:
                series = path[0, unit_steps::unit_steps]
            grouped = series.reshape(blocks, per_block)
            maxima.append(grouped.max(axis=1))
            means.append(grouped.mean(axis=1))
            if archive is not None:
                buffer.append(series)
                if len(buffer) >= settings.archive_flush_chunks:
                    paths.append(storage.write_array(np.concatenate(buffer),
                                                     archive / f"series_{len(paths):05d}.npy"))
                    buffer = []
            logger.debug(f"control chunk {c}: {start + blocks}/{n_blocks} blocks")
        if archive is not None and buffer:
            paths.append(storage.write_array(np.concatenate(buffer), archive / f"series_{len(paths):05d}.npy"))
        maxima = np.concatenate(maxima)
        if archive is not None:
            paths.append(storage.write_array(maxima, archive / "maxima.npy"))
        return maxima, np.concatenate(means), n_blocks * cfg.block_length / cfg.T_f, paths

    @staticmethod
    def run_control(cfg: ExperimentConfig, budget: Optional[float] = None,
                    out_dir: Optional[Path] = None, write: bool = True) -> ControlResult:
        """Контрольный прогон заданной стоимости и его кривая возврата."""
        if budget is not None:
            cfg = cfg.model_copy(update={"budget": budget})
        extra = [] if cfg.method == Method.CONTROL else [f"run_control needs method=control, got {cfg.method.value}"]
        _validate(cfg, extra)
        out = _resolve_out(cfg, out_dir) if write else None
        archive = out / "archive" if out is not None else None
        streams = StreamFactory(cfg.seed, 0)
        logger.info(f"Control {cfg.name} started: mode={cfg.control_mode.value}, budget {cfg.budget:.6g}")

        if cfg.control_mode == ControlMode.BATCH:
            maxima, means, cost, paths = ExperimentService._control_batch(cfg, streams, archive)
            block_length = cfg.T_f
        else:
            maxima, means, cost, paths = ExperimentService._control_long(cfg, streams, archive)
            block_length = cfg.block_length

        curve = ReturnsService.curve_from_block_maxima(maxima, block_length, Provenance.CONTROL, label="control")
        pvalue = _stationarity(means)
        if pvalue is not None and pvalue < STATIONARITY_ALPHA:
            logger.warning(f"Control {cfg.name}: block means show a trend (p={pvalue:.3g})")
        result = ControlResult(config=cfg, curve=curve, maxima=maxima, mode=cfg.control_mode, cost=cost,
                               block_length=block_length, archive_paths=paths,
                               series_mean=float(np.mean(means)), stationarity_pvalue=pvalue)
        if out is not None:
            ExperimentService.write_control(result, out)
        logger.info(f"Control {cfg.name} finished: {result.n_blocks} blocks, cost {cost:.6g}, "
                    f"max return time {curve.max_return_time():.6g}")
        return result

    @staticmethod
    def write_control(result: ControlResult, out_dir: Path) -> Path:
        out = storage.ensure_dir(out_dir)
        cfg = result.config
        storage.write_text(cfg.to_yaml(), out / "config.yaml")
        storage.write_curves([result.curve], out / "curve.csv")
        ledger = CostLedger()
        ledger.add(Method.CONTROL.value, result.cost)
        storage.write_rows(ledger.rows(), out / "ledger.csv", columns=["method", "cost", "experiments"])
        storage.write_json({
            "name": cfg.name,
            "mode": result.mode.value,
            "seed": cfg.seed,
            "cost": result.cost,
            "blocks": result.n_blocks,
            "block_length": result.block_length,
            "series_mean": result.series_mean,
            "stationarity_pvalue": result.stationarity_pvalue,
            "max_return_time": result.curve.max_return_time(),
            "archive": [p.name for p in result.archive_paths],
        }, out / "summary.json")
        result.output_dir = out
        return out

    @staticmethod
    def compare_methods(bundles: Sequence[ResultBundle], control: Optional[ReturnCurve] = None,
                        tolerance: float = COST_TOLERANCE, out_dir: Optional[Path] = None) -> ComparisonReport:
        """
        Сравнение методов при равной стоимости: наложенные кривые, отклонение
        от контрольной кривой (или от первой кривой первого пакета), ошибки.
        """
        if len(bundles) < 2:
            raise InsufficientDataError(2, len(bundles))
        first = bundles[0].config
        for b in bundles[1:]:
            c = b.config
            if (c.observable != first.observable or c.target != first.target
                    or c.system.kind != first.system.kind):
                raise ConfigurationError(f"cannot compare {c.name} with {first.name}: observables differ")

        keys = [b.config.method.value for b in bundles]
        if len(set(keys)) < len(keys):
            keys = [f"{i}:{b.config.name}:{b.config.method.value}" for i, b in enumerate(bundles)]
        costs = {key: b.ledger.total for key, b in zip(keys, bundles)}
        high, low = max(costs.values()), min(costs.values())
        if high <= 0 or (high - low) / high > tolerance:
            raise CostMismatchError(f"costs differ by more than {tolerance:.0%}: {costs}")

        named: List[Tuple[str, str, ReturnCurve]] = []
        for key, b in zip(keys, bundles):
            for label, curve in b.averaged.items():
                named.append((key, key if label == key else f"{key}/{label}", curve))
        if control is not None:
            named.append(("control", "control", control))
            reference_label, reference = "control", control
        elif named:
            reference_label, reference = named[0][1], named[0][2]
        else:
            raise InsufficientDataError(1, 0)

        overlay = []
        for method, name, curve in named:
            frame = curve.to_frame()
            frame.insert(0, "curve", name)
            frame.insert(0, "method", method)
            overlay.append(frame)
        overlay = pd.concat(overlay, ignore_index=True)

        grid = np.unique(np.concatenate([c.thresholds for _, _, c in named]))[::-1]
        r_ref = ReturnsService.interpolate_log_return(reference, grid)
        deviation = []
        for method, name, curve in named:
            r = ReturnsService.interpolate_log_return(curve, grid)
            ok = np.isfinite(r) & np.isfinite(r_ref)
            for a, ri, rr in zip(grid[ok], r[ok], r_ref[ok]):
                deviation.append({"method": method, "curve": name, "threshold": a, "return_time": ri,
                                  "reference_return_time": rr, "log10_ratio": float(np.log10(ri / rr))})
        deviation = pd.DataFrame(deviation, columns=["method", "curve", "threshold", "return_time",
                                                     "reference_return_time", "log10_ratio"])

        rel = []
        for key, b in zip(keys, bundles):
            frame = b.rel_err_frame()
            frame.insert(0, "bundle", key)
            rel.append(frame)
        rel_err = pd.concat(rel, ignore_index=True)

        resolved = pd.DataFrame([
            {"method": method, "curve": name, "cost": costs.get(method, float("nan")),
             "max_return_time": curve.max_return_time(),
             "max_threshold": float(np.max(curve.thresholds)) if len(curve) else float("nan")}
            for method, name, curve in named
        ], columns=["method", "curve", "cost", "max_return_time", "max_threshold"])

        report = ComparisonReport(overlay=overlay, deviation=deviation, rel_err=rel_err,
                                  resolved=resolved, costs=costs, reference_label=reference_label)
        logger.info(f"Compared {len(bundles)} methods at cost ~{high:.6g}; "
                    f"longest return time resolved by {report.longest()}")
        if out_dir is not None:
            ExperimentService.write_comparison(report, out_dir)
        return report

    @staticmethod
    def write_comparison(report: ComparisonReport, out_dir: Path) -> Path:
        out = storage.ensure_dir(out_dir)
        storage.write_frame(report.overlay, out / "overlay.csv")
        storage.write_frame(report.deviation, out / "deviation.csv")
        storage.write_frame(report.rel_err, out / "rel_err.csv")
        storage.write_frame(report.resolved, out / "resolved.csv")
        storage.write_json({"costs": report.costs, "reference": report.reference_label,
                            "longest": report.longest()}, out / "comparison.json")
        return out
