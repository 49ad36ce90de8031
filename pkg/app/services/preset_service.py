"""
app/services/preset_service.py
Готовые наборы экспериментов: метод выборки по значимости вместе с MC и GEV
при той же вычислительной стоимости, а также контрольные прогоны.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Union

import numpy as np

from app.config import settings
from app.core import storage
from app.models.result import ComparisonReport, ControlResult, ResultBundle
from app.schemas.experiment import (
    ControlMode,
    CostLedger,
    ExperimentConfig,
    GkltMode,
    Method,
    PresetSummary,
    Target,
)
from app.schemas.system import Observable, SystemSpec
from app.services.experiment_service import ExperimentService

logger = logging.getLogger(__name__)

RunResult = Union[ResultBundle, ControlResult]


def _grid(start: float, stop: float, step: float) -> List[float]:
    return [round(float(a), 10) for a in np.arange(start, stop + 0.5 * step, step)]


def _ou() -> SystemSpec:
    return SystemSpec.ou(lam=1.0, sigma=1.0, dt=settings.ou_dt)


def _l96() -> SystemSpec:
    return SystemSpec.lorenz96(sites=32, forcing=64.0, dt=settings.l96_dt, epsilon=1e-3)


@dataclass(frozen=True)
class Preset:
    """Набор конфигураций с общей стоимостью."""
    name: str
    description: str
    build: Callable[[], List[ExperimentConfig]] = field(repr=False)

    def configs(self, seed: Optional[int] = None, budget: Optional[float] = None) -> List[ExperimentConfig]:
        seed = settings.default_seed if seed is None else seed
        out = []
        for cfg in self.build():
            update = {"seed": seed}
            if cfg.method == Method.CONTROL and budget is not None:
                update["budget"] = budget
            out.append(cfg.model_copy(update=update))
        return out


def _suite(name: str, importance: Optional[ExperimentConfig], mc: Optional[dict], gev: Optional[dict],
           common: dict) -> List[ExperimentConfig]:
    """IS-метод + MC + GEV с общими системой, наблюдаемой и порогами."""
    suite = []
    if importance is not None:
        suite.append(importance)
    if mc is not None:
        suite.append(ExperimentConfig(name=f"{name}-mc", method=Method.MC, **common, **mc))
    if gev is not None:
        suite.append(ExperimentConfig(name=f"{name}-gev", method=Method.GEV, **common, **gev))
    return suite


def _window_control(name: str) -> ExperimentConfig:
    """Длинная траектория OU: максимум средних по окнам T=0.25 на блоках длины T_f."""
    return ExperimentConfig(name=name, method=Method.CONTROL, system=_ou(), target=Target.WINDOW_MAX,
                            T_f=2.0, T=0.25, delta_t=2.0, budget=1e6, control_mode=ControlMode.LONG)


def _matching_control(cfg: ExperimentConfig, controls: List[ControlResult]) -> Optional[ControlResult]:
    for control in controls:
        c = control.config
        if (c.target, c.observable, c.T, c.system.kind) == (cfg.target, cfg.observable, cfg.T, cfg.system.kind):
            return control
    return None


def _ou_gklt(mode: GkltMode, name: str, C: List[float], tau: float, K: int, mc_n: int, gev_n: int,
             gev_k: int) -> Callable[[], List[ExperimentConfig]]:
    def build() -> List[ExperimentConfig]:
        common = dict(system=_ou(), target=Target.WINDOW_MAX, T_f=2.0, T=0.25, tau=tau,
                      thresholds=_grid(0.5, 2.0, 0.25))
        gklt = ExperimentConfig(name=f"{name}-gklt", method=Method.GKLT, C=C, n_particles=100, K=K,
                                gklt_mode=mode, tilted_filter=True, **common)
        suite = _suite(name, gklt, dict(n_particles=mc_n, K=10),
                       dict(n_particles=gev_n, K=gev_k, block_sizes=[10, 100]), common)
        return [_window_control(f"{name}-control")] + suite
    return build


def _ou_gpa(name: str, C: List[float], n: int, K: int, thresholds: List[float],
            mc: Optional[dict], gev: Optional[dict]) -> Callable[[], List[ExperimentConfig]]:
    def build() -> List[ExperimentConfig]:
        common = dict(system=_ou(), target=Target.END_VALUE, T_f=2.0, tau=0.1, thresholds=thresholds)
        gpa = ExperimentConfig(name=f"{name}-gpa", method=Method.GPA, C=C, n_particles=n, K=K,
                               tilted_filter=True, **common)
        return _suite(name, gpa, mc, gev, common)
    return build


def _l96_gpa(name: str, n: int) -> Callable[[], List[ExperimentConfig]]:
    def build() -> List[ExperimentConfig]:
        common = dict(system=_l96(), observable=Observable.energy(), target=Target.END_VALUE,
                      T_f=1.28, tau=0.08)
        gpa = ExperimentConfig(name=f"{name}-gpa", method=Method.GPA, C=[3.2e-3, 6.4e-3],
                               n_particles=n, K=10, **common)
        return _suite(name, gpa, dict(n_particles=2 * n, K=10),
                      dict(n_particles=2 * n, K=10, block_sizes=[10, 100]), common)
    return build


def _control(name: str, system: Callable[[], SystemSpec], observable: Observable, T_f: float,
             mode: ControlMode) -> Callable[[], List[ExperimentConfig]]:
    def build() -> List[ExperimentConfig]:
        return [ExperimentConfig(name=name, method=Method.CONTROL, system=system(), observable=observable,
                                 T_f=T_f, budget=1e6, control_mode=mode)]
    return build


_PRESETS: Dict[str, Preset] = {p.name: p for p in [
    Preset("ou-gklt", "OU, GKLT at fixed thresholds of the window-averaged position, "
           "C=[0.01,0.03,0.05,0.07], N=100, K=100; cost 4e4",
           _ou_gklt(GkltMode.FIXED_THRESHOLDS, "ou-gklt", [0.01, 0.03, 0.05, 0.07], 0.1, 100, 4000, 4000, 10)),
    Preset("ou-gklt-max", "OU, GKLT return curve from per-trajectory window maxima; cost 4e4",
           _ou_gklt(GkltMode.PER_TRAJECTORY_MAX, "ou-gklt-max", [0.01, 0.03, 0.05, 0.07], 0.1, 100,
                    4000, 4000, 10)),
    Preset("ou-gpa-small", "OU end value, GPA C=[2,3,4], N=100, K=10; cost 3e3",
           _ou_gpa("ou-gpa-small", [2.0, 3.0, 4.0], 100, 10, _grid(1.0, 3.0, 0.25),
                   dict(n_particles=300, K=10), dict(n_particles=3000, K=1, block_sizes=[10, 100]))),
    Preset("ou-gpa-wide", "OU end value, GPA C=1..10, N=100, K=30; cost 3e4",
           _ou_gpa("ou-gpa-wide", [float(c) for c in range(1, 11)], 100, 30, _grid(1.0, 4.0, 0.25),
                   dict(n_particles=1000, K=30), dict(n_particles=30000, K=1, block_sizes=[10, 100]))),
    Preset("ou-mean-re", "OU end value, mean deviation and relative error over thresholds, "
           "GPA C=[2,3,4], N=1000, K=100; cost 3e5",
           _ou_gpa("ou-mean-re", [2.0, 3.0, 4.0], 1000, 100, _grid(0.5, 4.0, 0.25),
                   dict(n_particles=3000, K=100), dict(n_particles=30000, K=10, block_sizes=[10, 100]))),
    Preset("ou-re", "OU end value at a=2, GPA C=4 versus MC and GEV, N=1000, K=100; cost 1e5",
           _ou_gpa("ou-re", [4.0], 1000, 100, [2.0, 2.5, 3.0, 3.5],
                   dict(n_particles=1000, K=100), dict(n_particles=10000, K=10, block_sizes=[10, 100]))),
    Preset("ou-re-spread", "OU end value, spread of GPA (C=4) and GEV estimates, N=1000, K=100; cost 1e5",
           _ou_gpa("ou-re-spread", [4.0], 1000, 100, _grid(1.5, 3.5, 0.25),
                   None, dict(n_particles=1000, K=100, block_sizes=[10, 100]))),
    Preset("l96-gpa-2000", "Lorenz '96 energy, GPA C=[3.2e-3,6.4e-3], N=2000, K=10; cost 4e4",
           _l96_gpa("l96-gpa-2000", 2000)),
    Preset("l96-gpa-5000", "Lorenz '96 energy, GPA C=[3.2e-3,6.4e-3], N=5000, K=10; cost 1e5",
           _l96_gpa("l96-gpa-5000", 5000)),
    Preset("ou-control", "OU end value, batch control of 1e6 independent trajectories",
           _control("ou-control", _ou, Observable.position(), 2.0, ControlMode.BATCH)),
    Preset("l96-control", "Lorenz '96 energy, one long trajectory of 1e6 T_f",
           _control("l96-control", _l96, Observable.energy(), 1.28, ControlMode.LONG)),
    Preset("ou-window-control", "OU window-averaged position, one long trajectory of 1e6 blocks of T_f",
           lambda: [_window_control("ou-window-control")]),
    Preset("ou-gklt-tau-window", "OU, GKLT with tau equal to the averaging window T=0.25, "
           "C=[0.03,0.05], N=100, K=100; cost 2e4",
           _ou_gklt(GkltMode.PER_TRAJECTORY_MAX, "ou-gklt-tau-window", [0.03, 0.05], 0.25, 100, 2000, 2000, 10)),
]}


class PresetService:
    """Каталог пресетов и их запуск."""

    @staticmethod
    def names() -> List[str]:
        return list(_PRESETS)

    @staticmethod
    def get(name: str, seed: Optional[int] = None, budget: Optional[float] = None) -> List[ExperimentConfig]:
        preset = _PRESETS.get(name)
        if preset is None:
            raise ValueError(f"Unknown preset: {name}")
        return preset.configs(seed=seed, budget=budget)

    @staticmethod
    def summary(name: str) -> PresetSummary:
        configs = PresetService.get(name)
        return PresetSummary(
            name=name,
            description=_PRESETS[name].description,
            methods=[c.method for c in configs],
            cost={c.name: c.planned_cost() for c in configs},
        )

    @staticmethod
    def list() -> List[PresetSummary]:
        return [PresetService.summary(name) for name in _PRESETS]

    @staticmethod
    def run_preset(name: str, seed: Optional[int] = None, workers: Optional[int] = None,
                   out_dir: Optional[Path] = None, budget: Optional[float] = None,
                   write: bool = True) -> Dict[str, RunResult]:
        """
        Запускает все конфигурации пресета в каталоги out_dir/<имя конфигурации>;
        при двух и более пакетах добавляет сравнение в out_dir/comparison.

        Контрольные прогоны идут первыми; сохранённая кривая контроля служит эталоном
        для остальных конфигураций с той же целью и наблюдаемой.
        """
        root = Path(out_dir) if out_dir is not None else settings.resolve_output_dir() / name
        results: Dict[str, RunResult] = {}
        controls: List[ControlResult] = []
        for cfg in PresetService.get(name, seed=seed, budget=budget):
            target = root / cfg.name
            if cfg.method == Method.CONTROL:
                control = ExperimentService.run_control(cfg, out_dir=target, write=write)
                results[cfg.name] = control
                controls.append(control)
                continue
            control = _matching_control(cfg, controls)
            if control is not None and control.output_dir is not None and cfg.reference_curve is None:
                cfg = cfg.model_copy(update={"reference_curve": control.output_dir / "curve.csv"})
                logger.info(f"{cfg.name}: reference probabilities from control {control.config.name}")
            results[cfg.name] = ExperimentService.run_experiment(cfg, workers=workers, out_dir=target,
                                                                 write=write)
        total = CostLedger()
        for control in controls:
            total.add(Method.CONTROL.value, control.cost)
        for bundle in (r for r in results.values() if isinstance(r, ResultBundle)):
            total = total.merge(bundle.ledger)
        logger.info(f"Preset {name}: total cost {total.total:.6g} over {len(results)} configurations")
        if write:
            storage.write_rows(total.rows(), root / "ledger.csv", columns=["method", "cost", "experiments"])
        bundles = [r for r in results.values() if isinstance(r, ResultBundle)]
        if len(bundles) >= 2:
            control = _matching_control(bundles[0].config, controls)
            report: ComparisonReport = ExperimentService.compare_methods(
                bundles, control=control.curve if control is not None else None,
                out_dir=root / "comparison" if write else None
            )
            logger.info(f"Preset {name}: longest return time resolved by {report.longest()}")
        return results
