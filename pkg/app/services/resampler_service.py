"""
app/services/resampler_service.py
Клонирование/уничтожение частиц с весами, нормировки Z_i, журнал предков
и оценка хвоста по конечному ансамблю.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple, Union
import numpy as np
from scipy.integrate import trapezoid

from app.core.exceptions import (
    ConfigurationError,
    ExtinctionError,
    InsufficientDataError,
    WeightOverflowError,
)
from app.core.rng import StreamFactory
from app.models.curve import RankedPairs
from app.models.ensemble import (
    AncestryLog,
    AncestryRecord,
    Ensemble,
    EnsembleRun,
    EpochWeights,
    WeightLedger,
)
from app.models.trajectory import State
from app.schemas.system import Observable, SystemKind, SystemSpec
from app.schemas.tilt import TiltConfig, WeightForm
from app.services.dynamics_service import DynamicsService

logger = logging.getLogger(__name__)

# log(максимальное конечное float64)
MAX_EXPONENT = float(np.log(np.finfo(float).max))

InitialStates = Union[np.ndarray, Sequence[State], None]


def _as_array(init: InitialStates, spec: SystemSpec, n: int, streams: StreamFactory) -> np.ndarray:
    if init is None:
        return DynamicsService.sample_initial_states(spec, n, streams.initial())
    if isinstance(init, np.ndarray):
        values = np.atleast_2d(np.asarray(init, dtype=float))
        if values.shape[0] != n and values.shape[1] == n and values.shape[0] == spec.dim:
            values = values.T
    else:
        values = np.vstack([s.values for s in init])
    if values.shape != (n, spec.dim):
        raise ConfigurationError(f"initial states have shape {values.shape}, expected {(n, spec.dim)}")
    return values


def _normalize(log_w: np.ndarray, epoch: int, form: WeightForm) -> EpochWeights:
    max_exponent = float(np.max(log_w)) if log_w.size else 0.0
    if max_exponent > MAX_EXPONENT:
        logger.error(f"Weight overflow at epoch {epoch}: exponent {max_exponent:.4g}")
        raise WeightOverflowError(max_exponent, epoch)
    raw = np.exp(log_w)
    z = float(np.mean(raw))
    return EpochWeights(epoch=epoch, raw=raw, z=z, normalized=raw / z, form=form)


class ResamplerService:
    """Алгоритм генеалогического анализа частиц (GPA)."""

    @staticmethod
    def compute_weights_end_value(ensemble: Ensemble, obs: Observable, cfg: TiltConfig) -> EpochWeights:
        """w_n = exp(C·(φ(x_{t_i}) − φ(x_{t_{i−1}}))), Z_i = mean(w), W = w/Z."""
        log_w = cfg.C * (ensemble.end_observable - ensemble.start_observable)
        return _normalize(log_w, ensemble.epoch, WeightForm.END_VALUE_DIFFERENCE)

    @staticmethod
    def compute_weights_integrated(ensemble: Ensemble, obs: Observable, cfg: TiltConfig) -> EpochWeights:
        """w_n = exp(C·∫φ dt) по эпохе."""
        log_w = cfg.C * ensemble.epoch_integral
        return _normalize(log_w, ensemble.epoch, WeightForm.INTEGRATED_OBSERVABLE)

    @staticmethod
    def clone_kill(
        ensemble: Ensemble,
        weights: EpochWeights,
        rng: np.random.Generator,
        uniforms: Optional[np.ndarray] = None,
    ) -> Tuple[Ensemble, AncestryRecord]:
        """
        c_n = ⌊W_n + u_n⌋ копий каждой частицы, затем коррекция до N0.

        Копии одного родителя идут подряд; первая — оригинал, остальные — клоны.
        rng используется для u_n (если они не переданы) и для выбора частиц
        при коррекции ΔN.
        """
        size = ensemble.size
        u = rng.random(size) if uniforms is None else np.asarray(uniforms, dtype=float)
        copies = np.floor(weights.normalized + u).astype(np.int64)
        total = int(copies.sum())
        if total == 0:
            logger.error(f"Extinction at epoch {ensemble.epoch}")
            raise ExtinctionError(ensemble.epoch)

        parents = np.repeat(np.arange(size, dtype=np.int64), copies)
        delta = total - ensemble.n0
        if delta > 0:
            killed = rng.choice(total, size=delta, replace=False)
            parents = np.delete(parents, killed)
        elif delta < 0:
            extra = parents[rng.integers(0, total, size=-delta)]
            parents = np.sort(np.concatenate([parents, extra]), kind="stable")

        is_clone = np.zeros(parents.shape[0], dtype=bool)
        is_clone[1:] = parents[1:] == parents[:-1]
        logger.debug(
            f"epoch {ensemble.epoch}: Z={weights.z:.6g}, dN={delta}, "
            f"ancestors={np.unique(parents).size}/{ensemble.n0}"
        )
        record = AncestryRecord(
            epoch=ensemble.epoch,
            parents=parents,
            raw_weights=weights.raw,
            z=weights.z,
            is_clone=is_clone,
            perturbation=np.zeros(parents.shape[0]),
        )
        return ensemble.select(parents, is_clone), record

    @staticmethod
    def run_ensemble(
        spec: SystemSpec,
        obs: Observable,
        cfg: TiltConfig,
        n: int,
        streams: StreamFactory,
        init: InitialStates = None,
        resample: bool = True,
        record_segments: bool = False,
    ) -> EnsembleRun:
        """
        Цикл эпох: интегрирование, после него веса и клонирование.

        При resample=False частицы не клонируются (обычный MC на тех же потоках),
        а журнал заполняется тождественными родителями и Z_i = 1.
        """
        if n < 1:
            raise ConfigurationError("ensemble needs at least one particle")
        DynamicsService.check_observable(spec, obs)
        steps = spec.steps_for(cfg.tau)
        if steps is None:
            raise ConfigurationError(f"tau={cfg.tau} is not a multiple of dt={spec.dt}")

        values = _as_array(init, spec, n, streams)
        ensemble = Ensemble.initial(values, DynamicsService.observe(values, obs))
        ledger = WeightLedger()
        ancestry = AncestryLog()
        segments: Dict[int, np.ndarray] = {}
        perturb = spec.kind == SystemKind.LORENZ96 and spec.clone_epsilon > 0
        weigh = (ResamplerService.compute_weights_integrated
                 if cfg.weight_form == WeightForm.INTEGRATED_OBSERVABLE
                 else ResamplerService.compute_weights_end_value)

        for epoch in range(1, cfg.n_epochs + 1):
            generators = streams.particles(epoch, n)
            x = ensemble.values
            if perturb and epoch > 1 and ensemble.is_clone.any():
                norms = np.zeros(n)
                for slot in np.flatnonzero(ensemble.is_clone):
                    moved = DynamicsService.perturb_clone(
                        State(values=x[slot]), spec, generators[slot].uniform(-1.0, 1.0, spec.dim)
                    ).values
                    norms[slot] = float(np.max(np.abs(moved - x[slot])))
                    x[slot] = moved
                ancestry.set_perturbation(epoch - 1, norms)

            noise = None
            if spec.kind == SystemKind.OU:
                noise = np.stack([g.standard_normal(steps) for g in generators], axis=1)
            final, path = DynamicsService.integrate(x, spec, steps, obs, noise)

            ensemble.values = final
            ensemble.epoch = epoch
            ensemble.start_observable = path[:, 0]
            ensemble.end_observable = path[:, -1]
            ensemble.epoch_integral = trapezoid(path, dx=spec.dt, axis=1)
            ensemble.cumulative_integral = ensemble.cumulative_integral + ensemble.epoch_integral
            if record_segments:
                segments[epoch] = path

            uniforms = np.array([g.random() for g in generators])
            if resample:
                weights = weigh(ensemble, obs, cfg)
                ledger.append(weights)
                ensemble, record = ResamplerService.clone_kill(
                    ensemble, weights, streams.selection(epoch), uniforms
                )
            else:
                ones = np.ones(n)
                ledger.append(EpochWeights(epoch=epoch, raw=ones, z=1.0, normalized=ones, form=cfg.weight_form))
                identity = np.arange(n, dtype=np.int64)
                record = AncestryRecord(epoch=epoch, parents=identity, raw_weights=ones, z=1.0,
                                        is_clone=np.zeros(n, dtype=bool), perturbation=np.zeros(n))
                ensemble.parent = identity
                ensemble.is_clone = record.is_clone
            ancestry.add(record)

        cost = n * cfg.n_epochs * cfg.tau / cfg.T_f
        return EnsembleRun(final=ensemble, ledger=ledger, ancestry=ancestry, segments=segments,
                           tilt=cfg, dt=spec.dt, cost=cost)

    @staticmethod
    def run_gpa(spec: SystemSpec, obs: Observable, cfg: TiltConfig, n: int,
                streams: StreamFactory, init: InitialStates = None,
                record_segments: bool = False) -> EnsembleRun:
        """GPA с весами по разности конечных значений."""
        if cfg.weight_form != WeightForm.END_VALUE_DIFFERENCE:
            raise ConfigurationError("run_gpa requires end-value-difference weights")
        run = ResamplerService.run_ensemble(spec, obs, cfg, n, streams, init,
                                            resample=True, record_segments=record_segments)
        logger.info(f"GPA run finished: N={n}, C={cfg.C}, epochs={cfg.n_epochs}, "
                    f"log prod Z={run.ledger.log_z_sum:.6g}")
        return run

    @staticmethod
    def run_plain(spec: SystemSpec, obs: Observable, cfg: TiltConfig, n: int,
                  streams: StreamFactory, init: InitialStates = None,
                  record_segments: bool = False) -> EnsembleRun:
        """Те же эпохи и потоки, что у run_gpa, без клонирования."""
        return ResamplerService.run_ensemble(spec, obs, cfg, n, streams, init,
                                             resample=False, record_segments=record_segments)

    @staticmethod
    def log_correction(final: Ensemble, ledger: WeightLedger, cfg: TiltConfig) -> np.ndarray:
        """C·φ₀ − C·φ_end + log Π Z_i для каждой конечной частицы."""
        return cfg.C * final.initial_observable - cfg.C * final.end_observable + ledger.log_z_sum

    @staticmethod
    def estimate_tail_gpa(final: Ensemble, ledger: WeightLedger, obs: Observable,
                          cfg: TiltConfig, thresholds: Sequence[float]) -> np.ndarray:
        """γ̂(a) = (1/N)·Σ 1{φ_end > a}·e^{Cφ₀}·e^{−Cφ_end}·Π Z_i для каждого a."""
        if final.size == 0:
            raise InsufficientDataError(1, 0)
        factors = np.exp(ResamplerService.log_correction(final, ledger, cfg))
        above = final.end_observable[None, :] > np.asarray(thresholds, dtype=float)[:, None]
        return np.sum(np.where(above, factors[None, :], 0.0), axis=1) / final.size

    @staticmethod
    def ranked_pairs_gpa(run: EnsembleRun) -> RankedPairs:
        """Пары (φ_end, p̂_n) для кривой возврата GPA."""
        final = run.final
        weights = np.exp(ResamplerService.log_correction(final, run.ledger, run.tilt)) / final.size
        return RankedPairs(thresholds=final.end_observable.copy(), weights=weights)

    @staticmethod
    def distinct_ancestors(run: EnsembleRun) -> List[int]:
        """Число различных родителей на каждой эпохе."""
        return [int(np.unique(run.ancestry.records[e].parents).size) for e in sorted(run.ancestry.records)]
