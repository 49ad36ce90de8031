"""
app/services/gklt_service.py
Оценка редких событий для средних по времени: прогон с весами по интегралу
наблюдаемой, восстановление траекторий по предкам и две оценки хвоста.
"""
import logging
from typing import List, Optional, Sequence
import numpy as np
from scipy.integrate import trapezoid

from app.core.exceptions import (
    ConfigurationError,
    InsufficientDataError,
    LineageIntegrityError,
)
from app.core.rng import StreamFactory
from app.models.curve import RankedPairs
from app.models.ensemble import AncestryLog, EnsembleRun, WeightLedger
from app.models.trajectory import BackwardTrajectory, TimeAverageSeries
from app.schemas.system import Observable, SystemSpec
from app.schemas.tilt import TiltConfig, WeightForm
from app.services.resampler_service import InitialStates, ResamplerService

logger = logging.getLogger(__name__)

GRID_TOLERANCE = 1e-9


class GkltService:
    """Алгоритм GKLT."""

    @staticmethod
    def run_gklt(spec: SystemSpec, obs: Observable, cfg: TiltConfig, n: int,
                 streams: StreamFactory, init: InitialStates = None) -> EnsembleRun:
        """Прогон с весами exp(C·∫φ dt); сегменты всех эпох сохраняются."""
        if cfg.weight_form != WeightForm.INTEGRATED_OBSERVABLE:
            cfg = cfg.model_copy(update={"weight_form": WeightForm.INTEGRATED_OBSERVABLE})
        run = ResamplerService.run_ensemble(spec, obs, cfg, n, streams, init,
                                            resample=True, record_segments=True)
        logger.info(f"GKLT run finished: N={n}, C={cfg.C}, epochs={cfg.n_epochs}, "
                    f"log prod Z={run.ledger.log_z_sum:.6g}")
        return run

    @staticmethod
    def reconstruct_backward(ancestry: AncestryLog, segments: dict, dt: float) -> List[BackwardTrajectory]:
        """
        Склеивает N траекторий от последней эпохи к первой.

        segments[i] — значения φ формы (N, steps + 1) частиц эпохи i (до клонирования).
        """
        if not segments:
            raise InsufficientDataError(1, 0)
        epochs = sorted(segments)
        last = epochs[-1]
        if epochs != list(range(1, last + 1)):
            missing = sorted(set(range(1, last + 1)) - set(epochs))
            raise LineageIntegrityError(missing[0], -1)

        n = segments[last].shape[0]
        idx = np.arange(n, dtype=np.int64)
        slots = np.empty((n, last), dtype=np.int64)
        pieces = [None] * last
        for epoch in range(last, 0, -1):
            parents = ancestry.parents(epoch)
            if parents is None:
                raise LineageIntegrityError(epoch, -1)
            size = segments[epoch].shape[0]
            bad = np.flatnonzero((idx < 0) | (idx >= parents.shape[0]))
            if bad.size:
                raise LineageIntegrityError(epoch, int(bad[0]))
            idx = parents[idx]
            bad = np.flatnonzero((idx < 0) | (idx >= size))
            if bad.size:
                raise LineageIntegrityError(epoch, int(bad[0]))
            slots[:, epoch - 1] = idx
            pieces[epoch - 1] = segments[epoch][idx]

        # граничная точка эпохи i совпадает с начальной точкой эпохи i+1
        series = np.concatenate([pieces[0]] + [p[:, 1:] for p in pieces[1:]], axis=1)
        mismatch = np.stack(
            [np.abs(pieces[i][:, -1] - pieces[i + 1][:, 0]) for i in range(last - 1)], axis=1
        ) if last > 1 else np.zeros((n, 0))
        integrals = trapezoid(series, dx=dt, axis=1)

        return [
            BackwardTrajectory(series=series[j], dt=dt, integral=float(integrals[j]), source_id=j,
                               slots=slots[j], boundary_mismatch=mismatch[j])
            for j in range(n)
        ]

    @staticmethod
    def backward_from_run(run: EnsembleRun) -> List[BackwardTrajectory]:
        return GkltService.reconstruct_backward(run.ancestry, run.segments, run.dt)

    @staticmethod
    def window_averages_matrix(paths: np.ndarray, dt: float, T: float) -> np.ndarray:
        """
        Средние по окнам длины T для строк paths формы (N, n_points).

        Окна начинаются с t = 0 и не пересекаются; трапеции на сетке dt.
        """
        ratio = T / dt
        width = int(round(ratio))
        if width < 1 or abs(ratio - width) > GRID_TOLERANCE * max(1.0, ratio):
            raise ConfigurationError(f"window T={T} is not a multiple of dt={dt}")
        paths = np.atleast_2d(paths)
        count = (paths.shape[1] - 1) // width
        if count < 1:
            raise ConfigurationError(f"window T={T} exceeds the trajectory length {dt * (paths.shape[1] - 1)}")
        windows = np.lib.stride_tricks.sliding_window_view(paths, width + 1, axis=1)[:, ::width][:, :count]
        return trapezoid(windows, dx=dt, axis=2) / (width * dt)

    @staticmethod
    def time_averages(bt: BackwardTrajectory, T: float) -> TimeAverageSeries:
        """A_j = (1/T)∫_{jT}^{(j+1)T} φ̂ dt по непересекающимся окнам."""
        values = GkltService.window_averages_matrix(bt.series[None, :], bt.dt, T)[0]
        return TimeAverageSeries(window=T, values=values, source_id=bt.source_id)

    @staticmethod
    def log_weights(bts: Sequence[BackwardTrajectory], ledger: WeightLedger, cfg: TiltConfig) -> np.ndarray:
        """−C·∫₀^{T_f} φ̂ dt + log Π Z_i."""
        integrals = np.array([bt.integral for bt in bts])
        return -cfg.C * integrals + ledger.log_z_sum

    @staticmethod
    def window_maxima(bts: Sequence[BackwardTrajectory], T: float) -> np.ndarray:
        """max_j A_{n,j} для каждой траектории."""
        paths = np.vstack([bt.series for bt in bts])
        return GkltService.window_averages_matrix(paths, bts[0].dt, T).max(axis=1)

    @staticmethod
    def estimate_tail_fixed_thresholds(bts: Sequence[BackwardTrajectory], ledger: WeightLedger,
                                       cfg: TiltConfig, T: float,
                                       thresholds: Sequence[float]) -> np.ndarray:
        """γ̂(a) = (1/N)·Σ 1{∃j: A_j > a}·e^{−C∫φ̂}·Π Z_i."""
        if len(bts) == 0:
            raise InsufficientDataError(1, 0)
        maxima = GkltService.window_maxima(bts, T)
        factors = np.exp(GkltService.log_weights(bts, ledger, cfg))
        above = maxima[None, :] > np.asarray(thresholds, dtype=float)[:, None]
        return np.sum(np.where(above, factors[None, :], 0.0), axis=1) / len(bts)

    @staticmethod
    def estimate_per_trajectory_max(bts: Sequence[BackwardTrajectory], ledger: WeightLedger,
                                    cfg: TiltConfig, T: float) -> RankedPairs:
        """
        Пары (â_n, p̂_n): максимум оконных средних и вес траектории.

        Упорядочены по убыванию â.
        """
        if len(bts) == 0:
            raise InsufficientDataError(1, 0)
        maxima = GkltService.window_maxima(bts, T)
        weights = np.exp(GkltService.log_weights(bts, ledger, cfg)) / len(bts)
        return RankedPairs(thresholds=maxima, weights=weights)

    @staticmethod
    def telescoping_tail(bts: Sequence[BackwardTrajectory], ledger: WeightLedger,
                         thresholds: Sequence[float]) -> np.ndarray:
        """
        Оценка по конечным значениям через журнал весов: для каждой
        восстановленной траектории Π_i Z_i / w_i, где w_i — записанный на эпохе i
        вес её предка. Значения φ на путях в веса не входят.
        """
        if len(bts) == 0:
            raise InsufficientDataError(1, 0)
        n_epochs = len(ledger)
        log_factor = np.zeros(len(bts))
        ends = np.empty(len(bts))
        for j, bt in enumerate(bts):
            if bt.slots.shape[0] != n_epochs:
                raise LineageIntegrityError(bt.slots.shape[0], bt.source_id)
            raw = np.array([entry.raw[slot] for entry, slot in zip(ledger.entries, bt.slots)])
            log_factor[j] = -np.sum(np.log(raw))
            ends[j] = bt.series[-1]
        factors = np.exp(log_factor + ledger.log_z_sum)
        above = ends[None, :] > np.asarray(thresholds, dtype=float)[:, None]
        return np.sum(np.where(above, factors[None, :], 0.0), axis=1) / len(bts)

    @staticmethod
    def continuity_audit(bts: Sequence[BackwardTrajectory]) -> Optional[float]:
        """Максимальный разрыв на границах эпох по всем траекториям."""
        gaps = [float(np.max(bt.boundary_mismatch)) for bt in bts if bt.boundary_mismatch.size]
        return max(gaps) if gaps else None
