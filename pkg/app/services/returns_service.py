"""
app/services/returns_service.py
Кривые времени возврата: по ранжированным парам, по блочным максимумам
длинного ряда, по фиксированным порогам; усреднение кривых экспериментов.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence
import numpy as np

from app.core.exceptions import ConfigurationError, DomainError, InsufficientDataError
from app.models.curve import Provenance, RankedPairs, ReturnCurve
from app.utils.numerics import require_finite

logger = logging.getLogger(__name__)

# допуск, в пределах которого накопленная вероятность считается равной 1
CUMULATIVE_TOLERANCE = 1e-9
# число узлов сетки по log r при усреднении по временам возврата
RETURN_TIME_POINTS = 50


@dataclass(frozen=True)
class TiltedFilter:
    """Оставляет пороги в пределах mean ± width·std наклонённого распределения."""
    width: float = 0.5


def return_time(probability: np.ndarray) -> np.ndarray:
    """r = −1/log(1 − P)."""
    return -1.0 / np.log1p(-np.asarray(probability, dtype=float))


class ReturnsService:
    """Построение и усреднение кривых возврата."""

    @staticmethod
    def curve_from_ranked(
        pairs: RankedPairs,
        provenance: Provenance = Provenance.MC,
        on_overflow: str = "raise",
        label: str = "",
    ) -> ReturnCurve:
        """
        r(â_k) = −1/log(1 − Σ_{l≤k} p̂_l) при â₁ ≥ â₂ ≥ …

        Точки с накопленной вероятностью, равной 1 (в пределах 1e-9), отбрасываются.
        Превышение 1 на большую величину даёт DomainError при on_overflow="raise",
        иначе точка тоже отбрасывается.
        """
        if on_overflow not in ("raise", "drop"):
            raise ConfigurationError(f"unknown overflow policy: {on_overflow}")
        if len(pairs) == 0:
            raise InsufficientDataError(1, 0)
        weights = require_finite(pairs.weights, "probabilities")
        if np.any(weights < 0):
            raise DomainError("ranked probabilities must be non-negative")

        cumulative = np.cumsum(weights)
        thresholds = pairs.thresholds
        # для равных порогов берётся последняя (наибольшая) накопленная сумма
        last_of_tie = np.ones(thresholds.shape[0], dtype=bool)
        last_of_tie[:-1] = thresholds[1:] != thresholds[:-1]
        thresholds = thresholds[last_of_tie]
        cumulative = cumulative[last_of_tie]

        near_one = np.abs(cumulative - 1.0) <= CUMULATIVE_TOLERANCE
        over = cumulative > 1.0 + CUMULATIVE_TOLERANCE
        if np.any(over) and on_overflow == "raise":
            k = int(np.flatnonzero(over)[0])
            raise DomainError(
                f"cumulative probability {cumulative[k]:.6g} exceeds 1 at threshold {thresholds[k]:.6g}"
            )
        keep = ~(near_one | over) & (cumulative > 0)
        dropped = int(np.count_nonzero(~keep))
        if dropped:
            logger.warning(f"Return curve {label or provenance.value}: dropped {dropped} point(s) "
                           f"with undefined return time")
        return ReturnCurve(
            thresholds=thresholds[keep],
            probabilities=cumulative[keep],
            return_times=return_time(cumulative[keep]),
            provenance=provenance,
            label=label,
            dropped=dropped,
        )

    @staticmethod
    def block_maxima_of_series(series: np.ndarray, block: int) -> np.ndarray:
        x = require_finite(series, "series")
        count = x.shape[0] // block
        return x[: count * block].reshape(count, block).max(axis=1)

    @staticmethod
    def curve_from_block_series(
        series: np.ndarray,
        delta_t: float,
        dt: float = 1.0,
        provenance: Provenance = Provenance.CONTROL,
        label: str = "",
    ) -> ReturnCurve:
        """
        Кривая по максимумам длинного ряда в блоках длины ΔT.

        Для каждого порога a из значений максимумов частота (1/K)·Σ 1{a_k ≥ a}
        переводится во время возврата в единицах блока.
        """
        ratio = delta_t / dt
        block = int(round(ratio))
        if block < 1 or abs(ratio - block) > 1e-9 * max(1.0, ratio):
            raise ConfigurationError(f"block length {delta_t} is not a multiple of dt={dt}")
        n = np.asarray(series).shape[0]
        if n < 2 * block:
            raise InsufficientDataError(2 * block, n)
        maxima = ReturnsService.block_maxima_of_series(series, block)
        return ReturnsService.curve_from_block_maxima(maxima, delta_t, provenance, label)

    @staticmethod
    def curve_from_block_maxima(
        maxima: np.ndarray,
        block_length: float = 1.0,
        provenance: Provenance = Provenance.CONTROL,
        label: str = "",
    ) -> ReturnCurve:
        """Кривая по готовым максимумам a_k: пары (a_k, 1/K)."""
        maxima = require_finite(maxima, "block maxima")
        k = maxima.shape[0]
        if k == 0:
            raise InsufficientDataError(1, 0)
        pairs = RankedPairs(thresholds=maxima, weights=np.full(k, 1.0 / k))
        curve = ReturnsService.curve_from_ranked(pairs, provenance, on_overflow="drop", label=label)
        curve.block_length = block_length
        return curve

    @staticmethod
    def curve_from_thresholds(
        thresholds: Sequence[float],
        probabilities: Sequence[float],
        provenance: Provenance = Provenance.MC,
        label: str = "",
    ) -> ReturnCurve:
        """Оценки γ̂(a) при фиксированных порогах → r = −1/log(1 − γ̂)."""
        a = np.asarray(thresholds, dtype=float)
        p = np.asarray(probabilities, dtype=float)
        if a.shape != p.shape:
            raise ConfigurationError("thresholds and probabilities must have equal length")
        order = np.argsort(-a, kind="stable")
        a, p = a[order], p[order]
        keep = np.isfinite(p) & (p > 0) & (p < 1)
        dropped = int(np.count_nonzero(~keep))
        if dropped:
            logger.warning(f"Return curve {label or provenance.value}: dropped {dropped} threshold(s) "
                           f"with probability outside (0, 1)")
        return ReturnCurve(
            thresholds=a[keep],
            probabilities=p[keep],
            return_times=return_time(p[keep]),
            provenance=provenance,
            label=label,
            dropped=dropped,
        )

    @staticmethod
    def interpolate_log_return(curve: ReturnCurve, thresholds: Sequence[float]) -> np.ndarray:
        """Линейная интерполяция log r по порогу; вне диапазона кривой — NaN."""
        grid = np.asarray(thresholds, dtype=float)
        out = np.full(grid.shape, np.nan)
        if curve.is_empty:
            return out
        order = np.argsort(curve.thresholds, kind="stable")
        xp = curve.thresholds[order]
        fp = np.log(curve.return_times[order])
        inside = (grid >= xp[0]) & (grid <= xp[-1])
        out[inside] = np.exp(np.interp(grid[inside], xp, fp))
        # узлы кривой возвращаются без округления
        exact = np.isin(grid, xp) & inside
        if np.any(exact):
            pos = np.searchsorted(xp, grid[exact])
            out[exact] = curve.return_times[order][pos]
        return out

    @staticmethod
    def average_curves(
        curves: Sequence[ReturnCurve],
        tilted_filter: Optional[TiltedFilter] = None,
        grid: Optional[Sequence[float]] = None,
    ) -> ReturnCurve:
        """
        Двухэтапное среднее r при фиксированных порогах: по экспериментам
        внутри группы (значение C), затем по группам. Полоса — минимум и
        максимум по экспериментам.
        """
        if len(curves) == 0:
            raise InsufficientDataError(1, 0)
        if grid is None:
            nodes = np.unique(np.concatenate([c.thresholds for c in curves]))
        else:
            nodes = np.unique(np.asarray(grid, dtype=float))
        nodes = nodes[::-1]

        values = np.vstack([ReturnsService.interpolate_log_return(c, nodes) for c in curves])
        if tilted_filter is not None:
            for i, c in enumerate(curves):
                outside = _outside_tilted(c, nodes, tilted_filter, i)
                if outside is not None:
                    values[i, outside] = np.nan

        present = ~np.isnan(values)
        counts = present.sum(axis=0)
        mean = _two_stage_mean(values, curves)
        keep = counts > 0
        omitted = int(np.count_nonzero(~keep))
        if omitted:
            logger.info(f"Averaged curve: {omitted} threshold(s) omitted with no contributing curve")
        lo = np.where(present, values, np.inf).min(axis=0)
        hi = np.where(present, values, -np.inf).max(axis=0)
        r = mean[keep]
        return ReturnCurve(
            thresholds=nodes[keep],
            probabilities=-np.expm1(-1.0 / r),
            return_times=r,
            provenance=curves[0].provenance,
            band_lo=lo[keep],
            band_hi=hi[keep],
            n_experiments=counts[keep].astype(np.int64),
            label=curves[0].label,
            block_length=curves[0].block_length,
            dropped=omitted,
        )

    @staticmethod
    def interpolate_threshold(curve: ReturnCurve, return_times: Sequence[float]) -> np.ndarray:
        """Порог как функция log r, линейно между узлами; вне диапазона кривой — NaN."""
        grid = np.asarray(return_times, dtype=float)
        out = np.full(grid.shape, np.nan)
        if curve.is_empty:
            return out
        order = np.argsort(curve.return_times, kind="stable")
        log_r, first = np.unique(np.log(curve.return_times[order]), return_index=True)
        a = curve.thresholds[order][first]
        log_grid = np.log(grid)
        inside = (log_grid >= log_r[0]) & (log_grid <= log_r[-1])
        out[inside] = np.interp(log_grid[inside], log_r, a)
        return out

    @staticmethod
    def average_on_return_times(
        curves: Sequence[ReturnCurve],
        tilted_filter: Optional[TiltedFilter] = None,
        n_points: int = RETURN_TIME_POINTS,
    ) -> ReturnCurve:
        """
        Двухэтапное среднее порога на сетке, равномерной по log r,
        от наименьшего до наибольшего времени возврата среди кривых.

        Полоса остаётся в единицах r и совпадает с узлами сетки.
        """
        if len(curves) == 0:
            raise InsufficientDataError(1, 0)
        if n_points < 2:
            raise ConfigurationError("return-time grid needs at least two points")
        filled = [c for c in curves if not c.is_empty]
        if not filled:
            raise InsufficientDataError(1, 0)
        low = min(float(np.min(c.return_times)) for c in filled)
        high = max(float(np.max(c.return_times)) for c in filled)
        nodes = np.geomspace(low, high, n_points) if high > low else np.array([low])

        values = np.vstack([ReturnsService.interpolate_threshold(c, nodes) for c in curves])
        if tilted_filter is not None:
            for i, c in enumerate(curves):
                outside = _outside_tilted(c, values[i], tilted_filter, i)
                if outside is not None:
                    values[i, outside] = np.nan

        counts = (~np.isnan(values)).sum(axis=0)
        mean = _two_stage_mean(values, curves)
        keep = counts > 0
        r = nodes[keep]
        return ReturnCurve(
            thresholds=mean[keep][::-1],
            probabilities=-np.expm1(-1.0 / r)[::-1],
            return_times=r[::-1],
            provenance=curves[0].provenance,
            n_experiments=counts[keep][::-1].astype(np.int64),
            label=curves[0].label,
            block_length=curves[0].block_length,
            dropped=int(np.count_nonzero(~keep)),
        )


def _outside_tilted(curve: ReturnCurve, thresholds: np.ndarray, tilted_filter: TiltedFilter,
                    index: int) -> Optional[np.ndarray]:
    if curve.tilted_mean is None or curve.tilted_std is None:
        logger.warning(f"Curve {curve.label or index} has no tilted statistics; not filtered")
        return None
    half = tilted_filter.width * curve.tilted_std
    return (thresholds < curve.tilted_mean - half) | (thresholds > curve.tilted_mean + half)


def _two_stage_mean(values: np.ndarray, curves: Sequence[ReturnCurve]) -> np.ndarray:
    """Среднее по строкам внутри групп (curve.group), затем по группам; NaN пропускаются."""
    groups: Dict[Optional[float], List[int]] = {}
    for i, c in enumerate(curves):
        groups.setdefault(c.group, []).append(i)
    group_means = []
    for members in groups.values():
        block = values[members]
        n = (~np.isnan(block)).sum(axis=0)
        total = np.where(np.isnan(block), 0.0, block).sum(axis=0)
        group_means.append(np.where(n > 0, total / np.maximum(n, 1), np.nan))
    group_means = np.vstack(group_means)
    n_groups = (~np.isnan(group_means)).sum(axis=0)
    return np.where(n_groups > 0,
                    np.where(np.isnan(group_means), 0.0, group_means).sum(axis=0) / np.maximum(n_groups, 1),
                    np.nan)
