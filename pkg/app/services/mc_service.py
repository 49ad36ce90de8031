"""
app/services/mc_service.py
Метод Монте-Карло: оценка хвоста, относительные ошибки
и оракул дисперсии при экспоненциальном наклоне гауссовой величины.
"""
import logging
from typing import Dict, Optional, Sequence, Tuple
import numpy as np
from scipy.special import erfc

from app.core.exceptions import DomainError, InsufficientDataError
from app.schemas.estimate import RelErrReport, TailEstimate, ThresholdError, TiltOracleResult
from app.utils.numerics import require_finite

logger = logging.getLogger(__name__)


class McService:
    """Оценки Монте-Карло и эталонные значения."""

    @staticmethod
    def gaussian_tail(a, mean: float = 0.0, variance: float = 1.0):
        """P(X > a) для X ~ N(mean, variance) через erfc."""
        z = (np.asarray(a, dtype=float) - mean) / np.sqrt(2.0 * variance)
        out = 0.5 * erfc(z)
        return float(out) if np.ndim(out) == 0 else out

    @staticmethod
    def estimate_tail_mc(samples: Sequence[float], threshold: float) -> TailEstimate:
        """γ̂ = доля выборки выше порога; относительная ошибка 1/√(Nγ̂)."""
        x = require_finite(samples, "samples")
        n = x.shape[0]
        if n == 0:
            raise InsufficientDataError(1, 0)
        gamma = np.count_nonzero(x > threshold) / n
        rel = 1.0 / np.sqrt(n * gamma) if gamma > 0 else None
        return TailEstimate(gamma_hat=gamma, n_samples=n, threshold=threshold, theoretical_rel_err=rel)

    @staticmethod
    def tail_curve_mc(samples: Sequence[float], thresholds: Sequence[float]) -> np.ndarray:
        """γ̂ для набора порогов сразу."""
        x = require_finite(samples, "samples")
        if x.shape[0] == 0:
            raise InsufficientDataError(1, 0)
        a = np.asarray(thresholds, dtype=float)
        counts = np.count_nonzero(x[None, :] > a[:, None], axis=1)
        return counts / x.shape[0]

    @staticmethod
    def empirical_rel_err(estimates: Sequence[float], gamma: float) -> Tuple[float, float]:
        """
        rel_err = √((1/K)Σ(γ̂_k − γ)²)/γ, mean_dev = |mean(γ̂) − γ|/γ.
        """
        est = require_finite(estimates, "estimates")
        if est.shape[0] < 2:
            raise InsufficientDataError(2, est.shape[0])
        if not gamma > 0:
            raise DomainError("reference probability must be positive")
        rel_err = float(np.sqrt(np.mean((est - gamma) ** 2)) / gamma)
        mean_dev = float(abs(np.mean(est) - gamma) / gamma)
        return rel_err, mean_dev

    @staticmethod
    def rel_err_report(method: str, estimates: Dict[float, Sequence[float]],
                       reference: Dict[float, float]) -> RelErrReport:
        """Таблица ошибок по порогам; пороги без положительного эталона пропускаются."""
        entries = []
        k = 0
        for a in sorted(estimates):
            gamma = reference.get(a)
            if gamma is None or gamma <= 0:
                logger.warning(f"{method}: no positive reference probability at threshold {a}; skipped")
                continue
            rel, dev = McService.empirical_rel_err(estimates[a], gamma)
            k = len(estimates[a])
            entries.append(ThresholdError(threshold=a, gamma=gamma, rel_err=rel, mean_dev=dev))
        if k < 2:
            k = max((len(v) for v in estimates.values()), default=0)
        return RelErrReport(method=method, n_experiments=max(k, 2), entries=entries)

    @staticmethod
    def tilted_gaussian_oracle(a: float, C: float) -> TiltOracleResult:
        """
        Дисперсия оценки с наклоном e^{CX} для X ~ N(0, 1):
        E_C[1{X>a}·e^{−2CX}]·E[e^{CX}]² − γ² = e^{C²}·Φ̄(a + C) − γ².
        """
        gamma = McService.gaussian_tail(a)
        variance = float(np.exp(C ** 2) * McService.gaussian_tail(a + C) - gamma ** 2)
        mc_variance = gamma - gamma ** 2
        return TiltOracleResult(
            threshold=a, C=C, gamma=gamma, variance=variance, mc_variance=mc_variance,
            rel_err_ratio=float(np.sqrt(variance / mc_variance)),
        )

    @staticmethod
    def optimal_tilt(a: float, step: float = 0.01, upper: Optional[float] = None) -> TiltOracleResult:
        """Перебор C по сетке [0, 2a] с шагом step; минимум дисперсии."""
        upper = 2.0 * abs(a) if upper is None else upper
        grid = np.arange(0.0, upper + 0.5 * step, step)
        gamma = McService.gaussian_tail(a)
        variances = np.exp(grid ** 2) * McService.gaussian_tail(a + grid) - gamma ** 2
        best = float(grid[int(np.argmin(variances))])
        result = McService.tilted_gaussian_oracle(a, best)
        logger.info(f"Optimal tilt for a={a}: C*={best:.2f}, reduction x{result.reduction_factor:.3g}")
        return result
