"""
app/services/gev_service.py
Блочные максимумы, подгонка GEV методом максимального правдоподобия,
обращение хвоста, уровни возврата и доверительные интервалы.
"""
import logging
from typing import Optional, Sequence, Union
import numpy as np
from scipy.optimize import brentq, minimize
from scipy.stats import chi2

from app.config import settings
from app.core.exceptions import (
    ConfigurationError,
    ConvergenceError,
    DomainError,
    InsufficientDataError,
)
from app.models.curve import BlockMaximaSeries, Provenance, ReturnCurve
from app.schemas.gev import BlockLayout, FitDiagnostics, GevFit, GevParams, ReturnLevel
from app.services.returns_service import ReturnsService, return_time
from app.utils.numerics import fd_gradient, fd_hessian, require_finite

logger = logging.getLogger(__name__)

GUMBEL_SERIES_ZETA = 1e-6
GUMBEL_CDF_ZETA = 1e-12
EULER_GAMMA = 0.5772156649015329
Z95 = 1.959963984540054
START_SHAPES = (0.0, 0.1, -0.1)
STATIONARITY_TOLERANCE = 1e-4
PENALTY = 1e10


def _reduced(x: np.ndarray, mu: float, sigma: float, zeta: float) -> tuple[np.ndarray, np.ndarray]:
    """y = log(1 + ζz)/ζ и признак попадания в носитель."""
    z = (x - mu) / sigma
    if abs(zeta) < GUMBEL_SERIES_ZETA:
        return z - zeta * z ** 2 / 2 + zeta ** 2 * z ** 3 / 3, np.ones_like(z, dtype=bool)
    t = zeta * z
    inside = t > -1.0
    y = np.where(inside, np.log1p(np.where(inside, t, 0.0)) / zeta, 0.0)
    return y, inside


def negative_log_likelihood(theta: np.ndarray, x: np.ndarray) -> float:
    """−log L; нарушение носителя или σ ≤ 0 дают штраф, а не исключение."""
    mu, sigma, zeta = theta
    if not np.isfinite(theta).all() or sigma <= 0:
        return PENALTY * (1.0 + abs(min(sigma, 0.0))) if np.isfinite(sigma) else PENALTY
    y, inside = _reduced(x, mu, sigma, zeta)
    if not inside.all():
        z = (x - mu) / sigma
        violation = float(np.sum(np.maximum(-1.0 - zeta * z, 0.0)))
        return PENALTY * (1.0 + violation)
    value = x.shape[0] * np.log(sigma) + np.sum((1.0 + zeta) * y + np.exp(-y))
    return float(value) if np.isfinite(value) else PENALTY


def _as_maxima(maxima: Union[BlockMaximaSeries, np.ndarray, Sequence[float]]) -> BlockMaximaSeries:
    if isinstance(maxima, BlockMaximaSeries):
        return maxima
    return BlockMaximaSeries(values=np.asarray(maxima, dtype=float), block_size=1)


class GevService:
    """GEV: максимумы, подгонка, хвосты."""

    @staticmethod
    def block_maxima(source: np.ndarray, m: int,
                     layout: BlockLayout = BlockLayout.SINGLE_LONG_SERIES) -> BlockMaximaSeries:
        """
        Непересекающиеся максимумы по m значений.

        Для PER_TIME_STEP_ACROSS_TRAJECTORIES source имеет форму
        (траектории, моменты времени): для каждого момента j максимумы
        берутся по группам из m траекторий.
        """
        if m < 1:
            raise ConfigurationError("block size m must be at least 1")
        data = require_finite(source, "block source")
        if layout == BlockLayout.PER_TIME_STEP_ACROSS_TRAJECTORIES:
            if data.ndim != 2:
                raise ConfigurationError("per-time-step layout needs a (trajectories, steps) matrix")
            n_traj = data.shape[0]
            if n_traj < 2 * m:
                raise InsufficientDataError(2 * m, n_traj)
            blocks = n_traj // m
            grouped = data[: blocks * m].reshape(blocks, m, data.shape[1])
            values = grouped.max(axis=1).T
        else:
            flat = np.ravel(data)
            if flat.shape[0] < 2 * m:
                raise InsufficientDataError(2 * m, flat.shape[0])
            blocks = flat.shape[0] // m
            values = flat[: blocks * m].reshape(blocks, m).max(axis=1)
        return BlockMaximaSeries(values=values, block_size=m, layout=layout)

    @staticmethod
    def _optimize(x: np.ndarray, start: np.ndarray, spread: float = 0.1):
        simplex = np.vstack([start, start + spread * np.eye(3)])
        return minimize(
            negative_log_likelihood, start, args=(x,), method="Nelder-Mead",
            # fatol масштабируется с числом максимумов: −log L растёт как n
            options={"xatol": 1e-10, "fatol": 1e-12 * max(1, x.shape[0]), "maxiter": 20000, "maxfev": 40000,
                     "initial_simplex": simplex},
        )

    @staticmethod
    def fit_gev_mle(maxima: Union[BlockMaximaSeries, np.ndarray, Sequence[float]],
                    profile_ci: bool = False) -> GevFit:
        """
        Оценка (μ, σ, ζ) максимального правдоподобия.

        Симплекс Нелдера–Мида из нескольких стартов (моменты Гумбеля и ζ = ±0.1)
        по стандартизованным данным; ковариация — обратная наблюдаемая информация.
        Сырой массив трактуется как максимумы блоков размера 1.
        """
        series = _as_maxima(maxima)
        raw = require_finite(series.flat, "maxima")
        n = raw.shape[0]
        if n < 2:
            raise InsufficientDataError(2, n)
        if n < settings.gev_soft_min_maxima:
            logger.warning(f"GEV fit on {n} maxima (soft minimum {settings.gev_soft_min_maxima})")

        sd = float(np.std(raw))
        if sd == 0.0:
            logger.error("GEV fit on constant maxima: scale collapses to zero")
            raise ConvergenceError("constant maxima: sigma -> 0", best_params=[float(raw[0]), 0.0, 0.0])

        sigma0 = np.sqrt(6.0) * sd / np.pi
        mu0 = float(np.mean(raw)) - EULER_GAMMA * sigma0
        x = (raw - mu0) / sigma0

        results = []
        for zeta in START_SHAPES:
            res = GevService._optimize(x, np.array([0.0, 1.0, zeta]))
            if res.success and res.fun < PENALTY:
                res = GevService._optimize(x, res.x, spread=0.01)
            results.append(res)
        converged = [r for r in results if r.success and r.fun < PENALTY]
        best = min(results, key=lambda r: r.fun)

        def to_original(theta):
            return np.array([mu0 + sigma0 * theta[0], sigma0 * theta[1], theta[2]])

        def nll(theta):
            return negative_log_likelihood(theta, raw)

        if not converged:
            params = to_original(best.x)
            grad = np.abs(fd_gradient(nll, params))
            logger.error(f"GEV fit did not converge from {len(results)} starts")
            raise ConvergenceError("GEV likelihood optimization did not converge",
                                   best_params=params.tolist(), gradient_norms=grad.tolist())
        best = min(converged, key=lambda r: r.fun)
        theta = to_original(best.x)

        # производные в стандартизованных координатах, затем якобиан diag(σ₀, σ₀, 1)
        def nll_std(theta_std):
            return negative_log_likelihood(theta_std, x)

        jac = np.array([sigma0, sigma0, 1.0])
        hess = fd_hessian(nll_std, best.x)
        hess = 0.5 * (hess + hess.T)
        try:
            cov = np.linalg.inv(hess)
        except np.linalg.LinAlgError:
            logger.warning("Observed information is singular; using pseudo-inverse")
            cov = np.linalg.pinv(hess)
        cov = jac[:, None] * (0.5 * (cov + cov.T)) * jac[None, :]

        grad = fd_gradient(nll_std, best.x)
        curvature = np.sqrt(np.maximum(np.abs(np.diag(hess)), 1e-300))
        scaled = np.abs(grad) / curvature
        stationary = bool(np.all(scaled < STATIONARITY_TOLERANCE))
        if not stationary:
            logger.warning(f"GEV optimum is not stationary: scaled gradient {scaled.tolist()}")

        fit = GevFit(
            params=GevParams(mu=float(theta[0]), sigma=float(theta[1]), zeta=float(theta[2])),
            log_likelihood=-nll(theta),
            covariance=cov.tolist(),
            block_size=series.block_size,
            n_maxima=n,
            layout=series.layout,
            diagnostics=FitDiagnostics(
                starts=len(results),
                converged_starts=len(converged),
                iterations=int(best.nit),
                function_evaluations=int(best.nfev),
                gradient=grad.tolist(),
                scaled_gradient=scaled.tolist(),
                stationary=stationary,
            ),
        )
        if profile_ci:
            lo, hi = GevService.profile_shape_ci(series, fit)
            fit.shape_profile_ci = [lo, hi]
        logger.info(f"GEV fit: mu={theta[0]:.6g}, sigma={theta[1]:.6g}, zeta={theta[2]:.6g}, "
                    f"m={series.block_size}, n={n}")
        return fit

    @staticmethod
    def profile_shape_ci(maxima: Union[BlockMaximaSeries, np.ndarray], fit: GevFit,
                         level: float = 0.95) -> tuple[float, float]:
        """Профильный интервал для ζ: 2·(ℓ̂ − ℓ_p(ζ)) = χ²₁(level)."""
        raw = _as_maxima(maxima).flat
        cutoff = chi2.ppf(level, 1)
        mu_hat, sigma_hat, zeta_hat = fit.params.as_tuple()
        ll_hat = fit.log_likelihood

        def deficit(zeta: float) -> float:
            res = minimize(lambda p: negative_log_likelihood(np.array([p[0], p[1], zeta]), raw),
                           np.array([mu_hat, sigma_hat]), method="Nelder-Mead",
                           options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 5000})
            return 2.0 * (ll_hat + res.fun) - cutoff

        se = fit.standard_errors()[2]
        step = max(se, 1e-3)
        bounds = []
        for direction in (-1.0, 1.0):
            inner, outer = zeta_hat, zeta_hat + direction * step
            for _ in range(60):
                if deficit(outer) > 0:
                    break
                inner, outer = outer, outer + direction * step
                step *= 1.5
            else:
                raise ConvergenceError("profile likelihood did not cross the chi-square cutoff")
            bounds.append(brentq(deficit, min(inner, outer), max(inner, outer), xtol=1e-8))
        return bounds[0], bounds[1]

    @staticmethod
    def gev_cdf(params: GevParams, x):
        """G(x) = exp(−[1 + ζ(x−μ)/σ]^{−1/ζ}); вне носителя 0 или 1."""
        mu, sigma, zeta = params.as_tuple()
        x = np.asarray(x, dtype=float)
        z = (x - mu) / sigma
        if abs(zeta) < GUMBEL_CDF_ZETA:
            out = np.exp(-np.exp(-z))
        else:
            t = 1.0 + zeta * z
            inside = t > 0
            s = np.where(inside, t, 1.0) ** (-1.0 / zeta)
            outside_value = 0.0 if zeta > 0 else 1.0
            out = np.where(inside, np.exp(-s), outside_value)
        return float(out) if out.ndim == 0 else out

    @staticmethod
    def gev_quantile(params: GevParams, p):
        """Обратная функция G."""
        mu, sigma, zeta = params.as_tuple()
        p = np.asarray(p, dtype=float)
        y = -np.log(p)
        if abs(zeta) < GUMBEL_CDF_ZETA:
            out = mu - sigma * np.log(y)
        else:
            out = mu + sigma / zeta * np.expm1(-zeta * np.log(y))
        return float(out) if out.ndim == 0 else out

    @staticmethod
    def tail_from_gev(fit: GevFit, x):
        """P(X > x) ≈ 1 − G(x)^{1/m}."""
        mu, sigma, zeta = fit.params.as_tuple()
        x = np.asarray(x, dtype=float)
        z = (x - mu) / sigma
        if abs(zeta) < GUMBEL_CDF_ZETA:
            s = np.exp(-z)
        else:
            t = 1.0 + zeta * z
            inside = t > 0
            s = np.where(inside, np.where(inside, t, 1.0) ** (-1.0 / zeta), np.inf if zeta > 0 else 0.0)
        out = -np.expm1(-s / fit.block_size)
        return float(out) if out.ndim == 0 else out

    @staticmethod
    def _level_gradient(params: GevParams, p_exceed: float) -> np.ndarray:
        mu, sigma, zeta = params.as_tuple()
        y = -np.log1p(-p_exceed)
        if abs(zeta) < GUMBEL_SERIES_ZETA:
            return fd_gradient(
                lambda th: GevService.gev_quantile(GevParams(mu=th[0], sigma=th[1], zeta=th[2]), 1 - p_exceed),
                np.array([mu, sigma, zeta]),
            )
        yz = y ** (-zeta)
        return np.array([
            1.0,
            -(1.0 - yz) / zeta,
            sigma * (1.0 - yz) / zeta ** 2 - sigma * yz * np.log(y) / zeta,
        ])

    @staticmethod
    def return_level(fit: GevFit, r: float) -> ReturnLevel:
        """Уровень x с 1 − G(x) = 1/r и 95% интервал дельта-методом."""
        if not r > 1:
            raise DomainError(f"return time must exceed 1, got {r}")
        p_exceed = 1.0 / r
        level = GevService.gev_quantile(fit.params, 1.0 - p_exceed)
        grad = GevService._level_gradient(fit.params, p_exceed)
        var = float(grad @ np.asarray(fit.covariance) @ grad)
        half = Z95 * np.sqrt(max(var, 0.0))
        return ReturnLevel(return_time=r, level=level, lower=level - half, upper=level + half)

    @staticmethod
    def tail_band(fit: GevFit, thresholds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """95% полоса для хвоста дельта-методом (градиент конечными разностями)."""
        theta = np.array(fit.params.as_tuple())
        cov = np.asarray(fit.covariance)
        lo, hi = np.empty(len(thresholds)), np.empty(len(thresholds))
        for i, a in enumerate(thresholds):
            def tail(th, a=a):
                return GevService.tail_from_gev(
                    fit.model_copy(update={"params": GevParams(mu=th[0], sigma=max(th[1], 1e-300), zeta=th[2])}), a
                )
            g = fd_gradient(tail, theta)
            half = Z95 * np.sqrt(max(float(g @ cov @ g), 0.0))
            p = tail(theta)
            lo[i], hi[i] = max(p - half, 0.0), min(p + half, 1.0)
        return lo, hi

    @staticmethod
    def return_curve(fit: GevFit, thresholds: Sequence[float], label: str = "") -> ReturnCurve:
        """Кривая возврата по подогнанному хвосту (в блоках длины m·шаг источника)."""
        a = np.asarray(thresholds, dtype=float)
        p = np.atleast_1d(GevService.tail_from_gev(fit, a))
        curve = ReturnsService.curve_from_thresholds(a, p, Provenance.GEV, label=label)
        if not curve.is_empty:
            p_lo, p_hi = GevService.tail_band(fit, curve.thresholds)
            with np.errstate(divide="ignore"):
                curve.band_lo = np.where(p_hi < 1, return_time(np.minimum(p_hi, 1 - 1e-16)), 0.0)
                curve.band_hi = np.where(p_lo > 0, return_time(np.maximum(p_lo, 1e-300)), np.inf)
        return curve

    @staticmethod
    def fit_to_dict(fit: GevFit) -> dict:
        return fit.model_dump(mode="json")
