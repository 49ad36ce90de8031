"""
app/services/dynamics_service.py
Источники траекторий: OU (СДУ) и Lorenz '96 (ОДУ), наблюдаемые,
возмущение клонов и оценка времени декорреляции.
"""
import logging
from typing import Callable, Dict, Optional, Tuple
import numpy as np
from scipy.signal import lfilter

from app.config import settings
from app.core.exceptions import (
    ConfigurationError,
    RejectedInputError,
    ResamplingTimeNotFoundError,
)
from app.models.trajectory import State, Trajectory
from app.schemas.system import Observable, ObservableKind, SystemKind, SystemSpec
from app.utils.numerics import require_finite

logger = logging.getLogger(__name__)

# tag -> функция от массива состояний (..., dim), возвращающая (...)
_CUSTOM_OBSERVABLES: Dict[str, Callable[[np.ndarray], np.ndarray]] = {}


def _l96_tendency(x: np.ndarray, forcing: float) -> np.ndarray:
    """dx_l/dt = x_{l-1}(x_{l+1} - x_{l-2}) + R - x_l, индексы по модулю J."""
    return (
        np.roll(x, 1, axis=-1) * (np.roll(x, -1, axis=-1) - np.roll(x, 2, axis=-1))
        + forcing - x
    )


def _rk4_l96(x: np.ndarray, forcing: float, dt: float) -> np.ndarray:
    k1 = _l96_tendency(x, forcing)
    k2 = _l96_tendency(x + 0.5 * dt * k1, forcing)
    k3 = _l96_tendency(x + 0.5 * dt * k2, forcing)
    k4 = _l96_tendency(x + dt * k3, forcing)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _ou_coefficients(spec: SystemSpec) -> Tuple[float, float]:
    """x' = a·x + b·ξ для схемы Эйлера–Маруямы или точного перехода."""
    lam, sigma, dt = spec.ou_lambda, spec.ou_sigma, spec.dt
    if spec.ou_exact:
        a = float(np.exp(-lam * dt))
        b = sigma * float(np.sqrt(-np.expm1(-2.0 * lam * dt) / (2.0 * lam)))
        return a, b
    return 1.0 - lam * dt, sigma * float(np.sqrt(dt))


class DynamicsService:
    """Интегрирование и наблюдаемые."""

    @staticmethod
    def step_ou(state: State, spec: SystemSpec, gaussian_draw: float) -> State:
        """Один шаг Эйлера–Маруямы: x' = x − λx·dt + σ√dt·ξ."""
        if spec.kind != SystemKind.OU:
            raise ConfigurationError("step_ou requires an OU system")
        x = require_finite(state.values)
        if not np.isfinite(gaussian_draw):
            raise RejectedInputError("non-finite gaussian draw")
        if spec.ou_exact:
            a, b = _ou_coefficients(spec)
            new = a * x + b * gaussian_draw
        else:
            new = x - spec.ou_lambda * x * spec.dt + spec.ou_sigma * np.sqrt(spec.dt) * gaussian_draw
        return State(values=new, time=state.time + spec.dt)

    @staticmethod
    def step_lorenz96(state: State, spec: SystemSpec) -> State:
        """Один шаг RK4."""
        if spec.kind != SystemKind.LORENZ96:
            raise ConfigurationError("step_lorenz96 requires a Lorenz '96 system")
        x = require_finite(state.values)
        if x.shape[0] != spec.l96_sites:
            raise RejectedInputError(f"state has {x.shape[0]} sites, expected {spec.l96_sites}")
        return State(values=_rk4_l96(x, spec.l96_forcing, spec.dt), time=state.time + spec.dt)

    @staticmethod
    def perturb_clone(state: State, spec: SystemSpec, uniform_draws: np.ndarray) -> State:
        """Сдвигает каждую компоненту на ε·u, u ∈ [−1, 1]."""
        draws = require_finite(np.asarray(uniform_draws, dtype=float))
        if draws.shape != state.values.shape:
            raise RejectedInputError(f"expected {state.dim} draws, got {draws.shape}")
        if np.any(np.abs(draws) > 1.0):
            raise RejectedInputError("clone perturbation draws must lie in [-1, 1]")
        return State(values=state.values + spec.clone_epsilon * draws, time=state.time)

    @staticmethod
    def register_observable(tag: str, fn: Callable[[np.ndarray], np.ndarray]) -> None:
        _CUSTOM_OBSERVABLES[tag] = fn
        logger.info(f"Custom observable registered: {tag}")

    @staticmethod
    def check_observable(spec: SystemSpec, obs: Observable) -> None:
        if obs.kind == ObservableKind.POSITION and spec.dim != 1:
            raise ConfigurationError("position observable requires a scalar state")
        if obs.kind == ObservableKind.ENERGY and spec.kind != SystemKind.LORENZ96:
            raise ConfigurationError("energy observable is defined for Lorenz '96 only")
        if obs.kind == ObservableKind.CUSTOM and obs.tag not in _CUSTOM_OBSERVABLES:
            raise ConfigurationError(f"unknown custom observable: {obs.tag}")

    @staticmethod
    def observe(values: np.ndarray, obs: Observable) -> np.ndarray:
        """φ для массива состояний формы (..., dim)."""
        if obs.kind == ObservableKind.POSITION:
            return values[..., 0]
        if obs.kind == ObservableKind.ENERGY:
            return 0.5 * np.mean(values ** 2, axis=-1)
        return np.asarray(_CUSTOM_OBSERVABLES[obs.tag](values), dtype=float)

    @staticmethod
    def evaluate_observable(traj: Trajectory, obs: Observable, spec: Optional[SystemSpec] = None) -> np.ndarray:
        """Ряд φ(x_t) вдоль траектории."""
        if spec is None:
            kind = traj.kind
            if obs.kind == ObservableKind.POSITION and traj.values.shape[1] != 1:
                raise ConfigurationError("position observable requires a scalar state")
            if obs.kind == ObservableKind.ENERGY and kind != SystemKind.LORENZ96:
                raise ConfigurationError("energy observable is defined for Lorenz '96 only")
            if obs.kind == ObservableKind.CUSTOM and obs.tag not in _CUSTOM_OBSERVABLES:
                raise ConfigurationError(f"unknown custom observable: {obs.tag}")
        else:
            DynamicsService.check_observable(spec, obs)
        return DynamicsService.observe(traj.values, obs)

    @staticmethod
    def estimate_resampling_time(series: np.ndarray, tolerance: Optional[float] = None,
                                 dt: float = 1.0) -> float:
        """
        Наименьший лаг (в единицах времени), при котором |автокорреляция| ≤ tolerance.

        Автокорреляция считается через БПФ по ряду с вычтенным средним,
        нормированному на дисперсию. Поиск ведётся до половины длины ряда.
        """
        tolerance = settings.autocorr_tolerance if tolerance is None else tolerance
        if not 0 < tolerance < 1:
            raise ConfigurationError("autocorrelation tolerance must lie in (0, 1)")
        x = require_finite(series, "series")
        n = x.shape[0]
        centered = x - np.mean(x)
        variance = float(np.dot(centered, centered))
        if n < 4 or variance <= 0.0:
            raise ResamplingTimeNotFoundError(1.0)

        size = 1 << int(np.ceil(np.log2(2 * n)))
        spectrum = np.fft.rfft(centered, size)
        acf = np.fft.irfft(spectrum * np.conj(spectrum), size)[: n // 2 + 1] / variance

        hits = np.flatnonzero(np.abs(acf[1:]) <= tolerance)
        if hits.size == 0:
            raise ResamplingTimeNotFoundError(float(np.min(np.abs(acf[1:]))))
        lag = int(hits[0]) + 1
        if 10 * lag > n:
            logger.warning(f"Series of {n} points is shorter than 10x the lag {lag}")
        return lag * dt

    @staticmethod
    def integrate(
        values: np.ndarray,
        spec: SystemSpec,
        n_steps: int,
        obs: Observable,
        noise: Optional[np.ndarray] = None,
    ) -> Tuple[np.ndarray, np.ndarray]:
        """
        Интегрирует ансамбль на n_steps шагов.

        values: (N, dim); noise: (n_steps, N) стандартных нормальных величин (OU).
        Возвращает конечные состояния и путь φ формы (N, n_steps + 1).
        """
        x = require_finite(values)
        if spec.kind == SystemKind.OU:
            if noise is None:
                raise ConfigurationError("OU integration requires noise draws")
            noise = np.asarray(noise, dtype=float)
            if noise.shape != (n_steps, x.shape[0]):
                raise ConfigurationError(f"noise shape {noise.shape} != {(n_steps, x.shape[0])}")
            a, b = _ou_coefficients(spec)
            x0 = x[:, 0]
            tail = lfilter([b], [1.0, -a], noise, axis=0, zi=(a * x0)[None, :])[0]
            path_x = np.vstack([x0[None, :], tail]).T
            final = path_x[:, -1:].copy()
            path = DynamicsService.observe(path_x[..., None], obs)
        else:
            path = np.empty((x.shape[0], n_steps + 1))
            path[:, 0] = DynamicsService.observe(x, obs)
            for k in range(n_steps):
                x = _rk4_l96(x, spec.l96_forcing, spec.dt)
                path[:, k + 1] = DynamicsService.observe(x, obs)
            final = x
        if not np.all(np.isfinite(final)):
            raise RejectedInputError("integration produced non-finite states")
        return final, path

    @staticmethod
    def simulate(initial: State, spec: SystemSpec, n_steps: int,
                 rng: Optional[np.random.Generator] = None, particle_id: int = 0) -> Trajectory:
        """Одна траектория из n_steps + 1 точек."""
        x = require_finite(initial.values)
        if spec.kind == SystemKind.OU:
            rng = rng if rng is not None else np.random.default_rng()
            a, b = _ou_coefficients(spec)
            draws = rng.standard_normal(n_steps)
            tail = lfilter([b], [1.0, -a], draws, zi=[a * x[0]])[0]
            values = np.concatenate([[x[0]], tail])[:, None]
        else:
            values = np.empty((n_steps + 1, x.shape[0]))
            values[0] = x
            for k in range(n_steps):
                x = _rk4_l96(x, spec.l96_forcing, spec.dt)
                values[k + 1] = x
        return Trajectory(values=values, dt=spec.dt, t0=initial.time,
                          particle_id=particle_id, kind=spec.kind)

    @staticmethod
    def stationary_variance(spec: SystemSpec) -> float:
        """σ²/(2λ) — стационарная дисперсия OU."""
        if spec.kind != SystemKind.OU:
            raise ConfigurationError("stationary variance is known in closed form for OU only")
        return spec.ou_sigma ** 2 / (2.0 * spec.ou_lambda)

    @staticmethod
    def time_average_variance(spec: SystemSpec, window: float) -> float:
        """
        Дисперсия среднего (1/T)∫₀^T x dt стационарного OU:
        2v·(λT − 1 + e^{−λT})/(λT)², v = σ²/(2λ).
        """
        if window <= 0:
            raise ConfigurationError("averaging window must be positive")
        s = spec.ou_lambda * window
        return 2.0 * DynamicsService.stationary_variance(spec) * (s + np.expm1(-s)) / s ** 2

    @staticmethod
    def sample_initial_states(spec: SystemSpec, count: int, rng: np.random.Generator) -> np.ndarray:
        """
        Начальные состояния ансамбля формы (count, dim).

        OU — из стационарного закона. Lorenz '96 — разгон нескольких цепочек
        и прореживание с шагом, равным времени декорреляции энергии.
        """
        if count < 1:
            raise ConfigurationError("at least one initial state is required")
        if spec.kind == SystemKind.OU:
            std = np.sqrt(DynamicsService.stationary_variance(spec))
            return std * rng.standard_normal((count, 1))

        chains = min(count, settings.l96_max_chains)
        x = spec.l96_forcing + settings.l96_init_noise * rng.standard_normal((chains, spec.l96_sites))
        spinup = int(round(settings.l96_spinup_time / spec.dt))
        energy = np.empty(spinup)
        for k in range(spinup):
            x = _rk4_l96(x, spec.l96_forcing, spec.dt)
            energy[k] = 0.5 * np.mean(x[0] ** 2)

        # вторая половина разгона уже на аттракторе
        try:
            lag_time = DynamicsService.estimate_resampling_time(energy[spinup // 2:], dt=spec.dt)
        except ResamplingTimeNotFoundError as e:
            logger.warning(f"Energy decorrelation lag not found ({e}); "
                           f"using {settings.l96_sample_interval}")
            lag_time = settings.l96_sample_interval
        lag_steps = max(1, int(round(lag_time / spec.dt)))

        rounds = int(np.ceil(count / chains))
        samples = [x.copy()]
        for _ in range(rounds - 1):
            for _ in range(lag_steps):
                x = _rk4_l96(x, spec.l96_forcing, spec.dt)
            samples.append(x.copy())
        states = np.concatenate(samples, axis=0)[:count]
        logger.info(f"Lorenz '96 initial ensemble: {count} states from {chains} chains, "
                    f"spin-up {spinup * spec.dt:.4g} per chain ({chains * spinup * spec.dt:.4g} in total), "
                    f"sample lag {lag_steps * spec.dt:.4g}")
        return states
