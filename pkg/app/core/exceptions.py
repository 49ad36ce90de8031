"""
app/core/exceptions.py
Исключения предметной области.

Все ошибки наследуются от ValueError, поэтому роутеры и CLI обрабатывают их
так же, как и остальные ошибки валидации.
"""
from typing import Optional, Sequence


class RareEventError(ValueError):
    """Базовая ошибка инструментария."""


class RejectedInputError(RareEventError):
    """Нечисловое (NaN/inf) состояние или случайная выборка."""


class ConfigurationError(RareEventError):
    """Некорректная конфигурация; содержит полный список проблем."""

    def __init__(self, message: str, problems: Optional[Sequence[str]] = None):
        self.problems = list(problems) if problems else [message]
        super().__init__(message)


class ResamplingTimeNotFoundError(RareEventError):
    """Автокорреляция не опустилась до допуска на половине длины ряда."""

    def __init__(self, min_autocorrelation: float):
        self.min_autocorrelation = min_autocorrelation
        super().__init__(
            f"No lag reaches the autocorrelation tolerance; "
            f"minimum achieved |acf| = {min_autocorrelation:.4g}"
        )


class WeightOverflowError(RareEventError):
    """exp(C·φ) переполняется; нужно уменьшить C."""

    def __init__(self, max_exponent: float, epoch: int):
        self.max_exponent = max_exponent
        self.epoch = epoch
        super().__init__(
            f"Weight exponent {max_exponent:.4g} overflows at epoch {epoch}; reduce C"
        )


class ExtinctionError(RareEventError):
    """Все частицы получили нулевое число копий."""

    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"Ensemble extinction at epoch {epoch} (distribution breakdown)")


class LineageIntegrityError(RareEventError):
    """Разрыв в дереве предков."""

    def __init__(self, epoch: int, particle_id: int):
        self.epoch = epoch
        self.particle_id = particle_id
        super().__init__(f"Broken lineage at epoch {epoch}, particle {particle_id}")


class ConvergenceError(RareEventError):
    """Оптимизатор не сошёлся ни из одной стартовой точки."""

    def __init__(self, message: str, best_params: Optional[Sequence[float]] = None,
                 gradient_norms: Optional[Sequence[float]] = None):
        self.best_params = list(best_params) if best_params is not None else None
        self.gradient_norms = list(gradient_norms) if gradient_norms is not None else None
        super().__init__(message)


class DomainError(RareEventError):
    """Аргумент вне области определения."""


class InsufficientDataError(RareEventError):
    """Слишком мало данных."""

    def __init__(self, required: int, available: int):
        self.required = required
        self.available = available
        super().__init__(f"Need at least {required} samples, got {available}")


class CostMismatchError(RareEventError):
    """Сравнение методов при разной вычислительной стоимости."""
