"""
app/schemas/gev.py
Pydantic модели для GEV: параметры, результат подгонки, уровни возврата.
"""
from enum import Enum
from typing import List, Optional
from pydantic import BaseModel, Field, field_validator


class BlockLayout(str, Enum):
    """Способ формирования блоков для максимумов."""
    END_PARTICLE_BLOCKS = "end_particle_blocks"
    PER_TIME_STEP_ACROSS_TRAJECTORIES = "per_time_step_across_trajectories"
    SINGLE_LONG_SERIES = "single_long_series"


class GevParams(BaseModel):
    """Параметры GEV: положение μ, масштаб σ, форма ζ."""
    mu: float
    sigma: float = Field(..., gt=0)
    zeta: float

    def as_tuple(self) -> tuple[float, float, float]:
        return self.mu, self.sigma, self.zeta


class FitDiagnostics(BaseModel):
    """Диагностика сходимости оптимизатора."""
    starts: int
    converged_starts: int
    iterations: int
    function_evaluations: int
    gradient: List[float]
    scaled_gradient: List[float]
    stationary: bool


class GevFit(BaseModel):
    """Результат подгонки GEV методом максимального правдоподобия."""
    params: GevParams
    log_likelihood: float
    covariance: List[List[float]] = Field(..., description="3×3, порядок (μ, σ, ζ)")
    block_size: int = Field(..., ge=1)
    n_maxima: int = Field(..., ge=1)
    layout: Optional[BlockLayout] = None
    diagnostics: Optional[FitDiagnostics] = None
    shape_profile_ci: Optional[List[float]] = Field(
        None, description="Профильный 95% интервал для ζ (если запрошен)"
    )

    @field_validator("covariance")
    @classmethod
    def covariance_is_3x3(cls, v):
        if len(v) != 3 or any(len(row) != 3 for row in v):
            raise ValueError("covariance must be a 3x3 matrix")
        return v

    def standard_errors(self) -> List[float]:
        return [max(self.covariance[i][i], 0.0) ** 0.5 for i in range(3)]

    def shape_ci(self, z: float = 1.959963984540054) -> tuple[float, float]:
        """Интервал для ζ: профильный, если есть, иначе по наблюдаемой информации."""
        if self.shape_profile_ci is not None:
            return self.shape_profile_ci[0], self.shape_profile_ci[1]
        se = self.standard_errors()[2]
        return self.params.zeta - z * se, self.params.zeta + z * se


class ReturnLevel(BaseModel):
    """Уровень возврата с доверительным интервалом (дельта-метод)."""
    return_time: float = Field(..., gt=1)
    level: float
    lower: float
    upper: float


class GevFitRequest(BaseModel):
    """Запрос на подгонку GEV (HTTP)."""
    series: List[float] = Field(..., min_length=2, description="Исходный ряд или готовые максимумы")
    block_size: int = Field(1, ge=1, description="m; 1 — ряд уже состоит из максимумов")
    profile_ci: bool = Field(False, description="Профильный интервал для ζ")
    return_times: List[float] = Field(default_factory=list, description="Для расчёта уровней возврата")

    model_config = {
        "json_schema_extra": {
            "example": {
                "series": [1.2, 0.4, 2.2, 1.7, 0.9, 1.1],
                "block_size": 2,
                "profile_ci": False,
                "return_times": [10, 100],
            }
        }
    }


class GevFitResponse(BaseModel):
    """Ответ на подгонку GEV."""
    fit: GevFit
    return_levels: List[ReturnLevel] = Field(default_factory=list)
