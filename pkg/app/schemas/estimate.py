"""
app/schemas/estimate.py
Pydantic модели оценок хвостовых вероятностей и относительных ошибок.
"""
from typing import List, Optional
from pydantic import BaseModel, Field, model_validator


class TailEstimate(BaseModel):
    """Оценка Монте-Карло P(X > a)."""
    gamma_hat: float = Field(..., ge=0, le=1)
    n_samples: int = Field(..., ge=1)
    threshold: float
    theoretical_rel_err: Optional[float] = Field(
        None, description="1/√(n·γ̂); не определена при γ̂ = 0"
    )


class ThresholdError(BaseModel):
    """Ошибки оценки для одного порога."""
    threshold: float
    gamma: float = Field(..., gt=0, description="Эталонное значение γ")
    rel_err: float = Field(..., ge=0)
    mean_dev: float = Field(..., ge=0)


class RelErrReport(BaseModel):
    """Эмпирические относительные ошибки метода по порогам."""
    method: str
    n_experiments: int = Field(..., ge=2)
    entries: List[ThresholdError] = Field(default_factory=list)

    def rows(self) -> list[dict]:
        return [{"method": self.method, "n_experiments": self.n_experiments, **e.model_dump()}
                for e in self.entries]


class TiltOracleResult(BaseModel):
    """Дисперсия оценки при экспоненциальном наклоне гауссовой величины."""
    threshold: float
    C: float
    gamma: float
    variance: float = Field(..., description="Дисперсия оценки с наклоном")
    mc_variance: float = Field(..., description="γ − γ² (обычный MC)")
    rel_err_ratio: float = Field(..., description="σ_наклон / σ_MC")

    @property
    def reduction_factor(self) -> float:
        return 1.0 / self.rel_err_ratio

    @property
    def cost_factor(self) -> float:
        return self.mc_variance / self.variance


class TiltOracleRequest(BaseModel):
    """Запрос к оракулу наклона (HTTP)."""
    threshold: float = Field(2.0)
    C: Optional[float] = Field(None, description="Если не задано — ищется оптимальное C")
    step: float = Field(0.01, gt=0)


class RankedPairsRequest(BaseModel):
    """Пары (порог, вероятность) для построения кривой возврата (HTTP)."""
    thresholds: List[float] = Field(..., min_length=1)
    probabilities: List[float] = Field(..., min_length=1)

    @model_validator(mode="after")
    def same_length(self):
        if len(self.thresholds) != len(self.probabilities):
            raise ValueError("thresholds and probabilities must have equal length")
        return self

    model_config = {
        "json_schema_extra": {
            "example": {"thresholds": [3.1, 2.4, 1.9], "probabilities": [0.001, 0.01, 0.05]}
        }
    }


class CurvePointResponse(BaseModel):
    """Точка кривой возврата."""
    threshold: float
    probability: float
    return_time: float
