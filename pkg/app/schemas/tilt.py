"""
app/schemas/tilt.py
Параметры экспоненциального наклона и расписания клонирования.
"""
from enum import Enum
from pydantic import BaseModel, ConfigDict, Field, model_validator


class WeightForm(str, Enum):
    """Форма весов при клонировании."""
    END_VALUE_DIFFERENCE = "end_value_difference"   # GPA
    INTEGRATED_OBSERVABLE = "integrated_observable"  # GKLT


class TiltConfig(BaseModel):
    """Конфигурация наклона V(x) = C·x и расписания эпох."""
    model_config = ConfigDict(frozen=True)

    C: float = Field(..., description="Константа наклона (обратные единицы наблюдаемой)")
    weight_form: WeightForm = Field(WeightForm.END_VALUE_DIFFERENCE)
    tau: float = Field(..., gt=0, description="Интервал клонирования τ")
    T_f: float = Field(..., gt=0, description="Конечное время T_f")

    @model_validator(mode="after")
    def final_time_is_multiple_of_tau(self):
        ratio = self.T_f / self.tau
        if round(ratio) < 1 or abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError(f"T_f={self.T_f} must be an integer multiple of tau={self.tau}")
        return self

    @property
    def n_epochs(self) -> int:
        return int(round(self.T_f / self.tau))
