"""
app/schemas/system.py
Pydantic модели источников траекторий и наблюдаемых.
"""
from enum import Enum
from typing import Optional
from pydantic import BaseModel, ConfigDict, Field, model_validator


class SystemKind(str, Enum):
    """Тип динамической системы."""
    OU = "ou"
    LORENZ96 = "lorenz96"


class ObservableKind(str, Enum):
    """Тип наблюдаемой."""
    POSITION = "position"
    ENERGY = "energy"
    CUSTOM = "custom"


class SystemSpec(BaseModel):
    """Параметры источника траекторий."""
    model_config = ConfigDict(
        frozen=True,
        json_schema_extra={
            "example": {"kind": "ou", "ou_lambda": 1.0, "ou_sigma": 1.0, "dt": 0.01}
        },
    )

    kind: SystemKind = Field(..., description="ou или lorenz96")

    # Ornstein–Uhlenbeck: dx = -λ x dt + σ dW
    ou_lambda: float = Field(1.0, gt=0, description="Скорость релаксации λ")
    ou_sigma: float = Field(1.0, ge=0, description="Амплитуда шума σ")
    ou_exact: bool = Field(False, description="Точный переход OU вместо Эйлера–Маруямы")

    # Lorenz '96
    l96_sites: int = Field(32, ge=4, description="Число узлов J")
    l96_forcing: float = Field(64.0, description="Форсинг R")

    clone_epsilon: float = Field(0.0, ge=0, description="Полуширина возмущения клонов ε")
    dt: float = Field(..., gt=0, description="Шаг интегрирования")

    @property
    def dim(self) -> int:
        return 1 if self.kind == SystemKind.OU else self.l96_sites

    def steps_for(self, duration: float, tolerance: float = 1e-9) -> Optional[int]:
        """Число шагов dt на отрезке duration или None, если он не на сетке."""
        ratio = duration / self.dt
        steps = int(round(ratio))
        if steps <= 0 or abs(ratio - steps) > tolerance * max(1.0, ratio):
            return None
        return steps

    @classmethod
    def ou(cls, lam: float = 1.0, sigma: float = 1.0, dt: float = 1e-2, exact: bool = False) -> "SystemSpec":
        return cls(kind=SystemKind.OU, ou_lambda=lam, ou_sigma=sigma, dt=dt, ou_exact=exact)

    @classmethod
    def lorenz96(cls, sites: int = 32, forcing: float = 64.0, dt: float = 1e-3,
                 epsilon: float = 1e-3) -> "SystemSpec":
        return cls(kind=SystemKind.LORENZ96, l96_sites=sites, l96_forcing=forcing,
                   dt=dt, clone_epsilon=epsilon)


class Observable(BaseModel):
    """Наблюдаемая φ."""
    model_config = ConfigDict(frozen=True)

    kind: ObservableKind = Field(ObservableKind.POSITION)
    tag: Optional[str] = Field(None, description="Имя зарегистрированной наблюдаемой (для custom)")

    @model_validator(mode="after")
    def custom_requires_tag(self):
        if self.kind == ObservableKind.CUSTOM and not self.tag:
            raise ValueError("custom observable requires a tag")
        return self

    @classmethod
    def position(cls) -> "Observable":
        return cls(kind=ObservableKind.POSITION)

    @classmethod
    def energy(cls) -> "Observable":
        return cls(kind=ObservableKind.ENERGY)
