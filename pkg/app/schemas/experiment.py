"""
app/schemas/experiment.py
Конфигурация эксперимента, учёт вычислительной стоимости, модели API.
"""
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional
import yaml
from pydantic import BaseModel, ConfigDict, Field

from app.schemas.gev import BlockLayout
from app.schemas.system import Observable, ObservableKind, SystemKind, SystemSpec

GRID_TOLERANCE = 1e-9


class Method(str, Enum):
    """Метод оценки."""
    MC = "mc"
    GEV = "gev"
    GPA = "gpa"
    GKLT = "gklt"
    CONTROL = "control"


class Target(str, Enum):
    """Какое значение траектории считается событием."""
    END_VALUE = "end_value"      # φ(x_{T_f})
    WINDOW_MAX = "window_max"    # max_j A_j по окнам длины T


class GkltMode(str, Enum):
    """Основная кривая GKLT."""
    FIXED_THRESHOLDS = "fixed_thresholds"
    PER_TRAJECTORY_MAX = "per_trajectory_max"


class AveragingGrid(str, Enum):
    """Сетка, на которой усредняются кривые экспериментов."""
    THRESHOLD = "threshold"          # среднее r при фиксированных порогах
    RETURN_TIME = "return_time"      # среднее порога при r, равномерных по log r


class ControlMode(str, Enum):
    """Контрольный прогон: пакет независимых траекторий или одна длинная."""
    BATCH = "batch"
    LONG = "long"


def _off_grid(value: float, dt: float) -> bool:
    ratio = value / dt
    return round(ratio) < 1 or abs(ratio - round(ratio)) > GRID_TOLERANCE * max(1.0, ratio)


class ExperimentConfig(BaseModel):
    """Полная конфигурация одного метода в эксперименте."""
    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "name": "ou-gpa-small",
                "system": {"kind": "ou", "ou_lambda": 1.0, "ou_sigma": 1.0, "dt": 0.01},
                "observable": {"kind": "position"},
                "method": "gpa",
                "C": [2.0, 3.0, 4.0],
                "n_particles": 100,
                "tau": 0.1,
                "T_f": 2.0,
                "K": 10,
                "seed": 1,
            }
        }
    )

    name: str = Field("experiment", description="Метка эксперимента")
    system: SystemSpec
    observable: Observable = Field(default_factory=Observable.position)
    method: Method
    target: Target = Field(Target.END_VALUE)

    C: List[float] = Field(default_factory=list, description="Константы наклона (GPA/GKLT)")
    n_particles: int = Field(100, ge=1, description="N")
    tau: Optional[float] = Field(None, gt=0, description="Интервал клонирования")
    T_f: float = Field(..., gt=0, description="Конечное время / длина блока")
    T: Optional[float] = Field(None, gt=0, description="Окно усреднения")
    gklt_mode: GkltMode = Field(GkltMode.PER_TRAJECTORY_MAX)

    block_sizes: List[int] = Field(default_factory=list, description="m для GEV")
    layout: BlockLayout = Field(BlockLayout.END_PARTICLE_BLOCKS)
    profile_ci: bool = Field(False)

    K: int = Field(1, ge=1, description="Число экспериментов")
    thresholds: List[float] = Field(default_factory=list, description="Пороги для оценок γ̂(a)")
    tilted_filter: bool = Field(False, description="Фильтр ±½σ при усреднении кривых")
    averaging: AveragingGrid = Field(AveragingGrid.THRESHOLD)

    budget: Optional[float] = Field(None, description="Стоимость контрольного прогона")
    control_mode: ControlMode = Field(ControlMode.BATCH)
    delta_t: Optional[float] = Field(None, description="Длина блока ΔT длинного ряда")

    reference_curve: Optional[Path] = Field(None, description="CSV контрольной кривой для ошибок")
    seed: int = Field(0, ge=0)
    output_dir: Optional[Path] = None
    save_ancestry: bool = Field(True)

    def problems(self) -> List[str]:
        """Все нарушения согласованности полей сразу."""
        found: List[str] = []
        dt = self.system.dt
        for name in ("tau", "T_f", "T", "delta_t"):
            value = getattr(self, name)
            if value is not None and _off_grid(value, dt):
                found.append(f"{name}={value} is not a positive multiple of dt={dt}")
        if self.tau is not None and _off_grid(self.T_f, self.tau):
            found.append(f"T_f={self.T_f} is not an integer multiple of tau={self.tau}")
        if self.T is not None and self.T > self.T_f:
            found.append(f"T={self.T} exceeds T_f={self.T_f}")

        if self.observable.kind == ObservableKind.POSITION and self.system.dim != 1:
            found.append("position observable requires a scalar state")
        if self.observable.kind == ObservableKind.ENERGY and self.system.kind != SystemKind.LORENZ96:
            found.append("energy observable is defined for Lorenz '96 only")

        if self.method in (Method.GPA, Method.GKLT):
            if not self.C:
                found.append(f"{self.method.value} requires at least one tilt constant C")
            if self.tau is None:
                found.append(f"{self.method.value} requires tau")
        elif self.C:
            found.append(f"tilt constants are only used by gpa/gklt, not {self.method.value}")
        if self.method == Method.GKLT or self.target == Target.WINDOW_MAX:
            if self.T is None:
                found.append("time-average target requires the window T")
        if self.method == Method.GKLT and self.target != Target.WINDOW_MAX:
            found.append("gklt estimates time averages: target must be window_max")
        if self.method == Method.GKLT and self.gklt_mode == GkltMode.FIXED_THRESHOLDS and not self.thresholds:
            found.append("fixed-threshold gklt requires thresholds")
        if self.method == Method.GPA and self.target != Target.END_VALUE:
            found.append("gpa estimates end values: target must be end_value")
        if self.method == Method.GEV:
            if not self.block_sizes:
                found.append("gev requires at least one block size m")
            if any(m < 1 for m in self.block_sizes):
                found.append("block sizes must be positive")
            if self.layout == BlockLayout.SINGLE_LONG_SERIES:
                found.append("single-long-series blocks come from a control archive, not a gev experiment")
            too_big = [m for m in self.block_sizes if 2 * m > self.n_particles]
            if too_big:
                found.append(f"block sizes {too_big} need at least 2m={2 * max(too_big)} trajectories")
        if self.method == Method.CONTROL:
            if self.budget is None or self.budget <= 0:
                found.append("control requires a positive budget")
            unit = self.T if self.T is not None else self.T_f
            if self.control_mode == ControlMode.LONG and _off_grid(self.block_length, unit):
                found.append(f"block length {self.block_length} is not a multiple of the sampling step {unit}")
            if self.control_mode == ControlMode.BATCH and self.delta_t is not None:
                found.append("delta_t applies to long control runs only")
        return found

    @property
    def block_length(self) -> float:
        return self.delta_t if self.delta_t is not None else self.T_f

    @property
    def n_groups(self) -> int:
        return len(self.C) if self.C else 1

    def planned_cost(self) -> float:
        """Стоимость в единицах «частица × T_f»."""
        if self.method == Method.CONTROL:
            return float(self.budget or 0.0)
        return float(self.n_particles * self.K * self.n_groups)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json", exclude_none=True), sort_keys=False,
                              allow_unicode=True)

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        data = yaml.safe_load(text) or {}
        return cls.model_validate(data)


class CostLedger(BaseModel):
    """Потраченная стоимость по методам (единица — одна частица на T_f)."""
    totals: Dict[str, float] = Field(default_factory=dict)
    experiments: Dict[str, int] = Field(default_factory=dict)

    def add(self, method: str, cost: float, experiments: int = 1) -> None:
        self.totals[method] = self.totals.get(method, 0.0) + float(cost)
        self.experiments[method] = self.experiments.get(method, 0) + experiments

    def merge(self, other: "CostLedger") -> "CostLedger":
        merged = CostLedger(totals=dict(self.totals), experiments=dict(self.experiments))
        for method, cost in other.totals.items():
            merged.add(method, cost, other.experiments.get(method, 0))
        return merged

    @property
    def total(self) -> float:
        return float(sum(self.totals.values()))

    def rows(self) -> List[dict]:
        return [{"method": m, "cost": c, "experiments": self.experiments.get(m, 0)}
                for m, c in self.totals.items()]


class ExperimentStatus(str, Enum):
    """Статус запуска в API."""
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


class ExperimentRunRequest(BaseModel):
    """Запуск эксперимента по пресету или по явной конфигурации."""
    preset: Optional[str] = Field(None, description="Имя пресета")
    config: Optional[ExperimentConfig] = None
    seed: Optional[int] = Field(None, ge=0)
    budget: Optional[float] = Field(None, gt=0, description="Переопределение бюджета контроля")


class ExperimentRunResponse(BaseModel):
    """Состояние запуска."""
    id: str
    status: ExperimentStatus
    name: str
    created_at: datetime
    finished_at: Optional[datetime] = None
    output_dir: Optional[str] = None
    cost: Optional[Dict[str, float]] = None
    failures: List[str] = Field(default_factory=list)
    error: Optional[str] = None


class PresetSummary(BaseModel):
    """Краткое описание пресета."""
    name: str
    description: str
    methods: List[Method]
    cost: Dict[str, float]
