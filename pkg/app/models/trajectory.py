"""
Модели состояний и траекторий.
"""
from dataclasses import dataclass, field
from typing import List, Optional
import numpy as np

from app.core.exceptions import RejectedInputError
from app.schemas.system import SystemKind

GRID_TOLERANCE = 1e-12


@dataclass
class State:
    """Состояние системы в момент времени time."""
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float))

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def to_dict(self) -> dict:
        return {"values": self.values.tolist(), "time": self.time}

    @classmethod
    def from_dict(cls, data: dict) -> "State":
        return cls(values=np.asarray(data["values"], dtype=float), time=float(data.get("time", 0.0)))


@dataclass
class Trajectory:
    """
    Траектория на равномерной сетке с шагом dt.

    values имеет форму (n_points, dim).
    """
    values: np.ndarray
    dt: float
    t0: float = 0.0
    particle_id: int = 0
    kind: SystemKind = SystemKind.OU

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        self.values = values
        if self.dt <= 0:
            raise RejectedInputError("trajectory step dt must be positive")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.values.shape[0])

    def __len__(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_states(cls, states: List[State], particle_id: int = 0,
                    kind: SystemKind = SystemKind.OU) -> "Trajectory":
        """Собирает траекторию из состояний, проверяя равномерность сетки."""
        if len(states) < 2:
            raise RejectedInputError("a trajectory needs at least two states")
        times = np.array([s.time for s in states])
        steps = np.diff(times)
        dt = float(steps[0])
        if dt <= 0 or np.any(steps <= 0):
            raise RejectedInputError("trajectory times must be strictly increasing")
        if np.max(np.abs(steps - dt)) > GRID_TOLERANCE * max(abs(dt), abs(times[-1])):
            raise RejectedInputError("trajectory times are not on a uniform grid")
        values = np.vstack([s.values for s in states])
        return cls(values=values, dt=dt, t0=float(times[0]), particle_id=particle_id, kind=kind)


@dataclass
class BackwardTrajectory:
    """Восстановленная по предкам траектория наблюдаемой на [0, T_f]."""
    series: np.ndarray
    dt: float
    integral: float
    source_id: int
    slots: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    boundary_mismatch: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def final_time(self) -> float:
        return self.dt * (self.series.shape[0] - 1)

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "integral": self.integral,
            "dt": self.dt,
            "series": self.series.tolist(),
        }


@dataclass
class TimeAverageSeries:
    """Неперекрывающиеся средние по окнам длины window."""
    window: float
    values: np.ndarray
    source_id: Optional[int] = None

    @property
    def maximum(self) -> float:
        return float(np.max(self.values))
