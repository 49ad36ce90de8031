"""
Модели кривых возврата, ранжированных пар и рядов блочных максимумов.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional
import numpy as np
import pandas as pd

from app.schemas.gev import BlockLayout

CURVE_COLUMNS = [
    "provenance", "threshold", "probability", "return_time",
    "band_lo", "band_hi", "n_experiments",
]


class Provenance(str, Enum):
    """Метод, которым построена кривая."""
    MC = "mc"
    GEV = "gev"
    GPA = "gpa"
    GKLT = "gklt"
    CONTROL = "control"


@dataclass
class RankedPairs:
    """Пары (â_k, p̂_k), упорядоченные по убыванию порога."""
    thresholds: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        thresholds = np.asarray(self.thresholds, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if thresholds.shape != weights.shape:
            raise ValueError("thresholds and weights must have equal length")
        order = np.argsort(-thresholds, kind="stable")
        self.thresholds = thresholds[order]
        self.weights = weights[order]

    def __len__(self) -> int:
        return self.thresholds.shape[0]

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.weights))


@dataclass
class BlockMaximaSeries:
    """
    Блочные максимумы.

    Для PER_TIME_STEP_ACROSS_TRAJECTORIES values имеет форму (n_steps, n_blocks):
    для каждого момента j максимумы по группам из m траекторий.
    """
    values: np.ndarray
    block_size: int
    layout: BlockLayout = BlockLayout.SINGLE_LONG_SERIES

    @property
    def flat(self) -> np.ndarray:
        return np.ravel(self.values)

    @property
    def count(self) -> int:
        return int(self.flat.shape[0])


@dataclass
class ReturnCurve:
    """
    Кривая возврата: точки (â_k, P_k, r_k) в порядке убывания порога.

    probabilities — оценка вероятности превышения порога за один блок
    (длины T_f или ΔT); return_times измеряются в тех же блоках.
    """
    thresholds: np.ndarray
    probabilities: np.ndarray
    return_times: np.ndarray
    provenance: Provenance = Provenance.MC
    band_lo: Optional[np.ndarray] = None
    band_hi: Optional[np.ndarray] = None
    n_experiments: Optional[np.ndarray] = None
    label: str = ""
    group: Optional[float] = None
    tilted_mean: Optional[float] = None
    tilted_std: Optional[float] = None
    block_length: float = 1.0
    dropped: int = 0

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=float)
        self.probabilities = np.asarray(self.probabilities, dtype=float)
        self.return_times = np.asarray(self.return_times, dtype=float)
        n = self.thresholds.shape[0]
        if self.band_lo is None:
            self.band_lo = self.return_times.copy()
        if self.band_hi is None:
            self.band_hi = self.return_times.copy()
        if self.n_experiments is None:
            self.n_experiments = np.ones(n, dtype=np.int64)

    def __len__(self) -> int:
        return self.thresholds.shape[0]

    @property
    def is_empty(self) -> bool:
        return len(self) == 0

    def is_monotone(self) -> bool:
        """r не убывает при росте порога."""
        order = np.argsort(self.thresholds, kind="stable")
        return bool(np.all(np.diff(self.return_times[order]) >= 0))

    def max_return_time(self) -> float:
        return float(np.max(self.return_times)) if len(self) else 0.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "provenance": [self.provenance.value] * len(self),
            "threshold": self.thresholds,
            "probability": self.probabilities,
            "return_time": self.return_times,
            "band_lo": self.band_lo,
            "band_hi": self.band_hi,
            "n_experiments": np.asarray(self.n_experiments, dtype=np.int64),
        }, columns=CURVE_COLUMNS)

    def to_dict(self) -> dict:
        return {
            "provenance": self.provenance.value,
            "label": self.label,
            "points": [
                {"threshold": float(a), "probability": float(p), "return_time": float(r)}
                for a, p, r in zip(self.thresholds, self.probabilities, self.return_times)
            ],
        }

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "ReturnCurve":
        provenance = Provenance(frame["provenance"].iloc[0]) if len(frame) else Provenance.MC
        return cls(
            thresholds=frame["threshold"].to_numpy(dtype=float),
            probabilities=frame["probability"].to_numpy(dtype=float),
            return_times=frame["return_time"].to_numpy(dtype=float),
            provenance=provenance,
            band_lo=frame["band_lo"].to_numpy(dtype=float),
            band_hi=frame["band_hi"].to_numpy(dtype=float),
            n_experiments=frame["n_experiments"].to_numpy(dtype=np.int64),
        )
