"""
Модели ансамбля частиц, журнала весов и дерева предков.
"""
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional
import numpy as np
import pandas as pd

from app.schemas.tilt import TiltConfig, WeightForm


@dataclass
class Ensemble:
    """
    Ансамбль из N частиц на текущей эпохе.

    Слот частицы (индекс в массивах) служит её идентификатором на эпохе;
    parent — слот родителя на предыдущей эпохе, root — исходная частица.
    """
    values: np.ndarray                 # (N, dim) текущие состояния
    initial_observable: np.ndarray     # φ(x_root, 0) для линии предков
    start_observable: np.ndarray       # φ в начале текущей эпохи
    end_observable: np.ndarray         # φ в конце текущей эпохи
    epoch_integral: np.ndarray         # ∫ φ dt за текущую эпоху
    cumulative_integral: np.ndarray    # ∫ φ dt с начала по линии предков
    parent: np.ndarray
    root: np.ndarray
    is_clone: np.ndarray
    epoch: int = 0
    n0: int = 0

    @classmethod
    def initial(cls, values: np.ndarray, observable: np.ndarray) -> "Ensemble":
        values = np.atleast_2d(np.asarray(values, dtype=float))
        n = values.shape[0]
        observable = np.asarray(observable, dtype=float)
        return cls(
            values=values,
            initial_observable=observable.copy(),
            start_observable=observable.copy(),
            end_observable=observable.copy(),
            epoch_integral=np.zeros(n),
            cumulative_integral=np.zeros(n),
            parent=np.full(n, -1, dtype=np.int64),
            root=np.arange(n, dtype=np.int64),
            is_clone=np.zeros(n, dtype=bool),
            epoch=0,
            n0=n,
        )

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def select(self, parents: np.ndarray, is_clone: np.ndarray) -> "Ensemble":
        """Новый ансамбль из копий частиц с указанными слотами-родителями."""
        return replace(
            self,
            values=self.values[parents].copy(),
            initial_observable=self.initial_observable[parents],
            start_observable=self.start_observable[parents],
            end_observable=self.end_observable[parents],
            epoch_integral=self.epoch_integral[parents],
            cumulative_integral=self.cumulative_integral[parents],
            parent=np.asarray(parents, dtype=np.int64),
            root=self.root[parents],
            is_clone=np.asarray(is_clone, dtype=bool),
        )

    def tilted_statistics(self) -> tuple[float, float]:
        """Среднее и СКО наблюдаемой в конце последней эпохи."""
        return float(np.mean(self.end_observable)), float(np.std(self.end_observable))


@dataclass
class EpochWeights:
    """Веса одной эпохи: ненормированные w_n, Z_i = mean(w), W = w/Z."""
    epoch: int
    raw: np.ndarray
    z: float
    normalized: np.ndarray
    form: WeightForm = WeightForm.END_VALUE_DIFFERENCE

    @property
    def log_z(self) -> float:
        return float(np.log(self.z))


@dataclass
class WeightLedger:
    """Журнал нормировок Z_i и весов по эпохам."""
    entries: List[EpochWeights] = field(default_factory=list)

    def append(self, entry: EpochWeights) -> None:
        self.entries.append(entry)

    @property
    def z(self) -> np.ndarray:
        return np.array([e.z for e in self.entries])

    @property
    def log_z_sum(self) -> float:
        """log Π Z_i, накопленный в логарифмах."""
        return float(np.sum(np.log(self.z))) if self.entries else 0.0

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class AncestryRecord:
    epoch: int
    parents: np.ndarray
    raw_weights: np.ndarray
    z: float
    is_clone: np.ndarray
    perturbation: np.ndarray


@dataclass
class AncestryLog:
    """Дерево предков: для каждой эпохи слот родителя каждого потомка."""
    records: Dict[int, AncestryRecord] = field(default_factory=dict)

    def add(self, record: AncestryRecord) -> None:
        self.records[record.epoch] = record

    @property
    def n_epochs(self) -> int:
        return max(self.records) if self.records else 0

    def parents(self, epoch: int) -> Optional[np.ndarray]:
        record = self.records.get(epoch)
        return None if record is None else record.parents

    def set_perturbation(self, epoch: int, norms: np.ndarray) -> None:
        if epoch in self.records:
            self.records[epoch].perturbation = norms

    def to_frame(self) -> pd.DataFrame:
        """Плоская таблица: epoch, child_id, parent_id, raw_weight, Z_i."""
        frames = []
        for epoch in sorted(self.records):
            r = self.records[epoch]
            n = r.parents.shape[0]
            frames.append(pd.DataFrame({
                "epoch": np.full(n, epoch, dtype=np.int64),
                "child_id": np.arange(n, dtype=np.int64),
                "parent_id": r.parents,
                "raw_weight": r.raw_weights[r.parents],
                "Z_i": np.full(n, r.z),
                "is_clone": r.is_clone,
                "perturbation": r.perturbation,
            }))
        if not frames:
            return pd.DataFrame(columns=["epoch", "child_id", "parent_id", "raw_weight",
                                         "Z_i", "is_clone", "perturbation"])
        return pd.concat(frames, ignore_index=True)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "AncestryLog":
        log = cls()
        for epoch, group in frame.groupby("epoch", sort=True):
            group = group.sort_values("child_id")
            parents = group["parent_id"].to_numpy(dtype=np.int64)
            raw = np.zeros(int(parents.max()) + 1 if parents.size else 0)
            raw[parents] = group["raw_weight"].to_numpy(dtype=float)
            log.add(AncestryRecord(
                epoch=int(epoch),
                parents=parents,
                raw_weights=raw,
                z=float(group["Z_i"].iloc[0]),
                is_clone=group["is_clone"].to_numpy(dtype=bool) if "is_clone" in group else
                np.zeros(len(group), dtype=bool),
                perturbation=group["perturbation"].to_numpy(dtype=float) if "perturbation" in group else
                np.zeros(len(group)),
            ))
        return log


@dataclass
class EnsembleRun:
    """Результат прогона GPA/GKLT (или прогона без клонирования)."""
    final: Ensemble
    ledger: WeightLedger
    ancestry: AncestryLog
    segments: Dict[int, np.ndarray]   # эпоха -> (N, steps+1) значения φ
    tilt: TiltConfig
    dt: float
    cost: float                       # в единицах «частица × T_f»

    @property
    def n_particles(self) -> int:
        return self.final.n0
