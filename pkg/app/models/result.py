"""
Результаты экспериментов: исход одного эксперимента, пакет экспериментов
одного метода, контрольный прогон и сравнение методов.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional
import numpy as np
import pandas as pd

from app.models.curve import ReturnCurve
from app.schemas.estimate import RelErrReport, ThresholdError
from app.schemas.experiment import ControlMode, CostLedger, ExperimentConfig, Method


@dataclass
class ExperimentOutcome:
    """Исход одного эксперимента (одно значение C, один номер k)."""
    index: int
    stream_index: int
    method: Method
    C: Optional[float] = None
    cost: float = 0.0
    curves: Dict[str, ReturnCurve] = field(default_factory=dict)
    estimates: Dict[str, Dict[float, float]] = field(default_factory=dict)
    fits: Dict[str, dict] = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    ancestry: Optional[pd.DataFrame] = None
    failure: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.failure is not None

    def failure_record(self) -> dict:
        return {"experiment": self.index, "stream": self.stream_index, "C": self.C,
                "cost": self.cost, "error": self.failure}


@dataclass
class ResultBundle:
    """Все эксперименты одного метода и их сводка."""
    config: ExperimentConfig
    outcomes: List[ExperimentOutcome] = field(default_factory=list)
    averaged: Dict[str, ReturnCurve] = field(default_factory=dict)
    rel_err: List[RelErrReport] = field(default_factory=list)
    ledger: CostLedger = field(default_factory=CostLedger)
    reference: Dict[float, float] = field(default_factory=dict)
    output_dir: Optional[Path] = None

    @property
    def method(self) -> Method:
        return self.config.method

    @property
    def failures(self) -> List[dict]:
        return [o.failure_record() for o in self.outcomes if o.failed]

    @property
    def all_failed(self) -> bool:
        return bool(self.outcomes) and all(o.failed for o in self.outcomes)

    def estimates_frame(self) -> pd.DataFrame:
        rows = []
        for o in self.outcomes:
            for label, values in o.estimates.items():
                for a, gamma in sorted(values.items()):
                    rows.append({"experiment": o.index, "label": label, "C": o.C,
                                 "threshold": a, "gamma_hat": gamma})
        return pd.DataFrame(rows, columns=["experiment", "label", "C", "threshold", "gamma_hat"])

    def rel_err_frame(self) -> pd.DataFrame:
        rows = [row for report in self.rel_err for row in report.rows()]
        return pd.DataFrame(rows, columns=["method", "n_experiments", "threshold", "gamma",
                                           "rel_err", "mean_dev"])

    @staticmethod
    def reports_from_frame(frame: pd.DataFrame) -> List[RelErrReport]:
        reports = []
        for method, rows in frame.groupby("method", sort=False):
            reports.append(RelErrReport(
                method=str(method),
                n_experiments=int(rows["n_experiments"].iloc[0]),
                entries=[ThresholdError(threshold=r.threshold, gamma=r.gamma,
                                        rel_err=r.rel_err, mean_dev=r.mean_dev)
                         for r in rows.itertuples()],
            ))
        return reports

    def max_return_times(self) -> Dict[str, float]:
        return {label: c.max_return_time() for label, c in self.averaged.items()}


@dataclass
class ControlResult:
    """Контрольный прогон: максимумы блоков и построенная по ним кривая."""
    config: ExperimentConfig
    curve: ReturnCurve
    maxima: np.ndarray
    mode: ControlMode
    cost: float
    block_length: float
    archive_paths: List[Path] = field(default_factory=list)
    series_mean: Optional[float] = None
    stationarity_pvalue: Optional[float] = None
    output_dir: Optional[Path] = None

    @property
    def n_blocks(self) -> int:
        return int(self.maxima.shape[0])

    def tail(self, thresholds) -> np.ndarray:
        """Доля блоков с максимумом выше порога."""
        a = np.asarray(thresholds, dtype=float)
        return np.count_nonzero(self.maxima[None, :] > a[:, None], axis=1) / self.n_blocks

    def reference(self, thresholds) -> Dict[float, float]:
        return {float(a): float(p) for a, p in zip(thresholds, self.tail(thresholds))}


@dataclass
class ComparisonReport:
    """Сравнение методов при равной вычислительной стоимости."""
    overlay: pd.DataFrame
    deviation: pd.DataFrame
    rel_err: pd.DataFrame
    resolved: pd.DataFrame
    costs: Dict[str, float] = field(default_factory=dict)
    reference_label: str = ""

    def longest(self) -> Optional[str]:
        """Кривая, достигающая наибольшего времени возврата."""
        if self.resolved.empty:
            return None
        return str(self.resolved.loc[self.resolved["max_return_time"].idxmax(), "curve"])
