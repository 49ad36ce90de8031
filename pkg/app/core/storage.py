"""
app/core/storage.py
Запись результатов: CSV (pandas), JSON, YAML, архивы .npy.

Выводы не содержат отметок времени, чтобы повторный запуск с тем же seed
давал побайтно одинаковые файлы.
"""
import json
import logging
from pathlib import Path
from typing import Any, Iterable, List, Optional
import numpy as np
import pandas as pd

from app.config import settings
from app.models.curve import CURVE_COLUMNS, ReturnCurve

logger = logging.getLogger(__name__)


def ensure_dir(path: Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_frame(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    frame.to_csv(path, index=False, float_format=settings.csv_float_format, lineterminator="\n")
    logger.info(f"Written {path} ({len(frame)} rows)")
    return path


def write_rows(rows: List[dict], path: Path, columns: Optional[List[str]] = None) -> Path:
    return write_frame(pd.DataFrame(rows, columns=columns), path)


def write_curves(curves: Iterable[ReturnCurve], path: Path, extra: Optional[List[dict]] = None) -> Path:
    """Несколько кривых в одну таблицу; extra: дополнительные столбцы для каждой."""
    frames = []
    for i, curve in enumerate(curves):
        frame = curve.to_frame()
        frame.insert(1, "label", curve.label)
        if extra is not None:
            for key, value in extra[i].items():
                frame[key] = value
        frames.append(frame)
    if frames:
        frame = pd.concat(frames, ignore_index=True)
    else:
        frame = pd.DataFrame(columns=CURVE_COLUMNS[:1] + ["label"] + CURVE_COLUMNS[1:])
    return write_frame(frame, path)


def read_curve(path: Path) -> ReturnCurve:
    return ReturnCurve.from_frame(pd.read_csv(path))


def _default(obj: Any):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def write_json(data: Any, path: Path) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    path.write_text(json.dumps(data, indent=2, ensure_ascii=False, default=_default) + "\n", encoding="utf-8")
    logger.info(f"Written {path}")
    return path


def write_text(text: str, path: Path) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    path.write_text(text, encoding="utf-8")
    return path


def write_array(values: np.ndarray, path: Path) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    np.save(path, values)
    return path
