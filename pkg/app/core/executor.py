"""
app/core/executor.py
Пул воркеров для независимых экспериментов.

Результаты возвращаются в порядке задач, а случайность задачи определяется
только её индексом, поэтому число воркеров не влияет на результат.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar
from app.config import settings

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def map_ordered(fn: Callable[[T], R], tasks: Iterable[T], workers: Optional[int] = None) -> List[R]:
    """
    Применяет fn ко всем задачам; при workers > 1 в пуле процессов.

    fn и задачи должны сериализоваться pickle (функции уровня модуля).
    """
    tasks = list(tasks)
    workers = settings.workers if workers is None else workers
    if workers <= 1 or len(tasks) <= 1:
        return [fn(task) for task in tasks]
    workers = min(workers, len(tasks))
    logger.info(f"Running {len(tasks)} tasks on {workers} workers")
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))
