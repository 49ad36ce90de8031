"""
Реестр запусков экспериментов, запущенных через HTTP API.
Хранится в памяти процесса.
"""
import logging
import threading
from datetime import datetime, timezone
from typing import Dict, List, Optional
from uuid import uuid4

from app.schemas.experiment import ExperimentRunResponse, ExperimentStatus

logger = logging.getLogger(__name__)


class RunRegistry:
    """Потокобезопасное хранилище статусов запусков."""

    def __init__(self):
        self._runs: Dict[str, ExperimentRunResponse] = {}
        self._lock = threading.Lock()

    def create(self, name: str) -> ExperimentRunResponse:
        run = ExperimentRunResponse(
            id=str(uuid4()),
            status=ExperimentStatus.PENDING,
            name=name,
            created_at=datetime.now(timezone.utc),
        )
        with self._lock:
            self._runs[run.id] = run
        logger.info(f"Experiment run registered: {run.id} ({name})")
        return run

    def update(self, run_id: str, **fields) -> Optional[ExperimentRunResponse]:
        with self._lock:
            run = self._runs.get(run_id)
            if run is None:
                return None
            updated = run.model_copy(update=fields)
            self._runs[run_id] = updated
            return updated

    def get(self, run_id: str) -> Optional[ExperimentRunResponse]:
        with self._lock:
            return self._runs.get(run_id)

    def list(self) -> List[ExperimentRunResponse]:
        with self._lock:
            return sorted(self._runs.values(), key=lambda r: r.created_at, reverse=True)


# Глобальный реестр
registry: Optional[RunRegistry] = None


def get_registry() -> RunRegistry:
    """Получает или создаёт реестр запусков."""
    global registry
    if registry is None:
        registry = RunRegistry()
    return registry
