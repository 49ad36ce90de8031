"""
app/routers/experiments.py
API endpoints для запуска экспериментов в фоне и получения их статуса.
"""
import logging
from datetime import datetime, timezone
from typing import List
from fastapi import APIRouter, BackgroundTasks, HTTPException, status

from app.config import settings
from app.core.registry import get_registry
from app.models.result import ResultBundle
from app.schemas.experiment import (
    ExperimentRunRequest,
    ExperimentRunResponse,
    ExperimentStatus,
    Method,
)
from app.services.experiment_service import ExperimentService
from app.services.preset_service import PresetService

logger = logging.getLogger(__name__)

router = APIRouter(
    prefix="/experiments",
    tags=["Experiments"]
)


def _execute(run_id: str, request: ExperimentRunRequest) -> None:
    """Фоновая задача: выполняет пресет или конфигурацию и обновляет реестр."""
    registry = get_registry()
    registry.update(run_id, status=ExperimentStatus.RUNNING)
    out_dir = settings.resolve_output_dir() / run_id
    try:
        if request.preset is not None:
            results = PresetService.run_preset(request.preset, seed=request.seed, out_dir=out_dir,
                                               budget=request.budget)
        else:
            cfg = request.config
            if request.seed is not None:
                cfg = cfg.model_copy(update={"seed": request.seed})
            cfg = cfg.model_copy(update={"output_dir": out_dir})
            if cfg.method == Method.CONTROL:
                results = {cfg.name: ExperimentService.run_control(cfg, budget=request.budget)}
            else:
                results = {cfg.name: ExperimentService.run_experiment(cfg)}
        failures = [f"{name}: experiment {f['experiment']}: {f['error']}"
                    for name, r in results.items() if isinstance(r, ResultBundle) for f in r.failures]
        cost = {name: (r.ledger.total if isinstance(r, ResultBundle) else r.cost) for name, r in results.items()}
        registry.update(run_id, status=ExperimentStatus.COMPLETED, finished_at=datetime.now(timezone.utc),
                        output_dir=str(out_dir), cost=cost, failures=failures)
        logger.info(f"Experiment run {run_id} completed")
    except Exception as e:
        logger.error(f"Experiment run {run_id} failed: {str(e)}")
        registry.update(run_id, status=ExperimentStatus.FAILED, finished_at=datetime.now(timezone.utc),
                        error=str(e))


@router.post(
    "/",
    response_model=ExperimentRunResponse,
    status_code=status.HTTP_202_ACCEPTED,
    summary="Запустить эксперимент"
)
async def start_experiment(request: ExperimentRunRequest, background_tasks: BackgroundTasks) -> ExperimentRunResponse:
    """
    Запускает пресет или явную конфигурацию в фоне.

    Конфигурация проверяется до постановки в очередь: все проблемы
    возвращаются одним ответом 400.
    """
    try:
        if (request.preset is None) == (request.config is None):
            raise ValueError("exactly one of preset or config must be given")
        if request.preset is not None:
            PresetService.get(request.preset)
            name = request.preset
        else:
            problems = request.config.problems()
            if problems:
                raise ValueError("; ".join(problems))
            name = request.config.name
    except ValueError as e:
        logger.warning(f"Experiment request rejected: {str(e)}")
        raise HTTPException(
            status_code=status.HTTP_400_BAD_REQUEST,
            detail=str(e)
        )

    run = get_registry().create(name)
    background_tasks.add_task(_execute, run.id, request)
    return run


@router.get(
    "/",
    response_model=List[ExperimentRunResponse],
    summary="Список запусков"
)
async def list_experiments() -> List[ExperimentRunResponse]:
    return get_registry().list()


@router.get(
    "/{run_id}",
    response_model=ExperimentRunResponse,
    summary="Статус запуска"
)
async def get_experiment(run_id: str) -> ExperimentRunResponse:
    run = get_registry().get(run_id)
    if run is None:
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail="Experiment run not found"
        )
    return run
