"""
app/routers/presets.py
API endpoints для каталога пресетов.
"""
import logging
from typing import List
from fastapi import APIRouter, HTTPException, status

from app.schemas.experiment import ExperimentConfig, PresetSummary
from app.services.preset_service import PresetService

logger = logging.getLogger(__name__)

router = APIRouter(
    prefix="/presets",
    tags=["Presets"]
)


@router.get(
    "/",
    response_model=List[PresetSummary],
    summary="Список пресетов"
)
async def list_presets() -> List[PresetSummary]:
    """Все пресеты со стоимостью каждой конфигурации."""
    return PresetService.list()


@router.get(
    "/{name}",
    response_model=List[ExperimentConfig],
    summary="Конфигурации пресета"
)
async def get_preset(name: str) -> List[ExperimentConfig]:
    try:
        return PresetService.get(name)
    except ValueError as e:
        logger.warning(f"Preset lookup error: {str(e)}")
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail=str(e)
        )
