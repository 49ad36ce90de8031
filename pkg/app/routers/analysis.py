"""
app/routers/analysis.py
API endpoints для расчётов без состояния: подгонка GEV, кривая возврата
по ранжированным парам, оракул наклона.
"""
import logging
from typing import List
from fastapi import APIRouter, HTTPException, status

from app.models.curve import Provenance, RankedPairs
from app.schemas.estimate import (
    CurvePointResponse,
    RankedPairsRequest,
    TiltOracleRequest,
    TiltOracleResult,
)
from app.schemas.gev import GevFitRequest, GevFitResponse
from app.services.gev_service import GevService
from app.services.mc_service import McService
from app.services.returns_service import ReturnsService

logger = logging.getLogger(__name__)

router = APIRouter(
    prefix="/analysis",
    tags=["Analysis"]
)


def _bad_request(e: ValueError, what: str) -> HTTPException:
    logger.warning(f"{what} error: {str(e)}")
    return HTTPException(
        status_code=status.HTTP_400_BAD_REQUEST,
        detail=str(e)
    )


@router.post(
    "/gev-fit",
    response_model=GevFitResponse,
    summary="Подгонка GEV по ряду или максимумам"
)
async def fit_gev(request: GevFitRequest) -> GevFitResponse:
    """
    Делит ряд на блоки по block_size, подгоняет GEV и считает уровни
    возврата для запрошенных времён.
    """
    try:
        maxima = GevService.block_maxima(request.series, request.block_size)
        fit = GevService.fit_gev_mle(maxima, profile_ci=request.profile_ci)
        levels = [GevService.return_level(fit, r) for r in request.return_times]
        return GevFitResponse(fit=fit, return_levels=levels)
    except ValueError as e:
        raise _bad_request(e, "GEV fit")


@router.post(
    "/return-curve",
    response_model=List[CurvePointResponse],
    summary="Кривая возврата по парам (порог, вероятность)"
)
async def return_curve(request: RankedPairsRequest) -> List[CurvePointResponse]:
    try:
        pairs = RankedPairs(thresholds=request.thresholds, weights=request.probabilities)
        curve = ReturnsService.curve_from_ranked(pairs, Provenance.MC)
        return [CurvePointResponse(**point) for point in curve.to_dict()["points"]]
    except ValueError as e:
        raise _bad_request(e, "Return curve")


@router.post(
    "/tilt-oracle",
    response_model=TiltOracleResult,
    summary="Дисперсия оценки с наклоном для гауссовой величины"
)
async def tilt_oracle(request: TiltOracleRequest) -> TiltOracleResult:
    """Без C ищется оптимальный наклон на сетке [0, 2a]."""
    try:
        if request.C is None:
            return McService.optimal_tilt(request.threshold, step=request.step)
        return McService.tilted_gaussian_oracle(request.threshold, request.C)
    except ValueError as e:
        raise _bad_request(e, "Tilt oracle")
