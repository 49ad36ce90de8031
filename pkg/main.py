"""
Точка входа приложения Rare Event Toolkit.
FastAPI приложение: пресеты, фоновые эксперименты, расчёты без состояния.
"""
import logging
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app import __version__
from app.config import settings
from app.core.log_setup import configure_logging
from app.routers import analysis, experiments, presets
from app.services.preset_service import PresetService

# Настройка логирования
configure_logging()
logger = logging.getLogger(__name__)

# Создание FastAPI приложения
app = FastAPI(
    title=settings.app_name,
    description="Rare event probabilities and return times: GPA, GKLT, GEV and Monte Carlo",
    version=__version__,
    debug=settings.api_debug
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Подключение роутеров
app.include_router(presets.router)
app.include_router(experiments.router)
app.include_router(analysis.router)


@app.get("/", tags=["root"])
async def root():
    """Корневой эндпоинт."""
    return {
        "message": "Rare Event Toolkit API",
        "app_name": settings.app_name,
        "version": __version__,
    }


@app.get("/health", tags=["health"])
async def health_check():
    """
    Проверка статуса приложения.

    Returns:
        Статус, версия, число пресетов и каталог результатов
    """
    return {
        "status": "healthy",
        "app_name": settings.app_name,
        "version": __version__,
        "presets": len(PresetService.names()),
        "output_dir": str(settings.resolve_output_dir()),
    }


def serve() -> None:
    import uvicorn

    logger.info(f"Starting {settings.app_name} on {settings.api_host}:{settings.api_port}")
    if settings.api_debug:
        # для reload нужна строка импорта, а не объект
        uvicorn.run("main:app", host=settings.api_host, port=settings.api_port, reload=True)
    else:
        uvicorn.run(app, host=settings.api_host, port=settings.api_port, reload=False)


if __name__ == "__main__":
    serve()
