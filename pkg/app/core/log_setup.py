"""
app/core/log_setup.py
Настройка логирования (общая для API и CLI).
"""
import logging
from typing import Optional
from app.config import settings

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def configure_logging(level: Optional[str] = None) -> None:
    """Настраивает корневой логгер; уровень по умолчанию берётся из настроек."""
    logging.basicConfig(
        level=(level or settings.log_level).upper(),
        format=LOG_FORMAT,
        force=True,
    )
