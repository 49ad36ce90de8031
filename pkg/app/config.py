"""
Конфигурация приложения.
Загружает переменные окружения из .env файла.
"""
from pathlib import Path
from typing import Optional
from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import Field


class Settings(BaseSettings):
    """Настройки приложения из переменных окружения."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        populate_by_name=True,
        extra="ignore",
    )

    # Приложение
    app_name: str = Field("Rare Event Toolkit", alias="APP_NAME")
    log_level: str = Field("INFO", alias="LOG_LEVEL")

    # HTTP API
    api_host: str = Field("0.0.0.0", alias="API_HOST")
    api_port: int = Field(8000, alias="API_PORT")
    api_debug: bool = Field(False, alias="API_DEBUG")

    # Эксперименты
    output_dir: Path = Field(Path("results"), alias="OUTPUT_DIR")
    workers: int = Field(1, ge=1, alias="WORKERS")
    default_seed: int = Field(20240101, ge=0, alias="DEFAULT_SEED")
    csv_float_format: str = Field("%.17g", alias="CSV_FLOAT_FORMAT")
    batch_chunk_size: int = Field(20000, ge=1, alias="BATCH_CHUNK_SIZE")
    archive_flush_chunks: int = Field(50, ge=1, alias="ARCHIVE_FLUSH_CHUNKS")

    # Интегрирование
    ou_dt: float = Field(1e-2, gt=0, alias="OU_DT")
    l96_dt: float = Field(1e-3, gt=0, alias="L96_DT")
    autocorr_tolerance: float = Field(0.05, gt=0, lt=1, alias="AUTOCORR_TOLERANCE")

    # Lorenz '96: разгон ансамбля начальных условий.
    # Разгон идёт на l96_max_chains независимых цепочках сразу, суммарное время на аттракторе
    # равно числу цепочек, умноженному на l96_spinup_time.
    l96_spinup_time: float = Field(10.0, gt=0, alias="L96_SPINUP_TIME")
    l96_sample_interval: float = Field(1.0, gt=0, alias="L96_SAMPLE_INTERVAL")
    l96_max_chains: int = Field(256, ge=1, alias="L96_MAX_CHAINS")
    l96_init_noise: float = Field(1.0, ge=0, alias="L96_INIT_NOISE")

    # GEV
    gev_soft_min_maxima: int = Field(30, ge=1, alias="GEV_SOFT_MIN_MAXIMA")

    def resolve_output_dir(self, override: Optional[Path] = None) -> Path:
        """Каталог для результатов: явный аргумент или значение из окружения."""
        return Path(override) if override is not None else self.output_dir


# Глобальный экземпляр настроек
settings = Settings()
