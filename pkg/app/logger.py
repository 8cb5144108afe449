'''
Module de configuration pour le logger centralisé de QualiPy.

Loguru fournit un logger pré-configuré : console colorée sur stderr et fichiers
rotatifs séparés par niveau dans `settings.LOG_DIR`.
'''

import os
import sys

from loguru import logger

from app.config import settings

# ==============================================================================
# Configuration de Loguru
# ==============================================================================

os.makedirs(settings.LOG_DIR, exist_ok=True)

# Supprimer le handler par défaut pour éviter les doublons
logger.remove()

LOG_FORMAT_CONSOLE = (
    "<white>{time:YYYY-MM-DD HH:mm:ss.SSS}</white> | "
    "<level>{level: <8}</level> | "
    "<light-black>{name}:{function}:{line}</light-black> - "
    "<level><b>{message}</b></level>"
)
LOG_FORMAT_FILE = (
    "{time:YYYY-MM-DD HH:mm:ss.SSS} | "
    "{level: <8} | "
    "{name}:{function}:{line} - "
    "{message}"
)

logger.add(
    sys.stderr,
    level=settings.LOG_LEVEL,
    format=LOG_FORMAT_CONSOLE,
    colorize=True,
    backtrace=True,
    diagnose=False,
)


def _file_handler(filename: str, level: str, **kwargs) -> None:
    """Fichier à rotation journalière, 30 jours de rétention, compressé."""
    logger.add(
        os.path.join(settings.LOG_DIR, filename),
        level=level,
        format=LOG_FORMAT_FILE,
        rotation="00:00",
        retention="30 days",
        compression="zip",
        encoding="utf-8",
        **kwargs,
    )


_file_handler("debug.log", "DEBUG", filter=lambda record: record["level"].name == "DEBUG")
_file_handler(
    "info.log", "INFO",
    filter=lambda record: record["level"].name in ("INFO", "SUCCESS", "WARNING"),
)
# Trace complète pour les erreurs
_file_handler("error.log", "ERROR", backtrace=True, diagnose=True)
