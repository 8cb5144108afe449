"""Cache des entrées audio et des caractéristiques précalculées."""
from functools import lru_cache
from pathlib import Path
from typing import Tuple

import numpy as np
import soundfile as sf

from app.config import settings
from app.errors import MissingFeatureFileError

FEATURE_MAGIC = b"QFEA"
# magic (4 octets) + d (uint32) + l (uint32)
FEATURE_HEADER_BYTES = 12


class CacheManager:
    """Caches LRU bornés, partagés par les chargeurs (clé = chemin)."""

    def __init__(
        self,
        audio_maxsize: int = settings.AUDIO_CACHE_SIZE,
        feature_maxsize: int = settings.FEATURE_CACHE_SIZE,
    ):
        self.audio_maxsize = audio_maxsize
        self.feature_maxsize = feature_maxsize
        self._audio = lru_cache(maxsize=audio_maxsize)(self._read_audio)
        self._features = lru_cache(maxsize=feature_maxsize)(self._read_features)

    @staticmethod
    def _read_audio(path: str) -> Tuple[np.ndarray, int]:
        data, sample_rate = sf.read(path, dtype="float32", always_2d=True)
        # mixage mono
        mono = data.mean(axis=1).astype(np.float32)
        mono.setflags(write=False)
        return mono, int(sample_rate)

    @staticmethod
    def _read_features(path: str) -> np.ndarray:
        file = Path(path)
        if not file.is_file():
            raise MissingFeatureFileError(f"feature file not found: {path}")
        raw = file.read_bytes()
        if len(raw) < FEATURE_HEADER_BYTES or raw[:4] != FEATURE_MAGIC:
            raise MissingFeatureFileError(f"{path}: bad feature header")
        d, length = np.frombuffer(raw[4:FEATURE_HEADER_BYTES], dtype="<u4")
        expected = FEATURE_HEADER_BYTES + int(d) * int(length) * 4
        if len(raw) != expected:
            raise MissingFeatureFileError(
                f"{path}: expected {expected} bytes for {d}x{length}, got {len(raw)}"
            )
        matrix = np.frombuffer(raw[FEATURE_HEADER_BYTES:], dtype="<f4").reshape(int(d), int(length))
        return matrix

    def audio(self, path: str) -> Tuple[np.ndarray, int]:
        """Forme d'onde mono float32 (lecture seule) et fréquence d'échantillonnage."""
        return self._audio(str(path))

    def features(self, path: str) -> np.ndarray:
        """Matrice d x l (float32, lecture seule)."""
        return self._features(str(path))

    def clear(self) -> None:
        """Vide les deux caches."""
        self._audio.cache_clear()
        self._features.cache_clear()


def write_feature_file(path: Path, matrix: np.ndarray) -> None:
    """Écrit une matrice d x l au format précalculé (en-tête + float32 row-major)."""
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {matrix.shape}")
    d, length = matrix.shape
    header = FEATURE_MAGIC + np.array([d, length], dtype="<u4").tobytes()
    Path(path).write_bytes(header + matrix.tobytes())


cache_manager = CacheManager()
