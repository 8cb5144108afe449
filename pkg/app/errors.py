"""Exceptions du domaine.

Chaque erreur dérive de `QualiPyError` et du builtin correspondant, pour que
l'appelant puisse attraper l'une ou l'autre.
"""


class QualiPyError(Exception):
    """Base de toutes les erreurs QualiPy."""


# --- Registre ------------------------------------------------------------------

class UnknownMetricError(QualiPyError, KeyError):
    """Métrique absente du registre."""

    def __init__(self, name: str):
        super().__init__(f"unknown metric: {name!r}")
        self.name = name

    def __str__(self) -> str:
        return str(self.args[0])


class UnknownGroupError(QualiPyError, KeyError):
    """Groupe de métriques inconnu ou absent."""

    def __init__(self, group: str):
        super().__init__(f"unknown metric group: {group!r}")
        self.group = group

    def __str__(self) -> str:
        return str(self.args[0])


class InvalidRangeError(QualiPyError, ValueError):
    """Bornes incohérentes (lower >= upper)."""


# --- Données -------------------------------------------------------------------

class ManifestParseError(QualiPyError, ValueError):
    """Ligne de manifeste illisible."""

    def __init__(self, path: str, line: int, reason: str):
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line


class RangeViolationError(QualiPyError, ValueError):
    """Label hors de l'intervalle de la métrique."""

    def __init__(self, sample_id: str, metric: str, value: float, where: str = ""):
        prefix = f"{where}: " if where else ""
        super().__init__(
            f"{prefix}sample {sample_id!r}: {metric}={value!r} outside the registry range"
        )
        self.sample_id = sample_id
        self.metric = metric
        self.value = value


class UnknownSampleError(QualiPyError, KeyError):
    """sample_id référencé par une paire mais absent du manifeste."""

    def __str__(self) -> str:
        return str(self.args[0])


class DuplicateSampleError(QualiPyError, ValueError):
    """sample_id répété dans un manifeste."""


class EmptyInputError(QualiPyError, ValueError):
    """Entrée vide là où au moins un élément est requis."""


class MissingLabelError(QualiPyError, ValueError):
    """Label requis absent (construction de paires)."""


class MissingMetadataError(QualiPyError, ValueError):
    """reference_id / system_id requis absent."""


class NegativeDeltaError(QualiPyError, ValueError):
    """Seuil d'égalité négatif."""


class NativePairError(QualiPyError, ValueError):
    """Paire native sans scores (impossible à ré-étiqueter)."""


# --- Modèle --------------------------------------------------------------------

class ShapeMismatchError(QualiPyError, ValueError):
    """Dimensions incompatibles entre tenseurs."""


class MissingFeatureFileError(QualiPyError, FileNotFoundError):
    """Fichier de caractéristiques précalculées introuvable ou invalide."""


# --- Entraînement --------------------------------------------------------------

class OversizedSampleError(QualiPyError, ValueError):
    """Échantillon plus long que le budget d'un batch."""


class AllTermsSkippedError(QualiPyError, ValueError):
    """Aucun terme de perte disponible."""


class CheckpointVersionError(QualiPyError, ValueError):
    """Checkpoint incompatible (version ou registre)."""


class CheckpointCorruptError(QualiPyError, ValueError):
    """Checkpoint illisible ou tronqué."""


# --- Évaluation ----------------------------------------------------------------

class DegenerateInputError(QualiPyError, ValueError):
    """Corrélation indéfinie (vecteur constant, longueur < 2)."""


# --- Configuration -------------------------------------------------------------

class ConfigError(QualiPyError, ValueError):
    """Document de configuration invalide."""
