"""Modèles Pydantic des données échangées entre modules (fichiers, rapports)."""
import math
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    model_serializer,
    model_validator,
)


class MetricGroup(str, Enum):
    """Catégories de métriques."""
    NOISE_DISTORTION = "NoiseDistortion"
    NATURALNESS = "Naturalness"
    INTELLIGIBILITY = "Intelligibility"
    SPEAKER_CHARACTERISTICS = "SpeakerCharacteristics"
    SPECTRAL_ACCURACY = "SpectralAccuracy"


class Bound(BaseModel):
    """Borne réelle étendue : valeur finie ou non bornée.

    Sérialisée en `{"finite": x}` ou `"unbounded"` (jamais de ±inf dans le JSON).
    """
    model_config = ConfigDict(frozen=True)

    value: Optional[float] = Field(default=None, allow_inf_nan=False)

    @model_validator(mode="before")
    @classmethod
    def _parse(cls, data: Any) -> Any:
        if data == "unbounded":
            return {"value": None}
        if isinstance(data, dict) and "finite" in data:
            return {"value": data["finite"]}
        if isinstance(data, (int, float)) and not isinstance(data, bool):
            return {"value": None if math.isinf(data) else float(data)}
        return data

    @model_serializer
    def _dump(self) -> Any:
        return "unbounded" if self.value is None else {"finite": self.value}

    @classmethod
    def finite(cls, value: float) -> "Bound":
        """Borne finie."""
        return cls(value=value)

    @classmethod
    def unbounded(cls) -> "Bound":
        """Borne infinie."""
        return cls(value=None)

    @property
    def is_finite(self) -> bool:
        """Vrai si la borne est une valeur finie."""
        return self.value is not None


class MetricSpec(BaseModel):
    """Une métrique prédite : groupe, domaine de valeurs, référence, poids."""
    model_config = ConfigDict(frozen=True)

    name: str = Field(min_length=1)
    group: MetricGroup
    lower: Bound
    upper: Bound
    requires_reference: bool
    weight: float = Field(default=1.0, ge=0)

    @model_validator(mode="after")
    def _check_bounds(self) -> "MetricSpec":
        if self.lower.is_finite and self.upper.is_finite and self.lower.value >= self.upper.value:
            raise ValueError(
                f"{self.name}: lower {self.lower.value} must be < upper {self.upper.value}"
            )
        return self

    @property
    def lo(self) -> float:
        """Borne inférieure en flottant (-inf si non bornée)."""
        return self.lower.value if self.lower.is_finite else -math.inf

    @property
    def hi(self) -> float:
        """Borne supérieure en flottant (+inf si non bornée)."""
        return self.upper.value if self.upper.is_finite else math.inf

    def contains(self, value: float) -> bool:
        """Intervalle fermé aux bornes finies."""
        return math.isfinite(value) and self.lo <= value <= self.hi


class PreferenceLabel(str, Enum):
    """Relation de préférence ; l'ordre des logits est (A_WINS, TIE, B_WINS)."""
    A_WINS = "A"
    TIE = "tie"
    B_WINS = "B"

    @property
    def class_index(self) -> int:
        """Position dans le vecteur de logits."""
        return _LABEL_ORDER.index(self)

    @classmethod
    def from_index(cls, index: int) -> "PreferenceLabel":
        """Inverse de `class_index`."""
        return _LABEL_ORDER[index]

    def flipped(self) -> "PreferenceLabel":
        """Label de la paire inversée."""
        if self is PreferenceLabel.A_WINS:
            return PreferenceLabel.B_WINS
        if self is PreferenceLabel.B_WINS:
            return PreferenceLabel.A_WINS
        return self


_LABEL_ORDER = (PreferenceLabel.A_WINS, PreferenceLabel.TIE, PreferenceLabel.B_WINS)


class PairScope(str, Enum):
    """Portée d'appariement."""
    ANY = "any"
    CORPUS = "corpus"
    REF = "ref"
    NATIVE = "native"


class SampleRecord(BaseModel):
    """Un énoncé annoté ; un label absent vaut None (MISSING)."""
    model_config = ConfigDict(frozen=True)

    sample_id: str = Field(min_length=1)
    corpus_id: str
    system_id: Optional[str] = None
    reference_id: Optional[str] = None
    audio_path: str
    duration_s: float = Field(gt=0, allow_inf_nan=False)
    labels: Dict[str, Optional[float]] = Field(default_factory=dict)

    def label(self, metric: str) -> Optional[float]:
        """Valeur du label ou None."""
        return self.labels.get(metric)

    def has_label(self, metric: str) -> bool:
        """Vrai si le label est présent."""
        return self.labels.get(metric) is not None


class NativePairRecord(BaseModel):
    """Paire annotée nativement (protocole comparatif)."""
    model_config = ConfigDict(frozen=True)

    pair_id: str
    sample_a: str
    sample_b: str
    label: PreferenceLabel
    corpus_id: str

    @model_validator(mode="after")
    def _distinct(self) -> "NativePairRecord":
        if self.sample_a == self.sample_b:
            raise ValueError(f"pair {self.pair_id}: sample_a == sample_b")
        return self


class PreferencePair(BaseModel):
    """Paire ordonnée étiquetée, dérivée de scores ACR ou native."""
    model_config = ConfigDict(frozen=True)

    pair_id: str
    sample_a: str
    sample_b: str
    label: PreferenceLabel
    delta_used: Optional[float] = Field(default=None, ge=0)
    scope: PairScope
    score_a: Optional[float] = None
    score_b: Optional[float] = None

    @model_validator(mode="after")
    def _distinct(self) -> "PreferencePair":
        if self.sample_a == self.sample_b:
            raise ValueError(f"pair {self.pair_id}: sample_a == sample_b")
        return self

    @property
    def is_derived(self) -> bool:
        """Vrai si la paire porte ses deux scores."""
        return self.score_a is not None and self.score_b is not None

    def reversed(self) -> "PreferencePair":
        """Contrepartie symétrique : échantillons et scores échangés, label inversé."""
        return self.model_copy(update={
            "pair_id": f"{self.pair_id}~r",
            "sample_a": self.sample_b,
            "sample_b": self.sample_a,
            "label": self.label.flipped(),
            "score_a": self.score_b,
            "score_b": self.score_a,
        })


class LossReport(BaseModel):
    """Pertes d'une étape ; None signifie SKIPPED (jamais confondu avec 0)."""
    total: Optional[float] = None
    mse_total: Optional[float] = None
    per_metric: Dict[str, Optional[float]] = Field(default_factory=dict)
    ce: Optional[float] = None
    cmos: Optional[float] = None
    valid_metric_count: int = 0

    @property
    def skipped(self) -> bool:
        """Aucun terme disponible."""
        return self.total is None


class SamplePrediction(BaseModel):
    """Prédictions absolues d'un échantillon (fichier de prédictions)."""
    sample_id: str
    predictions: Dict[str, float]


class MetricCorrelation(BaseModel):
    """LCC / SRCC d'une métrique prédite contre ses labels."""
    lcc: Optional[float] = None
    srcc: Optional[float] = None
    n: int = 0


class DatasetEval(BaseModel):
    """Résultats d'un jeu d'évaluation."""
    acc_at: Dict[str, float] = Field(default_factory=dict)
    acc_strict: Optional[float] = None
    lcc: Optional[float] = None
    srcc: Optional[float] = None
    n_pairs: int = 0
    n_samples: int = 0
    inconsistency_rate: Optional[float] = None
    per_metric: Dict[str, MetricCorrelation] = Field(default_factory=dict)


class EvalReport(BaseModel):
    """Rapport d'évaluation d'un modèle, par jeu de données."""
    model: str
    per_dataset: Dict[str, DatasetEval] = Field(default_factory=dict)


class SweepPoint(BaseModel):
    """Un point de la courbe précision / seuil δ."""
    delta: float
    accuracy: float
    strict_predictions: int


class SweepCurve(BaseModel):
    """Courbe de balayage du seuil δ."""
    predictor: str
    variant: str
    points: List[SweepPoint] = Field(default_factory=list)
