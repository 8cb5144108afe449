"""Registre des métriques prédites : source unique des noms, groupes, domaines et poids."""
import json
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

from app.errors import ConfigError, UnknownGroupError, UnknownMetricError
from app.models import Bound, MetricGroup, MetricSpec

# Identifiants intégrés des sous-ensembles de supervision
BUILTIN_SUPERVISION = ("M1", "M5", "M15")

_INF = Bound.unbounded()


def _spec(name: str, group: MetricGroup, lower: Bound, upper: Bound, ref: bool) -> MetricSpec:
    return MetricSpec(name=name, group=group, lower=lower, upper=upper, requires_reference=ref)


def _f(value: float) -> Bound:
    return Bound.finite(value)


_DEFAULT_SPECS: Tuple[MetricSpec, ...] = (
    # Bruit et distorsion
    _spec("PESQ", MetricGroup.NOISE_DISTORTION, _f(1.0), _f(4.5), True),
    _spec("PESQc2", MetricGroup.NOISE_DISTORTION, _f(1.0), _f(4.5), True),
    _spec("DNSMOS", MetricGroup.NOISE_DISTORTION, _f(1.0), _f(5.0), False),
    _spec("LSD", MetricGroup.NOISE_DISTORTION, _f(0.0), _INF, True),
    _spec("SDR", MetricGroup.NOISE_DISTORTION, _INF, _INF, True),
    # Naturel
    _spec("MOS", MetricGroup.NATURALNESS, _f(1.0), _f(5.0), False),
    _spec("UTMOS", MetricGroup.NATURALNESS, _f(1.0), _f(5.0), False),
    _spec("Distill_MOS", MetricGroup.NATURALNESS, _f(1.0), _f(5.0), False),
    _spec("NISQA_MOS", MetricGroup.NATURALNESS, _f(1.0), _f(5.0), False),
    _spec("SCOREQ", MetricGroup.NATURALNESS, _f(1.0), _f(5.0), False),
    # Intelligibilité
    _spec("ESTOI", MetricGroup.INTELLIGIBILITY, _f(0.0), _f(1.0), True),
    _spec("SpeechBERTScore", MetricGroup.INTELLIGIBILITY, _f(-1.0), _f(1.0), True),
    _spec("LPS", MetricGroup.INTELLIGIBILITY, _INF, _f(1.0), True),
    # Locuteur
    _spec("SpeakerSimilarity", MetricGroup.SPEAKER_CHARACTERISTICS, _f(-1.0), _f(1.0), True),
    # Précision spectrale
    _spec("MCD", MetricGroup.SPECTRAL_ACCURACY, _f(0.0), _INF, True),
)


class MetricRegistry:
    """Collection ordonnée et immuable de `MetricSpec`.

    L'ordre des métriques fixe l'ordre des colonnes de labels et de prédictions
    dans tout le pipeline.
    """

    def __init__(self, specs: Iterable[MetricSpec]):
        self._specs: Tuple[MetricSpec, ...] = tuple(specs)
        if not self._specs:
            raise ConfigError("a metric registry needs at least one metric")
        self._by_name: Dict[str, MetricSpec] = {}
        for spec in self._specs:
            if spec.name in self._by_name:
                raise ConfigError(f"duplicate metric name in registry: {spec.name}")
            self._by_name[spec.name] = spec
        index: Dict[MetricGroup, List[str]] = {}
        for spec in self._specs:
            index.setdefault(spec.group, []).append(spec.name)
        self._group_index: Dict[MetricGroup, Tuple[str, ...]] = {
            group: tuple(names) for group, names in index.items()
        }

    def __len__(self) -> int:
        return len(self._specs)

    def __iter__(self):
        return iter(self._specs)

    def __contains__(self, name: object) -> bool:
        return name in self._by_name

    def __eq__(self, other: object) -> bool:
        return isinstance(other, MetricRegistry) and self._specs == other._specs

    def __hash__(self) -> int:
        return hash(self._specs)

    def __repr__(self) -> str:
        return f"MetricRegistry({', '.join(self.names)})"

    @property
    def specs(self) -> Tuple[MetricSpec, ...]:
        """Spécifications dans l'ordre du registre."""
        return self._specs

    @property
    def names(self) -> List[str]:
        """Noms dans l'ordre du registre."""
        return [spec.name for spec in self._specs]

    @property
    def groups(self) -> List[MetricGroup]:
        """Groupes présents, dans l'ordre de première apparition."""
        return list(self._group_index)

    @property
    def group_index(self) -> Dict[MetricGroup, Tuple[str, ...]]:
        """Groupe -> noms des membres (copie)."""
        return dict(self._group_index)

    def lookup(self, name: str) -> MetricSpec:
        """Spécification d'une métrique ; UnknownMetricError si absente."""
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownMetricError(name) from None

    def index(self, name: str) -> int:
        """Colonne de la métrique."""
        self.lookup(name)
        return self.names.index(name)

    def group_members(self, group: Union[MetricGroup, str]) -> List[str]:
        """Membres d'un groupe, dans l'ordre du registre."""
        try:
            key = MetricGroup(group)
        except ValueError:
            raise UnknownGroupError(str(group)) from None
        if key not in self._group_index:
            raise UnknownGroupError(key.value)
        return list(self._group_index[key])

    def reference_free(self) -> List[str]:
        """Métriques calculables sans signal de référence."""
        return [spec.name for spec in self._specs if not spec.requires_reference]

    def midpoint(self, name: str) -> float:
        """Milieu de l'intervalle (bornes finies uniquement)."""
        spec = self.lookup(name)
        if not (spec.lower.is_finite and spec.upper.is_finite):
            raise ValueError(f"{name} has an unbounded range")
        return (spec.lower.value + spec.upper.value) / 2

    def subset(self, names: Sequence[str]) -> "MetricRegistry":
        """Sous-registre, dans l'ordre du registre courant."""
        wanted = set(names)
        for name in wanted:
            self.lookup(name)
        return MetricRegistry(spec for spec in self._specs if spec.name in wanted)

    def weights(self) -> List[float]:
        """Poids w_k dans l'ordre du registre."""
        return [spec.weight for spec in self._specs]

    # ------------------------------------------------------------------
    # Sérialisation
    # ------------------------------------------------------------------
    def to_dict(self) -> dict:
        """Document {"metrics": [...]}."""
        return {"metrics": [spec.model_dump(mode="json") for spec in self._specs]}

    def to_json(self) -> str:
        """JSON canonique (clés triées)."""
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricRegistry":
        """Inverse de `to_dict`."""
        try:
            return cls(MetricSpec.model_validate(item) for item in data["metrics"])
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"invalid metric registry document: {e}") from e

    @classmethod
    def from_json(cls, text: str) -> "MetricRegistry":
        """Inverse de `to_json`."""
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid metric registry JSON: {e}") from e
        return cls.from_dict(data)


def default_registry() -> MetricRegistry:
    """Registre complet : 15 métriques en 5 groupes (supervision M15)."""
    return MetricRegistry(_DEFAULT_SPECS)


def builtin_registry(supervision: str) -> MetricRegistry:
    """M1 : MOS seul ; M5 : groupe Naturalness ; M15 : toutes les métriques."""
    full = default_registry()
    if supervision == "M1":
        return full.subset(["MOS"])
    if supervision == "M5":
        return full.subset(full.group_members(MetricGroup.NATURALNESS))
    if supervision == "M15":
        return full
    raise ConfigError(f"unknown supervision id {supervision!r} (expected one of {BUILTIN_SUPERVISION})")


def load_registry(ref: str) -> MetricRegistry:
    """Identifiant intégré ou chemin d'un document JSON."""
    if ref in BUILTIN_SUPERVISION:
        return builtin_registry(ref)
    path = Path(ref)
    if not path.is_file():
        raise ConfigError(f"registry file not found: {ref}")
    return MetricRegistry.from_json(path.read_text(encoding="utf-8"))
