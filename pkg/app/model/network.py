"""Modèle complet : extracteur partagé + AMPM + NCPM."""
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence

import torch
from torch import nn

from app.config import AmpmConfig, EncoderConfig, NcpmConfig, settings
from app.data.loader import AudioBatch
from app.errors import UnknownGroupError
from app.metrics.registry import MetricRegistry
from app.model.ampm import AMPM, SHARED_GROUP, GroupLatent, PredictionBundle
from app.model.features import FeatureExtractor
from app.model.ncpm import NCPM, PreferenceOutput
from app.models import MetricGroup


@dataclass
class Comparison:
    """Sortie de `QualityModel.compare` : préférence et prédictions absolues des deux côtés."""
    preference: PreferenceOutput
    bundle_a: PredictionBundle
    bundle_b: PredictionBundle


class QualityModel(nn.Module):
    """Assemble extracteur, AMPM et NCPM autour d'un registre de métriques."""

    def __init__(
        self,
        registry: MetricRegistry,
        encoders: Sequence[EncoderConfig],
        ampm: AmpmConfig,
        ncpm: NcpmConfig,
        sample_rate: int = settings.SAMPLE_RATE,
    ):
        super().__init__()
        self.registry = registry
        self.encoder_configs = list(encoders)
        self.ampm_config = ampm
        self.ncpm_config = ncpm
        self.sample_rate = sample_rate
        self.extractor = FeatureExtractor(self.encoder_configs, ampm.d_model, sample_rate)
        self.ampm = AMPM(registry, ampm)
        self.ncpm = NCPM(ampm, ncpm)

    @property
    def naturalness_group(self) -> str:
        """Groupe lu par le NCPM (le groupe partagé en C1)."""
        if self.ampm_config.grouping == "C1":
            return SHARED_GROUP
        group = MetricGroup.NATURALNESS.value
        if group not in self.ampm.group_ids:
            raise UnknownGroupError(group)
        return group

    @property
    def needs_audio(self) -> bool:
        """Vrai si l'extracteur lit les formes d'onde."""
        return self.extractor.needs_audio

    @property
    def metric_names(self) -> List[str]:
        """Ordre des colonnes de prédiction."""
        return self.registry.names

    def describe(self) -> Dict[str, Any]:
        """Configuration d'architecture (stockée dans les checkpoints)."""
        return {
            "encoders": [c.model_dump() for c in self.encoder_configs],
            "ampm": self.ampm_config.model_dump(),
            "ncpm": self.ncpm_config.model_dump(),
            "sample_rate": self.sample_rate,
        }

    @classmethod
    def from_description(cls, registry: MetricRegistry, description: Dict[str, Any]) -> "QualityModel":
        """Inverse de `describe`."""
        return cls(
            registry=registry,
            encoders=[EncoderConfig.model_validate(c) for c in description["encoders"]],
            ampm=AmpmConfig.model_validate(description["ampm"]),
            ncpm=NcpmConfig.model_validate(description["ncpm"]),
            sample_rate=int(description["sample_rate"]),
        )

    def score(self, batch: AudioBatch) -> PredictionBundle:
        """Prédictions absolues pour toutes les métriques du registre."""
        return self.ampm(self.extractor(batch))

    def naturalness_latent(self, bundle: PredictionBundle) -> GroupLatent:
        """Latent consommé par le NCPM."""
        return bundle.group_latents[self.naturalness_group]

    def compare(self, batch_a: AudioBatch, batch_b: AudioBatch) -> Comparison:
        """Préférence entre les lignes alignées de `batch_a` et `batch_b`."""
        bundle_a = self.score(batch_a)
        bundle_b = self.score(batch_b)
        preference = self.ncpm(self.naturalness_latent(bundle_a), self.naturalness_latent(bundle_b))
        return Comparison(preference, bundle_a, bundle_b)

    def parameter_count(self) -> int:
        """Nombre de paramètres entraînables."""
        return sum(p.numel() for p in self.parameters() if p.requires_grad)


def build_model(registry: MetricRegistry, run_config) -> QualityModel:
    """Instancie le modèle décrit par une `RunConfig`."""
    model = QualityModel(
        registry=registry,
        encoders=run_config.encoders,
        ampm=run_config.ampm,
        ncpm=run_config.ncpm,
    )
    return model.to(torch.device(settings.DEVICE))
