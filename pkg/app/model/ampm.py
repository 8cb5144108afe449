"""AMPM : encodeurs de groupe partagés, pooling temporel, têtes par métrique."""
import math
from dataclasses import dataclass, field
from typing import Dict, List

import torch
from torch import nn

from app.config import AmpmConfig
from app.errors import EmptyInputError, ShapeMismatchError, UnknownGroupError
from app.metrics.registry import MetricRegistry
from app.model.activations import RangeActivation
from app.model.features import FeatureSequence
from app.models import SamplePrediction

# groupe unique de la configuration C1
SHARED_GROUP = "AllMetrics"


@dataclass
class GroupLatent:
    """Représentation latente d'un groupe : values (B, d_model, L)."""
    group: str
    values: torch.Tensor
    lengths: torch.Tensor

    def frame_mask(self) -> torch.Tensor:
        """(B, L) booléen, vrai sur les trames valides."""
        steps = torch.arange(self.values.shape[-1], device=self.values.device)
        return steps[None, :] < self.lengths[:, None]


@dataclass
class PredictionBundle:
    """Prédictions (B, K) dans l'ordre du registre, et latents par groupe."""
    values: torch.Tensor
    metric_names: List[str]
    group_latents: Dict[str, GroupLatent] = field(default_factory=dict)

    def per_metric(self) -> Dict[str, torch.Tensor]:
        """nom -> (B,)"""
        return {name: self.values[:, k] for k, name in enumerate(self.metric_names)}

    def to_predictions(self, sample_ids: List[str]) -> List[SamplePrediction]:
        """Une `SamplePrediction` par énoncé."""
        rows = self.values.detach().cpu().double().tolist()
        return [
            SamplePrediction(sample_id=sid, predictions=dict(zip(self.metric_names, row)))
            for sid, row in zip(sample_ids, rows)
        ]


def sinusoidal_positions(length: int, d_model: int, device=None, dtype=None) -> torch.Tensor:
    """Encodage positionnel sinusoïdal (L, d_model), sans paramètre."""
    position = torch.arange(length, device=device, dtype=torch.float32).unsqueeze(1)
    div = torch.exp(
        torch.arange(0, d_model, 2, device=device, dtype=torch.float32)
        * (-math.log(10000.0) / d_model)
    )
    pe = torch.zeros(length, d_model, device=device)
    pe[:, 0::2] = torch.sin(position * div)
    pe[:, 1::2] = torch.cos(position * div[: d_model // 2])
    return pe if dtype is None else pe.to(dtype)


def pool(latent: GroupLatent) -> torch.Tensor:
    """Moyenne temporelle sur les trames valides -> (B, d_model)."""
    if latent.values.shape[-1] == 0 or int(latent.lengths.min()) < 1:
        raise EmptyInputError(f"group {latent.group}: cannot pool an empty sequence")
    mask = latent.frame_mask().unsqueeze(1).to(latent.values.dtype)
    total = (latent.values * mask).sum(dim=-1)
    return total / latent.lengths.unsqueeze(1).to(latent.values.dtype)


class GroupEncoder(nn.Module):
    """Pile d'auto-attention (TransformerEncoder) propre à un groupe de métriques."""

    def __init__(self, group: str, config: AmpmConfig):
        super().__init__()
        self.group = group
        self.d_model = config.d_model
        layer = nn.TransformerEncoderLayer(
            d_model=config.d_model,
            nhead=config.heads,
            dim_feedforward=config.ffn,
            dropout=config.dropout,
            batch_first=True,
            norm_first=True,
        )
        self.encoder = nn.TransformerEncoder(
            layer, num_layers=config.layers, enable_nested_tensor=False
        )

    def forward(self, fused: FeatureSequence) -> GroupLatent:
        if fused.d != self.d_model:
            raise ShapeMismatchError(
                f"group {self.group}: input width {fused.d} != encoder width {self.d_model}"
            )
        x = fused.values.transpose(1, 2)
        x = x + sinusoidal_positions(x.shape[1], self.d_model, x.device, x.dtype)
        padding = ~fused.frame_mask()
        y = self.encoder(x, src_key_padding_mask=padding)
        return GroupLatent(self.group, y.transpose(1, 2), fused.lengths)


class AMPM(nn.Module):
    """Prédiction absolue de toutes les métriques du registre.

    C1 : un seul encodeur partagé par toutes les métriques ; C5 : un encodeur par
    groupe du registre. La tête de la métrique k ne lit que le latent de son groupe.
    """

    def __init__(self, registry: MetricRegistry, config: AmpmConfig):
        super().__init__()
        self.registry = registry
        self.config = config
        if config.grouping == "C1":
            self.routing = {name: SHARED_GROUP for name in registry.names}
        else:
            self.routing = {spec.name: spec.group.value for spec in registry.specs}
        group_ids = list(dict.fromkeys(self.routing.values()))
        self.encoders = nn.ModuleDict({g: GroupEncoder(g, config) for g in group_ids})
        self.heads = nn.ModuleDict({
            name: nn.Linear(config.d_model, 1) for name in registry.names
        })
        self.activation = RangeActivation(registry.specs)

    @property
    def group_ids(self) -> List[str]:
        """Identifiants des encodeurs de groupe, dans l'ordre du registre."""
        return list(self.encoders.keys())

    def encode_group(self, fused: FeatureSequence, group: str) -> GroupLatent:
        """Latent d'un seul groupe."""
        if group not in self.encoders:
            raise UnknownGroupError(group)
        return self.encoders[group](fused)

    def forward(self, fused: FeatureSequence) -> PredictionBundle:
        latents = {g: encoder(fused) for g, encoder in self.encoders.items()}
        pooled = {g: pool(latent) for g, latent in latents.items()}
        raw = torch.cat([
            self.heads[name](pooled[self.routing[name]]) for name in self.registry.names
        ], dim=1)
        return PredictionBundle(self.activation(raw), self.registry.names, latents)
