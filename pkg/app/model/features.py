"""Extracteur de caractéristiques multi-branches.

Chaque encodeur produit une liste de représentations par couche ; elles sont
agrégées par une somme pondérée (poids softmax appris), alignées par
interpolation linéaire sur la longueur commune L = max(l_i), puis fusionnées
par concaténation et projection linéaire.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import torch
import torch.nn.functional as F
import torchaudio
from torch import nn

from app.cache import cache_manager
from app.config import EncoderConfig, settings
from app.data.loader import AudioBatch
from app.errors import EmptyInputError, ShapeMismatchError


@dataclass
class FeatureSequence:
    """Suite de vecteurs de caractéristiques, en batch.

    values : (B, d, l) ; les trames au-delà de `lengths[b]` sont du remplissage.
    """
    values: torch.Tensor
    lengths: torch.Tensor
    frame_rate_hz: float

    @property
    def d(self) -> int:
        """Dimension des caractéristiques."""
        return int(self.values.shape[1])

    @property
    def l(self) -> int:  # noqa: E743
        """Nombre de trames (remplissage compris)."""
        return int(self.values.shape[2])

    def frame_mask(self) -> torch.Tensor:
        """(B, l) booléen, vrai sur les trames valides."""
        steps = torch.arange(self.l, device=self.values.device)
        return steps[None, :] < self.lengths[:, None]


def single(values: torch.Tensor, frame_rate_hz: float = 50.0) -> FeatureSequence:
    """FeatureSequence d'un seul énoncé à partir d'une matrice (d, l)."""
    return FeatureSequence(
        values=values.unsqueeze(0),
        lengths=torch.tensor([values.shape[-1]], dtype=torch.long),
        frame_rate_hz=frame_rate_hz,
    )


# ==============================================================================
# Encodeurs
# ==============================================================================

class LearnableSpectrogramEncoder(nn.Module):
    """Log-mel puis pile de convolutions résiduelles ; chaque bloc est une « couche »."""

    def __init__(self, config: EncoderConfig, sample_rate: int = settings.SAMPLE_RATE):
        super().__init__()
        self.config = config
        self.sample_rate = sample_rate
        self.hop = max(1, int(round(config.stride_s * sample_rate)))
        self.n_fft = max(2 * self.hop, 2 * config.n_mels)
        self.melspec = torchaudio.transforms.MelSpectrogram(
            sample_rate=sample_rate,
            n_fft=self.n_fft,
            hop_length=self.hop,
            n_mels=config.n_mels,
            center=True,
        )
        pad = config.kernel_size // 2
        self.input_proj = nn.Conv1d(config.n_mels, config.d, config.kernel_size, padding=pad)
        self.blocks = nn.ModuleList([
            nn.Conv1d(config.d, config.d, config.kernel_size, padding=pad)
            for _ in range(config.num_layers)
        ])

    @property
    def frame_rate_hz(self) -> float:
        """Trames par seconde."""
        return self.sample_rate / self.hop

    def frame_count(self, lengths: torch.Tensor) -> torch.Tensor:
        """floor(N / hop), au moins une trame."""
        return torch.clamp(torch.div(lengths, self.hop, rounding_mode="floor"), min=1)

    def forward(self, batch: AudioBatch) -> List[FeatureSequence]:
        if batch.waveforms is None:
            raise EmptyInputError("learnable spectrogram encoder needs waveforms")
        if int(batch.lengths.min()) == 0:
            raise EmptyInputError("zero-length waveform in batch")
        frames = self.frame_count(batch.lengths)
        n_frames = int(frames.max())
        waveforms = batch.waveforms
        # le padding réfléchi centré exige plus de n_fft // 2 échantillons
        short = self.n_fft // 2 + 1 - waveforms.shape[-1]
        if short > 0:
            waveforms = F.pad(waveforms, (0, short))
        mel = self.melspec(waveforms)[..., :n_frames]
        mask = (torch.arange(n_frames, device=mel.device)[None, :] < frames[:, None])
        mask = mask.unsqueeze(1).to(mel.dtype)
        x = torch.log(mel + 1e-6) * mask
        x = F.gelu(self.input_proj(x)) * mask
        layers = []
        for block in self.blocks:
            x = (x + F.gelu(block(x))) * mask
            layers.append(FeatureSequence(x, frames, self.frame_rate_hz))
        return layers

    def encode(self, waveform: torch.Tensor) -> List[FeatureSequence]:
        """Un seul énoncé (N,) -> une FeatureSequence par couche."""
        if waveform.numel() == 0:
            raise EmptyInputError("cannot encode an empty waveform")
        batch = AudioBatch(
            sample_ids=["_"],
            durations=[waveform.numel() / self.sample_rate],
            lengths=torch.tensor([waveform.numel()]),
            labels=torch.empty(1, 0),
            waveforms=waveform.reshape(1, -1),
            sample_rate=self.sample_rate,
        )
        return self.forward(batch)


class PrecomputedEncoder(nn.Module):
    """Lit `<feature_dir>/<sample_id><suffix>` ; une seule couche."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.feature_dir = Path(config.feature_dir or ".")

    @property
    def frame_rate_hz(self) -> float:
        """Trames par seconde déclarées par la configuration."""
        return 1.0 / self.config.stride_s

    def _matrix(self, sample_id: str) -> torch.Tensor:
        path = self.feature_dir / f"{sample_id}{self.config.feature_suffix}"
        matrix = cache_manager.features(str(path))
        if matrix.shape[0] != self.config.d:
            raise ShapeMismatchError(
                f"{path}: feature dim {matrix.shape[0]} != configured d={self.config.d}"
            )
        return torch.tensor(matrix, dtype=torch.float32)

    def encode(self, sample_id: str) -> List[FeatureSequence]:
        """Un seul énoncé -> [FeatureSequence]."""
        return [single(self._matrix(sample_id), self.frame_rate_hz)]

    def forward(self, batch: AudioBatch) -> List[FeatureSequence]:
        matrices = [self._matrix(sample_id) for sample_id in batch.sample_ids]
        lengths = torch.tensor([m.shape[1] for m in matrices], dtype=torch.long)
        values = torch.zeros(len(matrices), self.config.d, int(lengths.max()))
        for i, matrix in enumerate(matrices):
            values[i, :, : matrix.shape[1]] = matrix
        device = batch.lengths.device
        return [FeatureSequence(values.to(device), lengths.to(device), self.frame_rate_hz)]


def build_encoder(config: EncoderConfig, sample_rate: int = settings.SAMPLE_RATE) -> nn.Module:
    """Fabrique l'encodeur correspondant à `config.kind`."""
    if config.kind == "precomputed":
        return PrecomputedEncoder(config)
    return LearnableSpectrogramEncoder(config, sample_rate)


# ==============================================================================
# Agrégation, alignement, fusion
# ==============================================================================

def aggregate_layers(layers: Sequence[FeatureSequence], weights: torch.Tensor) -> FeatureSequence:
    """Σ_j softmax(weights)_j · layer_j (combinaison convexe)."""
    if not layers:
        raise EmptyInputError("no layers to aggregate")
    if weights.numel() != len(layers):
        raise ShapeMismatchError(f"{weights.numel()} weights for {len(layers)} layers")
    shape = layers[0].values.shape
    for layer in layers[1:]:
        if layer.values.shape != shape:
            raise ShapeMismatchError(
                f"layer shapes differ: {tuple(shape)} vs {tuple(layer.values.shape)}"
            )
    if len(layers) == 1:
        return layers[0]
    probs = torch.softmax(weights, dim=0)
    stacked = torch.stack([layer.values for layer in layers], dim=0)
    values = (probs.reshape(-1, 1, 1, 1) * stacked).sum(dim=0)
    return FeatureSequence(values, layers[0].lengths, layers[0].frame_rate_hz)


def align(features: Sequence[FeatureSequence]) -> List[FeatureSequence]:
    """Interpole chaque branche à L = max_i l_i, énoncé par énoncé.

    Une branche déjà à la longueur L est renvoyée telle quelle ; l'interpolation
    est linéaire avec extrémités fixes.
    """
    if not features:
        raise EmptyInputError("align needs at least one feature sequence")
    if len(features) == 1:
        return [features[0]]
    batch = features[0].values.shape[0]
    target = torch.stack([f.lengths for f in features], dim=0).max(dim=0).values
    l_max = int(target.max())
    out = []
    for feat in features:
        if torch.equal(feat.lengths, target) and feat.l == l_max:
            out.append(feat)
            continue
        values = feat.values.new_zeros(batch, feat.d, l_max)
        for b in range(batch):
            n_valid, n_target = int(feat.lengths[b]), int(target[b])
            valid = feat.values[b : b + 1, :, :n_valid]
            if n_valid != n_target:
                valid = F.interpolate(valid, size=n_target, mode="linear", align_corners=True)
            values[b, :, :n_target] = valid[0]
        rate = max(f.frame_rate_hz for f in features)
        out.append(FeatureSequence(values, target.clone(), rate))
    return out


class FeatureFusion(nn.Module):
    """Concaténation des dimensions puis projection linéaire vers `target_d`."""

    def __init__(self, in_dims: Sequence[int], target_d: int):
        super().__init__()
        total = sum(in_dims)
        self.proj = nn.Linear(total, target_d)
        if total == target_d:
            with torch.no_grad():
                self.proj.weight.copy_(torch.eye(target_d))
                self.proj.bias.zero_()

    def forward(self, aligned: Sequence[FeatureSequence]) -> FeatureSequence:
        if not aligned:
            raise EmptyInputError("nothing to fuse")
        first = aligned[0]
        for feat in aligned[1:]:
            if feat.l != first.l or not torch.equal(feat.lengths, first.lengths):
                raise ShapeMismatchError(
                    f"fusion needs aligned lengths, got {first.l} vs {feat.l}"
                )
        concat = torch.cat([feat.values for feat in aligned], dim=1)
        if concat.shape[1] != self.proj.in_features:
            raise ShapeMismatchError(
                f"fusion expects {self.proj.in_features} channels, got {concat.shape[1]}"
            )
        fused = self.proj(concat.transpose(1, 2)).transpose(1, 2)
        fused = fused * first.frame_mask().unsqueeze(1).to(fused.dtype)
        return FeatureSequence(fused, first.lengths, max(f.frame_rate_hz for f in aligned))


class FeatureExtractor(nn.Module):
    """Branches d'encodeurs + agrégation par branche + alignement + fusion."""

    def __init__(
        self,
        configs: Sequence[EncoderConfig],
        target_d: int,
        sample_rate: int = settings.SAMPLE_RATE,
    ):
        super().__init__()
        if not configs:
            raise EmptyInputError("at least one encoder is required")
        self.encoders = nn.ModuleList([build_encoder(c, sample_rate) for c in configs])
        self.layer_weights = nn.ParameterList([
            nn.Parameter(torch.zeros(c.num_layers)) for c in configs
        ])
        self.fusion = FeatureFusion([c.d for c in configs], target_d)
        self.target_d = target_d

    @property
    def needs_audio(self) -> bool:
        """Vrai si au moins une branche lit la forme d'onde."""
        return any(isinstance(e, LearnableSpectrogramEncoder) for e in self.encoders)

    def forward(self, batch: AudioBatch) -> FeatureSequence:
        branches = [
            aggregate_layers(encoder(batch), weights)
            for encoder, weights in zip(self.encoders, self.layer_weights)
        ]
        return self.fusion(align(branches))

