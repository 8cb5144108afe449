"""Chargement et mise en batch des échantillons audio."""
from dataclasses import dataclass
from pathlib import Path
from typing import List, Mapping, Optional, Sequence

import numpy as np
import torch
import torchaudio.functional as AF

from app.cache import cache_manager
from app.config import settings
from app.errors import EmptyInputError, UnknownSampleError
from app.metrics.registry import MetricRegistry
from app.models import PreferencePair, SampleRecord


@dataclass
class AudioBatch:
    """Batch d'énoncés, complété par des zéros.

    `waveforms` vaut None quand aucun encodeur ne lit l'audio (caractéristiques
    précalculées seules).
    """
    sample_ids: List[str]
    durations: List[float]
    lengths: torch.Tensor              # (B,) échantillons valides
    labels: torch.Tensor               # (B, K), NaN = label absent
    waveforms: Optional[torch.Tensor]  # (B, N)
    sample_rate: int

    def __len__(self) -> int:
        return len(self.sample_ids)

    def to(self, device: str) -> "AudioBatch":
        """Copie sur `device`."""
        return AudioBatch(
            sample_ids=self.sample_ids,
            durations=self.durations,
            lengths=self.lengths.to(device),
            labels=self.labels.to(device),
            waveforms=None if self.waveforms is None else self.waveforms.to(device),
            sample_rate=self.sample_rate,
        )


@dataclass
class PreferenceBatch:
    """Paires ordonnées : côté A, côté B, classes cibles et CMOS cible (NaN si natif)."""
    pair_ids: List[str]
    side_a: AudioBatch
    side_b: AudioBatch
    classes: torch.Tensor  # (B,) long
    cmos: torch.Tensor     # (B,)

    def __len__(self) -> int:
        return len(self.pair_ids)


def resolve_audio_path(record: SampleRecord, audio_root: Optional[str]) -> Path:
    """Chemin absolu ; un chemin relatif est résolu par rapport à `audio_root`."""
    path = Path(record.audio_path)
    if path.is_absolute() or audio_root is None:
        return path
    return Path(audio_root) / path


def load_waveform(
    record: SampleRecord,
    audio_root: Optional[str],
    sample_rate: int = settings.SAMPLE_RATE,
) -> torch.Tensor:
    """Forme d'onde mono float32 à `sample_rate`."""
    samples, source_rate = cache_manager.audio(str(resolve_audio_path(record, audio_root)))
    if samples.size == 0:
        raise EmptyInputError(f"sample {record.sample_id}: empty waveform")
    waveform = torch.from_numpy(np.array(samples, dtype=np.float32))
    if source_rate != sample_rate:
        waveform = AF.resample(waveform, source_rate, sample_rate)
    return waveform


def label_matrix(records: Sequence[SampleRecord], registry: MetricRegistry) -> torch.Tensor:
    """(B, K) dans l'ordre du registre ; NaN pour MISSING."""
    rows = [
        [np.nan if r.label(name) is None else r.label(name) for name in registry.names]
        for r in records
    ]
    return torch.tensor(rows, dtype=torch.float32).reshape(len(records), len(registry))


def collate(
    records: Sequence[SampleRecord],
    registry: MetricRegistry,
    audio_root: Optional[str] = None,
    sample_rate: int = settings.SAMPLE_RATE,
    load_audio: bool = True,
) -> AudioBatch:
    """Assemble un batch ; les formes d'onde sont complétées par des zéros à droite."""
    if not records:
        raise EmptyInputError("cannot collate an empty batch")
    waveforms = None
    if load_audio:
        signals = [load_waveform(r, audio_root, sample_rate) for r in records]
        lengths = torch.tensor([len(s) for s in signals], dtype=torch.long)
        waveforms = torch.zeros(len(signals), int(lengths.max()))
        for i, signal in enumerate(signals):
            waveforms[i, : len(signal)] = signal
    else:
        lengths = torch.tensor(
            [int(round(r.duration_s * sample_rate)) for r in records], dtype=torch.long
        )
    return AudioBatch(
        sample_ids=[r.sample_id for r in records],
        durations=[r.duration_s for r in records],
        lengths=lengths,
        labels=label_matrix(records, registry),
        waveforms=waveforms,
        sample_rate=sample_rate,
    )


def collate_pairs(
    pairs: Sequence[PreferencePair],
    by_id: Mapping[str, SampleRecord],
    registry: MetricRegistry,
    audio_root: Optional[str] = None,
    sample_rate: int = settings.SAMPLE_RATE,
    load_audio: bool = True,
) -> PreferenceBatch:
    """Batch de paires ; chaque échantillon référencé doit être dans `by_id`."""
    if not pairs:
        raise EmptyInputError("cannot collate an empty pair batch")
    unknown = [
        s for p in pairs for s in (p.sample_a, p.sample_b) if s not in by_id
    ]
    if unknown:
        raise UnknownSampleError(f"pairs reference unknown samples: {', '.join(unknown[:5])}")
    side_a = collate([by_id[p.sample_a] for p in pairs], registry, audio_root,
                     sample_rate, load_audio)
    side_b = collate([by_id[p.sample_b] for p in pairs], registry, audio_root,
                     sample_rate, load_audio)
    cmos = [
        p.score_a - p.score_b if p.is_derived else np.nan
        for p in pairs
    ]
    return PreferenceBatch(
        pair_ids=[p.pair_id for p in pairs],
        side_a=side_a,
        side_b=side_b,
        classes=torch.tensor([p.label.class_index for p in pairs], dtype=torch.long),
        cmos=torch.tensor(cmos, dtype=torch.float32),
    )
