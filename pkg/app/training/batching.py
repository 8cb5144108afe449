"""Batching dynamique par budget de durée audio."""
from typing import Callable, List, Mapping, Optional, Sequence, TypeVar

import numpy as np

from app.errors import ConfigError, OversizedSampleError
from app.models import PreferencePair, SampleRecord

T = TypeVar("T")


def record_duration(record: SampleRecord) -> float:
    """Durée d'un énoncé."""
    return record.duration_s


def pair_duration(by_id: Mapping[str, SampleRecord]) -> Callable[[PreferencePair], float]:
    """Une paire pèse la plus longue de ses deux durées."""
    def duration(pair: PreferencePair) -> float:
        return max(by_id[pair.sample_a].duration_s, by_id[pair.sample_b].duration_s)
    return duration


def _pack(
    items: Sequence[T], budget_s: float, duration_of: Callable[[T], float]
) -> List[List[T]]:
    batches: List[List[T]] = []
    current: List[T] = []
    total = 0.0
    for item in items:
        d = duration_of(item)
        if d > budget_s:
            raise OversizedSampleError(f"item of {d:.3f}s exceeds the {budget_s:.3f}s batch budget")
        if current and total + d > budget_s:
            batches.append(current)
            current, total = [], 0.0
        current.append(item)
        total += d
    if current:
        batches.append(current)
    return batches


def make_batches(
    items: Sequence[T],
    budget_s: float,
    seed: Optional[int],
    duration_of: Callable[[T], float] = record_duration,
) -> List[List[T]]:
    """Mélange (seed=None : ordre conservé) puis remplissage glouton sous `budget_s`.

    Chaque élément apparaît exactement une fois ; un lot est fermé dès que
    l'élément suivant ferait dépasser le budget.
    """
    if budget_s <= 0:
        raise ConfigError(f"budget_s must be positive, got {budget_s}")
    ordered = list(items)
    if seed is not None:
        permutation = np.random.default_rng(seed).permutation(len(ordered))
        ordered = [ordered[i] for i in permutation]
    return _pack(ordered, budget_s, duration_of)


def sorted_batches(
    items: Sequence[T],
    budget_s: float,
    duration_of: Callable[[T], float] = record_duration,
) -> List[List[T]]:
    """Lots d'inférence triés par durée (peu de remplissage)."""
    if budget_s <= 0:
        raise ConfigError(f"budget_s must be positive, got {budget_s}")
    ordered = sorted(items, key=duration_of)
    return _pack(ordered, budget_s, duration_of)
