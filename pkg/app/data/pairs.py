"""Construction des paires de préférence à partir d'annotations absolues (ACR).

Les paires éligibles sont énumérées dans un ordre canonique, échantillonnées par
réservoir (clés aléatoires, on garde les `cap` plus petites) puis étiquetées avec
le seuil d'égalité δ.
"""
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.config import settings
from app.errors import (
    ConfigError,
    EmptyInputError,
    ManifestParseError,
    MissingLabelError,
    MissingMetadataError,
    NativePairError,
    NegativeDeltaError,
)
from app.logger import logger
from app.models import NativePairRecord, PairScope, PreferenceLabel, PreferencePair, SampleRecord

# indices de classe (ordre des logits)
A_WINS, TIE, B_WINS = 0, 1, 2


def _check_delta(delta: float) -> None:
    if delta < 0:
        raise NegativeDeltaError(f"tie threshold must be >= 0, got {delta}")


def derive_label(s_a: float, s_b: float, delta: float) -> PreferenceLabel:
    """A ≻ B si s_a - s_b > δ, B ≻ A si s_b - s_a > δ, égalité sinon."""
    _check_delta(delta)
    if s_a - s_b > delta:
        return PreferenceLabel.A_WINS
    if s_b - s_a > delta:
        return PreferenceLabel.B_WINS
    return PreferenceLabel.TIE


def derive_labels(scores_a: np.ndarray, scores_b: np.ndarray, delta: float) -> np.ndarray:
    """Version vectorisée de `derive_label` ; renvoie des indices de classe."""
    _check_delta(delta)
    scores_a = np.asarray(scores_a, dtype=np.float64)
    scores_b = np.asarray(scores_b, dtype=np.float64)
    out = np.full(scores_a.shape, TIE, dtype=np.int64)
    out[scores_a - scores_b > delta] = A_WINS
    out[scores_b - scores_a > delta] = B_WINS
    return out


@dataclass
class _Reservoir:
    """Échantillonnage bottom-k : garde les `cap` paires de plus petites clés."""
    cap: int
    keys: np.ndarray
    left: np.ndarray
    right: np.ndarray
    order: np.ndarray
    pending: List[Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]
    pending_size: int = 0
    seen: int = 0

    @classmethod
    def empty(cls, cap: int) -> "_Reservoir":
        none_f = np.empty(0, dtype=np.float64)
        none_i = np.empty(0, dtype=np.int64)
        return cls(cap, none_f, none_i, none_i, none_i, [])

    def offer(self, keys: np.ndarray, left: np.ndarray, right: np.ndarray) -> None:
        order = np.arange(self.seen, self.seen + len(keys), dtype=np.int64)
        self.seen += len(keys)
        self.pending.append((keys, left, right, order))
        self.pending_size += len(keys)
        # compactage amorti
        if self.pending_size >= 4 * self.cap:
            self._compact()

    def _compact(self) -> None:
        if not self.pending:
            return
        keys = np.concatenate([self.keys] + [p[0] for p in self.pending])
        left = np.concatenate([self.left] + [p[1] for p in self.pending])
        right = np.concatenate([self.right] + [p[2] for p in self.pending])
        order = np.concatenate([self.order] + [p[3] for p in self.pending])
        self.pending, self.pending_size = [], 0
        if len(keys) > self.cap:
            keep = np.lexsort((order, keys))[: self.cap]
            keys, left, right, order = keys[keep], left[keep], right[keep], order[keep]
        self.keys, self.left, self.right, self.order = keys, left, right, order

    def result(self) -> Tuple[np.ndarray, np.ndarray]:
        """Indices (gauche, droite) retenus, dans l'ordre d'énumération."""
        self._compact()
        by_order = np.argsort(self.order, kind="stable")
        return self.left[by_order], self.right[by_order]


def _scores(records: Sequence[SampleRecord], metric: str) -> np.ndarray:
    missing = [r.sample_id for r in records if not r.has_label(metric)]
    if missing:
        preview = ", ".join(missing[:5])
        raise MissingLabelError(
            f"{len(missing)} record(s) lack a {metric} label (e.g. {preview})"
        )
    return np.array([r.label(metric) for r in records], dtype=np.float64)


def _groups(records: Sequence[SampleRecord], scope: PairScope) -> List[np.ndarray]:
    """Groupes d'indices à l'intérieur desquels on apparie."""
    if scope == PairScope.ANY:
        return [np.arange(len(records))]
    if scope == PairScope.CORPUS:
        key_of = lambda r: r.corpus_id  # noqa: E731
    elif scope == PairScope.REF:
        lacking = [r.sample_id for r in records if r.reference_id is None or r.system_id is None]
        if lacking:
            raise MissingMetadataError(
                f"reference-scope pairing needs reference_id and system_id; "
                f"{len(lacking)} record(s) lack them (e.g. {', '.join(lacking[:5])})"
            )
        key_of = lambda r: r.reference_id  # noqa: E731
    else:
        raise ValueError(f"cannot derive pairs for scope {scope}")
    buckets: Dict[str, List[int]] = {}
    for i, record in enumerate(records):
        buckets.setdefault(key_of(record), []).append(i)
    return [np.array(idx, dtype=np.int64) for idx in buckets.values()]


def _eligible_rows(
    records: Sequence[SampleRecord], scope: PairScope
) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Paires non ordonnées (i < j dans le groupe), ligne par ligne."""
    systems = np.array([r.system_id or "" for r in records], dtype=object)
    for group in _groups(records, scope):
        for pos in range(len(group) - 1):
            right = group[pos + 1:]
            if scope == PairScope.REF:
                right = right[systems[right] != systems[group[pos]]]
            if len(right):
                yield np.full(len(right), group[pos], dtype=np.int64), right


def build_pairs(
    records: Sequence[SampleRecord],
    scope: Union[PairScope, str],
    metric: str = settings.DEFAULT_PAIR_METRIC,
    delta: float = settings.DEFAULT_DELTA,
    cap: int = settings.EVAL_PAIR_CAP,
    seed: int = settings.DEFAULT_SEED,
) -> List[PreferencePair]:
    """Paires dérivées sous une portée d'appariement, plafonnées à `cap`.

    L'ordre de sortie ne dépend que de (ordre des records, scope, delta, cap, seed).
    """
    scope = PairScope(scope)
    _check_delta(delta)
    if cap < 1:
        raise ConfigError(f"cap must be a positive integer, got {cap}")
    scores = _scores(records, metric)
    rng = np.random.default_rng(seed)
    reservoir = _Reservoir.empty(cap)
    for left, right in _eligible_rows(records, scope):
        reservoir.offer(rng.random(len(left)), left, right)
    left, right = reservoir.result()

    # ordre canonique : sample_id_a < sample_id_b
    ids = [r.sample_id for r in records]
    swap = np.array([ids[i] > ids[j] for i, j in zip(left.tolist(), right.tolist())], dtype=bool)
    first = np.where(swap, right, left)
    second = np.where(swap, left, right)
    labels = derive_labels(scores[first], scores[second], delta)

    pairs = [
        PreferencePair(
            pair_id=f"{scope.value}:{ids[a]}|{ids[b]}",
            sample_a=ids[a],
            sample_b=ids[b],
            label=PreferenceLabel.from_index(int(lab)),
            delta_used=float(delta),
            scope=scope,
            score_a=float(scores[a]),
            score_b=float(scores[b]),
        )
        for a, b, lab in zip(first.tolist(), second.tolist(), labels.tolist())
    ]
    logger.info(
        "Paires {scope} ({metric}, δ={delta}): {kept}/{seen} retenues (cap={cap})",
        scope=scope.value, metric=metric, delta=delta,
        kept=len(pairs), seen=reservoir.seen, cap=cap,
    )
    return pairs


def symmetrize(pairs: Sequence[PreferencePair]) -> List[PreferencePair]:
    """Chaque paire suivie de sa contrepartie inversée."""
    out: List[PreferencePair] = []
    for pair in pairs:
        out.append(pair)
        out.append(pair.reversed())
    return out


def relabel_pairs(pairs: Sequence[PreferencePair], delta: float) -> List[PreferencePair]:
    """Ré-étiquette des paires dérivées avec un nouveau seuil."""
    _check_delta(delta)
    out = []
    for pair in pairs:
        if not pair.is_derived:
            raise NativePairError(f"pair {pair.pair_id} carries no scores and cannot be relabeled")
        out.append(pair.model_copy(update={
            "label": derive_label(pair.score_a, pair.score_b, delta),
            "delta_used": float(delta),
        }))
    return out


def drop_ties(pairs: Iterable[PreferencePair]) -> List[PreferencePair]:
    """Retire les paires à égalité."""
    return [pair for pair in pairs if pair.label is not PreferenceLabel.TIE]


def native_to_preference(natives: Iterable[NativePairRecord]) -> List[PreferencePair]:
    """Paires natives -> PreferencePair (portée NATIVE, sans scores)."""
    return [
        PreferencePair(
            pair_id=native.pair_id,
            sample_a=native.sample_a,
            sample_b=native.sample_b,
            label=native.label,
            delta_used=None,
            scope=PairScope.NATIVE,
        )
        for native in natives
    ]


def label_counts(pairs: Iterable[PreferencePair]) -> Dict[str, int]:
    """Effectifs par classe."""
    counts = {label.value: 0 for label in PreferenceLabel}
    for pair in pairs:
        counts[pair.label.value] += 1
    return counts


def write_pairs(path: str, pairs: Iterable[PreferencePair]) -> Path:
    """JSON Lines {pair_id, sample_a, sample_b, label, delta_used, scope, score_a, score_b}."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as handle:
        for pair in pairs:
            handle.write(json.dumps(pair.model_dump(mode="json"), allow_nan=False) + "\n")
    return out


def load_pairs(path: str, known_samples: Optional[Iterable[str]] = None) -> List[PreferencePair]:
    """Relit un fichier de paires ; vérifie optionnellement les sample_id."""
    known = set(known_samples) if known_samples is not None else None
    pairs: List[PreferencePair] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                pair = PreferencePair.model_validate_json(line)
            except ValueError as e:
                raise ManifestParseError(str(path), line_no, str(e).splitlines()[0]) from e
            if known is not None:
                for sample_id in (pair.sample_a, pair.sample_b):
                    if sample_id not in known:
                        raise ManifestParseError(str(path), line_no, f"unknown sample {sample_id!r}")
            pairs.append(pair)
    if not pairs:
        raise EmptyInputError(f"{path}: no pairs")
    return pairs
