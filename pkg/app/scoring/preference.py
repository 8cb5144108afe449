"""Précision de préférence, baseline par différence de scores et balayage du seuil δ."""
import csv
from enum import Enum
from pathlib import Path
from typing import List, Mapping, Sequence, Union

from app.data.pairs import derive_labels, relabel_pairs
from app.errors import EmptyInputError, NegativeDeltaError, ShapeMismatchError, UnknownSampleError
from app.models import PreferenceLabel, PreferencePair, SweepCurve, SweepPoint

Truth = Union[PreferencePair, PreferenceLabel]


class AccuracyMode(str, Enum):
    """acc@δ (égalités incluses) ou acc_0 (paires strictes seulement)."""
    WITH_TIES = "with_ties"
    STRICT = "strict"


def _label(truth: Truth) -> PreferenceLabel:
    return truth.label if isinstance(truth, PreferencePair) else PreferenceLabel(truth)


def preference_accuracy(
    predictions: Sequence[PreferenceLabel],
    truths: Sequence[Truth],
    mode: AccuracyMode = AccuracyMode.WITH_TIES,
    drop_predicted_ties: bool = False,
) -> float:
    """Taux d'accord prédiction / vérité.

    STRICT retire les paires dont la vérité est TIE ; une prédiction TIE sur une
    paire stricte compte comme fausse, sauf avec `drop_predicted_ties` où elle
    est retirée du dénominateur.
    """
    if len(predictions) != len(truths):
        raise ShapeMismatchError(f"{len(predictions)} predictions for {len(truths)} truths")
    kept = [(PreferenceLabel(p), _label(t)) for p, t in zip(predictions, truths)]
    if mode is AccuracyMode.STRICT:
        kept = [(p, t) for p, t in kept if t is not PreferenceLabel.TIE]
        if drop_predicted_ties:
            kept = [(p, t) for p, t in kept if p is not PreferenceLabel.TIE]
    if not kept:
        raise EmptyInputError(f"no pair left to score in {mode.value} mode")
    return sum(1 for p, t in kept if p is t) / len(kept)


def score_diff_preference(
    scores_a: Sequence[float], scores_b: Sequence[float], delta: float
) -> List[PreferenceLabel]:
    """Convertit des scores absolus prédits en préférences avec le seuil δ."""
    if len(scores_a) != len(scores_b):
        raise ShapeMismatchError(f"{len(scores_a)} scores for A, {len(scores_b)} for B")
    return [PreferenceLabel.from_index(int(c)) for c in derive_labels(scores_a, scores_b, delta)]


def inconsistency_rate(
    forward: Sequence[PreferenceLabel], backward: Sequence[PreferenceLabel]
) -> float:
    """Part des paires jugées A_WINS dans les deux ordres, ou B_WINS dans les deux.

    Une égalité d'un seul côté n'est pas une contradiction.
    """
    if len(forward) != len(backward):
        raise ShapeMismatchError(f"{len(forward)} forward vs {len(backward)} backward")
    if not forward:
        raise EmptyInputError("inconsistency_rate on no pairs")
    bad = sum(
        1 for f, b in zip(forward, backward)
        if PreferenceLabel(f) is PreferenceLabel(b) and PreferenceLabel(f) is not PreferenceLabel.TIE
    )
    return bad / len(forward)


class DirectPredictions:
    """Prédicteur de préférence direct : ses prédictions ne lisent pas δ."""

    def __init__(self, name: str, by_pair_id: Mapping[str, PreferenceLabel]):
        self.name = name
        self.by_pair_id = dict(by_pair_id)

    def predict(self, pairs: Sequence[PreferencePair], delta: float) -> List[PreferenceLabel]:
        """Prédictions stockées, dans l'ordre des paires."""
        del delta
        try:
            return [self.by_pair_id[pair.pair_id] for pair in pairs]
        except KeyError as e:
            raise UnknownSampleError(f"no prediction for pair {e.args[0]!r}") from e


class ScoreDifferencePredictor:
    """Baseline : préférence obtenue par différence de scores absolus."""

    def __init__(self, name: str, scores: Mapping[str, float]):
        self.name = name
        self.scores = dict(scores)

    def _score(self, sample_id: str) -> float:
        if sample_id not in self.scores:
            raise UnknownSampleError(f"no predicted score for sample {sample_id!r}")
        return self.scores[sample_id]

    def predict(self, pairs: Sequence[PreferencePair], delta: float) -> List[PreferenceLabel]:
        """derive_label appliqué aux scores prédits."""
        return score_diff_preference(
            [self._score(p.sample_a) for p in pairs],
            [self._score(p.sample_b) for p in pairs],
            delta,
        )


Predictor = Union[DirectPredictions, ScoreDifferencePredictor]


def threshold_sweep(
    predictor: Predictor,
    pairs: Sequence[PreferencePair],
    deltas: Sequence[float],
    relabel: bool = False,
) -> SweepCurve:
    """Précision WITH_TIES pour chaque δ.

    relabel=False : vérité fixe, seules les prédictions d'une baseline varient.
    relabel=True : la vérité des paires dérivées est ré-étiquetée à chaque δ.
    """
    if not deltas:
        raise EmptyInputError("threshold_sweep needs at least one delta")
    if any(d < 0 for d in deltas):
        raise NegativeDeltaError(f"tie thresholds must be >= 0, got {list(deltas)}")
    if not pairs:
        raise EmptyInputError("threshold_sweep on no pairs")
    points = []
    for delta in deltas:
        truths = relabel_pairs(pairs, delta) if relabel else pairs
        predictions = predictor.predict(pairs, delta)
        points.append(SweepPoint(
            delta=float(delta),
            accuracy=preference_accuracy(predictions, truths, AccuracyMode.WITH_TIES),
            strict_predictions=sum(1 for p in predictions if p is not PreferenceLabel.TIE),
        ))
    return SweepCurve(
        predictor=predictor.name,
        variant="relabeled" if relabel else "fixed",
        points=points,
    )


def oracle_threshold(curve: SweepCurve) -> SweepPoint:
    """Le point de meilleure précision (premier δ en cas d'égalité)."""
    if not curve.points:
        raise EmptyInputError(f"empty sweep curve for {curve.predictor}")
    return max(curve.points, key=lambda point: point.accuracy)


def write_sweep_csv(path: str, curves: Sequence[SweepCurve]) -> Path:
    """predictor, variant, delta, accuracy, strict_predictions."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["predictor", "variant", "delta", "accuracy", "strict_predictions"])
        for curve in curves:
            for point in curve.points:
                writer.writerow([curve.predictor, curve.variant, point.delta,
                                 f"{point.accuracy:.6f}", point.strict_predictions])
    return out


def plot_sweep(path: str, curves: Sequence[SweepCurve]) -> Path:
    """Courbes précision / δ."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    for curve in curves:
        ax.plot([p.delta for p in curve.points], [p.accuracy for p in curve.points],
                marker="o", label=f"{curve.predictor} ({curve.variant})")
    ax.set_xlabel("tie threshold δ")
    ax.set_ylabel("accuracy (ties included)")
    ax.set_ylim(0.0, 1.0)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
