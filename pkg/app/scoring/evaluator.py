"""Évaluation d'un modèle (ou d'un fichier de prédictions) sur un ou plusieurs jeux."""
import asyncio
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import torch

from app.config import settings
from app.data.loader import collate, collate_pairs
from app.data.pairs import relabel_pairs
from app.errors import (
    DegenerateInputError,
    EmptyInputError,
    ManifestParseError,
    UnknownMetricError,
    UnknownSampleError,
)
from app.logger import logger
from app.metrics.registry import MetricRegistry
from app.model.ncpm import predict_preference
from app.model.network import QualityModel
from app.models import (
    DatasetEval,
    EvalReport,
    MetricCorrelation,
    PreferenceLabel,
    PreferencePair,
    SamplePrediction,
    SampleRecord,
)
from app.scoring.correlation import pearson, spearman
from app.scoring.preference import (
    AccuracyMode,
    DirectPredictions,
    Predictor,
    ScoreDifferencePredictor,
    inconsistency_rate,
    preference_accuracy,
)
from app.training.batching import pair_duration, sorted_batches


@dataclass
class EvalDataset:
    """Un jeu d'évaluation : énoncés annotés et paires (dérivées ou natives)."""
    name: str
    records: List[SampleRecord]
    pairs: List[PreferencePair] = field(default_factory=list)
    audio_root: Optional[str] = None


def _truths(pairs: Sequence[PreferencePair], delta: float) -> List[PreferencePair]:
    """Vérité à δ : les paires dérivées sont ré-étiquetées, les natives restent fixes."""
    return [relabel_pairs([p], delta)[0] if p.is_derived else p for p in pairs]


def _correlations(predicted: Sequence[float], labels: Sequence[float]) -> MetricCorrelation:
    try:
        return MetricCorrelation(lcc=pearson(predicted, labels), srcc=spearman(predicted, labels),
                                 n=len(labels))
    except DegenerateInputError as e:
        logger.warning("Corrélation indéfinie ({n} points): {err}", n=len(labels), err=e)
        return MetricCorrelation(n=len(labels))


class QualityEvaluator:
    """Calcule acc@δ, acc_0, LCC/SRCC et l'incohérence d'ordre.

    La source des prédictions est soit un `QualityModel` (têtes AMPM et NCPM),
    soit un fichier de prédictions absolues ; dans ce dernier cas, ou avec
    `score_difference=True`, la préférence est déduite des scores du `metric`.
    """

    def __init__(
        self,
        registry: MetricRegistry,
        model: Optional[QualityModel] = None,
        predictions: Optional[Mapping[str, Mapping[str, float]]] = None,
        name: str = "model",
        metric: str = settings.DEFAULT_PAIR_METRIC,
        deltas: Sequence[float] = (settings.DEFAULT_DELTA,),
        batch_budget_s: float = 400.0,
        score_difference: bool = False,
        drop_predicted_ties: bool = False,
    ):
        if (model is None) == (predictions is None):
            raise ValueError("give exactly one of model or predictions")
        self.registry = registry
        self.model = model
        self.predictions = {k: dict(v) for k, v in predictions.items()} if predictions else None
        self.name = name
        self.metric = metric
        self.deltas = list(deltas)
        self.batch_budget_s = batch_budget_s
        self.score_difference = score_difference or model is None
        self.drop_predicted_ties = drop_predicted_ties

    # ------------------------------------------------------------------
    # Prédictions
    # ------------------------------------------------------------------

    @torch.no_grad()
    def predict_scores(
        self, records: Sequence[SampleRecord], audio_root: Optional[str] = None
    ) -> List[SamplePrediction]:
        """Prédictions absolues, dans l'ordre de `records`."""
        if self.predictions is not None:
            missing = [r.sample_id for r in records if r.sample_id not in self.predictions]
            if missing:
                raise UnknownSampleError(f"no prediction for samples {missing[:5]}")
            return [SamplePrediction(sample_id=r.sample_id, predictions=self.predictions[r.sample_id])
                    for r in records]
        model = self.model
        model.eval()
        device = torch.device(settings.DEVICE)
        started = time.perf_counter()
        by_id: Dict[str, SamplePrediction] = {}
        for chunk in sorted_batches(records, self.batch_budget_s):
            batch = collate(chunk, model.registry, audio_root, model.sample_rate, model.needs_audio)
            bundle = model.score(batch.to(device))
            for prediction in bundle.to_predictions(batch.sample_ids):
                by_id[prediction.sample_id] = prediction
        elapsed = time.perf_counter() - started
        audio_s = sum(r.duration_s for r in records)
        logger.info(
            "Inférence: {n} énoncés, {audio:.1f}s d'audio en {t:.2f}s (RTF {rtf:.4f})",
            n=len(records), audio=audio_s, t=elapsed, rtf=elapsed / max(audio_s, 1e-9),
        )
        return [by_id[r.sample_id] for r in records]

    @torch.no_grad()
    def predict_pairs(
        self,
        pairs: Sequence[PreferencePair],
        by_id: Mapping[str, SampleRecord],
        audio_root: Optional[str] = None,
    ) -> Dict[str, PreferenceLabel]:
        """Classes NCPM par pair_id."""
        model = self.model
        model.eval()
        device = torch.device(settings.DEVICE)
        out: Dict[str, PreferenceLabel] = {}
        for chunk in sorted_batches(pairs, self.batch_budget_s, pair_duration(by_id)):
            batch = collate_pairs(chunk, by_id, model.registry, audio_root, model.sample_rate,
                                  model.needs_audio)
            comparison = model.compare(batch.side_a.to(device), batch.side_b.to(device))
            out.update(zip(batch.pair_ids, predict_preference(comparison.preference)))
        return out

    def build_predictor(
        self,
        pairs: Sequence[PreferencePair],
        records: Sequence[SampleRecord],
        scores: Optional[Sequence[SamplePrediction]] = None,
        audio_root: Optional[str] = None,
    ) -> Predictor:
        """NCPM direct (paires et leurs inverses) ou baseline par différence de scores."""
        if self.score_difference:
            scores = scores if scores is not None else self.predict_scores(records, audio_root)
            by_sample = {}
            for prediction in scores:
                if self.metric not in prediction.predictions:
                    raise UnknownMetricError(self.metric)
                by_sample[prediction.sample_id] = prediction.predictions[self.metric]
            return ScoreDifferencePredictor(f"{self.name}[{self.metric} diff]", by_sample)
        by_id = {r.sample_id: r for r in records}
        known = {p.pair_id for p in pairs}
        both = list(pairs) + [p.reversed() for p in pairs if p.reversed().pair_id not in known]
        return DirectPredictions(self.name, self.predict_pairs(both, by_id, audio_root))

    # ------------------------------------------------------------------
    # Métriques
    # ------------------------------------------------------------------

    def correlation_report(
        self, records: Sequence[SampleRecord], scores: Sequence[SamplePrediction]
    ) -> Dict[str, MetricCorrelation]:
        """LCC / SRCC de chaque métrique prédite ayant des labels."""
        report: Dict[str, MetricCorrelation] = {}
        for name in self.registry.names:
            rows = [
                (s.predictions[name], r.label(name))
                for r, s in zip(records, scores)
                if r.has_label(name) and name in s.predictions
            ]
            if rows:
                report[name] = _correlations([p for p, _ in rows], [y for _, y in rows])
        return report

    def preference_scores(self, predictor: Predictor, pairs: Sequence[PreferencePair]) -> dict:
        """acc@δ pour chaque δ, acc_0 strict et taux d'incohérence."""
        acc_at = {}
        for delta in self.deltas:
            acc_at[f"{delta:g}"] = preference_accuracy(
                predictor.predict(pairs, delta), _truths(pairs, delta), AccuracyMode.WITH_TIES
            )
        acc_strict = None
        try:
            acc_strict = preference_accuracy(
                predictor.predict(pairs, 0.0), _truths(pairs, 0.0), AccuracyMode.STRICT,
                drop_predicted_ties=self.drop_predicted_ties,
            )
        except EmptyInputError:
            logger.warning("acc_0 indéfinie : aucune paire stricte")
        reference_delta = self.deltas[0] if self.deltas else settings.DEFAULT_DELTA
        forward = predictor.predict(pairs, reference_delta)
        backward = predictor.predict([p.reversed() for p in pairs], reference_delta)
        return {
            "acc_at": acc_at,
            "acc_strict": acc_strict,
            "inconsistency_rate": inconsistency_rate(forward, backward),
        }

    def evaluate_dataset(self, dataset: EvalDataset) -> DatasetEval:
        """Évaluation complète d'un jeu."""
        if not dataset.records:
            raise EmptyInputError(f"dataset {dataset.name}: no records")
        logger.info("Évaluation de {model} sur {ds}: {n} énoncés, {p} paires",
                    model=self.name, ds=dataset.name, n=len(dataset.records), p=len(dataset.pairs))
        scores = self.predict_scores(dataset.records, dataset.audio_root)
        per_metric = self.correlation_report(dataset.records, scores)
        main = per_metric.get(self.metric, MetricCorrelation())
        result = DatasetEval(
            lcc=main.lcc,
            srcc=main.srcc,
            n_samples=len(dataset.records),
            n_pairs=len(dataset.pairs),
            per_metric=per_metric,
        )
        if dataset.pairs:
            predictor = self.build_predictor(dataset.pairs, dataset.records, scores,
                                             dataset.audio_root)
            result = result.model_copy(update=self.preference_scores(predictor, dataset.pairs))
        logger.success("{ds}: LCC {lcc} | SRCC {srcc} | acc {acc} | acc_0 {strict}",
                       ds=dataset.name, lcc=result.lcc, srcc=result.srcc, acc=result.acc_at,
                       strict=result.acc_strict)
        return result

    async def evaluate(
        self, datasets: Sequence[EvalDataset], jobs: int = settings.MAX_CPU_WORKERS
    ) -> EvalReport:
        """Évalue les jeux en parallèle ; le rapport suit l'ordre des jeux."""
        semaphore = asyncio.Semaphore(max(1, jobs))

        async def run(dataset: EvalDataset) -> DatasetEval:
            async with semaphore:
                return await asyncio.to_thread(self.evaluate_dataset, dataset)

        results = await asyncio.gather(*(run(ds) for ds in datasets))
        return EvalReport(
            model=self.name,
            per_dataset={ds.name: res for ds, res in zip(datasets, results)},
        )


def write_predictions(path: str, predictions: Iterable[SamplePrediction]) -> Path:
    """JSON Lines {sample_id, predictions: {metric: value}}."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as handle:
        for prediction in predictions:
            handle.write(json.dumps(prediction.model_dump(), allow_nan=False) + "\n")
    return out


def load_predictions(path: str) -> Dict[str, Dict[str, float]]:
    """sample_id -> {métrique: valeur}."""
    out: Dict[str, Dict[str, float]] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                prediction = SamplePrediction.model_validate_json(line)
            except ValueError as e:
                raise ManifestParseError(str(path), line_no, str(e).splitlines()[0]) from e
            out[prediction.sample_id] = prediction.predictions
    if not out:
        raise EmptyInputError(f"{path}: no predictions")
    return out
