"""Point d'entrée en ligne de commande de QualiPy (`python -m app.main <commande>`)."""
import argparse
import asyncio
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from app import __version__
from app.config import RunConfig, SynthConfig, settings
from app.data.manifest import (
    coverage_report,
    labeled_records,
    load_manifest,
    load_native_pairs,
)
from app.data.pairs import (
    build_pairs,
    drop_ties,
    label_counts,
    load_pairs,
    native_to_preference,
    symmetrize,
    write_pairs,
)
from app.data.synthetic import generate
from app.errors import ConfigError, QualiPyError
from app.logger import logger
from app.metrics.registry import load_registry
from app.model.network import build_model
from app.models import PairScope, PreferencePair, SampleRecord
from app.scoring.correlation import metric_correlation_matrix, plot_heatmap, write_matrix_csv
from app.scoring.evaluator import EvalDataset, QualityEvaluator, load_predictions, write_predictions
from app.scoring.preference import (
    ScoreDifferencePredictor,
    oracle_threshold,
    plot_sweep,
    threshold_sweep,
    write_sweep_csv,
)
from app.scoring.report import (
    load_report,
    write_correlation_table,
    write_preference_table,
    write_report,
)
from app.training.checkpoint import load_checkpoint
from app.training.trainer import Trainer

DERIVED_SCOPES = [PairScope.ANY.value, PairScope.CORPUS.value, PairScope.REF.value]


class _Parser(argparse.ArgumentParser):
    """Affiche l'aide complète sur erreur d'usage (code 2)."""

    def error(self, message: str):
        self.print_help(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


# ==============================================================================
# Utilitaires
# ==============================================================================

def _floats(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def _mapping(text: str) -> Dict[str, float]:
    """« MOS=0.3,PESQ=0.5 » -> dict."""
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        name, sep, value = part.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected NAME=VALUE, got {part!r}")
        try:
            out[name.strip()] = float(value)
        except ValueError as e:
            raise argparse.ArgumentTypeError(f"{name}: {value!r} is not a number") from e
    return out


def _named(value: str) -> Tuple[Optional[str], str]:
    """« NOM=CHEMIN » ou « CHEMIN »."""
    name, sep, path = value.partition("=")
    return (name, path) if sep else (None, value)


def _validate(cls, data: Dict[str, Any], where: str):
    try:
        return cls.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        loc = ".".join(str(part) for part in first["loc"])
        raise ConfigError(f"{where}: {loc}: {first['msg']}") from e


def _read_json(path: str) -> Dict[str, Any]:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise ConfigError(f"{path}: cannot read JSON document ({e})") from e


def _audio_root(manifest: str, override: Optional[str]) -> str:
    return override or str(Path(manifest).parent)


def _prepare_pairs(
    pairs: List[PreferencePair], do_symmetrize: bool, keep_ties: bool
) -> List[PreferencePair]:
    if not keep_ties:
        pairs = drop_ties(pairs)
    if do_symmetrize and not any(p.pair_id.endswith("~r") for p in pairs):
        pairs = symmetrize(pairs)
    return pairs


# ==============================================================================
# Sous-commandes
# ==============================================================================

def cmd_synth_data(args: argparse.Namespace) -> int:
    """Corpus synthétique."""
    data = _read_json(args.config) if args.config else {}
    overrides = {
        "n_samples": args.n_samples,
        "seed": args.seed,
        "missingness": args.missingness,
        "label_noise_sd": args.label_noise,
        "holdout_fraction": args.holdout,
        "n_native_pairs": args.native_pairs,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    config = _validate(SynthConfig, data, args.config or "synth-data flags")
    manifest = generate(config, args.out, load_registry(args.registry), jobs=args.jobs)
    print(manifest)
    return 0


def cmd_build_pairs(args: argparse.Namespace) -> int:
    """Paires dérivées d'un manifeste."""
    registry = load_registry(args.registry)
    records = labeled_records(load_manifest(args.manifest, registry), args.metric)
    pairs = build_pairs(records, PairScope(args.scope), metric=args.metric, delta=args.delta,
                        cap=args.cap, seed=args.seed)
    pairs = _prepare_pairs(pairs, args.symmetrize, not args.drop_ties)
    write_pairs(args.out, pairs)
    logger.info("Paires écrites: {path} ({n}, {counts})", path=args.out, n=len(pairs),
                counts=label_counts(pairs))
    print(args.out)
    return 0


def _run_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    return config.with_overrides({
        "train.steps": args.steps,
        "train.seed": args.seed,
        "train.lr": args.lr,
        "train.supervision": args.supervision,
        "train.pair_source": args.pairs,
        "train.native_pair_source": args.native_pairs,
        "train.mix_ratio": args.mix_ratio,
        "data.manifest": args.manifest,
        "data.audio_root": args.audio_root,
        "output_dir": args.output_dir,
    })


def cmd_train(args: argparse.Namespace) -> int:
    """Entraînement (reprise possible)."""
    config = _run_config(args)
    config.check_paths()
    if not config.data.manifest:
        raise ConfigError("train: no manifest (set data.manifest or --manifest)")
    registry = load_registry(config.registry_ref)
    records = load_manifest(config.data.manifest, registry)
    known = [r.sample_id for r in records]
    pairs: List[PreferencePair] = []
    for path in config.train.pair_source:
        pairs += load_pairs(path, known)
    for path in config.train.native_pair_source:
        pairs += native_to_preference(load_native_pairs(path, records))
    pairs = _prepare_pairs(pairs, config.train.symmetrize, config.train.keep_ties)

    model = build_model(registry, config)
    trainer = Trainer(model, config, records, pairs,
                      audio_root=_audio_root(config.data.manifest, config.data.audio_root))
    if args.resume:
        trainer.resume(load_checkpoint(args.resume, expected_registry=registry))
    config.dump(trainer.output_dir / "run_config.json")
    trainer.fit()
    print(trainer.output_dir / "checkpoint.pt")
    return 0


def _evaluator(args: argparse.Namespace, deltas: Sequence[float]) -> QualityEvaluator:
    if bool(args.ckpt) == bool(args.predictions):
        raise ConfigError("give exactly one of --ckpt or --predictions")
    common = {
        "metric": args.metric,
        "deltas": deltas,
        "batch_budget_s": args.batch_budget,
        "score_difference": args.score_diff,
        "drop_predicted_ties": getattr(args, "drop_predicted_ties", False),
    }
    if args.ckpt:
        checkpoint = load_checkpoint(args.ckpt)
        name = args.name
        if name is None and checkpoint.run_config:
            name = _validate(RunConfig, checkpoint.run_config, args.ckpt).model_name
        return QualityEvaluator(checkpoint.model.registry, model=checkpoint.model,
                                name=name or Path(args.ckpt).stem, **common)
    return QualityEvaluator(load_registry(args.registry),
                            predictions=load_predictions(args.predictions),
                            name=args.name or Path(args.predictions).stem, **common)


def _datasets(args: argparse.Namespace, evaluator: QualityEvaluator) -> List[EvalDataset]:
    datasets: List[EvalDataset] = []
    for value in args.manifest:
        name, path = _named(value)
        name = name or Path(path).stem
        if any(ds.name == name for ds in datasets):
            raise ConfigError(f"duplicate dataset name {name!r}: use NAME=PATH")
        records = load_manifest(path, evaluator.registry)
        datasets.append(EvalDataset(name, records, [], _audio_root(path, args.audio_root)))
    by_name = {ds.name: ds for ds in datasets}

    def target(value: str) -> Tuple[EvalDataset, str]:
        name, path = _named(value)
        if name is None:
            return datasets[0], path
        if name not in by_name:
            raise ConfigError(f"pairs for unknown dataset {name!r}")
        return by_name[name], path

    for value in args.pairs or []:
        dataset, path = target(value)
        dataset.pairs += load_pairs(path, [r.sample_id for r in dataset.records])
    for value in args.native_pairs or []:
        dataset, path = target(value)
        dataset.pairs += native_to_preference(load_native_pairs(path, dataset.records))
    if args.pair_scope:
        for dataset in datasets:
            if not dataset.pairs:
                dataset.pairs = build_pairs(
                    labeled_records(dataset.records, args.metric), PairScope(args.pair_scope),
                    metric=args.metric, delta=settings.DEFAULT_DELTA,
                    cap=settings.EVAL_PAIR_CAP, seed=args.seed,
                )
    return datasets


def cmd_predict(args: argparse.Namespace) -> int:
    """Prédictions absolues d'un checkpoint sur un manifeste."""
    checkpoint = load_checkpoint(args.ckpt)
    evaluator = QualityEvaluator(checkpoint.model.registry, model=checkpoint.model,
                                 batch_budget_s=args.batch_budget)
    records = load_manifest(args.manifest, checkpoint.model.registry)
    predictions = evaluator.predict_scores(records, _audio_root(args.manifest, args.audio_root))
    write_predictions(args.out, predictions)
    print(args.out)
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    """EvalReport JSON."""
    evaluator = _evaluator(args, args.deltas)
    datasets = _datasets(args, evaluator)
    report = asyncio.run(evaluator.evaluate(datasets, jobs=args.jobs))
    write_report(args.out, report)
    print(args.out)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    """Balayage du seuil δ."""
    evaluator = _evaluator(args, args.deltas)
    curves = []
    for dataset in _datasets(args, evaluator):
        if not dataset.pairs:
            raise ConfigError(f"sweep: dataset {dataset.name} has no pairs")
        predictor = evaluator.build_predictor(dataset.pairs, dataset.records,
                                              audio_root=dataset.audio_root)
        curve = threshold_sweep(predictor, dataset.pairs, args.deltas, relabel=args.relabel)
        curve = curve.model_copy(update={"predictor": f"{dataset.name}:{curve.predictor}"})
        curves.append(curve)
        if isinstance(predictor, ScoreDifferencePredictor):
            best = oracle_threshold(curve)
            logger.info("{name}: meilleur δ {delta} (acc {acc:.3f})", name=curve.predictor,
                        delta=best.delta, acc=best.accuracy)
    write_sweep_csv(args.out, curves)
    if args.plot:
        plot_sweep(args.plot, curves)
    print(args.out)
    return 0


def cmd_correlate(args: argparse.Namespace) -> int:
    """Matrice de corrélation inter-métriques."""
    registry = load_registry(args.registry)
    records: List[SampleRecord] = load_manifest(args.manifest, registry)
    logger.info("Couverture: {cov}", cov=coverage_report(records, registry))
    matrix = metric_correlation_matrix(records, registry)
    write_matrix_csv(args.out, matrix)
    if args.plot:
        plot_heatmap(args.plot, matrix)
    print(args.out)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    """Tableaux modèles x jeux à partir de plusieurs EvalReport."""
    reports = [load_report(path) for path in args.reports]
    out = Path(args.out_dir)
    preference = write_preference_table(str(out / "preference_table.csv"), reports, args.delta)
    correlation = write_correlation_table(str(out / "correlation_table.csv"), reports)
    print(preference)
    print(correlation)
    return 0


# ==============================================================================
# Parseur
# ==============================================================================

def _add_source(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--ckpt", help="checkpoint to evaluate")
    parser.add_argument("--predictions", help="predictions JSON Lines (score-difference baseline)")
    parser.add_argument("--registry", default="M15", help="registry for --predictions")
    parser.add_argument("--name", help="model name in the report")
    parser.add_argument("--manifest", action="append", required=True, metavar="[NAME=]PATH")
    parser.add_argument("--pairs", action="append", metavar="[NAME=]PATH")
    parser.add_argument("--native-pairs", action="append", metavar="[NAME=]PATH")
    parser.add_argument("--pair-scope", choices=DERIVED_SCOPES,
                        help="derive pairs from the manifest when none are given")
    parser.add_argument("--seed", type=int, default=settings.DEFAULT_SEED)
    parser.add_argument("--metric", default=settings.DEFAULT_PAIR_METRIC)
    parser.add_argument("--score-diff", action="store_true",
                        help="preference from predicted score differences instead of the NCPM")
    parser.add_argument("--audio-root")
    parser.add_argument("--batch-budget", type=float, default=400.0, help="seconds of audio per batch")


def build_parser() -> argparse.ArgumentParser:
    """Parseur complet."""
    parser = _Parser(prog="qualipy", description="Multi-metric speech quality and preference toolkit.")
    parser.add_argument(
        "--version", action="version",
        version=f"qualipy {__version__} (checkpoint format {settings.CHECKPOINT_FORMAT_VERSION})",
    )
    parser.add_argument("--jobs", type=int, default=settings.MAX_CPU_WORKERS,
                        help="worker cap for generation and evaluation")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth-data", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="SynthConfig JSON")
    p.add_argument("--registry", default="M15")
    p.add_argument("--n-samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--missingness", type=_mapping, metavar="METRIC=P,...")
    p.add_argument("--label-noise", type=float)
    p.add_argument("--holdout", type=float)
    p.add_argument("--native-pairs", type=int)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("build-pairs", help="derive preference pairs from absolute scores")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--registry", default="M15")
    p.add_argument("--scope", choices=DERIVED_SCOPES, default=PairScope.CORPUS.value)
    p.add_argument("--metric", default=settings.DEFAULT_PAIR_METRIC)
    p.add_argument("--delta", type=float, default=settings.DEFAULT_DELTA)
    p.add_argument("--cap", type=int, default=settings.EVAL_PAIR_CAP)
    p.add_argument("--seed", type=int, default=settings.DEFAULT_SEED)
    p.add_argument("--symmetrize", action="store_true")
    p.add_argument("--drop-ties", action="store_true")
    p.set_defaults(func=cmd_build_pairs)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="RunConfig JSON")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--manifest")
    p.add_argument("--audio-root")
    p.add_argument("--supervision", help="M1, M5, M15 or a registry JSON path")
    p.add_argument("--pairs", action="append")
    p.add_argument("--native-pairs", action="append")
    p.add_argument("--mix-ratio", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write absolute predictions for a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--audio-root")
    p.add_argument("--batch-budget", type=float, default=400.0)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint or a predictions file")
    _add_source(p)
    p.add_argument("--deltas", type=_floats, default=[settings.DEFAULT_DELTA])
    p.add_argument("--drop-predicted-ties", action="store_true",
                   help="strict accuracy ignores predicted ties instead of counting them wrong")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="accuracy versus tie threshold")
    _add_source(p)
    p.add_argument("--deltas", type=_floats, default=list(settings.SWEEP_DELTAS))
    p.add_argument("--relabel", action="store_true", help="relabel derived ground truth per delta")
    p.add_argument("--out", required=True)
    p.add_argument("--plot")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("correlate", help="inter-metric correlation matrix")
    p.add_argument("--manifest", required=True)
    p.add_argument("--registry", default="M15")
    p.add_argument("--out", required=True)
    p.add_argument("--plot")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("report", help="tables from several evaluation reports")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--delta", type=float, default=settings.DEFAULT_DELTA)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Exécute une sous-commande ; 0 succès, 1 erreur de données, 2 erreur d'usage."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return 2
    try:
        return args.func(args)
    except QualiPyError as e:
        logger.error("{command}: {err}", command=args.command, err=e)
        return 1
    except OSError as e:
        logger.error("{command}: {err}", command=args.command, err=e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
