"""Corpus synthétique à qualité latente connue.

Chaque échantillon est une porteuse harmonique additionnée d'un bruit gaussien à
un SNR tiré uniformément. La qualité latente q est une fonction croissante du
SNR dans [1, 5] ; chaque label est une fonction croissante de q ramenée dans le
domaine de la métrique, éventuellement bruitée puis effacée selon `missingness`.
"""
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import soundfile as sf

from app.config import SynthConfig, settings
from app.data.manifest import split_records, write_manifest, write_native_pairs
from app.logger import logger
from app.metrics.registry import MetricRegistry, default_registry
from app.models import MetricSpec, NativePairRecord, PreferenceLabel, SampleRecord

MANIFEST_NAME = "manifest.jsonl"
HIDDEN_QUALITY_NAME = "hidden_quality.jsonl"
NATIVE_PAIRS_NAME = "native_pairs.jsonl"
AUDIO_DIR = "audio"


@dataclass
class RenderedSample:
    """Un échantillon rendu (avant écriture du manifeste)."""
    record: SampleRecord
    quality: float
    snr_db: float
    waveform: np.ndarray


def latent_quality(snr_db: float, config: SynthConfig) -> float:
    """q = 1 + 4 * (snr - snr_min) / (snr_max - snr_min), dans [1, 5]."""
    span = config.snr_max_db - config.snr_min_db
    q = 1.0 + 4.0 * (snr_db - config.snr_min_db) / span
    return min(5.0, max(1.0, q))


def label_from_quality(q: float, spec: MetricSpec) -> float:
    """Application croissante de q vers le domaine de la métrique (sans bruit)."""
    t = (q - 1.0) / 4.0
    if spec.lower.is_finite and spec.upper.is_finite:
        return spec.lo + (spec.hi - spec.lo) * t
    if spec.lower.is_finite:
        return spec.lo + 2.0 * (q - 1.0)
    if spec.upper.is_finite:
        return spec.hi - 8.0 + 2.0 * (q - 1.0)
    return -5.0 + 5.0 * (q - 1.0)


def _identity(index: int, config: SynthConfig) -> Tuple[str, str, str, str]:
    """(sample_id, corpus_id, system_id, reference_id) ; tourniquet sur les corpus."""
    corpus = f"c{index % config.n_corpora}"
    j = index // config.n_corpora
    system = f"sys{j % config.n_systems}"
    reference = f"{corpus}-r{(j // config.n_systems) % config.n_references}"
    return f"{corpus}-{j:05d}", corpus, system, reference


def _render(
    index: int,
    rng: np.random.Generator,
    config: SynthConfig,
    registry: MetricRegistry,
) -> RenderedSample:
    sample_id, corpus, system, reference = _identity(index, config)
    sr = config.sample_rate
    duration = rng.uniform(config.min_duration_s, config.max_duration_s)
    n = max(1, int(round(duration * sr)))
    snr_db = float(rng.uniform(config.snr_min_db, config.snr_max_db))
    f0 = rng.uniform(100.0, 250.0)

    t = np.arange(n, dtype=np.float64) / sr
    carrier = sum(np.sin(2 * np.pi * f0 * h * t) / h for h in range(1, 6))
    carrier *= 0.1 / np.sqrt(np.mean(carrier ** 2))
    noise_rms = 0.1 / (10.0 ** (snr_db / 20.0))
    noise = rng.normal(0.0, noise_rms, size=n)
    waveform = np.clip(carrier + noise, -1.0, 1.0).astype(np.float32)

    q = latent_quality(snr_db, config)
    labels: Dict[str, Optional[float]] = {}
    for spec in registry.specs:
        value = label_from_quality(q, spec)
        if config.label_noise_sd > 0:
            value += rng.normal(0.0, config.label_noise_sd)
        value = min(spec.hi, max(spec.lo, value))
        # tirage systématique : le flux aléatoire ne dépend pas de la config d'effacement
        dropped = rng.random() < config.missingness.get(spec.name, 0.0)
        labels[spec.name] = None if dropped else float(value)

    record = SampleRecord(
        sample_id=sample_id,
        corpus_id=corpus,
        system_id=system,
        reference_id=reference,
        audio_path=f"{AUDIO_DIR}/{sample_id}.wav",
        duration_s=n / sr,
        labels=labels,
    )
    return RenderedSample(record, q, snr_db, waveform)


def _native_pairs(
    samples: List[RenderedSample], count: int, rng: np.random.Generator
) -> List[NativePairRecord]:
    """Paires strictes intra-corpus étiquetées par la qualité latente."""
    by_corpus: Dict[str, List[RenderedSample]] = {}
    for sample in samples:
        by_corpus.setdefault(sample.record.corpus_id, []).append(sample)
    corpora = [c for c in sorted(by_corpus) if len(by_corpus[c]) >= 2]
    pairs: List[NativePairRecord] = []
    attempts = 0
    while corpora and len(pairs) < count and attempts < 20 * count:
        attempts += 1
        members = by_corpus[corpora[int(rng.integers(len(corpora)))]]
        i, j = rng.choice(len(members), size=2, replace=False)
        a, b = members[int(i)], members[int(j)]
        if a.quality == b.quality:
            continue
        label = PreferenceLabel.A_WINS if a.quality > b.quality else PreferenceLabel.B_WINS
        pairs.append(NativePairRecord(
            pair_id=f"native-{len(pairs):05d}",
            sample_a=a.record.sample_id,
            sample_b=b.record.sample_id,
            label=label,
            corpus_id=a.record.corpus_id,
        ))
    return pairs


def generate(
    config: SynthConfig,
    out_dir: str,
    registry: Optional[MetricRegistry] = None,
    jobs: int = settings.MAX_CPU_WORKERS,
) -> Path:
    """Écrit WAV, manifeste et fichier de qualité cachée ; renvoie le chemin du manifeste.

    Les flux aléatoires par échantillon sont dérivés de `config.seed`, la sortie
    ne dépend donc pas de `jobs`.
    """
    registry = registry or default_registry()
    for name in config.missingness:
        registry.lookup(name)
    root = Path(out_dir)
    (root / AUDIO_DIR).mkdir(parents=True, exist_ok=True)

    seeds = np.random.SeedSequence(config.seed).spawn(config.n_samples + 1)
    logger.info(
        "Génération synthétique: {n} échantillons, {c} corpus, seed={seed} -> {out}",
        n=config.n_samples, c=config.n_corpora, seed=config.seed, out=root,
    )

    def work(index: int) -> RenderedSample:
        sample = _render(index, np.random.default_rng(seeds[index]), config, registry)
        sf.write(root / sample.record.audio_path, sample.waveform, config.sample_rate,
                 subtype="PCM_16")
        return sample

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        samples = list(pool.map(work, range(config.n_samples)))

    records = [sample.record for sample in samples]
    manifest = write_manifest(str(root / MANIFEST_NAME), records)
    with open(root / HIDDEN_QUALITY_NAME, "w", encoding="utf-8") as handle:
        for sample in samples:
            handle.write(json.dumps({
                "sample_id": sample.record.sample_id,
                "q": sample.quality,
                "snr_db": sample.snr_db,
            }) + "\n")

    if config.holdout_fraction > 0:
        train, test = split_records(records, config.holdout_fraction, config.seed)
        write_manifest(str(root / "train.jsonl"), train)
        write_manifest(str(root / "test.jsonl"), test)
        logger.info("Découpage: {tr} train / {te} test", tr=len(train), te=len(test))

    if config.n_native_pairs > 0:
        natives = _native_pairs(samples, config.n_native_pairs,
                                np.random.default_rng(seeds[-1]))
        write_native_pairs(str(root / NATIVE_PAIRS_NAME), natives)
        logger.info("{n} paires natives écrites", n=len(natives))

    logger.success("Corpus synthétique écrit: {path}", path=manifest)
    return manifest


def load_hidden_quality(path: str) -> Dict[str, float]:
    """sample_id -> q depuis le fichier compagnon."""
    out: Dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                row = json.loads(line)
                out[row["sample_id"]] = float(row["q"])
    return out

