"""Manifestes JSON Lines des corpus partiellement annotés et des paires natives."""
import json
import math
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from app.errors import (
    ConfigError,
    DuplicateSampleError,
    EmptyInputError,
    ManifestParseError,
    RangeViolationError,
)
from app.logger import logger
from app.metrics.registry import MetricRegistry
from app.models import NativePairRecord, SampleRecord


def _reject_constant(token: str) -> float:
    # JSON interdit NaN / Infinity : un label absent s'écrit null
    raise ValueError(f"non-JSON numeric token {token}")


def _loads(line: str) -> dict:
    return json.loads(line, parse_constant=_reject_constant)


def _first_error(err: ValidationError) -> str:
    first = err.errors()[0]
    loc = ".".join(str(part) for part in first["loc"])
    return f"{loc}: {first['msg']}"


def _normalize_labels(
    raw: Mapping[str, object],
    registry: MetricRegistry,
    sample_id: str,
    path: str,
    line_no: int,
) -> Dict[str, Optional[float]]:
    """Complète les labels absents par None et valide les domaines."""
    where = f"{path}:{line_no}"
    labels: Dict[str, Optional[float]] = {}
    for name in registry.names:
        value = raw.get(name)
        if value is None:
            labels[name] = None
            continue
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ManifestParseError(path, line_no, f"label {name} is not a number: {value!r}")
        value = float(value)
        if not registry.lookup(name).contains(value):
            raise RangeViolationError(sample_id, name, value, where=where)
        labels[name] = value
    ignored = sorted(set(raw) - set(registry.names))
    if ignored:
        logger.debug("{where}: labels hors registre ignorés: {names}", where=where, names=ignored)
    return labels


def load_manifest(path: str, registry: MetricRegistry) -> List[SampleRecord]:
    """Charge un manifeste ; tout ou rien (la première erreur interrompt le chargement)."""
    records: List[SampleRecord] = []
    seen: Dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            where = f"{path}:{line_no}"
            try:
                obj = _loads(line)
            except ValueError as e:
                raise ManifestParseError(str(path), line_no, str(e)) from e
            if not isinstance(obj, dict):
                raise ManifestParseError(str(path), line_no, "expected a JSON object")
            raw_labels = obj.get("labels") or {}
            if not isinstance(raw_labels, dict):
                raise ManifestParseError(str(path), line_no, "labels must be an object")
            try:
                record = SampleRecord.model_validate({**obj, "labels": {}})
            except ValidationError as e:
                raise ManifestParseError(str(path), line_no, _first_error(e)) from e
            labels = _normalize_labels(raw_labels, registry, record.sample_id, str(path), line_no)
            record = record.model_copy(update={"labels": labels})
            if record.sample_id in seen:
                raise DuplicateSampleError(
                    f"{where}: sample_id {record.sample_id!r} already defined on line "
                    f"{seen[record.sample_id]}"
                )
            seen[record.sample_id] = line_no
            records.append(record)
    logger.info("Manifeste chargé: {path} ({n} échantillons)", path=path, n=len(records))
    return records


def write_manifest(path: str, records: Iterable[SampleRecord]) -> Path:
    """Écrit un manifeste ; un label absent est émis comme null."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as handle:
        for record in records:
            # repr des flottants Python : aller-retour exact au bit près
            handle.write(json.dumps(record.model_dump(mode="json"), allow_nan=False) + "\n")
    return out


def coverage_report(records: Sequence[SampleRecord], registry: MetricRegistry) -> Dict[str, float]:
    """Fraction d'échantillons annotés, par métrique."""
    if not records:
        raise EmptyInputError("coverage_report needs at least one record")
    total = len(records)
    return {
        name: sum(1 for record in records if record.has_label(name)) / total
        for name in registry.names
    }


def labeled_records(records: Sequence[SampleRecord], metric: str) -> List[SampleRecord]:
    """Échantillons portant un label pour `metric`."""
    return [record for record in records if record.has_label(metric)]


def split_records(
    records: Sequence[SampleRecord], holdout_fraction: float, seed: int
) -> Tuple[List[SampleRecord], List[SampleRecord]]:
    """Partition (train, test) déterministe ; l'ordre d'origine est conservé."""
    if not 0.0 <= holdout_fraction < 1.0:
        raise ConfigError(f"holdout_fraction={holdout_fraction} outside [0, 1)")
    n_test = int(math.floor(len(records) * holdout_fraction))
    rng = np.random.default_rng(seed)
    test_idx = set(rng.permutation(len(records))[:n_test].tolist())
    train = [r for i, r in enumerate(records) if i not in test_idx]
    test = [r for i, r in enumerate(records) if i in test_idx]
    return train, test


# ==============================================================================
# Paires natives
# ==============================================================================

def load_native_pairs(path: str, records: Sequence[SampleRecord]) -> List[NativePairRecord]:
    """Paires annotées nativement ; chaque échantillon doit exister dans `records`."""
    known = {record.sample_id for record in records}
    pairs: List[NativePairRecord] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                pair = NativePairRecord.model_validate(_loads(line))
            except ValueError as e:
                reason = _first_error(e) if isinstance(e, ValidationError) else str(e)
                raise ManifestParseError(str(path), line_no, reason) from e
            for sample_id in (pair.sample_a, pair.sample_b):
                if sample_id not in known:
                    raise ManifestParseError(str(path), line_no, f"unknown sample {sample_id!r}")
            pairs.append(pair)
    logger.info("Paires natives chargées: {path} ({n} paires)", path=path, n=len(pairs))
    return pairs


def write_native_pairs(path: str, pairs: Iterable[NativePairRecord]) -> Path:
    """Écrit des paires natives (label "A", "B" ou "tie")."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as handle:
        for pair in pairs:
            handle.write(json.dumps(pair.model_dump(mode="json")) + "\n")
    return out
