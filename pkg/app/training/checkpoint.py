"""Checkpoints versionnés (écriture atomique, chargement vérifié)."""
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

import torch

from app import __version__
from app.config import settings
from app.errors import CheckpointCorruptError, CheckpointVersionError
from app.logger import logger
from app.metrics.registry import MetricRegistry
from app.model.network import QualityModel

_REQUIRED_KEYS = ("format_version", "registry", "model_config", "model_state", "step")


@dataclass
class Checkpoint:
    """Contenu restauré d'un checkpoint."""
    model: QualityModel
    step: int
    optimizer_state: Optional[Dict[str, Any]]
    run_config: Optional[Dict[str, Any]]
    artifact_version: str


def save_checkpoint(
    path: str,
    model: QualityModel,
    step: int,
    optimizer: Optional[torch.optim.Optimizer] = None,
    run_config: Optional[Dict[str, Any]] = None,
) -> Path:
    """Écrit dans un fichier temporaire puis renomme."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": settings.CHECKPOINT_FORMAT_VERSION,
        "artifact_version": __version__,
        "registry": model.registry.to_json(),
        "model_config": json.dumps(model.describe(), sort_keys=True),
        "run_config": json.dumps(run_config, sort_keys=True) if run_config else None,
        "step": int(step),
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
    }
    tmp = target.with_name(target.name + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, target)
    logger.info("Checkpoint écrit: {path} (step {step})", path=target, step=step)
    return target


def _registry_difference(expected: MetricRegistry, found: MetricRegistry) -> str:
    missing = [n for n in expected.names if n not in found]
    extra = [n for n in found.names if n not in expected]
    changed = [
        n for n in expected.names
        if n in found and expected.lookup(n) != found.lookup(n)
    ]
    parts = []
    if missing:
        parts.append(f"missing metrics {missing}")
    if extra:
        parts.append(f"unexpected metrics {extra}")
    if changed:
        parts.append(f"different specs for {changed}")
    if not parts:
        parts.append("metric order differs")
    return "; ".join(parts)


def load_checkpoint(path: str, expected_registry: Optional[MetricRegistry] = None) -> Checkpoint:
    """Restaure le modèle ; vérifie version de format et registre."""
    try:
        payload = torch.load(path, map_location=settings.DEVICE, weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as e:  # pylint: disable=broad-except
        raise CheckpointCorruptError(f"{path}: unreadable checkpoint ({e})") from e
    if not isinstance(payload, dict) or any(k not in payload for k in _REQUIRED_KEYS):
        raise CheckpointCorruptError(f"{path}: incomplete checkpoint payload")

    version = payload["format_version"]
    if version != settings.CHECKPOINT_FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint format {version}, expected {settings.CHECKPOINT_FORMAT_VERSION}"
        )
    registry = MetricRegistry.from_json(payload["registry"])
    if expected_registry is not None and registry != expected_registry:
        raise CheckpointVersionError(
            f"{path}: registry mismatch ({_registry_difference(expected_registry, registry)})"
        )
    try:
        model = QualityModel.from_description(registry, json.loads(payload["model_config"]))
        model.load_state_dict(payload["model_state"])
    except (RuntimeError, KeyError, ValueError) as e:
        raise CheckpointCorruptError(f"{path}: cannot restore model ({e})") from e
    model.to(torch.device(settings.DEVICE))
    run_config = json.loads(payload["run_config"]) if payload.get("run_config") else None
    logger.info("Checkpoint chargé: {path} (step {step})", path=path, step=payload["step"])
    return Checkpoint(
        model=model,
        step=int(payload["step"]),
        optimizer_state=payload.get("optimizer_state"),
        run_config=run_config,
        artifact_version=str(payload.get("artifact_version", "")),
    )
