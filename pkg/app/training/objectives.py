"""Fonctions de perte : MSE masquée multi-métriques, entropie croisée de préférence, CMOS."""
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import torch
import torch.nn.functional as F

from app.errors import AllTermsSkippedError, EmptyInputError, ShapeMismatchError
from app.models import LossReport


@dataclass
class MetricLoss:
    """Fragment MSE : None signifie SKIPPED (aucun label valide)."""
    mse_total: Optional[torch.Tensor]
    per_metric: Dict[str, Optional[torch.Tensor]] = field(default_factory=dict)

    @property
    def valid_metric_count(self) -> int:
        """|K_valid|"""
        return sum(1 for value in self.per_metric.values() if value is not None)


@dataclass
class LossOutcome:
    """Perte différentiable et son rapport sérialisable."""
    total: torch.Tensor
    report: LossReport


def masked_metric_loss(
    preds: torch.Tensor,
    labels: torch.Tensor,
    weights: Sequence[float],
    names: Sequence[str],
    mask: Optional[torch.Tensor] = None,
) -> MetricLoss:
    """L^k = w_k · Σ_b m·(ŷ - y)² / Σ_b m ; mse_total = moyenne sur K_valid.

    Par défaut le masque vaut 1 là où le label n'est pas NaN. Les entrées masquées
    ne contribuent ni à la valeur ni au gradient.
    """
    if preds.shape != labels.shape:
        raise ShapeMismatchError(f"preds {tuple(preds.shape)} vs labels {tuple(labels.shape)}")
    if preds.dim() != 2 or preds.shape[1] != len(names) or len(weights) != len(names):
        raise ShapeMismatchError(
            f"expected (B, {len(names)}) with {len(names)} weights, got "
            f"{tuple(preds.shape)} and {len(weights)} weights"
        )
    if mask is None:
        mask = ~torch.isnan(labels)
    mask = mask.bool()
    safe_labels = torch.nan_to_num(labels, nan=0.0)
    residual = torch.where(mask, preds - safe_labels, torch.zeros_like(preds))
    squared = residual ** 2
    counts = mask.sum(dim=0)

    per_metric: Dict[str, Optional[torch.Tensor]] = {}
    valid = []
    for k, name in enumerate(names):
        if int(counts[k]) == 0:
            per_metric[name] = None
            continue
        loss_k = weights[k] * squared[:, k].sum() / counts[k].to(preds.dtype)
        per_metric[name] = loss_k
        valid.append(loss_k)
    mse_total = torch.stack(valid).mean() if valid else None
    return MetricLoss(mse_total, per_metric)


def preference_ce(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Entropie croisée moyenne sur (A_WINS, TIE, B_WINS)."""
    if logits.shape[0] == 0:
        raise EmptyInputError("preference_ce on an empty batch")
    if logits.dim() != 2 or logits.shape[1] != 3 or labels.shape[0] != logits.shape[0]:
        raise ShapeMismatchError(
            f"expected (B, 3) logits and (B,) labels, got {tuple(logits.shape)} / "
            f"{tuple(labels.shape)}"
        )
    return F.cross_entropy(logits, labels.long())


def cmos_loss(predicted: torch.Tensor, target: torch.Tensor) -> Optional[torch.Tensor]:
    """Erreur quadratique moyenne sur les paires dérivées (cible non NaN) ; None sinon."""
    valid = ~torch.isnan(target)
    if not bool(valid.any()):
        return None
    diff = torch.where(valid, predicted - torch.nan_to_num(target), torch.zeros_like(predicted))
    return (diff ** 2).sum() / valid.sum().to(predicted.dtype)


def _item(value: Optional[torch.Tensor]) -> Optional[float]:
    return None if value is None else float(value.detach())


def total_loss(
    mse: Optional[MetricLoss],
    ce: Optional[torch.Tensor] = None,
    cmos: Optional[torch.Tensor] = None,
    lambda_mse: float = 1.0,
    lambda_ce: float = 1.0,
    lambda_cmos: float = 0.0,
) -> LossOutcome:
    """Somme pondérée des termes disponibles ; erreur si tous sont SKIPPED."""
    mse_total = mse.mse_total if mse is not None else None
    terms = [
        (weight, term)
        for weight, term in ((lambda_mse, mse_total), (lambda_ce, ce), (lambda_cmos, cmos))
        if term is not None
    ]
    if not terms:
        raise AllTermsSkippedError("no loss term available for this batch")
    total = sum(weight * term for weight, term in terms)
    report = LossReport(
        total=float(total.detach()),
        mse_total=_item(mse_total),
        per_metric={k: _item(v) for k, v in (mse.per_metric.items() if mse else [])},
        ce=_item(ce),
        cmos=_item(cmos),
        valid_metric_count=mse.valid_metric_count if mse is not None else 0,
    )
    return LossOutcome(total, report)
