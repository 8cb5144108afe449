"""Activations contraignant une sortie de tête au domaine de sa métrique."""
import math
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from app.errors import InvalidRangeError
from app.models import MetricSpec


def rc_act(x: torch.Tensor, lower: float = -math.inf, upper: float = math.inf) -> torch.Tensor:
    """Projette x dans [lower, upper] de façon lisse et strictement croissante.

    - deux bornes finies : lower + (upper - lower) * sigmoid(x)
    - borne basse seule  : lower + softplus(x - lower)
    - borne haute seule  : upper - softplus(upper - x)
    - aucune borne       : identité
    """
    low_finite, up_finite = math.isfinite(lower), math.isfinite(upper)
    if low_finite and up_finite:
        if lower >= upper:
            raise InvalidRangeError(f"lower bound {lower} must be < upper bound {upper}")
        y = lower + (upper - lower) * torch.sigmoid(x)
        # en saturation flottante, on reste strictement à l'intérieur
        lo = torch.tensor(lower, dtype=y.dtype, device=y.device)
        hi = torch.tensor(upper, dtype=y.dtype, device=y.device)
        return torch.clamp(y, torch.nextafter(lo, hi), torch.nextafter(hi, lo))
    if low_finite:
        return lower + F.softplus(x - lower)
    if up_finite:
        return upper - F.softplus(upper - x)
    return x


class RangeActivation(nn.Module):
    """Applique `rc_act` colonne par colonne sur (B, K), bornes prises du registre."""

    def __init__(self, specs: Sequence[MetricSpec]):
        super().__init__()
        self.bounds = [(spec.lo, spec.hi) for spec in specs]

    def forward(self, raw: torch.Tensor) -> torch.Tensor:
        columns = [
            rc_act(raw[:, k], lower, upper) for k, (lower, upper) in enumerate(self.bounds)
        ]
        return torch.stack(columns, dim=1)
