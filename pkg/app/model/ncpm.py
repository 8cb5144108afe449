"""NCPM : comparaison de deux énoncés par attention croisée sur le latent Naturalness."""
from dataclasses import dataclass
from typing import List, Optional

import torch
from torch import nn

from app.config import AmpmConfig, NcpmConfig
from app.errors import ShapeMismatchError
from app.model.ampm import GroupLatent, pool
from app.models import PreferenceLabel

# ordre de départage : égalité, puis A, puis B
_TIE_BREAK = (1, 0, 2)


@dataclass
class PreferenceOutput:
    """logits (B, 3) ordonnés (A_WINS, TIE, B_WINS) ; cmos (B,) = s_A - s_B prédit."""
    logits: torch.Tensor
    cmos: Optional[torch.Tensor] = None


class CrossAttentionLayer(nn.Module):
    """x attend à `context` (pré-normalisation), puis feed-forward."""

    def __init__(self, d_model: int, heads: int, ffn: int, dropout: float):
        super().__init__()
        self.norm_q = nn.LayerNorm(d_model)
        self.norm_kv = nn.LayerNorm(d_model)
        self.attention = nn.MultiheadAttention(d_model, heads, dropout=dropout, batch_first=True)
        self.norm_ff = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(
            nn.Linear(d_model, ffn),
            nn.GELU(),
            nn.Dropout(dropout),
            nn.Linear(ffn, d_model),
        )
        self.dropout = nn.Dropout(dropout)

    def forward(
        self, x: torch.Tensor, context: torch.Tensor, context_padding: torch.Tensor
    ) -> torch.Tensor:
        kv = self.norm_kv(context)
        attended, _ = self.attention(
            self.norm_q(x), kv, kv, key_padding_mask=context_padding, need_weights=False
        )
        x = x + self.dropout(attended)
        return x + self.dropout(self.ff(self.norm_ff(x)))


class NCPM(nn.Module):
    """Deux passes d'attention croisée à paramètres partagés (A vers B, B vers A).

    Les vecteurs moyennés p_a, p_b alimentent une tête de classes sur
    (p_a, p_b, p_a - p_b) et une tête CMOS linéaire sans biais sur p_a - p_b,
    d'où cmos(a, b) = -cmos(b, a) exactement.
    """

    def __init__(self, ampm: AmpmConfig, config: NcpmConfig):
        super().__init__()
        self.d_model = ampm.d_model
        self.layers = nn.ModuleList([
            CrossAttentionLayer(ampm.d_model, ampm.heads, ampm.ffn, config.dropout)
            for _ in range(config.layers)
        ])
        self.class_head = nn.Sequential(
            nn.Linear(3 * ampm.d_model, config.head_hidden),
            nn.GELU(),
            nn.Dropout(config.dropout),
            nn.Linear(config.head_hidden, 3),
        )
        self.cmos_head = nn.Linear(ampm.d_model, 1, bias=False)

    def _attend(self, query: GroupLatent, context: GroupLatent) -> torch.Tensor:
        x = query.values.transpose(1, 2)
        kv = context.values.transpose(1, 2)
        padding = ~context.frame_mask()
        for layer in self.layers:
            x = layer(x, kv, padding)
        return pool(GroupLatent(query.group, x.transpose(1, 2), query.lengths))

    def forward(self, latent_a: GroupLatent, latent_b: GroupLatent) -> PreferenceOutput:
        for side, latent in (("A", latent_a), ("B", latent_b)):
            if latent.values.shape[1] != self.d_model:
                raise ShapeMismatchError(
                    f"latent {side} width {latent.values.shape[1]} != NCPM width {self.d_model}"
                )
        if latent_a.values.shape[0] != latent_b.values.shape[0]:
            raise ShapeMismatchError("both sides of a comparison need the same batch size")
        # deux appels séparés : mêmes noyaux dans les deux ordres
        p_a = self._attend(latent_a, latent_b)
        p_b = self._attend(latent_b, latent_a)
        diff = p_a - p_b
        logits = self.class_head(torch.cat([p_a, p_b, diff], dim=-1))
        cmos = self.cmos_head(diff).squeeze(-1)
        return PreferenceOutput(logits=logits, cmos=cmos)


def predict_classes(logits: torch.Tensor) -> torch.Tensor:
    """argmax par ligne ; égalités départagées vers TIE, puis A_WINS."""
    reordered = logits[..., list(_TIE_BREAK)]
    winner = torch.argmax(reordered, dim=-1)
    lookup = torch.tensor(_TIE_BREAK, device=logits.device)
    return lookup[winner]


def predict_preference(output: PreferenceOutput) -> List[PreferenceLabel]:
    """Classe prédite par paire ; ne dépend d'aucun seuil δ."""
    return [PreferenceLabel.from_index(int(i)) for i in predict_classes(output.logits)]
