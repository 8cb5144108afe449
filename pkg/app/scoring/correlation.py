"""Corrélations LCC / SRCC et matrice de corrélation inter-métriques."""
import csv
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import numpy as np
from scipy.stats import rankdata

from app.errors import DegenerateInputError, ShapeMismatchError
from app.metrics.registry import MetricRegistry
from app.models import SampleRecord

UNDEFINED = "UNDEFINED"


def _check(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeMismatchError(f"vectors must be 1-D and aligned: {x.shape} vs {y.shape}")
    if len(x) < 2:
        raise DegenerateInputError(f"correlation needs at least 2 points, got {len(x)}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DegenerateInputError("correlation inputs must be finite")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateInputError("correlation undefined for a constant vector")


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Coefficient de Pearson (LCC)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check(x, y)
    xm = x - x.mean()
    ym = y - y.mean()
    denom = np.sqrt(np.sum(xm * xm) * np.sum(ym * ym))
    if denom == 0.0:
        raise DegenerateInputError("correlation undefined: zero variance")
    return float(np.clip(np.sum(xm * ym) / denom, -1.0, 1.0))


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Coefficient de Spearman (SRCC) : Pearson des rangs moyens."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check(x, y)
    return pearson(rankdata(x, method="average"), rankdata(y, method="average"))


@dataclass
class CorrelationMatrix:
    """Matrice symétrique ; NaN pour une cellule UNDEFINED."""
    names: List[str]
    values: np.ndarray
    counts: np.ndarray

    def cell(self, a: str, b: str) -> float:
        """Valeur pour (a, b), NaN si indéfinie."""
        return float(self.values[self.names.index(a), self.names.index(b)])

    def is_defined(self, a: str, b: str) -> bool:
        """Faux pour une cellule UNDEFINED."""
        return not np.isnan(self.cell(a, b))


def metric_correlation_matrix(
    records: Sequence[SampleRecord],
    registry: MetricRegistry,
    method: str = "spearman",
) -> CorrelationMatrix:
    """Spearman sur les labels co-présents de chaque paire de métriques.

    Une cellule hors diagonale est UNDEFINED (NaN) avec moins de 2 co-présences ou un
    vecteur constant ; la diagonale vaut 1 dès que la métrique a au moins 2 labels.
    """
    if method != "spearman":
        raise ValueError(f"unsupported correlation method: {method}")
    names = registry.names
    k = len(names)
    table = np.full((len(records), k), np.nan)
    for i, record in enumerate(records):
        for j, name in enumerate(names):
            value = record.label(name)
            if value is not None:
                table[i, j] = value
    present = ~np.isnan(table)
    values = np.full((k, k), np.nan)
    counts = np.zeros((k, k), dtype=np.int64)
    for a in range(k):
        for b in range(a, k):
            both = present[:, a] & present[:, b]
            counts[a, b] = counts[b, a] = int(both.sum())
            if a == b:
                if counts[a, a] >= 2:
                    values[a, a] = 1.0
                continue
            try:
                rho = spearman(table[both, a], table[both, b])
            except DegenerateInputError:
                continue
            values[a, b] = values[b, a] = rho
    return CorrelationMatrix(list(names), values, counts)


def write_matrix_csv(path: str, matrix: CorrelationMatrix) -> Path:
    """CSV : en-tête des métriques, une ligne par métrique, UNDEFINED si indéfini."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["metric"] + matrix.names)
        for name, row in zip(matrix.names, matrix.values):
            writer.writerow([name] + [UNDEFINED if np.isnan(v) else f"{v:.4f}" for v in row])
    return out


def plot_heatmap(path: str, matrix: CorrelationMatrix) -> Path:
    """Rendu image de la matrice (matplotlib, backend sans affichage)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    size = max(4.0, 0.55 * len(matrix.names))
    fig, ax = plt.subplots(figsize=(size, size))
    masked = np.ma.masked_invalid(matrix.values)
    image = ax.imshow(masked, vmin=-1.0, vmax=1.0, cmap="coolwarm")
    ax.set_xticks(range(len(matrix.names)))
    ax.set_yticks(range(len(matrix.names)))
    ax.set_xticklabels(matrix.names, rotation=90)
    ax.set_yticklabels(matrix.names)
    for i in range(len(matrix.names)):
        for j in range(len(matrix.names)):
            if not np.isnan(matrix.values[i, j]):
                ax.text(j, i, f"{matrix.values[i, j]:.2f}", ha="center", va="center", fontsize=7)
    fig.colorbar(image, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
