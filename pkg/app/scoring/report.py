"""Rapports d'évaluation : JSON par modèle et tableaux CSV modèles x jeux."""
import csv
from pathlib import Path
from typing import List, Optional, Sequence

from app.config import settings
from app.errors import EmptyInputError, ManifestParseError
from app.models import DatasetEval, EvalReport

MISSING_CELL = "-"


def write_report(path: str, report: EvalReport) -> Path:
    """EvalReport en JSON indenté."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return out


def load_report(path: str) -> EvalReport:
    """Relit un EvalReport JSON."""
    try:
        return EvalReport.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except ValueError as e:
        raise ManifestParseError(str(path), 1, str(e).splitlines()[0]) from e


def _fmt(value: Optional[float]) -> str:
    return MISSING_CELL if value is None else f"{value:.3f}"


def preference_cell(result: DatasetEval, delta: float = settings.DEFAULT_DELTA) -> str:
    """« acc@δ / acc_0 »."""
    return f"{_fmt(result.acc_at.get(f'{delta:g}'))} / {_fmt(result.acc_strict)}"


def correlation_cell(result: DatasetEval) -> str:
    """« LCC / SRCC »."""
    return f"{_fmt(result.lcc)} / {_fmt(result.srcc)}"


def _datasets(reports: Sequence[EvalReport]) -> List[str]:
    names: List[str] = []
    for report in reports:
        for name in report.per_dataset:
            if name not in names:
                names.append(name)
    return names


def _write_table(path: str, reports: Sequence[EvalReport], cell) -> Path:
    if not reports:
        raise EmptyInputError("no report to tabulate")
    datasets = _datasets(reports)
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["model"] + datasets)
        for report in reports:
            row = [report.model]
            for name in datasets:
                result = report.per_dataset.get(name)
                row.append(MISSING_CELL if result is None else cell(result))
            writer.writerow(row)
    return out


def write_preference_table(
    path: str, reports: Sequence[EvalReport], delta: float = settings.DEFAULT_DELTA
) -> Path:
    """Lignes = modèles, colonnes = jeux, cellules « acc@δ / acc_0 »."""
    return _write_table(path, reports, lambda result: preference_cell(result, delta))


def write_correlation_table(path: str, reports: Sequence[EvalReport]) -> Path:
    """Lignes = modèles, colonnes = jeux, cellules « LCC / SRCC »."""
    return _write_table(path, reports, correlation_cell)
