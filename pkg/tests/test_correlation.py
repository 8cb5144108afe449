import csv
import math

import numpy as np
import pytest

from app.errors import DegenerateInputError, ShapeMismatchError
from app.scoring.correlation import (
    UNDEFINED,
    metric_correlation_matrix,
    pearson,
    plot_heatmap,
    spearman,
    write_matrix_csv,
)
from .test_utils import make_record, print_test_name, print_test_result


def _brute_pearson(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y))
    vx = sum((a - mx) ** 2 for a in x)
    vy = sum((b - my) ** 2 for b in y)
    return cov / math.sqrt(vx * vy)


def _brute_ranks(x):
    order = sorted(range(len(x)), key=lambda i: x[i])
    ranks = [0.0] * len(x)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and x[order[j + 1]] == x[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


class TestPearsonSpearman:
    """LCC et SRCC."""

    def test_examples(self):
        test_name = "test_examples"
        print_test_name(test_name)
        try:
            assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
            assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
            assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)
            assert spearman([1, 2, 3], [10, 10, 20]) == pytest.approx(math.sqrt(3) / 2)
            assert spearman([1, 2, 3, 4], [1, 8, 27, 64]) == pytest.approx(1.0)
            assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e

    def test_matches_brute_force(self):
        test_name = "test_matches_brute_force"
        print_test_name(test_name)
        try:
            rng = np.random.default_rng(0)
            checked = 0
            for trial in range(200):
                n = int(rng.integers(2, 501))
                if trial % 3 == 0:
                    x = rng.integers(0, 4, n).astype(float)
                    y = rng.integers(0, 4, n).astype(float)
                else:
                    x = rng.normal(size=n)
                    y = 0.5 * x + rng.normal(size=n)
                if np.all(x == x[0]) or np.all(y == y[0]):
                    with pytest.raises(DegenerateInputError):
                        spearman(x, y)
                    continue
                xs, ys = x.tolist(), y.tolist()
                assert pearson(x, y) == pytest.approx(_brute_pearson(xs, ys), abs=1e-9)
                assert spearman(x, y) == pytest.approx(
                    _brute_pearson(_brute_ranks(xs), _brute_ranks(ys)), abs=1e-9)
                checked += 1
            assert checked > 150
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e

    def test_spearman_ignores_monotone_transforms(self):
        test_name = "test_spearman_ignores_monotone_transforms"
        print_test_name(test_name)
        try:
            rng = np.random.default_rng(1)
            x, y = rng.normal(size=100), rng.normal(size=100)
            base = spearman(x, y)
            assert spearman(np.exp(x), y) == base
            assert spearman(x, 3.0 * y + 7.0) == base
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e

    def test_degenerate_inputs(self):
        test_name = "test_degenerate_inputs"
        print_test_name(test_name)
        try:
            with pytest.raises(DegenerateInputError):
                pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
            with pytest.raises(DegenerateInputError):
                spearman([1.0], [2.0])
            with pytest.raises(DegenerateInputError):
                pearson([1.0, float("nan")], [1.0, 2.0])
            with pytest.raises(ShapeMismatchError):
                pearson([1.0, 2.0], [1.0, 2.0, 3.0])
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e


class TestCorrelationMatrix:
    """Matrice inter-métriques sur labels co-présents."""

    def _records(self):
        records = []
        for i in range(6):
            mos = 1.0 + 0.5 * i
            records.append(make_record(f"r{i}", MOS=mos, PESQ=mos + 1.0, ESTOI=0.5))
        records.append(make_record("r6", UTMOS=2.0))
        records.append(make_record("r7", UTMOS=4.0))
        return records

    def test_cells(self, registry):
        test_name = "test_cells"
        print_test_name(test_name)
        try:
            reg = registry.subset(["PESQ", "MOS", "UTMOS", "ESTOI"])
            matrix = metric_correlation_matrix(self._records(), reg)
            assert matrix.names == ["PESQ", "MOS", "UTMOS", "ESTOI"]
            assert matrix.cell("MOS", "PESQ") == pytest.approx(1.0)
            assert matrix.cell("MOS", "MOS") == 1.0
            assert matrix.cell("UTMOS", "UTMOS") == 1.0
            # supports disjoints
            assert not matrix.is_defined("MOS", "UTMOS")
            assert int(matrix.counts[1, 2]) == 0
            # vecteur constant : diagonale à 1, corrélations croisées indéfinies
            assert matrix.cell("ESTOI", "ESTOI") == 1.0
            assert not matrix.is_defined("ESTOI", "MOS")
            assert np.array_equal(matrix.values, matrix.values.T, equal_nan=True)
            single = self._records() + [make_record("r8", SDR=3.0)]
            sparse = metric_correlation_matrix(single, registry.subset(["MOS", "SDR"]))
            sdr = sparse.names.index("SDR")
            assert int(sparse.counts[sdr, sdr]) == 1
            assert not sparse.is_defined("SDR", "SDR")
            with pytest.raises(ValueError):
                metric_correlation_matrix(self._records(), reg, method="kendall")
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e

    def test_csv_and_heatmap(self, tmp_path, registry):
        test_name = "test_csv_and_heatmap"
        print_test_name(test_name)
        try:
            reg = registry.subset(["MOS", "UTMOS"])
            matrix = metric_correlation_matrix(self._records(), reg)
            path = write_matrix_csv(str(tmp_path / "out" / "corr.csv"), matrix)
            with open(path, encoding="utf-8", newline="") as handle:
                rows = list(csv.reader(handle))
            assert rows[0] == ["metric", "MOS", "UTMOS"]
            assert rows[1] == ["MOS", "1.0000", UNDEFINED]
            assert rows[2] == ["UTMOS", UNDEFINED, "1.0000"]
            image = plot_heatmap(str(tmp_path / "out" / "corr.png"), matrix)
            assert image.exists() and image.stat().st_size > 0
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e
