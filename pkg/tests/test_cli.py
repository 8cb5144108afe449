import csv
import json

import pytest

from app import __version__
from app.data.manifest import load_manifest, write_manifest
from app.data.pairs import load_pairs
from app.main import main
from app.metrics.registry import default_registry
from app.models import SamplePrediction
from app.scoring.evaluator import write_predictions
from app.scoring.report import load_report
from .test_utils import make_record, print_test_name, print_test_result


@pytest.fixture
def cli_corpus(tmp_path):
    """Corpus synthétique généré par la commande synth-data."""
    config = tmp_path / "synth.json"
    config.write_text(json.dumps({"min_duration_s": 0.2, "max_duration_s": 0.4}), encoding="utf-8")
    out = tmp_path / "synth"
    code = main(["synth-data", "--out", str(out), "--config", str(config), "--n-samples", "20",
                 "--seed", "4", "--holdout", "0.25", "--native-pairs", "6",
                 "--missingness", "UTMOS=0.5"])
    assert code == 0
    return out


def _oracle_predictions(manifest, path):
    records = load_manifest(str(manifest), default_registry())
    write_predictions(str(path), [
        SamplePrediction(sample_id=r.sample_id, predictions={"MOS": r.label("MOS")}) for r in records
    ])
    return path


class TestUsage:
    """Codes de sortie et version."""

    def test_version(self, capsys):
        test_name = "test_version"
        print_test_name(test_name)
        try:
            with pytest.raises(SystemExit) as excinfo:
                main(["--version"])
            assert excinfo.value.code == 0
            assert f"qualipy {__version__} (checkpoint format 1)" in capsys.readouterr().out
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e

    def test_usage_errors(self, capsys):
        test_name = "test_usage_errors"
        print_test_name(test_name)
        try:
            assert main([]) == 2
            with pytest.raises(SystemExit) as excinfo:
                main(["build-pairs", "--manifest", "m.jsonl"])
            assert excinfo.value.code == 2
            assert "usage:" in capsys.readouterr().err
            with pytest.raises(SystemExit) as excinfo:
                main(["synth-data", "--out", "x", "--missingness", "MOS"])
            assert excinfo.value.code == 2
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e

    def test_data_errors_exit_one(self, tmp_path):
        test_name = "test_data_errors_exit_one"
        print_test_name(test_name)
        try:
            bad = tmp_path / "bad.jsonl"
            bad.write_text("{not json}\n", encoding="utf-8")
            assert main(["correlate", "--manifest", str(bad), "--out", str(tmp_path / "c.csv")]) == 1
            missing = str(tmp_path / "absent.jsonl")
            assert main(["build-pairs", "--manifest", missing, "--out", str(tmp_path / "p.jsonl")]) == 1
            assert main(["train", "--steps", "1", "--output-dir", str(tmp_path / "run")]) == 1
            manifest = write_manifest(str(tmp_path / "m.jsonl"),
                                      [make_record(f"s{i}", MOS=1.0 + i) for i in range(4)])
            assert main(["build-pairs", "--manifest", str(manifest), "--out", str(tmp_path / "p.jsonl"),
                         "--cap", "0"]) == 1
            assert not (tmp_path / "p.jsonl").exists()
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e


class TestPipeline:
    """Chaîne complète en ligne de commande."""

    def test_baseline_pipeline(self, cli_corpus, tmp_path, capsys):
        test_name = "test_baseline_pipeline"
        print_test_name(test_name)
        try:
            manifest = cli_corpus / "manifest.jsonl"
            pairs_path = tmp_path / "pairs.jsonl"
            assert main(["build-pairs", "--manifest", str(manifest), "--out", str(pairs_path),
                         "--scope", "corpus", "--symmetrize"]) == 0
            assert str(pairs_path) in capsys.readouterr().out
            pairs = load_pairs(str(pairs_path))
            assert len(pairs) == 2 * 2 * (10 * 9 // 2)

            corr = tmp_path / "corr.csv"
            assert main(["correlate", "--manifest", str(manifest), "--out", str(corr),
                         "--plot", str(tmp_path / "corr.png")]) == 0
            with open(corr, encoding="utf-8", newline="") as handle:
                header = next(csv.reader(handle))
            assert header == ["metric"] + default_registry().names
            assert (tmp_path / "corr.png").exists()

            predictions = _oracle_predictions(manifest, tmp_path / "preds.jsonl")
            report_path = tmp_path / "oracle.json"
            assert main(["evaluate", "--predictions", str(predictions), "--name", "oracle",
                         "--manifest", f"synth={manifest}", "--pairs", f"synth={pairs_path}",
                         "--deltas", "0.5,1.0", "--out", str(report_path)]) == 0
            report = load_report(str(report_path))
            result = report.per_dataset["synth"]
            assert report.model == "oracle"
            assert result.lcc == pytest.approx(1.0) and result.srcc == pytest.approx(1.0)
            assert result.acc_at == {"0.5": 1.0, "1": 1.0}

            sweep = tmp_path / "sweep.csv"
            assert main(["sweep", "--predictions", str(predictions), "--manifest", str(manifest),
                         "--pair-scope", "any", "--relabel", "--out", str(sweep)]) == 0
            with open(sweep, encoding="utf-8", newline="") as handle:
                rows = list(csv.reader(handle))
            assert len(rows) == 1 + 4
            assert all(float(row[3]) == 1.0 for row in rows[1:])

            tables = tmp_path / "tables"
            assert main(["report", str(report_path), "--out-dir", str(tables)]) == 0
            with open(tables / "correlation_table.csv", encoding="utf-8", newline="") as handle:
                rows = list(csv.reader(handle))
            assert rows == [["model", "synth"], ["oracle", "1.000 / 1.000"]]
            assert (tables / "preference_table.csv").exists()
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e

    def test_train_predict_evaluate(self, cli_corpus, tmp_path, tiny_run_config):
        test_name = "test_train_predict_evaluate"
        print_test_name(test_name)
        try:
            config_path = tmp_path / "run.json"
            tiny_run_config(supervision="M1").dump(config_path)
            run_dir = tmp_path / "run-cli"
            assert main(["train", "--config", str(config_path),
                         "--manifest", str(cli_corpus / "manifest.jsonl"),
                         "--native-pairs", str(cli_corpus / "native_pairs.jsonl"),
                         "--mix-ratio", "0.5", "--steps", "2",
                         "--output-dir", str(run_dir)]) == 0
            checkpoint = run_dir / "checkpoint.pt"
            assert checkpoint.exists()
            saved = json.loads((run_dir / "run_config.json").read_text(encoding="utf-8"))
            assert saved["train"]["steps"] == 2 and saved["train"]["mix_ratio"] == 0.5

            predictions = tmp_path / "model_preds.jsonl"
            assert main(["predict", "--ckpt", str(checkpoint),
                         "--manifest", str(cli_corpus / "test.jsonl"),
                         "--out", str(predictions), "--batch-budget", "4"]) == 0
            assert len(predictions.read_text(encoding="utf-8").splitlines()) == 5

            report_path = tmp_path / "model.json"
            assert main(["evaluate", "--ckpt", str(checkpoint),
                         "--manifest", str(cli_corpus / "manifest.jsonl"),
                         "--native-pairs", str(cli_corpus / "native_pairs.jsonl"),
                         "--batch-budget", "4", "--out", str(report_path)]) == 0
            report = load_report(str(report_path))
            assert report.model == "F1C1M1"
            result = report.per_dataset["manifest"]
            assert result.n_pairs == 6 and 0.0 <= result.acc_at["0.5"] <= 1.0
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e
