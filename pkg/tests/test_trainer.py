import os

import pytest
import torch

from app.config import SynthConfig
from app.data.manifest import load_manifest
from app.data.pairs import build_pairs, symmetrize
from app.data.synthetic import generate
from app.errors import EmptyInputError
from app.metrics.registry import default_registry
from app.model.network import build_model
from app.models import PairScope
from app.training.checkpoint import load_checkpoint
from app.training.trainer import CHECKPOINT_NAME, TRAIN_LOG_NAME, Trainer, read_train_log
from .test_utils import make_audio_batch, print_test_name, print_test_result

slow = pytest.mark.skipif(
    os.environ.get("QUALIPY_RUN_SLOW") != "1",
    reason="entraînement long : QUALIPY_RUN_SLOW=1",
)


def _setup(synth_corpus, registry, config):
    records = load_manifest(str(synth_corpus / "train.jsonl"), registry)
    pairs = symmetrize(build_pairs(records, PairScope.CORPUS, cap=200, seed=0))
    torch.manual_seed(0)
    model = build_model(registry, config)
    return Trainer(model, config, records, pairs, audio_root=str(synth_corpus))


class TestTrainer:
    """Boucle jointe sur le corpus synthétique."""

    def test_fit_writes_log_and_checkpoint(self, synth_corpus, m1_registry, tiny_run_config):
        test_name = "test_fit_writes_log_and_checkpoint"
        print_test_name(test_name)
        try:
            config = tiny_run_config(mix_ratio=0.5)
            trainer = _setup(synth_corpus, m1_registry, config)
            reports = trainer.fit()
            assert len(reports) == 4
            rows = read_train_log(str(trainer.output_dir / TRAIN_LOG_NAME))
            assert [row["step"] for row in rows] == [1, 2, 3, 4]
            for row in rows:
                assert set(row) == {"step", "loss", "lr", "wall_ms"}
                assert row["loss"]["total"] is not None
            saved = load_checkpoint(str(trainer.output_dir / CHECKPOINT_NAME),
                                    expected_registry=m1_registry)
            assert saved.step == 4
            assert saved.run_config["train"]["mix_ratio"] == 0.5
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e

    def test_resume_replays_the_same_batches(self, synth_corpus, m1_registry, tiny_run_config, tmp_path):
        test_name = "test_resume_replays_the_same_batches"
        print_test_name(test_name)
        try:
            straight_cfg = tiny_run_config(mix_ratio=0.5).model_copy(
                update={"output_dir": str(tmp_path / "straight")})
            straight = _setup(synth_corpus, m1_registry, straight_cfg).fit()

            split_cfg = tiny_run_config(mix_ratio=0.5).model_copy(
                update={"output_dir": str(tmp_path / "split")})
            first = _setup(synth_corpus, m1_registry, split_cfg)
            first.fit(steps=2)
            second = _setup(synth_corpus, m1_registry, split_cfg)
            second.resume(load_checkpoint(str(second.output_dir / CHECKPOINT_NAME)))
            assert second.step == 2
            tail = second.fit()

            assert len(tail) == 2
            for expected, actual in zip(straight[2:], tail):
                assert (expected.ce is None) == (actual.ce is None)
                assert actual.total == pytest.approx(expected.total, rel=1e-4, abs=1e-6)
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e

    def test_batch_without_labels_is_skipped(self, synth_corpus, m1_registry, tiny_run_config):
        test_name = "test_batch_without_labels_is_skipped"
        print_test_name(test_name)
        try:
            trainer = _setup(synth_corpus, m1_registry, tiny_run_config())
            before = [p.detach().clone() for p in trainer.model.parameters()]
            report = trainer.train_step(make_audio_batch(3, n_labels=1))
            assert report.skipped and report.mse_total is None
            after = list(trainer.model.parameters())
            assert all(torch.equal(b, a) for b, a in zip(before, after))
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e

    def test_absolute_only_and_empty(self, synth_corpus, m1_registry, tiny_run_config):
        test_name = "test_absolute_only_and_empty"
        print_test_name(test_name)
        try:
            config = tiny_run_config(steps=2)
            records = load_manifest(str(synth_corpus / "train.jsonl"), m1_registry)
            trainer = Trainer(build_model(m1_registry, config), config, records,
                              audio_root=str(synth_corpus))
            reports = trainer.fit()
            assert all(r.ce is None and r.mse_total is not None for r in reports)
            with pytest.raises(EmptyInputError):
                Trainer(build_model(m1_registry, config), config, [], [])
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e

    def test_same_seed_gives_identical_logs(self, synth_corpus, m1_registry, tiny_run_config, tmp_path):
        test_name = "test_same_seed_gives_identical_logs"
        print_test_name(test_name)
        try:
            logs = []
            for name in ("first", "second"):
                config = tiny_run_config(mix_ratio=0.5, deterministic=True).model_copy(
                    update={"output_dir": str(tmp_path / name)})
                trainer = _setup(synth_corpus, m1_registry, config)
                trainer.fit()
                logs.append(read_train_log(str(trainer.output_dir / TRAIN_LOG_NAME)))
            first, second = logs
            assert len(first) == len(second) == 4
            # égalité exacte, pas d'approximation
            assert [row["loss"] for row in first] == [row["loss"] for row in second]
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e


def _ema_trace(values, span=200):
    """Moyenne mobile exponentielle (alpha = 2 / (span + 1)) après chaque valeur."""
    alpha = 2.0 / (span + 1)
    trace, ema = [], None
    for value in values:
        ema = value if ema is None else alpha * value + (1 - alpha) * ema
        trace.append(ema)
    return trace


@pytest.mark.slow
class TestLossDecrease:
    """Décroissance de la perte sur un run long."""

    @slow
    def test_mse_ema_decreases(self, tmp_path, m1_registry, tiny_run_config):
        test_name = "test_mse_ema_decreases"
        print_test_name(test_name)
        try:
            config = SynthConfig(n_samples=200, min_duration_s=0.3, max_duration_s=0.6, seed=3,
                                 label_noise_sd=0.1)
            generate(config, str(tmp_path / "corpus"), default_registry())
            records = load_manifest(str(tmp_path / "corpus" / "manifest.jsonl"), m1_registry)
            run = tiny_run_config(steps=1000)
            run = run.model_copy(update={
                "output_dir": str(tmp_path / "run"),
                "train": run.train.model_copy(update={"log_every": 100, "checkpoint_every": 1000}),
            })
            torch.manual_seed(0)
            trainer = Trainer(build_model(m1_registry, run), run, records,
                              audio_root=str(tmp_path / "corpus"))
            trainer.fit()

            rows = read_train_log(str(trainer.output_dir / TRAIN_LOG_NAME))
            assert len(rows) == 1000
            mse = [row["loss"]["mse_total"] for row in rows]
            assert all(value is not None for value in mse)
            trace = _ema_trace(mse)
            assert trace[999] < trace[99]
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e
