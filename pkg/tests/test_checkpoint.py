import pytest
import torch

from app.config import AmpmConfig, EncoderConfig, NcpmConfig
from app.errors import CheckpointCorruptError, CheckpointVersionError
from app.model.network import QualityModel
from app.training.checkpoint import load_checkpoint, save_checkpoint
from .test_utils import make_audio_batch, print_test_name, print_test_result


def _model(registry):
    torch.manual_seed(0)
    return QualityModel(
        registry,
        [EncoderConfig(num_layers=1, d=8, n_mels=16)],
        AmpmConfig(layers=1, heads=2, d_model=8, ffn=16, dropout=0.0, grouping="C1"),
        NcpmConfig(layers=1, head_hidden=8, dropout=0.0),
    )


class TestCheckpoint:
    """Sauvegarde versionnée et vérifications au chargement."""

    def test_round_trip(self, tmp_path, m1_registry):
        test_name = "test_round_trip"
        print_test_name(test_name)
        try:
            model = _model(m1_registry).eval()
            optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
            path = save_checkpoint(str(tmp_path / "ckpt" / "model.pt"), model, 7, optimizer,
                                   {"train": {"seed": 1}})
            assert path.exists()
            assert not path.with_name("model.pt.tmp").exists()
            restored = load_checkpoint(str(path), expected_registry=m1_registry)
            assert restored.step == 7
            assert restored.run_config == {"train": {"seed": 1}}
            assert restored.optimizer_state is not None
            assert restored.model.registry == m1_registry
            batch = make_audio_batch(2, seed=4)
            with torch.no_grad():
                expected = model.score(batch).values
                actual = restored.model.eval().score(batch).values
            assert torch.allclose(expected, actual)
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e

    def test_registry_mismatch(self, tmp_path, m1_registry, registry):
        test_name = "test_registry_mismatch"
        print_test_name(test_name)
        try:
            path = save_checkpoint(str(tmp_path / "m1.pt"), _model(m1_registry), 1)
            with pytest.raises(CheckpointVersionError) as excinfo:
                load_checkpoint(str(path), expected_registry=registry)
            assert "missing metrics" in str(excinfo.value)
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e

    def test_format_version_mismatch(self, tmp_path, m1_registry):
        test_name = "test_format_version_mismatch"
        print_test_name(test_name)
        try:
            path = save_checkpoint(str(tmp_path / "old.pt"), _model(m1_registry), 1)
            payload = torch.load(path, weights_only=True)
            payload["format_version"] = 999
            torch.save(payload, path)
            with pytest.raises(CheckpointVersionError):
                load_checkpoint(str(path))
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e

    def test_corrupt_files(self, tmp_path, m1_registry):
        test_name = "test_corrupt_files"
        print_test_name(test_name)
        try:
            garbage = tmp_path / "garbage.pt"
            garbage.write_bytes(b"not a checkpoint at all")
            with pytest.raises(CheckpointCorruptError):
                load_checkpoint(str(garbage))

            incomplete = tmp_path / "incomplete.pt"
            torch.save({"format_version": 1}, incomplete)
            with pytest.raises(CheckpointCorruptError):
                load_checkpoint(str(incomplete))

            path = save_checkpoint(str(tmp_path / "bad_state.pt"), _model(m1_registry), 1)
            payload = torch.load(path, weights_only=True)
            payload["model_state"] = {"unexpected.weight": torch.zeros(1)}
            torch.save(payload, path)
            with pytest.raises(CheckpointCorruptError):
                load_checkpoint(str(path))

            with pytest.raises(FileNotFoundError):
                load_checkpoint(str(tmp_path / "absent.pt"))
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e
