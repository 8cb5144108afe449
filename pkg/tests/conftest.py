# tests/conftest.py
import pytest

from app.config import (
    AmpmConfig,
    DataPaths,
    EncoderConfig,
    NcpmConfig,
    RunConfig,
    SynthConfig,
    TrainConfig,
)
from app.metrics.registry import builtin_registry, default_registry

# --- Registres ---

@pytest.fixture
def registry():
    """Registre complet (15 métriques)."""
    return default_registry()


@pytest.fixture
def m1_registry():
    """MOS seul."""
    return builtin_registry("M1")


# --- Configurations de modèle minuscules ---

@pytest.fixture
def tiny_run_config(tmp_path):
    """RunConfig très petite : quelques secondes de CPU par step."""
    def build(grouping="C1", supervision="M1", manifest=None, **train):
        return RunConfig(
            encoders=[EncoderConfig(num_layers=2, d=16, n_mels=16, stride_s=0.02)],
            ampm=AmpmConfig(layers=1, heads=2, d_model=16, ffn=32, dropout=0.0,
                            grouping=grouping),
            ncpm=NcpmConfig(layers=1, head_hidden=16, dropout=0.0),
            train=TrainConfig(**{"lr": 1e-3, "steps": 4, "batch_budget_s": 4.0,
                                 "supervision": supervision, "log_every": 2,
                                 "checkpoint_every": 2, **train}),
            data=DataPaths(manifest=manifest),
            output_dir=str(tmp_path / "run"),
        )
    return build


# --- Corpus synthétique partagé ---

@pytest.fixture(scope="session")
def synth_corpus(tmp_path_factory):
    """Petit corpus synthétique (24 énoncés, paires natives, découpage train/test)."""
    from app.data.synthetic import generate

    out = tmp_path_factory.mktemp("synth")
    config = SynthConfig(
        n_samples=24,
        min_duration_s=0.5,
        max_duration_s=1.0,
        missingness={"UTMOS": 0.5},
        n_corpora=2,
        n_systems=4,
        n_references=2,
        seed=3,
        holdout_fraction=0.25,
        n_native_pairs=8,
    )
    generate(config, str(out), default_registry(), jobs=2)
    return out
