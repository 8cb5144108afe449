import numpy as np
import pytest
import soundfile as sf

from app.config import SynthConfig
from app.data.manifest import coverage_report, load_manifest, load_native_pairs
from app.data.pairs import build_pairs
from app.data.synthetic import (
    HIDDEN_QUALITY_NAME,
    NATIVE_PAIRS_NAME,
    generate,
    label_from_quality,
    latent_quality,
    load_hidden_quality,
)
from app.errors import UnknownMetricError
from app.models import PairScope, PreferenceLabel
from app.scoring.correlation import spearman
from .test_utils import print_test_name, print_test_result


def _config(**overrides):
    base = dict(n_samples=16, min_duration_s=0.1, max_duration_s=0.2, seed=11)
    base.update(overrides)
    return SynthConfig(**base)


class TestSyntheticCorpus:
    """Corpus synthétique à qualité latente connue."""

    def test_deterministic_for_any_worker_count(self, tmp_path, registry):
        test_name = "test_deterministic_for_any_worker_count"
        print_test_name(test_name)
        try:
            one = generate(_config(label_noise_sd=0.2), str(tmp_path / "one"), registry, jobs=1)
            three = generate(_config(label_noise_sd=0.2), str(tmp_path / "three"), registry, jobs=3)
            assert one.read_bytes() == three.read_bytes()
            assert (tmp_path / "one" / HIDDEN_QUALITY_NAME).read_bytes() == \
                (tmp_path / "three" / HIDDEN_QUALITY_NAME).read_bytes()
            records = load_manifest(str(one), registry)
            first = records[0].audio_path
            wave_one, sr = sf.read(tmp_path / "one" / first)
            wave_three, _ = sf.read(tmp_path / "three" / first)
            assert sr == 16_000
            assert np.array_equal(wave_one, wave_three)
            assert abs(len(wave_one) / sr - records[0].duration_s) < 1e-9
            other = generate(_config(seed=12), str(tmp_path / "other"), registry)
            assert other.read_bytes() != one.read_bytes()
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e

    def test_missingness(self, tmp_path, registry):
        test_name = "test_missingness"
        print_test_name(test_name)
        try:
            manifest = generate(_config(missingness={"MOS": 1.0, "UTMOS": 0.0}), str(tmp_path), registry)
            coverage = coverage_report(load_manifest(str(manifest), registry), registry)
            assert coverage["MOS"] == 0.0
            assert coverage["UTMOS"] == 1.0 and coverage["PESQ"] == 1.0
            with pytest.raises(UnknownMetricError):
                generate(_config(missingness={"NOPE": 0.5}), str(tmp_path / "bad"), registry)
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e

    def test_noise_free_labels_rank_like_quality(self, tmp_path, registry):
        test_name = "test_noise_free_labels_rank_like_quality"
        print_test_name(test_name)
        try:
            manifest = generate(_config(n_samples=30), str(tmp_path), registry)
            records = load_manifest(str(manifest), registry)
            hidden = load_hidden_quality(str(tmp_path / HIDDEN_QUALITY_NAME))
            q = [hidden[r.sample_id] for r in records]
            for name in registry.names:
                labels = [r.label(name) for r in records]
                assert spearman(labels, q) == pytest.approx(1.0), name
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e

    def test_identities_support_every_scope(self, tmp_path, registry):
        test_name = "test_identities_support_every_scope"
        print_test_name(test_name)
        try:
            config = _config(n_samples=16, n_corpora=2, n_systems=4, n_references=2)
            records = load_manifest(str(generate(config, str(tmp_path), registry)), registry)
            pairs = build_pairs(records, PairScope.REF)
            per_corpus = {}
            for pair in pairs:
                per_corpus[pair.sample_a[:2]] = per_corpus.get(pair.sample_a[:2], 0) + 1
            assert per_corpus == {"c0": 12, "c1": 12}
            assert len(build_pairs(records, PairScope.CORPUS)) == 2 * (8 * 7 // 2)
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e

    def test_native_pairs_follow_hidden_quality(self, synth_corpus, registry):
        test_name = "test_native_pairs_follow_hidden_quality"
        print_test_name(test_name)
        try:
            records = load_manifest(str(synth_corpus / "manifest.jsonl"), registry)
            by_id = {r.sample_id: r for r in records}
            hidden = load_hidden_quality(str(synth_corpus / HIDDEN_QUALITY_NAME))
            natives = load_native_pairs(str(synth_corpus / NATIVE_PAIRS_NAME), records)
            assert len(natives) == 8
            for pair in natives:
                assert by_id[pair.sample_a].corpus_id == by_id[pair.sample_b].corpus_id
                better = hidden[pair.sample_a] > hidden[pair.sample_b]
                assert pair.label is (PreferenceLabel.A_WINS if better else PreferenceLabel.B_WINS)
            train = load_manifest(str(synth_corpus / "train.jsonl"), registry)
            test = load_manifest(str(synth_corpus / "test.jsonl"), registry)
            assert len(train) + len(test) == 24
            assert not {r.sample_id for r in train} & {r.sample_id for r in test}
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e


class TestQualityMaps:
    """Applications q -> label."""

    def test_maps_are_increasing_and_in_range(self, registry):
        test_name = "test_maps_are_increasing_and_in_range"
        print_test_name(test_name)
        try:
            config = SynthConfig()
            assert latent_quality(config.snr_min_db, config) == 1.0
            assert latent_quality(config.snr_max_db, config) == 5.0
            assert latent_quality(config.snr_max_db + 10, config) == 5.0
            grid = np.linspace(1.0, 5.0, 41)
            for spec in registry.specs:
                values = [label_from_quality(float(q), spec) for q in grid]
                assert all(b > a for a, b in zip(values, values[1:])), spec.name
                assert all(spec.lo <= v <= spec.hi for v in values), spec.name
            print_test_result(test_name, passed=True)
        except Exception as e:
            print_test_result(test_name, passed=False)
            raise e
