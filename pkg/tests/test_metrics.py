import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from udse.audio_io import Waveform, read_wav
from udse.codec import decode, encode, quantize
from udse.corpus import CorpusManifest, ManifestEntry, build_corpus, read_manifest
from udse.distortion import Noise, serialize_spec
from udse.errors import ConfigError, DegenerateInput
from udse.metrics import (EvalReport, dump_spectrogram, evaluate_corpus,
                          log_spectral_distance, si_snr, token_accuracy,
                          write_report)


def _wave(values, rate=16000):
    return Waveform(np.asarray(values, dtype=np.float64), rate)


class TestSiSnr:
    def test_perfect_match_capped(self, rng):
        x = _wave(rng.standard_normal(500))
        assert si_snr(x, x) == 60.0

    def test_scale_invariance_cap(self, rng):
        x = _wave(rng.standard_normal(500))
        doubled = _wave(2 * x.samples)
        assert si_snr(doubled, x) == 60.0

    def test_constructed_orthogonal_case(self):
        # sin and cos over whole periods: zero-mean and orthogonal, so the
        # noise term never projects onto the reference
        n = 1600
        t = np.arange(n)
        ref = np.sin(2 * np.pi * 8 * t / n)
        noise = np.cos(2 * np.pi * 16 * t / n) / np.sqrt(10)
        est = _wave(ref + noise)
        assert abs(si_snr(est, _wave(ref)) - 10.0) < 0.01

    @settings(max_examples=25, deadline=None)
    @given(st.floats(min_value=1e-3, max_value=1e3), st.integers(0, 2 ** 31))
    def test_scale_invariance_property(self, gain, seed):
        rng = np.random.default_rng(seed)
        ref = _wave(rng.standard_normal(256))
        est = rng.standard_normal(256)
        a = si_snr(_wave(est), ref)
        b = si_snr(_wave(gain * est), ref)
        assert abs(a - b) < 1e-9

    def test_zero_reference(self, rng):
        with pytest.raises(DegenerateInput):
            si_snr(_wave(rng.standard_normal(10)), _wave(np.zeros(10)))

    def test_length_mismatch(self, rng):
        with pytest.raises(ConfigError):
            si_snr(_wave(np.ones(5)), _wave(np.ones(6)))


class TestLsd:
    def test_identical_is_zero(self, rng):
        x = _wave(rng.standard_normal(4000))
        assert log_spectral_distance(x, x) == 0.0

    def test_uniform_scale_is_twenty_db(self, rng):
        x = _wave(rng.standard_normal(4000))
        scaled = _wave(10 * x.samples)
        assert abs(log_spectral_distance(scaled, x) - 20.0) < 1e-6

    def test_floor_keeps_result_finite(self, rng):
        noise = _wave(rng.standard_normal(4000))
        silence = _wave(np.zeros(4000) + 1e-12)
        assert np.isfinite(log_spectral_distance(noise, silence))


class TestTokenAccuracy:
    def test_perfect(self, rng):
        grid = rng.integers(1, 17, size=(4, 50))
        np.testing.assert_array_equal(token_accuracy(grid, grid), np.ones(4))

    def test_single_frame_difference(self):
        gt = np.ones((1, 10), dtype=np.int64)
        pred = gt.copy()
        pred[0, 4] = 2
        np.testing.assert_allclose(token_accuracy(pred, gt), [0.9])

    def test_random_predictions_near_chance(self):
        rng = np.random.default_rng(7)
        m, length = 64, 1000
        gt = rng.integers(1, m + 1, size=(1, length))
        pred = rng.integers(1, m + 1, size=(1, length))
        acc = token_accuracy(pred, gt)[0]
        p = 1 / m
        bound = 3 * np.sqrt(p * (1 - p) / length)
        assert abs(acc - p) <= bound

    def test_permutation_equivariant_and_monotone(self, rng):
        gt = rng.integers(1, 5, size=(2, 30))
        pred = rng.integers(1, 5, size=(2, 30))
        perm = rng.permutation(30)
        np.testing.assert_allclose(token_accuracy(pred[:, perm], gt[:, perm]),
                                   token_accuracy(pred, gt))
        wrong = np.flatnonzero(pred[0] != gt[0])
        if wrong.size:
            fixed = pred.copy()
            fixed[0, wrong[0]] = gt[0, wrong[0]]
            assert token_accuracy(fixed, gt)[0] > token_accuracy(pred, gt)[0]

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            token_accuracy(np.ones((2, 3)), np.ones((2, 4)))


@pytest.fixture(scope="module")
def corpus(tmp_path_factory, clean_waves):
    from udse.audio_io import write_wav
    root = tmp_path_factory.mktemp("eval_corpus")
    clean_dir = root / "clean"
    clean_dir.mkdir()
    for i, w in enumerate(clean_waves[:4]):
        write_wav(w, clean_dir / f"c{i}.wav", format="pcm16")
    return build_corpus(clean_dir, "dn", "test", seed=3, out_dir=root / "deg")


class TestEvaluateCorpus:
    def test_empty_manifest_gives_empty_report(self, tiny_model, tiny_codec):
        report = evaluate_corpus(CorpusManifest(global_seed=0), tiny_model, tiny_codec)
        assert report.records == []
        agg = report.aggregates()
        assert agg["si_snr_db"]["mean"] == 0.0
        assert report.improvement_fraction == 0.0

    def test_aggregates_match_records(self, corpus, tiny_model, tiny_codec):
        report = evaluate_corpus(corpus, tiny_model, tiny_codec, seed=5)
        assert len(report.records) == 4
        agg = report.aggregates()
        values = [r.si_snr_db for r in report.records]
        assert abs(agg["si_snr_db"]["mean"] - np.mean(values)) < 1e-12
        assert abs(agg["si_snr_db"]["median"] - np.median(values)) < 1e-12
        assert abs(agg["si_snr_db"]["std"] - np.std(values)) < 1e-12

    def test_oracle_tokens_match_codec_roundtrip(self, corpus, tiny_model, tiny_codec):
        report = evaluate_corpus(corpus, tiny_model, tiny_codec, seed=5,
                                 oracle_tokens=True)
        for record, entry in zip(report.records,
                                 sorted(corpus.ok_entries,
                                        key=lambda e: e.degraded_path)):
            clean = read_wav(entry.clean_path)
            gt, _ = quantize(tiny_codec, encode(clean, tiny_codec))
            roundtrip = decode(tiny_codec, gt, num_samples=len(clean))
            assert abs(record.si_snr_db - si_snr(roundtrip, clean)) < 1e-12
            assert record.stage_accuracy == [1.0] * tiny_codec.num_stages

    def test_failures_recorded_not_fatal(self, corpus, tiny_model, tiny_codec):
        broken = CorpusManifest(global_seed=0, entries=list(corpus.entries))
        broken.entries.append(ManifestEntry(
            clean_path="missing.wav", degraded_path="missing_deg.wav",
            recipe_id="dn", spec=(Noise("white", 5.0),), seed=1))
        report = evaluate_corpus(broken, tiny_model, tiny_codec, seed=5)
        assert len(report.records) == 4
        assert len(report.failures) == 1

    def test_report_file_deterministic(self, corpus, tiny_model, tiny_codec, tmp_path):
        report = evaluate_corpus(corpus, tiny_model, tiny_codec, seed=5)
        write_report(report, tmp_path / "a.tsv")
        write_report(report, tmp_path / "b.tsv")
        a = (tmp_path / "a.tsv").read_bytes()
        assert a == (tmp_path / "b.tsv").read_bytes()
        text = a.decode("utf-8")
        assert text.startswith("UDSE-EVAL v1\n")
        assert "# improvement_fraction" in text


class TestSpectrogramDump:
    def test_header_and_payload(self, tmp_path, rng):
        w = _wave(rng.standard_normal(2000))
        path = tmp_path / "spec.f32"
        dump_spectrogram(w, path, frame_length=256, hop=128)
        data = path.read_bytes()
        rows, cols = struct.unpack("<QQ", data[:16])
        arr = np.frombuffer(data[16:], dtype="<f4").reshape(rows, cols)
        assert rows == 129
        assert np.all(arr >= 0)
