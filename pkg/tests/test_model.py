import numpy as np
import pytest

from udse.audio_io import Waveform
from udse.codec import codec_digest, decode, encode, lookup, quantize, train_codec
from udse.errors import ConfigError, ParseError, RangeError
from udse.metrics import si_snr
from udse.model import (ModelConfig, UdseModel, draw_init_tokens, enhance,
                        extract_global, load_model, make_variant, predict_tokens,
                        save_model, teacher_forced_logits, train_model, udse_loss)
from udse.optim import OptimizerConfig
from udse.distortion import Noise, apply_spec


def _degraded(wave, seed):
    return apply_spec(wave, [Noise("white", 5.0)], seed=seed)


@pytest.fixture(scope="module")
def wired(tiny_codec, tiny_model, clean_waves):
    w = clean_waves[0]
    features = encode(w, tiny_codec)
    gt, per_stage = quantize(tiny_codec, features)
    return w, features, per_stage, gt


class TestExtractGlobal:
    def test_output_shape(self, tiny_model, tiny_codec, wired):
        _, features, per_stage, _ = wired
        g = extract_global(tiny_model, features, per_stage)
        assert g.shape == (tiny_model.cfg.channels, features.shape[1])

    def test_stage_count_mismatch(self, tiny_model, wired):
        _, features, per_stage, _ = wired
        with pytest.raises(ConfigError):
            extract_global(tiny_model, features, per_stage[:-1])

    def test_zeroed_blocks_reduce_to_projection(self, tiny_codec, wired):
        _, features, per_stage, _ = wired
        model = UdseModel(ModelConfig(channels=16, heads=2, global_blocks=1,
                                      predictor_blocks=1, init_seed=9), tiny_codec)
        for name in ("fp.block0.attn.o.w", "fp.block0.ffn.out.w",
                     "fp.block0.conv.pw.w"):
            model.params[name].values[:] = 0.0
        g = extract_global(model, features, per_stage)
        stacked = np.concatenate([features] + per_stage, axis=0).astype(np.float32)
        expected = (model.params["fp.proj.w"].values @ stacked
                    + model.params["fp.proj.b"].values)
        np.testing.assert_allclose(g, expected, atol=1e-6)

    def test_sensitive_to_every_stage(self, tiny_model, wired):
        _, features, per_stage, _ = wired
        base = extract_global(tiny_model, features, per_stage)
        for n in range(len(per_stage)):
            perturbed = [q.copy() for q in per_stage]
            perturbed[n][0, 0] += 1.0
            out = extract_global(tiny_model, features, perturbed)
            assert np.linalg.norm(out - base) > 0


class TestPredictTokens:
    def test_shape_and_range(self, tiny_model, tiny_codec, wired):
        _, features, per_stage, _ = wired
        g = extract_global(tiny_model, features, per_stage)
        grid = predict_tokens(tiny_model, tiny_codec, g, seed=4)
        assert grid.shape == (tiny_codec.num_stages, features.shape[1])
        assert grid.min() >= 1 and grid.max() <= tiny_codec.codebook_size

    def test_deterministic(self, tiny_model, tiny_codec, wired):
        _, features, per_stage, _ = wired
        g = extract_global(tiny_model, features, per_stage)
        a = predict_tokens(tiny_model, tiny_codec, g, seed=4)
        b = predict_tokens(tiny_model, tiny_codec, g, seed=4)
        np.testing.assert_array_equal(a, b)
        c = predict_tokens(tiny_model, tiny_codec, g, seed=5)
        assert not np.array_equal(a, c)  # start tokens differ

    def test_forced_stage1_token_shifts_stage2_input_by_codeword_delta(self, tiny_codec):
        cb = tiny_codec.stages[0]
        t_a = np.full(7, 2)
        t_b = t_a.copy()
        t_b[3] = 5
        delta = lookup(cb, t_b) - lookup(cb, t_a)
        expected = np.zeros_like(delta)
        expected[:, 3] = (np.asarray(cb, dtype=np.float64)[4]
                          - np.asarray(cb, dtype=np.float64)[1])
        np.testing.assert_allclose(delta, expected, atol=1e-12)


class TestTeacherForcing:
    def test_consistency_when_gt_equals_greedy(self, tiny_model, tiny_codec, wired):
        _, features, per_stage, _ = wired
        g = extract_global(tiny_model, features, per_stage)
        greedy = predict_tokens(tiny_model, tiny_codec, g, seed=11)
        forced = teacher_forced_logits(tiny_model, tiny_codec, g, greedy, seed=11)
        again = predict_tokens(tiny_model, tiny_codec, g, seed=11)
        np.testing.assert_array_equal(greedy, again)
        forced_argmax = np.stack([np.argmax(p, axis=0) + 1 for p in forced])
        np.testing.assert_array_equal(forced_argmax, greedy)

    def test_stage1_independent_of_gt(self, tiny_model, tiny_codec, wired, rng):
        _, features, per_stage, gt = wired
        g = extract_global(tiny_model, features, per_stage)
        a = teacher_forced_logits(tiny_model, tiny_codec, g, gt, seed=2)
        other = rng.integers(1, tiny_codec.codebook_size + 1, size=gt.shape)
        b = teacher_forced_logits(tiny_model, tiny_codec, g, other, seed=2)
        np.testing.assert_array_equal(a[0], b[0])
        assert not np.array_equal(a[1], b[1])

    def test_probgrids_column_stochastic(self, tiny_model, tiny_codec, wired):
        _, features, per_stage, gt = wired
        g = extract_global(tiny_model, features, per_stage)
        for probs in teacher_forced_logits(tiny_model, tiny_codec, g, gt, seed=3):
            np.testing.assert_allclose(probs.sum(axis=0), 1.0, atol=1e-6)
            assert np.all(probs >= 0)

    def test_bad_gt_rejected(self, tiny_model, tiny_codec, wired):
        _, features, per_stage, gt = wired
        g = extract_global(tiny_model, features, per_stage)
        bad = gt.copy()
        bad[0, 0] = 0
        with pytest.raises(RangeError):
            teacher_forced_logits(tiny_model, tiny_codec, g, bad, seed=1)
        with pytest.raises(ConfigError):
            teacher_forced_logits(tiny_model, tiny_codec, g, gt[:-1], seed=1)


class TestLoss:
    def test_uniform(self):
        probs = [np.full((64, 5), 1 / 64)] * 3
        gt = np.ones((3, 5), dtype=np.int64)
        assert abs(udse_loss(probs, gt) - np.log(64)) < 1e-9

    def test_perfect(self):
        p = np.zeros((8, 4))
        p[2, :] = 1.0
        gt = np.full((2, 4), 3)
        assert udse_loss([p, p], gt) == 0.0

    def test_two_stage_hand_case(self):
        p1 = np.array([[0.5], [0.5]])
        p2 = np.array([[0.25], [0.75]])
        gt = np.array([[1], [1]])
        expected = (-np.log(0.5) - np.log(0.25)) / 2
        assert abs(udse_loss([p1, p2], gt) - expected) < 1e-9
        assert abs(expected - 1.0397) < 1e-4


@pytest.fixture(scope="module")
def parallel_model(tiny_codec):
    cfg = ModelConfig(channels=16, heads=2, global_blocks=1, predictor_blocks=1,
                      parallel_mode=True, init_seed=3)
    return UdseModel(cfg, tiny_codec)


@pytest.fixture(scope="module")
def first_only_model(tiny_codec):
    cfg = ModelConfig(channels=16, heads=2, global_blocks=1, predictor_blocks=1,
                      global_condition_first_only=True, init_seed=3)
    return UdseModel(cfg, tiny_codec)


class TestAblationWiring:
    def test_parallel_ignores_previous_stages(self, parallel_model, tiny_codec,
                                              wired, rng):
        _, features, per_stage, gt = wired
        g = extract_global(parallel_model, features, per_stage)
        a = teacher_forced_logits(parallel_model, tiny_codec, g, gt, seed=6)
        other = rng.integers(1, tiny_codec.codebook_size + 1, size=gt.shape)
        b = teacher_forced_logits(parallel_model, tiny_codec, g, other, seed=6)
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa, pb)

    def test_first_only_stage2_invariant_to_global_features(self, first_only_model,
                                                            tiny_codec, wired):
        _, features, per_stage, gt = wired
        g = extract_global(first_only_model, features, per_stage)
        a = teacher_forced_logits(first_only_model, tiny_codec, g, gt, seed=6)
        b = teacher_forced_logits(first_only_model, tiny_codec, g + 1.5, gt, seed=6)
        assert not np.array_equal(a[0], b[0])
        for pa, pb in zip(a[1:], b[1:]):
            np.testing.assert_array_equal(pa, pb)

    def test_make_variant(self):
        base = ModelConfig()
        assert make_variant(base, "parallel").parallel_mode
        assert make_variant(base, "global-first-only").global_condition_first_only
        with pytest.raises(ConfigError):
            make_variant(base, "bogus")


class TestTraining:
    def test_loss_decreases_and_logs_deterministic(self, tiny_codec, clean_waves):
        pairs = [(w, _degraded(w, 40 + i)) for i, w in enumerate(clean_waves[:3])]
        cfg = ModelConfig(channels=16, heads=2, global_blocks=1, predictor_blocks=1,
                          init_seed=8)
        runs = []
        for _ in range(2):
            model = UdseModel(cfg, tiny_codec)
            log = train_model(model, tiny_codec, pairs,
                              OptimizerConfig(lr=2e-3, warmup_steps=5,
                                              total_steps=30), seed=21)
            runs.append(log)
        assert runs[0].final_loss < runs[0].initial_loss
        assert runs[0].as_dict() == runs[1].as_dict()

    def test_codec_arrays_immutable(self, tiny_codec):
        with pytest.raises(ValueError):
            tiny_codec.feature_mean[0] = 1.0

    def test_rejects_mismatched_pair(self, tiny_codec, clean_waves):
        model = UdseModel(ModelConfig(channels=16, heads=2, global_blocks=1,
                                      predictor_blocks=1), tiny_codec)
        short = Waveform(clean_waves[0].samples[:-10], 16000)
        with pytest.raises(ConfigError):
            train_model(model, tiny_codec, [(clean_waves[0], short)],
                        OptimizerConfig(total_steps=1))


class TestEnhance:
    def test_oracle_token_identity(self, tiny_model, tiny_codec, clean_waves):
        w = clean_waves[7]
        gt, _ = quantize(tiny_codec, encode(w, tiny_codec))
        via_enhance = enhance(tiny_model, tiny_codec, w, seed=1, override_tokens=gt)
        direct = decode(tiny_codec, gt, num_samples=len(w))
        np.testing.assert_array_equal(via_enhance.samples, direct.samples)

    def test_output_length_matches_input(self, tiny_model, tiny_codec, rng):
        for n in (33, 64, 65, 1000):
            w = Waveform(rng.standard_normal(n) * 0.1, 16000)
            out = enhance(tiny_model, tiny_codec, w, seed=2)
            assert len(out) == n
            assert out.sample_rate_hz == 16000

    def test_rate_mismatch(self, tiny_model, tiny_codec, rng):
        with pytest.raises(ConfigError):
            enhance(tiny_model, tiny_codec, Waveform(rng.standard_normal(50), 8000))


class TestCheckpoint:
    def test_roundtrip_preserves_predictions(self, tiny_model, tiny_codec, wired,
                                             tmp_path):
        _, features, per_stage, _ = wired
        path = tmp_path / "model.udsenn"
        save_model(tiny_model, path)
        loaded = load_model(path, tiny_codec)
        g_a = extract_global(tiny_model, features, per_stage)
        g_b = extract_global(loaded, features, per_stage)
        np.testing.assert_array_equal(g_a, g_b)
        np.testing.assert_array_equal(
            predict_tokens(tiny_model, tiny_codec, g_a, seed=3),
            predict_tokens(loaded, tiny_codec, g_b, seed=3))
        np.testing.assert_array_equal(loaded.init_codebook, tiny_model.init_codebook)

    def test_refuses_wrong_codec(self, tiny_model, tiny_codec, clean_waves, tmp_path):
        path = tmp_path / "model.udsenn"
        save_model(tiny_model, path)
        other = train_codec(clean_waves[:6], tiny_codec.num_stages,
                            tiny_codec.codebook_size, tiny_codec.frame_length,
                            seed=999)
        with pytest.raises(ConfigError) as err:
            load_model(path, other)
        message = str(err.value)
        assert codec_digest(other).hex() in message
        assert codec_digest(tiny_codec).hex() in message

    def test_corrupted_checkpoint(self, tiny_model, tiny_codec, tmp_path):
        path = tmp_path / "model.udsenn"
        save_model(tiny_model, path)
        data = bytearray(path.read_bytes())
        data[100] ^= 0x55
        path.write_bytes(bytes(data))
        with pytest.raises(ParseError):
            load_model(path, tiny_codec)

    def test_flags_roundtrip(self, tiny_codec, tmp_path):
        cfg = ModelConfig(channels=16, heads=2, global_blocks=1, predictor_blocks=1,
                          parallel_mode=True, init_seed=5)
        model = UdseModel(cfg, tiny_codec)
        save_model(model, tmp_path / "m.udsenn")
        loaded = load_model(tmp_path / "m.udsenn", tiny_codec)
        assert loaded.cfg.parallel_mode
        assert not loaded.cfg.global_condition_first_only


class TestInitTokens:
    def test_seed_controls_draw(self, tiny_model):
        a = draw_init_tokens(tiny_model, 10, seed=1)
        b = draw_init_tokens(tiny_model, 10, seed=1)
        c = draw_init_tokens(tiny_model, 10, seed=2)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)
        assert a.min() >= 1 and a.max() <= tiny_model.codebook_size
