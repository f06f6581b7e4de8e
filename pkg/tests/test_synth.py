import numpy as np

from udse.synth import make_clean_utterance, make_noise, make_rir


class TestCleanUtterance:
    def test_deterministic_per_seed(self):
        a = make_clean_utterance(3, 0.3)
        b = make_clean_utterance(3, 0.3)
        np.testing.assert_array_equal(a.samples, b.samples)
        c = make_clean_utterance(4, 0.3)
        assert not np.array_equal(a.samples, c.samples)

    def test_peak_and_length(self):
        w = make_clean_utterance(1, 0.25, 16000)
        assert len(w) == 4000
        assert abs(np.max(np.abs(w.samples)) - 0.95) < 1e-9

    def test_has_content_above_two_khz(self):
        # band-limitation tasks need something to remove
        w = make_clean_utterance(2, 0.5, 16000)
        spectrum = np.abs(np.fft.rfft(w.samples))
        freqs = np.fft.rfftfreq(len(w), 1 / 16000)
        high = np.sum(spectrum[freqs > 2000] ** 2)
        total = np.sum(spectrum ** 2)
        assert high / total > 1e-3


class TestNoise:
    def test_kinds_and_rms(self):
        rng = np.random.default_rng(0)
        for kind in ("white", "pink", "babble"):
            n = make_noise(kind, 4000, 16000, rng)
            assert len(n) == 4000
            assert abs(np.sqrt(np.mean(n.samples ** 2)) - 0.2) < 1e-9

    def test_pink_slopes_down(self):
        rng = np.random.default_rng(1)
        n = make_noise("pink", 16000, 16000, rng)
        spectrum = np.abs(np.fft.rfft(n.samples)) ** 2
        freqs = np.fft.rfftfreq(len(n), 1 / 16000)
        low = spectrum[(freqs > 50) & (freqs < 500)].mean()
        high = spectrum[(freqs > 2000) & (freqs < 8000)].mean()
        assert low > 4 * high


class TestRir:
    def test_direct_path_and_decay(self):
        rng = np.random.default_rng(2)
        rir = make_rir(0.4, 16000, rng)
        assert rir[0] == 1.0
        early = np.max(np.abs(rir[1:800]))
        late = np.max(np.abs(rir[-800:]))
        assert late < early
