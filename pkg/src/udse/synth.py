"""Seeded synthetic signal generators: speech-like clean utterances,
colored noise beds, and exponential-decay room impulse responses.

These stand in for recorded corpora so every pipeline stage can run and be
verified without shipping audio data. All generators are deterministic
functions of their seed.
"""

from __future__ import annotations

import numpy as np

from .audio_io import Waveform

_FORMANT_BANK = [
    (730.0, 1090.0),
    (270.0, 2290.0),
    (530.0, 1840.0),
    (660.0, 1720.0),
    (390.0, 1990.0),
]


def make_clean_utterance(seed: int, duration_s: float = 1.0, sample_rate_hz: int = 16000) -> Waveform:
    """A voiced, speech-like test signal: a harmonic source with slow pitch
    drift and mild vibrato, two formant resonances, a syllabic amplitude
    envelope, and a whisper of breath noise. Harmonics stop near 3.5 kHz so
    band-limitation tasks still have content to remove. Peak 0.95."""
    rng = np.random.default_rng(np.random.SeedSequence([0x5EEC, int(seed)]))
    n = int(round(duration_s * sample_rate_hz))
    t = np.arange(n) / sample_rate_hz

    f0 = rng.uniform(110.0, 220.0)
    drift = rng.uniform(-0.08, 0.08)
    vibrato = rng.uniform(0.0, 1.0)
    inst_f0 = f0 * (1.0 + drift * t) + vibrato * np.sin(2 * np.pi * rng.uniform(4.0, 6.0) * t)
    phase = 2 * np.pi * np.cumsum(inst_f0) / sample_rate_hz

    f1, f2 = _FORMANT_BANK[int(rng.integers(len(_FORMANT_BANK)))]
    sig = np.zeros(n)
    max_harm = min(int(3500 // f0), 14)
    for h in range(1, max_harm + 1):
        freq = h * f0
        # crude formant shaping: resonant gain around f1 and f2
        gain = 1.0 / h
        gain *= 1.0 + 3.0 * np.exp(-((freq - f1) / 150.0) ** 2)
        gain *= 1.0 + 2.0 * np.exp(-((freq - f2) / 250.0) ** 2)
        sig += gain * np.sin(h * phase + rng.uniform(0, 2 * np.pi))

    # syllabic envelope: slow sinusoidal gating at 2-5 Hz
    env_rate = rng.uniform(2.0, 5.0)
    env = 0.35 + 0.65 * (0.5 + 0.5 * np.sin(2 * np.pi * env_rate * t + rng.uniform(0, 2 * np.pi)))
    attack = min(n, int(0.02 * sample_rate_hz))
    ramp = np.ones(n)
    ramp[:attack] = np.linspace(0, 1, attack)
    ramp[-attack:] *= np.linspace(1, 0, attack)
    sig = sig * env * ramp

    sig += 0.002 * rng.standard_normal(n)
    peak = np.max(np.abs(sig))
    if peak > 0:
        sig = 0.95 * sig / peak
    return Waveform(sig, sample_rate_hz)


def make_noise(kind: str, num_samples: int, sample_rate_hz: int, rng: np.random.Generator) -> Waveform:
    """Colored noise beds: "white", "pink" (1/f power), or "babble" (pink
    noise with syllabic-rate amplitude modulation)."""
    if kind == "white":
        x = rng.standard_normal(num_samples)
    elif kind in ("pink", "babble"):
        white = rng.standard_normal(num_samples)
        spectrum = np.fft.rfft(white)
        f = np.fft.rfftfreq(num_samples, d=1.0 / sample_rate_hz)
        f[0] = f[1] if len(f) > 1 else 1.0
        spectrum /= np.sqrt(f)
        x = np.fft.irfft(spectrum, n=num_samples)
        if kind == "babble":
            t = np.arange(num_samples) / sample_rate_hz
            mod = 1.0
            for _ in range(3):
                mod = mod * (0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(2.0, 8.0) * t
                                                + rng.uniform(0, 2 * np.pi)))
            x = x * (0.3 + mod)
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    rms = np.sqrt(np.mean(x ** 2))
    if rms > 0:
        x = 0.2 * x / rms
    return Waveform(x, sample_rate_hz)


def make_rir(t60_s: float, sample_rate_hz: int, rng: np.random.Generator,
             direct_gain: float = 1.0) -> np.ndarray:
    """Synthetic room impulse response: a unit direct path followed by a
    Gaussian tail decaying 60 dB over t60_s seconds."""
    length = int(round(1.2 * t60_s * sample_rate_hz)) + 1
    t = np.arange(length) / sample_rate_hz
    decay = np.exp(-t * (np.log(1000.0) / t60_s))  # -60 dB amplitude at t60
    tail = rng.standard_normal(length) * decay
    tail[0] = 0.0
    tail *= 0.35 / max(np.max(np.abs(tail)), 1e-12)
    rir = tail
    rir[0] = direct_gain
    return rir
