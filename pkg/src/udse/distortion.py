"""Degradation simulators and their composition.

Six single distortions (additive noise, reverberation, band limitation,
clipping, phase randomization, codec compression) plus ordered composition
with per-step seeded randomness. Every simulator preserves length and
sample rate, and `apply_spec` is a pure function of (input, spec, seed).
"""

from __future__ import annotations

import urllib.parse
from dataclasses import dataclass, fields
from functools import lru_cache

import numpy as np

from .audio_io import Waveform, read_wav, resample
from .dsp import SpectralFrames, fft_convolve, hann_window, istft, stft
from .errors import ConfigError, DegenerateInput
from .synth import make_noise, make_rir

SYNTH_NOISE_KINDS = ("white", "pink", "babble")
SYNTH_RIR = "synthetic"


@dataclass(frozen=True)
class Noise:
    """Additive noise at a target SNR. `source` is a synthetic kind
    ("white"/"pink"/"babble") or a path to a noise WAV."""
    source: str
    snr_db: float


@dataclass(frozen=True)
class Reverb:
    """Convolution with a room impulse response; `source` is "synthetic"
    (exponential-decay RIR with the given t60) or a path to an RIR WAV."""
    source: str
    t60_s: float = 0.5


@dataclass(frozen=True)
class BandLimit:
    """Band limitation by resampling down to target_hz and back up."""
    target_hz: int


@dataclass(frozen=True)
class Clip:
    """Hard amplitude clipping at threshold_fraction of full scale."""
    threshold_fraction: float


@dataclass(frozen=True)
class PhaseDistort:
    """Replace short-time phases with seeded random phases, keep magnitudes."""
    frame_length: int = 512
    hop: int = 128
    seed: int = 0


@dataclass(frozen=True)
class Compress:
    """Coding distortion: round trip through the transform codec using only
    its first quantizer stage."""
    codec_path: str
    num_stages: int = 1


STEP_KINDS = {
    "noise": Noise,
    "reverb": Reverb,
    "bandlimit": BandLimit,
    "clip": Clip,
    "phasedistort": PhaseDistort,
    "compress": Compress,
}
_KIND_NAMES = {cls: name for name, cls in STEP_KINDS.items()}


def add_noise(x: Waveform, n: Waveform, snr_db: float, rng: np.random.Generator) -> Waveform:
    """Mix a noise crop into x at exactly snr_db (power ratio of x to the
    scaled crop). The crop offset is drawn from rng; zero-power crops are
    retried up to 8 times."""
    if not np.isfinite(snr_db):
        raise ConfigError(f"snr_db must be finite, got {snr_db}; use an empty spec for identity")
    if len(n) < len(x):
        raise ConfigError(f"noise ({len(n)} samples) shorter than signal ({len(x)})")
    p_x = float(np.mean(x.samples ** 2))
    if p_x == 0.0:
        raise DegenerateInput("cannot set an SNR against a zero-power signal")

    span = len(n) - len(x)
    for _ in range(8):
        offset = int(rng.integers(0, span + 1))
        crop = n.samples[offset:offset + len(x)]
        p_n = float(np.mean(crop ** 2))
        if p_n > 0.0:
            gain = np.sqrt(p_x / (p_n * 10.0 ** (snr_db / 10.0)))
            return Waveform(x.samples + gain * crop, x.sample_rate_hz)
    raise DegenerateInput("noise source has zero power in 8 sampled segments")


def reverberate(x: Waveform, rir: Waveform) -> Waveform:
    """Convolve with an RIR, truncate to the dry length, and renormalize the
    peak to the dry signal's peak so levels stay comparable."""
    if rir.sample_rate_hz != x.sample_rate_hz:
        raise ConfigError(
            f"RIR rate {rir.sample_rate_hz} != signal rate {x.sample_rate_hz}")
    wet = fft_convolve(x, rir.samples)
    peak_in = float(np.max(np.abs(x.samples)))
    peak_out = float(np.max(np.abs(wet.samples)))
    if peak_out > 0.0 and peak_in > 0.0:
        wet = Waveform(wet.samples * (peak_in / peak_out), x.sample_rate_hz)
    return wet


def band_limit(x: Waveform, target_hz: int) -> Waveform:
    """Down-up resampling through target_hz; output keeps the original rate
    and exact length."""
    if target_hz >= x.sample_rate_hz / 2:
        raise ConfigError(
            f"band limit {target_hz} Hz must sit below Nyquist {x.sample_rate_hz / 2:.0f} Hz")
    narrow = resample(x, int(target_hz))
    wide = resample(narrow, x.sample_rate_hz)
    out = wide.samples
    if len(out) < len(x):
        out = np.pad(out, (0, len(x) - len(out)))
    return Waveform(out[:len(x)], x.sample_rate_hz)


def clip(x: Waveform, threshold_fraction: float) -> Waveform:
    """Hard-limit samples to [-t, t] with t = threshold_fraction of full
    scale, so repeated application at the same fraction is a no-op."""
    if not 0.0 < threshold_fraction <= 1.0:
        raise ConfigError(f"threshold_fraction must be in (0, 1], got {threshold_fraction}")
    tau = float(threshold_fraction)
    return Waveform(np.clip(x.samples, -tau, tau), x.sample_rate_hz)


def phase_distort(x: Waveform, spec: PhaseDistort) -> Waveform:
    """Scramble short-time phase while keeping the magnitude spectrogram.

    A seeded random dispersive phase curve (sinusoidal across frequency,
    amplitude up to 2 rad) is applied to every frame, which wrecks the
    waveform's phase structure like a random all-pass chain. Independent
    per-bin phases would leave overlapping frames mutually inconsistent
    and smear the re-analyzed magnitudes by 7 dB or more; the smooth curve
    keeps adjacent-bin coherence and bounded group delay, so the magnitude
    spectrogram survives the analysis-synthesis pass. DC and Nyquist bins
    stay real.
    """
    window = hann_window(spec.frame_length)
    frames = stft(x, spec.frame_length, spec.hop, window)
    rng = np.random.default_rng(np.random.SeedSequence([0x9A5E, int(spec.seed)]))
    num_bins = frames.frames.shape[0]
    amplitude = rng.uniform(1.0, 2.0)
    cycles = rng.uniform(1.5, 3.0)
    start = rng.uniform(0, 2 * np.pi)
    offsets = amplitude * np.sin(2 * np.pi * cycles * np.arange(num_bins) / num_bins + start)
    offsets[0] = 0.0
    offsets[-1] = 0.0
    scrambled = frames.frames * np.exp(1j * offsets)[:, None]
    return istft(SpectralFrames(scrambled, frames.frame_length, frames.hop,
                                frames.window, frames.num_samples,
                                frames.sample_rate_hz))


def compress_distort(x: Waveform, codec) -> Waveform:
    """Code and decode x through the transform codec with a single quantizer
    stage, keeping length and rate."""
    from . import codec as codec_mod

    features = codec_mod.encode(x, codec)
    tokens, quantized = codec_mod.quantize_stage(codec.stages[0], features)
    grid = tokens[None, :]
    return codec_mod.decode(codec, grid, stages_used=1, num_samples=len(x))


@lru_cache(maxsize=8)
def _load_codec_cached(path: str):
    from .codec import load_codec
    return load_codec(path)


def apply_spec(x: Waveform, spec, seed: int, codec_provider=None) -> Waveform:
    """Apply an ordered list of distortion steps. All randomness derives
    from (seed, step index), so identical calls are bit-identical."""
    steps = list(spec)
    if not steps:
        return Waveform(x.samples.copy(), x.sample_rate_hz)
    get_codec = codec_provider or _load_codec_cached
    children = np.random.SeedSequence(int(seed)).spawn(len(steps))
    out = x
    for step, child in zip(steps, children):
        rng = np.random.default_rng(child)
        if isinstance(step, Noise):
            out = add_noise(out, _resolve_noise(step.source, out, rng), step.snr_db, rng)
        elif isinstance(step, Reverb):
            out = reverberate(out, _resolve_rir(step, out, rng))
        elif isinstance(step, BandLimit):
            out = band_limit(out, step.target_hz)
        elif isinstance(step, Clip):
            out = clip(out, step.threshold_fraction)
        elif isinstance(step, PhaseDistort):
            out = phase_distort(out, step)
        elif isinstance(step, Compress):
            if step.num_stages != 1:
                raise ConfigError("compression distortion uses exactly one quantizer stage")
            out = compress_distort(out, get_codec(step.codec_path))
        else:
            raise ConfigError(f"unknown distortion step {step!r}")
    return out


def _resolve_noise(source: str, x: Waveform, rng: np.random.Generator) -> Waveform:
    if source in SYNTH_NOISE_KINDS:
        return make_noise(source, len(x) + len(x) // 4 + 1, x.sample_rate_hz, rng)
    n = read_wav(source)
    if n.sample_rate_hz != x.sample_rate_hz:
        n = resample(n, x.sample_rate_hz)
    if len(n) < len(x):
        reps = -(-len(x) // len(n)) + 1
        n = Waveform(np.tile(n.samples, reps), n.sample_rate_hz)
    return n


def _resolve_rir(step: Reverb, x: Waveform, rng: np.random.Generator) -> Waveform:
    if step.source == SYNTH_RIR:
        return Waveform(make_rir(step.t60_s, x.sample_rate_hz, rng), x.sample_rate_hz)
    return read_wav(step.source)


# ---------------------------------------------------------------------------
# Spec serialization: steps joined by "|", each "kind(key=value,...)" with
# string values percent-encoded. Round-trips exactly through parse_spec.

def serialize_spec(spec) -> str:
    parts = []
    for step in spec:
        name = _KIND_NAMES[type(step)]
        kv = []
        for f in fields(step):
            value = getattr(step, f.name)
            if isinstance(value, str):
                encoded = urllib.parse.quote(value, safe="")
            elif isinstance(value, float):
                encoded = repr(value)
            else:
                encoded = str(int(value))
            kv.append(f"{f.name}={encoded}")
        parts.append(f"{name}({','.join(kv)})")
    return "|".join(parts)


def parse_spec(text: str):
    text = text.strip()
    if not text:
        return []
    steps = []
    for part in text.split("|"):
        if "(" not in part or not part.endswith(")"):
            raise ConfigError(f"malformed distortion step {part!r}")
        name, _, body = part.partition("(")
        cls = STEP_KINDS.get(name)
        if cls is None:
            raise ConfigError(f"unknown distortion kind {name!r}")
        kwargs = {}
        body = body[:-1]
        if body:
            for pair in body.split(","):
                key, _, raw = pair.partition("=")
                if key not in {f.name for f in fields(cls)}:
                    raise ConfigError(f"unknown field {key!r} for distortion {name!r}")
                ftype = {f.name: f.type for f in fields(cls)}[key]
                if ftype in ("str", str):
                    kwargs[key] = urllib.parse.unquote(raw)
                elif ftype in ("float", float):
                    kwargs[key] = float(raw)
                else:
                    kwargs[key] = int(raw)
        steps.append(cls(**kwargs))
    return steps
