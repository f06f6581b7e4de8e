"""Framing transforms: MDCT/IMDCT, STFT/ISTFT, and FFT convolution.

The MDCT pair uses 50% overlap with a sine window, which satisfies the
power-complementarity condition needed for perfect reconstruction by
windowed overlap-add. Transforms are computed as explicit matrix products
against a precomputed cosine basis: at the frame sizes used here that is
fast, exactly linear, and bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .audio_io import Waveform
from .errors import ConfigError


@dataclass(frozen=True)
class SpectralFrames:
    """Frame-domain view of a signal.

    ``frames`` has one column per frame: F real MDCT coefficients, or
    frame_length//2 + 1 complex one-sided STFT bins. ``num_samples`` is the
    original signal length, kept so synthesis can trim the analysis padding.
    """

    frames: np.ndarray
    frame_length: int
    hop: int
    window: np.ndarray
    num_samples: int
    sample_rate_hz: int

    @property
    def num_frames(self):
        return self.frames.shape[1]


def sine_window(frame_length: int) -> np.ndarray:
    n = np.arange(frame_length)
    return np.sin(np.pi * (n + 0.5) / frame_length)


def hann_window(frame_length: int) -> np.ndarray:
    # Periodic Hann: exact constant-overlap-add for hops dividing the length.
    n = np.arange(frame_length)
    return 0.5 - 0.5 * np.cos(2 * np.pi * n / frame_length)


def _mdct_basis(half: int) -> np.ndarray:
    n = np.arange(2 * half)
    k = np.arange(half)
    return np.cos(np.pi / half * (n[None, :] + 0.5 + half / 2) * (k[:, None] + 0.5))


def num_mdct_frames(num_samples: int, frame_length: int) -> int:
    half = frame_length // 2
    return -(-num_samples // half) + 1


def mdct(w: Waveform, frame_length: int) -> SpectralFrames:
    """Forward MDCT with sine window, 50% overlap.

    The signal is zero-padded up to a whole number of hops, plus one
    half-frame of leading and trailing padding, giving ceil(T/F) + 1 frames
    of F = frame_length/2 coefficients.
    """
    if frame_length < 4 or frame_length % 2 != 0:
        raise ConfigError(f"MDCT frame_length must be an even integer >= 4, got {frame_length}")
    half = frame_length // 2
    x = w.samples
    padded_body = -(-len(x) // half) * half
    padded = np.zeros(padded_body + 2 * half)
    padded[half:half + len(x)] = x

    num_frames = padded_body // half + 1
    idx = np.arange(frame_length)[:, None] + half * np.arange(num_frames)[None, :]
    window = sine_window(frame_length)
    frames = _mdct_basis(half) @ (padded[idx] * window[:, None])
    return SpectralFrames(frames, frame_length, half, window, len(x), w.sample_rate_hz)


def imdct(s: SpectralFrames) -> Waveform:
    """Windowed overlap-add MDCT synthesis; trims the analysis padding."""
    half = s.frame_length // 2
    num_frames = s.num_frames
    recon = (2.0 / half) * (_mdct_basis(half).T @ s.frames) * s.window[:, None]
    out = np.zeros((num_frames + 1) * half)
    for i in range(num_frames):  # fixed order keeps the sum bit-reproducible
        out[i * half:i * half + s.frame_length] += recon[:, i]
    return Waveform(out[half:half + s.num_samples], s.sample_rate_hz)


def stft(w: Waveform, frame_length: int, hop: int, window: np.ndarray | None = None) -> SpectralFrames:
    """One-sided STFT. Frames are padded so every input sample gets full
    window coverage; bins per frame = frame_length//2 + 1."""
    if hop > frame_length:
        raise ConfigError(f"hop {hop} exceeds frame_length {frame_length}")
    if hop < 1:
        raise ConfigError("hop must be >= 1")
    if window is None:
        window = hann_window(frame_length)
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (frame_length,):
        raise ConfigError("window length must equal frame_length")

    x = w.samples
    pad_front = frame_length - hop
    num_frames = (pad_front + len(x) - 1) // hop + 1
    padded_len = (num_frames - 1) * hop + frame_length
    padded = np.zeros(padded_len)
    padded[pad_front:pad_front + len(x)] = x

    idx = np.arange(frame_length)[:, None] + hop * np.arange(num_frames)[None, :]
    frames = np.fft.rfft(padded[idx] * window[:, None], axis=0)
    return SpectralFrames(frames, frame_length, hop, window, len(x), w.sample_rate_hz)


def istft(s: SpectralFrames) -> Waveform:
    """Least-squares inverse STFT (windowed overlap-add with window-squared
    normalization), trimmed back to the analysis length."""
    window = s.window
    frame_length, hop = s.frame_length, s.hop
    _check_cola(window, hop)

    recon = np.fft.irfft(s.frames, n=frame_length, axis=0)
    num_frames = s.num_frames
    total = (num_frames - 1) * hop + frame_length
    num = np.zeros(total)
    den = np.zeros(total)
    for i in range(num_frames):
        sl = slice(i * hop, i * hop + frame_length)
        num[sl] += recon[:, i] * window
        den[sl] += window ** 2
    pad_front = frame_length - hop
    out = num[pad_front:pad_front + s.num_samples]
    den = den[pad_front:pad_front + s.num_samples]
    if np.any(den < 1e-10):
        raise ConfigError("window/hop pair leaves samples uncovered (COLA violation)")
    return Waveform(out / den, s.sample_rate_hz)


def _check_cola(window, hop):
    # Fully-overlapped interior samples must have bounded-away-from-zero
    # summed window energy; checked on one hop period.
    frame_length = len(window)
    if hop > frame_length:
        raise ConfigError("hop exceeds window length")
    acc = np.zeros(hop)
    for start in range(0, frame_length, hop):
        seg = window[start:start + hop] ** 2
        acc[:len(seg)] += seg
    if np.any(acc < 1e-10):
        raise ConfigError("window/hop pair violates the overlap-add coverage condition")


def fft_convolve(x: Waveform, h: np.ndarray) -> Waveform:
    """Linear convolution of a waveform with an impulse response, truncated
    to the input length so the output stays aligned with the dry signal."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 1 or h.size == 0:
        raise ConfigError("impulse response must be a non-empty 1-D sequence")
    full = fftconvolve(x.samples, h, mode="full")
    return Waveform(full[:len(x)], x.sample_rate_hz)
