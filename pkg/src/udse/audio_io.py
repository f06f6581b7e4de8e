"""WAV file I/O and sample-rate conversion.

The RIFF/WAVE parser is deliberately hand-rolled: it accepts PCM-16 and
IEEE-float-32 payloads, skips unknown chunks, and reports the byte offset
of the first malformed byte so corrupt files are easy to diagnose.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from math import gcd

import numpy as np
from scipy.signal import upfirdn

from .errors import ConfigError, IoError, ParseError, UnsupportedFormat

log = logging.getLogger(__name__)

_FORMAT_PCM = 1
_FORMAT_IEEE_FLOAT = 3

# Resampler kernel: Kaiser-windowed sinc, 64 taps per polyphase branch.
_TAPS_PER_PHASE = 64
_KAISER_BETA = 8.6


@dataclass(frozen=True)
class Waveform:
    """A mono audio signal: samples in [-1, 1] plus its sample rate."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or samples.size < 1:
            raise ConfigError("waveform must be a non-empty 1-D sample sequence")
        if not np.all(np.isfinite(samples)):
            raise ConfigError("waveform samples must be finite")
        if int(self.sample_rate_hz) <= 0:
            raise ConfigError(f"sample rate must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self):
        return len(self.samples) / self.sample_rate_hz


def read_wav(path) -> Waveform:
    """Read a RIFF/WAVE file into a Waveform.

    Accepts PCM-16 (scaled by 1/32768) and IEEE-float-32 payloads, mono or
    stereo; stereo is downmixed by averaging the two channels. All other
    chunks in the container are skipped.
    """
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    if len(data) < 12:
        raise ParseError("file too short for a RIFF header", offset=0)
    if data[0:4] != b"RIFF":
        raise ParseError(f"bad RIFF magic {data[0:4]!r}", offset=0)
    if data[8:12] != b"WAVE":
        raise ParseError(f"bad WAVE form type {data[8:12]!r}", offset=8)

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (chunk_size,) = struct.unpack_from("<I", data, pos + 4)
        body_start = pos + 8
        if body_start + chunk_size > len(data):
            raise ParseError(
                f"chunk {chunk_id!r} overruns file (declares {chunk_size} bytes)",
                offset=pos + 4,
            )
        if chunk_id == b"fmt ":
            if chunk_size < 16:
                raise ParseError("fmt chunk shorter than 16 bytes", offset=body_start)
            fmt = struct.unpack_from("<HHIIHH", data, body_start)
        elif chunk_id == b"data":
            payload = (body_start, chunk_size)
        pos = body_start + chunk_size + (chunk_size & 1)  # chunks are word-aligned

    if fmt is None:
        raise ParseError("missing fmt chunk", offset=len(data))
    if payload is None:
        raise ParseError("missing data chunk", offset=len(data))

    format_tag, channels, sample_rate, _byte_rate, block_align, bits = fmt
    if format_tag not in (_FORMAT_PCM, _FORMAT_IEEE_FLOAT):
        raise UnsupportedFormat(f"format tag {format_tag} not supported (PCM=1, float=3)")
    if channels not in (1, 2):
        raise UnsupportedFormat(f"{channels} channels not supported (mono or stereo only)")

    start, size = payload
    raw = data[start:start + size]
    if format_tag == _FORMAT_PCM:
        if bits != 16:
            raise UnsupportedFormat(f"PCM with {bits} bits not supported (16 only)")
        values = np.frombuffer(raw[: len(raw) - len(raw) % 2], dtype="<i2")
        samples = values.astype(np.float64) / 32768.0
    else:
        if bits != 32:
            raise UnsupportedFormat(f"float with {bits} bits not supported (32 only)")
        values = np.frombuffer(raw[: len(raw) - len(raw) % 4], dtype="<f4")
        samples = values.astype(np.float64)

    if channels == 2:
        samples = samples[: len(samples) - len(samples) % 2]
        samples = samples.reshape(-1, 2).mean(axis=1)
    if samples.size == 0:
        raise ParseError("empty data chunk", offset=start)
    if not np.all(np.isfinite(samples)):
        raise ParseError("non-finite sample values in data chunk", offset=start)
    return Waveform(samples, sample_rate)


def write_wav(w: Waveform, path, format="pcm16") -> int:
    """Write a Waveform as RIFF/WAVE in the given format ("pcm16" or "float32").

    Samples outside [-1, 1] are saturated; the number of saturated samples
    is logged and returned so callers can surface it.
    """
    samples = w.samples
    clipped = int(np.count_nonzero((samples < -1.0) | (samples > 1.0)))
    if clipped:
        log.warning("write_wav %s: saturated %d samples outside [-1, 1]", path, clipped)

    if format == "pcm16":
        scaled = np.round(np.clip(samples, -1.0, 1.0) * 32768.0)
        body = np.clip(scaled, -32768, 32767).astype("<i2").tobytes()
        format_tag, bits = _FORMAT_PCM, 16
    elif format == "float32":
        body = np.clip(samples, -1.0, 1.0).astype("<f4").tobytes()
        format_tag, bits = _FORMAT_IEEE_FLOAT, 32
    else:
        raise ConfigError(f"unknown wav format {format!r} (pcm16 or float32)")

    block_align = bits // 8
    header = b"".join([
        b"RIFF",
        struct.pack("<I", 36 + len(body)),
        b"WAVE",
        b"fmt ",
        struct.pack("<IHHIIHH", 16, format_tag, 1, w.sample_rate_hz,
                    w.sample_rate_hz * block_align, block_align, bits),
        b"data",
        struct.pack("<I", len(body)),
    ])
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(body)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return clipped


def resample(w: Waveform, target_hz: int) -> Waveform:
    """Polyphase resampling with a Kaiser-windowed sinc kernel.

    The anti-alias low-pass sits at min(source, target)/2. Output length is
    round(T * target / source) and the kernel's group delay is compensated
    so the output stays time-aligned with the input.
    """
    target_hz = int(target_hz)
    if target_hz <= 0:
        raise ConfigError(f"target rate must be positive, got {target_hz}")
    source_hz = w.sample_rate_hz
    if target_hz == source_hz:
        return Waveform(w.samples.copy(), source_hz)

    g = gcd(source_hz, target_hz)
    up, down = target_hz // g, source_hz // g
    half = (_TAPS_PER_PHASE // 2) * max(up, down)
    n = np.arange(2 * half + 1) - half
    cutoff = 1.0 / (2 * max(up, down))  # cycles/sample at the upsampled rate
    kernel = 2 * cutoff * np.sinc(2 * cutoff * n) * np.kaiser(2 * half + 1, _KAISER_BETA)
    kernel *= up  # compensate zero-stuffing gain

    # Pad the kernel front so the group delay lands on the output grid.
    pad_front = (-half) % down
    kernel = np.concatenate([np.zeros(pad_front), kernel])
    delay_out = (half + pad_front) // down

    out_len = max(1, int(round(len(w) * target_hz / source_hz)))
    y = upfirdn(kernel, w.samples, up, down)[delay_out:delay_out + out_len]
    if len(y) < out_len:
        y = np.pad(y, (0, out_len - len(y)))
    return Waveform(y, target_hz)
