"""Transform codec with residual vector quantization.

Analysis is an MDCT with per-dimension z-score normalization; the quantizer
is a cascade of codebooks where each stage encodes the residual left by the
previous stages; synthesis de-normalizes and runs the inverse MDCT.
Codebooks are fit stage by stage with seeded k-means and stored in a
checksummed little-endian checkpoint.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass

import numpy as np

from .audio_io import Waveform
from .dsp import SpectralFrames, imdct, mdct, sine_window
from .errors import ConfigError, ParseError, RangeError

CODEC_MAGIC = b"UDSECDC1"

KMEANS_MAX_ITERS = 50
KMEANS_REL_TOL = 1e-6
MIN_FRAMES_PER_CODEWORD = 10


@dataclass(frozen=True)
class RvqCodebooks:
    """A trained residual quantizer: N stage codebooks of shape (M, K),
    plus the feature normalization and framing metadata.

    Arrays are float32 and marked read-only after training; the codec never
    changes once built.
    """

    stages: tuple
    feature_mean: np.ndarray
    feature_std: np.ndarray
    frame_length: int
    sample_rate_hz: int
    training_seed: int

    def __post_init__(self):
        stages = tuple(np.ascontiguousarray(s, dtype=np.float32) for s in self.stages)
        if not stages:
            raise ConfigError("codec needs at least one quantizer stage")
        m, k = stages[0].shape
        if m < 2:
            raise ConfigError("codebooks need at least 2 codewords")
        for s in stages:
            if s.shape != (m, k):
                raise ConfigError("all quantizer stages must share (M, K)")
            if not np.all(np.isfinite(s)):
                raise ConfigError("codebook entries must be finite")
        mean = np.ascontiguousarray(self.feature_mean, dtype=np.float32)
        std = np.ascontiguousarray(self.feature_std, dtype=np.float32)
        if mean.shape != (k,) or std.shape != (k,):
            raise ConfigError("normalization vectors must have length K")
        for arr in (*stages, mean, std):
            arr.flags.writeable = False
        object.__setattr__(self, "stages", stages)
        object.__setattr__(self, "feature_mean", mean)
        object.__setattr__(self, "feature_std", std)

    @property
    def num_stages(self):
        return len(self.stages)

    @property
    def codebook_size(self):
        return self.stages[0].shape[0]

    @property
    def feature_dim(self):
        return self.stages[0].shape[1]


def encode(w: Waveform, codec: RvqCodebooks) -> np.ndarray:
    """Analysis transform: MDCT frames, z-scored per dimension with the
    codec's stored statistics. Returns a (K, L) float64 matrix."""
    if w.sample_rate_hz != codec.sample_rate_hz:
        raise ConfigError(
            f"waveform rate {w.sample_rate_hz} != codec rate {codec.sample_rate_hz}")
    frames = mdct(w, codec.frame_length).frames
    mean = codec.feature_mean.astype(np.float64)[:, None]
    std = codec.feature_std.astype(np.float64)[:, None]
    return (frames - mean) / std


def quantize_stage(codebook: np.ndarray, features: np.ndarray):
    """Nearest-codeword assignment per column (squared Euclidean distance,
    ties to the lowest index). Tokens are 1-based. Returns (tokens, quantized)."""
    cb = np.asarray(codebook, dtype=np.float64)
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or cb.ndim != 2 or cb.shape[1] != x.shape[0]:
        raise ConfigError(
            f"feature dim {x.shape} incompatible with codebook {cb.shape}")
    # ||x - w||^2 = ||w||^2 - 2 w.x + const(column); the constant cannot
    # change the argmin, so it is omitted.
    scores = (cb ** 2).sum(axis=1)[:, None] - 2.0 * (cb @ x)
    tokens = np.argmin(scores, axis=0).astype(np.int64) + 1
    return tokens, cb[tokens - 1].T


def quantize(codec: RvqCodebooks, features: np.ndarray):
    """Run the residual cascade: stage 1 consumes the features, stage n the
    residual of stage n-1. Returns (token grid (N, L), per-stage quantized
    outputs)."""
    residual = np.asarray(features, dtype=np.float64)
    rows = []
    per_stage = []
    for stage in codec.stages:
        tokens, quantized = quantize_stage(stage, residual)
        rows.append(tokens)
        per_stage.append(quantized)
        residual = residual - quantized
    return np.stack(rows, axis=0), per_stage


def lookup(codebook: np.ndarray, tokens: np.ndarray) -> np.ndarray:
    """Map 1-based tokens to their codewords; returns (K, L)."""
    tokens = np.asarray(tokens, dtype=np.int64)
    m = codebook.shape[0]
    if tokens.size and (tokens.min() < 1 or tokens.max() > m):
        bad = tokens[(tokens < 1) | (tokens > m)][0]
        raise RangeError(f"token {bad} outside 1..{m}")
    return np.asarray(codebook, dtype=np.float64)[tokens - 1].T


def dequantize(codec: RvqCodebooks, grid: np.ndarray, stages_used: int | None = None) -> np.ndarray:
    """Sum the codeword lookups of the first stages_used stages (fixed
    order). Returns a (K, L) feature matrix."""
    grid = np.asarray(grid, dtype=np.int64)
    if grid.ndim != 2:
        raise ConfigError("token grid must be 2-D (stages x frames)")
    if stages_used is None:
        stages_used = grid.shape[0]
    if not 1 <= stages_used <= grid.shape[0] or stages_used > codec.num_stages:
        raise ConfigError(
            f"stages_used {stages_used} outside 1..{min(grid.shape[0], codec.num_stages)}")
    total = lookup(codec.stages[0], grid[0])
    for n in range(1, stages_used):
        total = total + lookup(codec.stages[n], grid[n])
    return total


def decode(codec: RvqCodebooks, grid: np.ndarray, stages_used: int | None = None,
           num_samples: int | None = None) -> Waveform:
    """Synthesis: de-normalize the dequantized features and run the inverse
    MDCT. `num_samples` trims the synthesis padding to a known length."""
    features = dequantize(codec, grid, stages_used)
    mean = codec.feature_mean.astype(np.float64)[:, None]
    std = codec.feature_std.astype(np.float64)[:, None]
    raw = features * std + mean
    half = codec.frame_length // 2
    body = (raw.shape[1] - 1) * half
    if num_samples is None:
        num_samples = body
    if num_samples > body:
        raise ConfigError(f"cannot synthesize {num_samples} samples from {body}")
    frames = SpectralFrames(raw, codec.frame_length, half, sine_window(codec.frame_length),
                            num_samples, codec.sample_rate_hz)
    return imdct(frames)


# ---------------------------------------------------------------------------
# Codebook training

def _kmeans_assign(centers: np.ndarray, points: np.ndarray):
    # points (T, K), centers (M, K); returns labels and full squared distances
    scores = (centers ** 2).sum(axis=1)[None, :] - 2.0 * (points @ centers.T)
    labels = np.argmin(scores, axis=1)
    chosen = scores[np.arange(len(points)), labels] + (points ** 2).sum(axis=1)
    return labels, np.maximum(chosen, 0.0)


def _kmeans_pp_init(points: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    centers = np.empty((m, points.shape[1]))
    centers[0] = points[rng.integers(len(points))]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, m):
        total = d2.sum()
        if total <= 0:
            centers[j] = points[rng.integers(len(points))]
            continue
        idx = int(np.searchsorted(np.cumsum(d2), rng.uniform(0, total)))
        centers[j] = points[min(idx, len(points) - 1)]
        d2 = np.minimum(d2, ((points - centers[j]) ** 2).sum(axis=1))
    return centers


def _kmeans(points: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    centers = _kmeans_pp_init(points, m, rng)
    prev_inertia = np.inf
    for _ in range(KMEANS_MAX_ITERS):
        labels, d2 = _kmeans_assign(centers, points)
        inertia = d2.sum()
        for j in range(m):
            mask = labels == j
            if mask.any():
                centers[j] = points[mask].mean(axis=0)
            else:
                far = int(np.argmax(d2))
                centers[j] = points[far]
                d2[far] = 0.0  # keep later empty clusters from picking the same point
        if prev_inertia - inertia <= KMEANS_REL_TOL * max(prev_inertia, 1e-300):
            break
        prev_inertia = inertia
    return centers


def train_codebooks(feature_matrices, num_stages: int, codebook_size: int, seed: int,
                    frame_length: int = 640, sample_rate_hz: int = 16000,
                    normalization=None) -> RvqCodebooks:
    """Fit the residual cascade stage by stage: k-means with k-means++ init
    on the residuals left by the stages already fit."""
    columns = [np.asarray(f, dtype=np.float64) for f in feature_matrices]
    if not columns:
        raise ConfigError("no feature matrices supplied")
    points = np.concatenate([c.T for c in columns], axis=0)
    if len(points) < MIN_FRAMES_PER_CODEWORD * codebook_size:
        raise ConfigError(
            f"need at least {MIN_FRAMES_PER_CODEWORD * codebook_size} frames to fit "
            f"{codebook_size} codewords, got {len(points)}")

    stages = []
    residual = points
    for stage_index in range(num_stages):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), stage_index]))
        centers = _kmeans(residual, codebook_size, rng)
        stages.append(centers.astype(np.float32))
        labels, _ = _kmeans_assign(centers.astype(np.float32).astype(np.float64), residual)
        residual = residual - centers.astype(np.float32).astype(np.float64)[labels]

    if normalization is None:
        k = points.shape[1]
        normalization = (np.zeros(k, dtype=np.float32), np.ones(k, dtype=np.float32))
    mean, std = normalization
    return RvqCodebooks(tuple(stages), mean, std, frame_length, sample_rate_hz, int(seed))


def train_codec(waveforms, num_stages: int, codebook_size: int, frame_length: int,
                seed: int) -> RvqCodebooks:
    """Train a codec from clean waveforms: compute MDCT features, fit the
    normalization, then fit the codebooks on the normalized frames.

    Normalization subtracts the per-dimension mean but divides by one pooled
    deviation shared across dimensions. Per-dimension scaling would make
    k-means spend its codewords on low-energy dimensions, which measurably
    wrecks waveform fidelity; the pooled scale keeps quantization error
    proportional to actual signal energy.
    """
    waves = list(waveforms)
    if not waves:
        raise ConfigError("codec training needs at least one waveform")
    rate = waves[0].sample_rate_hz
    for w in waves:
        if w.sample_rate_hz != rate:
            raise ConfigError("codec training corpus must share one sample rate")
    raw = [mdct(w, frame_length).frames for w in waves]
    stacked = np.concatenate(raw, axis=1)
    mean = stacked.mean(axis=1)
    std = np.full(stacked.shape[0], max(float(stacked.std()), 1e-6))
    normalized = [(f - mean[:, None]) / std[:, None] for f in raw]
    return train_codebooks(normalized, num_stages, codebook_size, seed,
                           frame_length=frame_length, sample_rate_hz=rate,
                           normalization=(mean.astype(np.float32), std.astype(np.float32)))


# ---------------------------------------------------------------------------
# Checkpoint format: magic, little-endian header, normalization vectors,
# stage codewords, then the first 8 bytes of the payload's SHA-256.

def _codec_payload(codec: RvqCodebooks) -> bytes:
    header = struct.pack(
        "<IIIIIQ", codec.num_stages, codec.codebook_size, codec.feature_dim,
        codec.frame_length, codec.sample_rate_hz, codec.training_seed & 0xFFFFFFFFFFFFFFFF)
    body = [header, codec.feature_mean.astype("<f4").tobytes(),
            codec.feature_std.astype("<f4").tobytes()]
    body.extend(stage.astype("<f4").tobytes() for stage in codec.stages)
    return b"".join(body)


def codec_digest(codec: RvqCodebooks) -> bytes:
    """Stable 32-byte content identity for binding models to codecs."""
    return hashlib.sha256(_codec_payload(codec)).digest()


def save_codec(codec: RvqCodebooks, path) -> None:
    payload = _codec_payload(codec)
    checksum = hashlib.sha256(payload).digest()[:8]
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(CODEC_MAGIC)
        f.write(payload)
        f.write(checksum)
    os.replace(tmp, path)


def load_codec(path) -> RvqCodebooks:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != CODEC_MAGIC:
        raise ParseError(f"bad codec magic {data[:8]!r}", offset=0)
    if len(data) < 8 + 28 + 8:
        raise ParseError("codec checkpoint truncated", offset=len(data))
    payload, checksum = data[8:-8], data[-8:]
    if hashlib.sha256(payload).digest()[:8] != checksum:
        raise ParseError("codec checkpoint checksum mismatch", offset=len(data) - 8)
    n, m, k, frame_length, rate, seed = struct.unpack_from("<IIIIIQ", payload, 0)
    offset = 28
    expected = 2 * k * 4 + n * m * k * 4
    if len(payload) - offset != expected:
        raise ParseError(
            f"codec payload length {len(payload) - offset} != expected {expected}",
            offset=8 + offset)
    mean = np.frombuffer(payload, dtype="<f4", count=k, offset=offset)
    offset += 4 * k
    std = np.frombuffer(payload, dtype="<f4", count=k, offset=offset)
    offset += 4 * k
    stages = []
    for _ in range(n):
        stage = np.frombuffer(payload, dtype="<f4", count=m * k, offset=offset)
        stages.append(stage.reshape(m, k))
        offset += 4 * m * k
    return RvqCodebooks(tuple(stages), mean, std, frame_length, rate, seed)
