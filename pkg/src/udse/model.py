"""The enhancement model: global feature extraction from degraded speech,
a cascade of per-stage token predictors, teacher-forced training, and
end-to-end enhancement.

The cascade mirrors the codec's residual structure: stage 1 starts from a
random token row looked up in a model-private codebook, and every later
stage consumes the summed codeword lookups of the stages before it,
conditioned on the global features. Training feeds ground-truth clean
tokens to that summation (teacher forcing); inference feeds the cascade's
own greedy picks. Both paths share one code path, so they are bit-identical
whenever the tokens agree.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import codec as codec_mod
from . import layers, nn
from .audio_io import Waveform
from .codec import RvqCodebooks, codec_digest
from .errors import ConfigError, ParseError, RangeError
from .layers import ParameterStore
from .nn import Tensor2
from .optim import AdamW, OptimizerConfig

MODEL_MAGIC = b"UDSENN01"
_FLAG_PARALLEL = 1
_FLAG_GLOBAL_FIRST_ONLY = 2
_FLAG_FUSE_ADD = 4


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 64
    heads: int = 4
    global_blocks: int = 2
    predictor_blocks: int = 2
    ffn_expansion: int = 4
    conv_kernel: int = 7
    parallel_mode: bool = False
    global_condition_first_only: bool = False
    fuse_mode: str = "concat"
    init_seed: int = 0
    dtype: str = "float32"


class UdseModel:
    """Feature processor plus one token predictor per quantizer stage,
    dimensioned against, and bound to, a specific codec."""

    def __init__(self, cfg: ModelConfig, codec: RvqCodebooks):
        if cfg.fuse_mode not in ("concat", "add"):
            raise ConfigError(f"fuse_mode must be concat or add, got {cfg.fuse_mode!r}")
        self.cfg = cfg
        self.num_stages = codec.num_stages
        self.codebook_size = codec.codebook_size
        self.feature_dim = codec.feature_dim
        self.codec_digest = codec_digest(codec)

        rng = np.random.default_rng(np.random.SeedSequence([0xD0DE, int(cfg.init_seed)]))
        # the random stage-0 codebook is drawn first so it is stable under
        # any later architecture change
        w0 = rng.standard_normal((self.codebook_size, self.feature_dim)).astype(np.float32)
        w0.flags.writeable = False
        self.init_codebook = w0

        store = ParameterStore(rng, dtype=np.dtype(cfg.dtype))
        c, k = cfg.channels, self.feature_dim
        store.dense("fp.proj", c, (self.num_stages + 1) * k)
        for i in range(cfg.global_blocks):
            layers.register_conformer_block(store, f"fp.block{i}", c, cfg.heads,
                                            cfg.ffn_expansion, cfg.conv_kernel)
        proj_in = k + c if cfg.fuse_mode == "concat" else k
        for n in range(1, self.num_stages + 1):
            store.dense(f"tp{n}.proj", c, proj_in)
            for i in range(cfg.predictor_blocks):
                layers.register_conformer_block(store, f"tp{n}.block{i}", c, cfg.heads,
                                                cfg.ffn_expansion, cfg.conv_kernel)
            store.dense(f"tp{n}.head", self.codebook_size, c)
        self.store = store

    @property
    def params(self):
        return self.store.params

    def parameter_count(self):
        return sum(p.values.size for p in self.params.values())


# ---------------------------------------------------------------------------
# Forward passes

def _fp_forward(model: UdseModel, fp_input: Tensor2) -> Tensor2:
    h = layers.dense(model.params, "fp.proj", fp_input)
    for i in range(model.cfg.global_blocks):
        h = layers.conformer_block(model.params, f"fp.block{i}", h, model.cfg.heads)
    return h


def _predictor_forward(model: UdseModel, n: int, stage_input: Tensor2,
                       g_used: Tensor2) -> Tensor2:
    if model.cfg.fuse_mode == "concat":
        h = layers.dense(model.params, f"tp{n}.proj",
                         nn.concat_rows([stage_input, g_used]))
    else:
        h = nn.add(layers.dense(model.params, f"tp{n}.proj", stage_input), g_used)
    for i in range(model.cfg.predictor_blocks):
        h = layers.conformer_block(model.params, f"tp{n}.block{i}", h, model.cfg.heads)
    return layers.dense(model.params, f"tp{n}.head", h)


def _fp_input_matrix(model: UdseModel, features: np.ndarray, per_stage) -> np.ndarray:
    if len(per_stage) != model.num_stages:
        raise ConfigError(
            f"expected {model.num_stages} per-stage matrices, got {len(per_stage)}")
    parts = [np.asarray(features)] + [np.asarray(q) for q in per_stage]
    for p in parts:
        if p.shape != parts[0].shape:
            raise ConfigError("feature and per-stage matrices must share (K, L)")
    return np.concatenate(parts, axis=0).astype(model.store.dtype)


def extract_global(model: UdseModel, features: np.ndarray, per_stage) -> np.ndarray:
    """Condense the encoded features plus all per-stage quantizer outputs
    into the (C, L) conditioning matrix."""
    fp_input = _fp_input_matrix(model, features, per_stage)
    return _fp_forward(model, Tensor2(fp_input)).values


def draw_init_tokens(model: UdseModel, num_frames: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([0xD0, int(seed)]))
    return rng.integers(1, model.codebook_size + 1, size=num_frames, dtype=np.int64)


def _run_cascade(model: UdseModel, codec: RvqCodebooks, g_node: Tensor2,
                 init_tokens: np.ndarray, gt: np.ndarray | None = None):
    """Run all stage predictors in order. With `gt` the summed stage inputs
    use ground-truth tokens (teacher forcing); otherwise the stage's own
    greedy predictions. Returns (prob nodes, predicted token rows)."""
    dtype = model.store.dtype
    start_input = codec_mod.lookup(model.init_codebook, init_tokens).astype(dtype)
    zero_g = None
    prob_nodes = []
    preds = []
    running = None
    for n in range(1, model.num_stages + 1):
        if n == 1 or model.cfg.parallel_mode:
            stage_values = start_input
        else:
            stage_values = running
        g_used = g_node
        if model.cfg.global_condition_first_only and n >= 2:
            if zero_g is None:
                zero_g = Tensor2(np.zeros_like(g_node.values))
            g_used = zero_g
        logits = _predictor_forward(model, n, Tensor2(stage_values), g_used)
        probs = nn.softmax_cols(logits)
        prob_nodes.append(probs)
        pred = np.argmax(probs.values, axis=0).astype(np.int64) + 1
        preds.append(pred)
        if n < model.num_stages and not model.cfg.parallel_mode:
            tokens = gt[n - 1] if gt is not None else pred
            stage_lookup = codec_mod.lookup(codec.stages[n - 1], tokens).astype(dtype)
            running = stage_lookup if n == 1 else running + stage_lookup
    return prob_nodes, preds


def predict_tokens(model: UdseModel, codec: RvqCodebooks, global_features: np.ndarray,
                   seed: int, return_probs: bool = False):
    """Greedy sequential decoding: one (N, L) grid of 1-based tokens.
    With return_probs, also returns the per-stage probability grids."""
    g_node = Tensor2(np.asarray(global_features).astype(model.store.dtype))
    init_tokens = draw_init_tokens(model, g_node.cols, seed)
    prob_nodes, preds = _run_cascade(model, codec, g_node, init_tokens, gt=None)
    grid = np.stack(preds, axis=0)
    if return_probs:
        return grid, [p.values for p in prob_nodes]
    return grid


def teacher_forced_logits(model: UdseModel, codec: RvqCodebooks,
                          global_features: np.ndarray, gt: np.ndarray, seed: int):
    """Per-stage probability grids with ground-truth tokens feeding the
    stage inputs. The same seed as inference gives the same start tokens."""
    gt = _check_grid(model, gt)
    g_node = Tensor2(np.asarray(global_features).astype(model.store.dtype))
    init_tokens = draw_init_tokens(model, g_node.cols, seed)
    prob_nodes, _ = _run_cascade(model, codec, g_node, init_tokens, gt=gt)
    return [p.values for p in prob_nodes]


def _check_grid(model: UdseModel, grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.int64)
    if grid.ndim != 2 or grid.shape[0] != model.num_stages:
        raise ConfigError(f"token grid must be ({model.num_stages}, L), got {grid.shape}")
    if grid.size and (grid.min() < 1 or grid.max() > model.codebook_size):
        bad = grid[(grid < 1) | (grid > model.codebook_size)][0]
        raise RangeError(f"token {bad} outside 1..{model.codebook_size}")
    return grid


def udse_loss(prob_grids, gt: np.ndarray) -> float:
    """Mean cross-entropy over all stages and frames of 1-based targets."""
    gt = np.asarray(gt, dtype=np.int64)
    if len(prob_grids) != gt.shape[0]:
        raise ConfigError(f"got {len(prob_grids)} grids for {gt.shape[0]} target rows")
    losses = [nn.cross_entropy(p, gt[n]) for n, p in enumerate(prob_grids)]
    return float(np.mean(losses))


# ---------------------------------------------------------------------------
# Training

@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    stage_accuracy: list
    lr: float


@dataclass
class TrainLog:
    initial_loss: float
    final_loss: float
    epochs: list = field(default_factory=list)

    def as_dict(self):
        return {
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
            "epochs": [vars(e) for e in self.epochs],
        }


def train_model(model: UdseModel, codec: RvqCodebooks, pairs, optim_cfg: OptimizerConfig,
                seed: int = 0) -> TrainLog:
    """Teacher-forced training over (clean, degraded) waveform pairs, one
    utterance per step. The codec is frozen; its content digest is asserted
    unchanged after training."""
    pairs = list(pairs)
    if not pairs:
        raise ConfigError("training needs at least one (clean, degraded) pair")
    digest_before = codec_digest(codec)

    cached = []
    for clean, degraded in pairs:
        if len(clean) != len(degraded) or clean.sample_rate_hz != degraded.sample_rate_hz:
            raise ConfigError("clean/degraded pair differs in length or rate")
        degraded_features = codec_mod.encode(degraded, codec)
        _, per_stage = codec_mod.quantize(codec, degraded_features)
        fp_input = _fp_input_matrix(model, degraded_features, per_stage)
        clean_features = codec_mod.encode(clean, codec)
        gt, _ = codec_mod.quantize(codec, clean_features)
        cached.append((fp_input, gt))

    rng = np.random.default_rng(np.random.SeedSequence([0x7247, int(seed)]))
    optimizer = AdamW(optim_cfg)
    log = TrainLog(initial_loss=float("nan"), final_loss=float("nan"))

    total_steps = optim_cfg.total_steps
    order = np.empty(0, dtype=np.int64)
    epoch = 0
    epoch_losses = []
    epoch_hits = np.zeros(model.num_stages, dtype=np.int64)
    epoch_frames = 0
    last_lr = 0.0

    for step in range(1, total_steps + 1):
        if order.size == 0:
            order = rng.permutation(len(cached))
            epoch += 1
        idx = int(order[0])
        order = order[1:]
        fp_input, gt = cached[idx]
        num_frames = gt.shape[1]

        init_tokens = rng.integers(1, model.codebook_size + 1, size=num_frames,
                                   dtype=np.int64)
        g_node = _fp_forward(model, Tensor2(fp_input))
        prob_nodes, preds = _run_cascade(model, codec, g_node, init_tokens, gt=gt)
        loss_node = nn.mean_tensors(
            [nn.cross_entropy_graph(p, gt[n]) for n, p in enumerate(prob_nodes)])
        loss = float(loss_node.values)
        if step == 1:
            log.initial_loss = loss

        model.store.zero_grads()
        loss_node.backward()
        last_lr = optimizer.step(model.params)

        epoch_losses.append(loss)
        for n in range(model.num_stages):
            epoch_hits[n] += int(np.sum(preds[n] == gt[n]))
        epoch_frames += num_frames
        if order.size == 0 or step == total_steps:
            log.epochs.append(EpochRecord(
                epoch=epoch,
                mean_loss=float(np.mean(epoch_losses)),
                stage_accuracy=[float(h / max(epoch_frames, 1)) for h in epoch_hits],
                lr=float(last_lr),
            ))
            epoch_losses = []
            epoch_hits[:] = 0
            epoch_frames = 0
        if step == total_steps:
            log.final_loss = loss

    if codec_digest(codec) != digest_before:
        raise ConfigError("codec parameters changed during training (freeze violated)")
    return log


# ---------------------------------------------------------------------------
# End-to-end enhancement

def enhance(model: UdseModel, codec: RvqCodebooks, degraded: Waveform, seed: int = 0,
            override_tokens: np.ndarray | None = None) -> Waveform:
    """Full pipeline: encode and quantize the degraded input, extract the
    conditioning features, predict clean tokens, decode. `override_tokens`
    substitutes a known grid (oracle diagnostics)."""
    if degraded.sample_rate_hz != codec.sample_rate_hz:
        raise ConfigError("input rate does not match the codec")
    features = codec_mod.encode(degraded, codec)
    _, per_stage = codec_mod.quantize(codec, features)
    if override_tokens is not None:
        grid = _check_grid(model, override_tokens)
    else:
        global_features = extract_global(model, features, per_stage)
        grid = predict_tokens(model, codec, global_features, seed)
    return codec_mod.decode(codec, grid, num_samples=len(degraded))


# ---------------------------------------------------------------------------
# Model checkpoints: magic, architecture header, codec digest, named
# float32 parameter blocks, trailing payload checksum.

def save_model(model: UdseModel, path) -> None:
    cfg = model.cfg
    flags = (_FLAG_PARALLEL * cfg.parallel_mode
             | _FLAG_GLOBAL_FIRST_ONLY * cfg.global_condition_first_only
             | _FLAG_FUSE_ADD * (cfg.fuse_mode == "add"))
    header = struct.pack(
        "<IIIIIIIIIIBQ", 1, model.num_stages, model.codebook_size, model.feature_dim,
        cfg.channels, cfg.heads, cfg.global_blocks, cfg.predictor_blocks,
        cfg.ffn_expansion, cfg.conv_kernel, flags,
        int(cfg.init_seed) & 0xFFFFFFFFFFFFFFFF)
    blocks = [("init_codebook", model.init_codebook)]
    blocks += [(name, p.values) for name, p in model.params.items()]
    chunks = [header, model.codec_digest, struct.pack("<I", len(blocks))]
    for name, values in blocks:
        encoded = name.encode("utf-8")
        arr = np.ascontiguousarray(values, dtype="<f4")
        rows, cols = arr.shape
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<II", rows, cols))
        chunks.append(arr.tobytes())
    payload = b"".join(chunks)
    checksum = hashlib.sha256(payload).digest()[:8]
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(payload)
        f.write(checksum)
    os.replace(tmp, path)


def load_model(path, codec: RvqCodebooks) -> UdseModel:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != MODEL_MAGIC:
        raise ParseError(f"bad model magic {data[:8]!r}", offset=0)
    payload, checksum = data[8:-8], data[-8:]
    if hashlib.sha256(payload).digest()[:8] != checksum:
        raise ParseError("model checkpoint checksum mismatch", offset=len(data) - 8)
    (version, n, m, k, channels, heads, bg, bt, ffn, ck, flags, init_seed
     ) = struct.unpack_from("<IIIIIIIIIIBQ", payload, 0)
    if version != 1:
        raise ParseError(f"unsupported model checkpoint version {version}", offset=8)
    offset = struct.calcsize("<IIIIIIIIIIBQ")
    stored_digest = payload[offset:offset + 32]
    offset += 32

    actual_digest = codec_digest(codec)
    if stored_digest != actual_digest:
        raise ConfigError(
            "model was trained against a different codec: checkpoint digest "
            f"{stored_digest.hex()} != supplied codec digest {actual_digest.hex()}")
    if (n, m, k) != (codec.num_stages, codec.codebook_size, codec.feature_dim):
        raise ConfigError("model dimensions do not match the supplied codec")

    cfg = ModelConfig(
        channels=channels, heads=heads, global_blocks=bg, predictor_blocks=bt,
        ffn_expansion=ffn, conv_kernel=ck,
        parallel_mode=bool(flags & _FLAG_PARALLEL),
        global_condition_first_only=bool(flags & _FLAG_GLOBAL_FIRST_ONLY),
        fuse_mode="add" if flags & _FLAG_FUSE_ADD else "concat",
        init_seed=init_seed, dtype="float32")
    model = UdseModel(cfg, codec)

    (num_blocks,) = struct.unpack_from("<I", payload, offset)
    offset += 4
    for _ in range(num_blocks):
        (name_len,) = struct.unpack_from("<H", payload, offset)
        offset += 2
        name = payload[offset:offset + name_len].decode("utf-8")
        offset += name_len
        rows, cols = struct.unpack_from("<II", payload, offset)
        offset += 8
        count = rows * cols
        values = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        values = values.reshape(rows, cols)
        if name == "init_codebook":
            arr = values.copy()
            arr.flags.writeable = False
            model.init_codebook = arr
        elif name in model.params:
            if model.params[name].values.shape != (rows, cols):
                raise ParseError(f"parameter {name} has unexpected shape", offset=offset)
            model.params[name].values = values.astype(model.store.dtype)
        else:
            raise ParseError(f"unknown parameter block {name!r}", offset=offset)
    return model


def make_variant(cfg: ModelConfig, variant: str) -> ModelConfig:
    """Named ablation variants of a base configuration."""
    if variant == "sequential":
        return replace(cfg, parallel_mode=False, global_condition_first_only=False)
    if variant == "parallel":
        return replace(cfg, parallel_mode=True, global_condition_first_only=False)
    if variant == "global-first-only":
        return replace(cfg, parallel_mode=False, global_condition_first_only=True)
    raise ConfigError(f"unknown ablation variant {variant!r}")
