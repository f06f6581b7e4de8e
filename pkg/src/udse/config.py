"""Run configuration: a flat key = value format with [section] headers.

Unknown sections or keys are rejected with their line numbers, values are
coerced against the dataclass field types, and a rendered config re-parses
to an identical value, which keeps run logs replayable.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .optim import OptimizerConfig


@dataclass
class CodecSection:
    num_stages: int = 8
    codebook_size: int = 64
    feature_dim: int = 40
    frame_length: int = 80
    sample_rate: int = 16000


@dataclass
class ModelSection:
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


@dataclass
class OptimSection:
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.01
    warmup_steps: int = 25
    total_steps: int = 2000
    epochs: int = 0


@dataclass
class DataSection:
    clean_dir: str = "data/clean"
    work_dir: str = "runs/default"
    recipe: str = "dn"
    seed: int = 0
    train_count: int = 200
    test_count: int = 40
    clip_seconds: float = 0.5
    synthesize_clean: int = 0


@dataclass
class RunConfig:
    codec: CodecSection = field(default_factory=CodecSection)
    model: ModelSection = field(default_factory=ModelSection)
    optim: OptimSection = field(default_factory=OptimSection)
    data: DataSection = field(default_factory=DataSection)

    def optimizer_config(self, num_pairs: int | None = None) -> OptimizerConfig:
        total = self.optim.total_steps
        if self.optim.epochs > 0 and num_pairs:
            total = self.optim.epochs * num_pairs
        return OptimizerConfig(
            lr=self.optim.lr, beta1=self.optim.beta1, beta2=self.optim.beta2,
            weight_decay=self.optim.weight_decay,
            warmup_steps=self.optim.warmup_steps, total_steps=total)


# The paper-scale profile documents full-size hyperparameters; it is not
# meant to run in CI.
PAPER_PROFILE = RunConfig(
    codec=CodecSection(num_stages=9, codebook_size=1024, feature_dim=1024,
                       frame_length=2048, sample_rate=44100),
    model=ModelSection(channels=512, heads=8, global_blocks=8, predictor_blocks=4),
    optim=OptimSection(lr=5e-4, beta1=0.9, beta2=0.95, weight_decay=0.01,
                       warmup_steps=4000, total_steps=200000, epochs=100),
)


def default_config(profile: str = "desk") -> RunConfig:
    if profile == "desk":
        return RunConfig()
    if profile == "paper":
        return replace(PAPER_PROFILE)
    raise ConfigError(f"unknown profile {profile!r} (desk or paper)")


_SECTIONS = {"codec": CodecSection, "model": ModelSection,
             "optim": OptimSection, "data": DataSection}


def _coerce(raw: str, ftype, where: str):
    raw = raw.strip()
    if ftype is bool:
        lowered = raw.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{where}: expected a boolean, got {raw!r}")
    try:
        if ftype is int:
            return int(raw)
        if ftype is float:
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    return raw


def parse_config(text: str, base: RunConfig | None = None, source: str = "<config>") -> RunConfig:
    """Parse flat sectioned key = value text over an optional base config."""
    cfg = base if base is not None else RunConfig()
    sections = {name: dict() for name in _SECTIONS}
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith(("#", ";")):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            name = stripped[1:-1].strip()
            if name not in _SECTIONS:
                raise ConfigError(f"{source}:{lineno}: unknown section [{name}]")
            current = name
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        if current is None:
            raise ConfigError(f"{source}:{lineno}: key outside any [section]")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        section_cls = _SECTIONS[current]
        types = {f.name: f.type for f in fields(section_cls)}
        resolved = {"int": int, "float": float, "bool": bool, "str": str}
        ftype = types.get(key)
        if ftype is None:
            raise ConfigError(f"{source}:{lineno}: unknown key {current}.{key}")
        if isinstance(ftype, str):
            ftype = resolved[ftype]
        sections[current][key] = _coerce(raw, ftype, f"{source}:{lineno}: {current}.{key}")

    return RunConfig(
        codec=replace(cfg.codec, **sections["codec"]),
        model=replace(cfg.model, **sections["model"]),
        optim=replace(cfg.optim, **sections["optim"]),
        data=replace(cfg.data, **sections["data"]),
    )


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    return parse_config(text, base=base, source=str(path))


def render_config(cfg: RunConfig) -> str:
    """Flat text that parse_config maps back to an identical RunConfig."""
    out = []
    for section_name, section in (("codec", cfg.codec), ("model", cfg.model),
                                  ("optim", cfg.optim), ("data", cfg.data)):
        out.append(f"[{section_name}]")
        for key, value in asdict(section).items():
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            out.append(f"{key} = {value}")
        out.append("")
    return "\n".join(out)


def validate_config(cfg: RunConfig, require_clean_dir: bool = False) -> None:
    """Cross-field consistency checks; raises ConfigError on the first
    violation."""
    c, m = cfg.codec, cfg.model
    if c.frame_length < 4 or c.frame_length % 2:
        raise ConfigError(f"codec.frame_length must be even and >= 4, got {c.frame_length}")
    if c.feature_dim != c.frame_length // 2:
        raise ConfigError(
            f"codec.feature_dim must equal frame_length/2 "
            f"({c.frame_length // 2}), got {c.feature_dim}")
    if c.num_stages < 1:
        raise ConfigError("codec.num_stages must be >= 1")
    if c.codebook_size < 2:
        raise ConfigError("codec.codebook_size must be >= 2")
    if c.sample_rate <= 0:
        raise ConfigError("codec.sample_rate must be positive")
    if m.channels % m.heads:
        raise ConfigError(
            f"model.channels ({m.channels}) must be divisible by heads ({m.heads})")
    if m.fuse_mode not in ("concat", "add"):
        raise ConfigError(f"model.fuse_mode must be concat or add, got {m.fuse_mode!r}")
    if m.conv_kernel % 2 != 1:
        raise ConfigError("model.conv_kernel must be odd")
    if cfg.optim.lr <= 0:
        raise ConfigError("optim.lr must be positive")
    if cfg.optim.total_steps < 1 and cfg.optim.epochs < 1:
        raise ConfigError("set optim.total_steps or optim.epochs")
    if cfg.data.clip_seconds <= 0:
        raise ConfigError("data.clip_seconds must be positive")
    if require_clean_dir:
        clean = Path(cfg.data.clean_dir)
        if cfg.data.synthesize_clean <= 0 and not clean.is_dir():
            raise ConfigError(f"data.clean_dir does not exist: {clean}")
