"""Deterministic degraded-corpus generation with reproducible manifests.

A recipe names a distortion family; building a corpus resolves each
recipe's random draws (noise kind, SNR, decay time, ...) per entry from
(global seed, entry index), applies the resolved spec, and records
everything in a tab-separated manifest. Re-running generation from the
manifest reproduces every degraded file byte for byte.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import Waveform, read_wav, write_wav
from .distortion import (BandLimit, Clip, Compress, Noise, PhaseDistort, Reverb,
                         SYNTH_NOISE_KINDS, SYNTH_RIR, apply_spec, parse_spec,
                         serialize_spec)
from .errors import ConfigError, UdseError
from .synth import make_clean_utterance

log = logging.getLogger(__name__)

MANIFEST_HEADER = "UDSE-MANIFEST v1"

TRAIN_SNRS_DB = (0.0, 5.0, 10.0, 15.0)
TEST_SNRS_DB = (2.5, 7.5, 12.5, 17.5)

RECIPE_NAMES = ("dn", "dr", "bwe", "dc", "pdr", "cdr",
                "dn+bwe", "dn+dr+bwe", "dn+dr+dc", "dn+pdr+cdr")


def _snr_grid(split: str):
    if split == "train":
        return TRAIN_SNRS_DB
    if split == "test":
        return TEST_SNRS_DB
    raise ConfigError(f"split must be train or test, got {split!r}")


def _draw_noise(rng, split):
    kind = SYNTH_NOISE_KINDS[int(rng.integers(len(SYNTH_NOISE_KINDS)))]
    snr = float(rng.choice(_snr_grid(split)))
    return Noise(source=kind, snr_db=snr)


def _draw_reverb(rng):
    return Reverb(source=SYNTH_RIR, t60_s=float(rng.uniform(0.2, 1.0)))


def _mixed_band_target(sample_rate_hz: int) -> int:
    # the wideband variant keeps 8 kHz content; below 32 kHz rates that
    # breaks the sub-Nyquist requirement, so fall back to a quarter rate
    return 8000 if sample_rate_hz > 32000 else sample_rate_hz // 4


def resolve_recipe(recipe: str, rng: np.random.Generator, sample_rate_hz: int,
                   split: str, codec_path: str | None = None):
    """Turn a recipe name into a concrete ordered list of distortion steps,
    drawing every free parameter from rng."""
    def compress():
        if not codec_path:
            raise ConfigError(f"recipe {recipe!r} needs a codec checkpoint path")
        return Compress(codec_path=str(codec_path), num_stages=1)

    def phase():
        return PhaseDistort(frame_length=512, hop=128,
                            seed=int(rng.integers(0, 2 ** 31)))

    if recipe == "dn":
        return [_draw_noise(rng, split)]
    if recipe == "dr":
        return [_draw_reverb(rng)]
    if recipe == "bwe":
        return [BandLimit(target_hz=2000)]
    if recipe == "dc":
        return [Clip(threshold_fraction=float(rng.uniform(0.1, 0.9)))]
    if recipe == "pdr":
        return [phase()]
    if recipe == "cdr":
        return [compress()]
    if recipe == "dn+bwe":
        return [_draw_noise(rng, split), BandLimit(target_hz=sample_rate_hz // 4)]
    if recipe == "dn+dr+bwe":
        return [_draw_reverb(rng), _draw_noise(rng, split),
                BandLimit(target_hz=_mixed_band_target(sample_rate_hz))]
    if recipe == "dn+dr+dc":
        return [_draw_reverb(rng), _draw_noise(rng, split),
                Clip(threshold_fraction=float(rng.uniform(0.1, 0.9)))]
    if recipe == "dn+pdr+cdr":
        return [_draw_noise(rng, split), phase(), compress()]
    raise ConfigError(f"unknown recipe {recipe!r} (known: {', '.join(RECIPE_NAMES)})")


@dataclass(frozen=True)
class ManifestEntry:
    clean_path: str
    degraded_path: str
    recipe_id: str
    spec: tuple
    seed: int
    status: str = "ok"


@dataclass
class CorpusManifest:
    global_seed: int
    entries: list = field(default_factory=list)
    format_version: int = 1

    @property
    def ok_entries(self):
        return [e for e in self.entries if e.status == "ok"]


def write_manifest(manifest: CorpusManifest, path) -> None:
    lines = [MANIFEST_HEADER, f"global_seed\t{manifest.global_seed}"]
    for e in manifest.entries:
        lines.append("\t".join([
            e.clean_path, e.degraded_path, e.recipe_id,
            serialize_spec(e.spec), str(e.seed), e.status,
        ]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> CorpusManifest:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != MANIFEST_HEADER:
        raise ConfigError(f"{path}: not a corpus manifest (missing {MANIFEST_HEADER!r})")
    if len(lines) < 2 or not lines[1].startswith("global_seed\t"):
        raise ConfigError(f"{path}: missing global_seed line")
    manifest = CorpusManifest(global_seed=int(lines[1].split("\t")[1]))
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 6:
            raise ConfigError(f"{path}:{lineno}: expected 6 tab-separated fields")
        manifest.entries.append(ManifestEntry(
            clean_path=cols[0], degraded_path=cols[1], recipe_id=cols[2],
            spec=tuple(parse_spec(cols[3])), seed=int(cols[4]), status=cols[5]))
    return manifest


def _entry_seed(global_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(global_seed), int(index)])
               .generate_state(1, np.uint64)[0])


def build_corpus(clean_dir, recipes, split: str, seed: int, out_dir,
                 codec_path=None, files=None) -> CorpusManifest:
    """Degrade every clean WAV under clean_dir with every recipe. Writes
    degraded WAVs plus a manifest into out_dir; per-file failures are
    recorded in the manifest and do not stop generation. `files` restricts
    generation to an explicit subset."""
    clean_dir = Path(clean_dir)
    out_dir = Path(out_dir)
    clean_files = [Path(f) for f in files] if files else sorted(clean_dir.glob("*.wav"))
    if not clean_files:
        raise ConfigError(f"no .wav files under {clean_dir}")
    if isinstance(recipes, str):
        recipes = [recipes]
    out_dir.mkdir(parents=True, exist_ok=True)

    manifest = CorpusManifest(global_seed=int(seed))
    index = 0
    for clean_path in clean_files:
        for recipe in recipes:
            entry_seed = _entry_seed(seed, index)
            index += 1
            safe_recipe = recipe.replace("+", "-")
            degraded_path = out_dir / f"{clean_path.stem}__{safe_recipe}.wav"
            try:
                clean = read_wav(clean_path)
                resolution_rng = np.random.default_rng(
                    np.random.SeedSequence([entry_seed, 1]))
                spec = resolve_recipe(recipe, resolution_rng, clean.sample_rate_hz,
                                      split, codec_path)
                degraded = apply_spec(clean, spec, entry_seed)
                write_wav(degraded, degraded_path, format="pcm16")
                status = "ok"
            except (UdseError, OSError) as exc:
                log.warning("corpus entry %s x %s failed: %s", clean_path, recipe, exc)
                spec = ()
                status = f"failed: {exc}"
            manifest.entries.append(ManifestEntry(
                clean_path=str(clean_path), degraded_path=str(degraded_path),
                recipe_id=recipe, spec=tuple(spec), seed=entry_seed, status=status))
    write_manifest(manifest, out_dir / "manifest.tsv")
    return manifest


def regenerate_entry(entry: ManifestEntry) -> Waveform:
    """Recreate one degraded waveform from its manifest record."""
    clean = read_wav(entry.clean_path)
    return apply_spec(clean, list(entry.spec), entry.seed)


def load_pairs(manifest: CorpusManifest):
    """Read the (clean, degraded) waveform pairs of all ok entries."""
    return [(read_wav(e.clean_path), read_wav(e.degraded_path))
            for e in manifest.ok_entries]


def synthesize_clean_corpus(out_dir, count: int, seed: int, duration_s: float = 1.0,
                            sample_rate_hz: int = 16000):
    """Write `count` synthetic clean utterances as 16-bit WAVs. Existing
    files are overwritten so the corpus always matches the seed."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        w = make_clean_utterance(_entry_seed(seed, i), duration_s, sample_rate_hz)
        path = out_dir / f"clean_{i:04d}.wav"
        write_wav(w, path, format="pcm16")
        paths.append(path)
    return paths
