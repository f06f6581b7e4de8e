"""Batch command-line interface.

Subcommands: train-codec, build-corpus, train-udse, enhance, eval, ablate.
Each run validates its config, locks the work directory, writes artifacts
atomically, and finishes by writing a DONE marker plus a run log with the
resolved config and content hashes of its inputs.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from filelock import FileLock

from . import __version__
from .audio_io import read_wav, write_wav
from .codec import load_codec, save_codec, train_codec
from .config import (RunConfig, default_config, load_config, render_config,
                     validate_config)
from .corpus import build_corpus, load_pairs, read_manifest, synthesize_clean_corpus
from .errors import (ConfigError, DegenerateInput, IoError, ParseError,
                     RangeError, UdseError, UnsupportedFormat)
from .metrics import evaluate_corpus, token_accuracy, write_report
from .model import ModelConfig, UdseModel, enhance, load_model, make_variant, \
    save_model, train_model

log = logging.getLogger("udse")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_run_log(work_dir: Path, command: str, cfg: RunConfig, inputs) -> None:
    logs = work_dir / "logs"
    logs.mkdir(parents=True, exist_ok=True)
    lines = [f"# udse {__version__} run log", f"command = {command}",
             f"timestamp = {time.strftime('%Y-%m-%dT%H:%M:%S')}", ""]
    for label, path in inputs:
        path = Path(path)
        digest = _sha256_file(path) if path.is_file() else "missing"
        lines.append(f"input {label} = {path} sha256={digest}")
    lines += ["", "# resolved config", render_config(cfg)]
    (logs / f"{command}.log").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _mark_done(work_dir: Path, command: str) -> None:
    logs = work_dir / "logs"
    logs.mkdir(parents=True, exist_ok=True)
    (logs / f"{command}.DONE").write_text("DONE\n", encoding="utf-8")


def _model_config(cfg: RunConfig) -> ModelConfig:
    m = cfg.model
    return ModelConfig(
        channels=m.channels, heads=m.heads, global_blocks=m.global_blocks,
        predictor_blocks=m.predictor_blocks, ffn_expansion=m.ffn_expansion,
        conv_kernel=m.conv_kernel, parallel_mode=m.parallel_mode,
        global_condition_first_only=m.global_condition_first_only,
        fuse_mode=m.fuse_mode, init_seed=m.init_seed)


def _resolve_clean_files(cfg: RunConfig, work_dir: Path):
    """Returns (train_files, test_files), synthesizing a clean corpus under
    the work dir when the config asks for one."""
    needed = cfg.data.train_count + cfg.data.test_count
    if cfg.data.synthesize_clean > 0:
        clean_dir = work_dir / "clean"
        count = max(cfg.data.synthesize_clean, needed)
        files = synthesize_clean_corpus(clean_dir, count, cfg.data.seed,
                                        cfg.data.clip_seconds, cfg.codec.sample_rate)
    else:
        clean_dir = Path(cfg.data.clean_dir)
        files = sorted(clean_dir.glob("*.wav"))
    if len(files) < needed:
        raise ConfigError(
            f"need {needed} clean files (train {cfg.data.train_count} + test "
            f"{cfg.data.test_count}), found {len(files)} in {clean_dir}")
    train = files[:cfg.data.train_count]
    test = files[cfg.data.train_count:needed]
    return train, test


def _paths(cfg: RunConfig):
    work = Path(cfg.data.work_dir)
    return {
        "work": work,
        "codec": work / "codec.udsecdc",
        "model": work / "model.udsenn",
        "corpus_train": work / "corpus" / "train",
        "corpus_test": work / "corpus" / "test",
        "report": work / "report.tsv",
    }


def cmd_train_codec(cfg: RunConfig) -> int:
    validate_config(cfg, require_clean_dir=True)
    p = _paths(cfg)
    p["work"].mkdir(parents=True, exist_ok=True)
    with FileLock(str(p["work"] / ".lock")):
        train_files, _ = _resolve_clean_files(cfg, p["work"])
        waves = [read_wav(f) for f in train_files]
        codec = train_codec(waves, cfg.codec.num_stages, cfg.codec.codebook_size,
                            cfg.codec.frame_length, cfg.data.seed)
        save_codec(codec, p["codec"])
        _write_run_log(p["work"], "train-codec", cfg,
                       [("clean", f) for f in train_files[:8]])
        _mark_done(p["work"], "train-codec")
    log.info("codec checkpoint written to %s", p["codec"])
    return EXIT_OK


def cmd_build_corpus(cfg: RunConfig) -> int:
    validate_config(cfg, require_clean_dir=True)
    p = _paths(cfg)
    p["work"].mkdir(parents=True, exist_ok=True)
    with FileLock(str(p["work"] / ".lock")):
        train_files, test_files = _resolve_clean_files(cfg, p["work"])
        codec_path = p["codec"] if p["codec"].is_file() else None
        for split, files, out in (("train", train_files, p["corpus_train"]),
                                  ("test", test_files, p["corpus_test"])):
            if not files:
                log.info("%s split has no clean files; skipped", split)
                continue
            split_seed = cfg.data.seed * 2 + (0 if split == "train" else 1)
            manifest = build_corpus(files[0].parent, cfg.data.recipe, split,
                                    split_seed, out, codec_path=codec_path,
                                    files=files)
            ok = len(manifest.ok_entries)
            log.info("%s corpus: %d ok / %d entries -> %s", split, ok,
                     len(manifest.entries), out)
        inputs = [("codec", p["codec"])] if codec_path else []
        _write_run_log(p["work"], "build-corpus", cfg, inputs)
        _mark_done(p["work"], "build-corpus")
    return EXIT_OK


def cmd_train_udse(cfg: RunConfig) -> int:
    validate_config(cfg)
    p = _paths(cfg)
    if not p["codec"].is_file():
        raise ConfigError(f"missing codec checkpoint {p['codec']}; run train-codec first")
    manifest_path = p["corpus_train"] / "manifest.tsv"
    if not manifest_path.is_file():
        raise ConfigError(f"missing corpus manifest {manifest_path}; run build-corpus first")
    with FileLock(str(p["work"] / ".lock")):
        codec = load_codec(p["codec"])
        pairs = load_pairs(read_manifest(manifest_path))
        model = UdseModel(_model_config(cfg), codec)
        train_log = train_model(model, codec, pairs,
                                cfg.optimizer_config(num_pairs=len(pairs)),
                                seed=cfg.data.seed)
        save_model(model, p["model"])
        (p["work"] / "train_metrics.json").write_text(
            json.dumps(train_log.as_dict(), indent=2) + "\n", encoding="utf-8")
        _write_run_log(p["work"], "train-udse", cfg,
                       [("codec", p["codec"]), ("manifest", manifest_path)])
        _mark_done(p["work"], "train-udse")
    log.info("model checkpoint written to %s (loss %0.4f -> %0.4f)",
             p["model"], train_log.initial_loss, train_log.final_loss)
    return EXIT_OK


def cmd_enhance(cfg: RunConfig, in_path: str, out_path: str) -> int:
    validate_config(cfg)
    p = _paths(cfg)
    codec = load_codec(p["codec"])
    model = load_model(p["model"], codec)
    degraded = read_wav(in_path)
    enhanced = enhance(model, codec, degraded, seed=cfg.data.seed)
    write_wav(enhanced, out_path, format="pcm16")
    log.info("enhanced %s -> %s", in_path, out_path)
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    validate_config(cfg)
    p = _paths(cfg)
    manifest_path = p["corpus_test"] / "manifest.tsv"
    codec = load_codec(p["codec"])
    model = load_model(p["model"], codec)
    manifest = read_manifest(manifest_path)
    report = evaluate_corpus(manifest, model, codec, seed=cfg.data.seed)
    write_report(report, p["report"])
    _write_run_log(p["work"], "eval", cfg,
                   [("codec", p["codec"]), ("model", p["model"]),
                    ("manifest", manifest_path)])
    _mark_done(p["work"], "eval")
    agg = report.aggregates()
    log.info("eval: %d records, mean si-snr %.2f dB (noisy %.2f dB), report %s",
             len(report.records), agg["si_snr_db"]["mean"],
             agg["noisy_si_snr_db"]["mean"], p["report"])
    return EXIT_OK


def cmd_ablate(cfg: RunConfig, variant_name: str) -> int:
    """Train the sequential baseline and one ablation variant on the same
    corpus and seeds, evaluate both, and emit a paired comparison table."""
    validate_config(cfg, require_clean_dir=True)
    variant = {"parallel": "parallel",
               "global-condition": "global-first-only"}.get(variant_name)
    if variant is None:
        raise ConfigError(f"unknown ablation variant {variant_name!r} "
                          "(parallel or global-condition)")
    p = _paths(cfg)
    p["work"].mkdir(parents=True, exist_ok=True)
    with FileLock(str(p["work"] / ".lock")):
        if not p["codec"].is_file():
            cmd_train_codec(cfg)
        if not (p["corpus_train"] / "manifest.tsv").is_file():
            cmd_build_corpus(cfg)
        codec = load_codec(p["codec"])
        pairs = load_pairs(read_manifest(p["corpus_train"] / "manifest.tsv"))
        test_manifest = read_manifest(p["corpus_test"] / "manifest.tsv")
        base_cfg = _model_config(cfg)
        results = {}
        for name in ("sequential", variant):
            ckpt = p["work"] / f"model_{name}.udsenn"
            if ckpt.is_file():
                log.info("reusing trained %s model from %s", name, ckpt)
                model = load_model(ckpt, codec)
            else:
                model = UdseModel(make_variant(base_cfg, name), codec)
                train_model(model, codec, pairs,
                            cfg.optimizer_config(num_pairs=len(pairs)),
                            seed=cfg.data.seed)
                save_model(model, ckpt)
            report = evaluate_corpus(test_manifest, model, codec, seed=cfg.data.seed)
            results[name] = report.aggregates()["stage_accuracy_mean"]

        base_acc = results["sequential"]
        var_acc = results[variant]
        lines = [f"# ablation comparison: sequential vs {variant}",
                 "stage\tsequential\tvariant\tdelta"]
        for i, (b, v) in enumerate(zip(base_acc, var_acc), start=1):
            lines.append(f"{i}\t{b:.6f}\t{v:.6f}\t{b - v:+.6f}")
        mean_b = sum(base_acc) / len(base_acc)
        mean_v = sum(var_acc) / len(var_acc)
        lines.append(f"mean\t{mean_b:.6f}\t{mean_v:.6f}\t{mean_b - mean_v:+.6f}")
        table = "\n".join(lines) + "\n"
        out = p["work"] / f"ablation_{variant}.tsv"
        out.write_text(table, encoding="utf-8")
        print(table, end="")
        _write_run_log(p["work"], f"ablate-{variant}", cfg, [("codec", p["codec"])])
        _mark_done(p["work"], f"ablate-{variant}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="udse",
        description="Discrete-token speech enhancement pipeline")
    parser.add_argument("--config", help="path to a flat key=value config file")
    parser.add_argument("--seed", type=int, help="override data.seed")
    parser.add_argument("--threads", type=int, help="limit BLAS thread count")
    parser.add_argument("--profile", choices=("desk", "paper"), default="desk",
                        help="base hyperparameter profile")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train-codec", "build-corpus", "train-udse", "eval"):
        sub.add_parser(name)
    enh = sub.add_parser("enhance")
    enh.add_argument("input")
    enh.add_argument("output")
    abl = sub.add_parser("ablate")
    abl.add_argument("variant", choices=("parallel", "global-condition"))
    return parser


def _limit_threads(count: int) -> None:
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(count)
    except ImportError:
        log.warning("threadpoolctl not installed; --threads ignored")


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = default_config(args.profile)
        if args.config:
            cfg = load_config(args.config, base=cfg)
        if args.seed is not None:
            cfg = replace(cfg, data=replace(cfg.data, seed=args.seed))
        if args.threads:
            _limit_threads(args.threads)

        if args.command == "train-codec":
            return cmd_train_codec(cfg)
        if args.command == "build-corpus":
            return cmd_build_corpus(cfg)
        if args.command == "train-udse":
            return cmd_train_udse(cfg)
        if args.command == "enhance":
            return cmd_enhance(cfg, args.input, args.output)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "ablate":
            return cmd_ablate(cfg, args.variant)
        raise ConfigError(f"unhandled command {args.command}")
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (ParseError, UnsupportedFormat, DegenerateInput, RangeError, IoError,
            FileNotFoundError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except UdseError as exc:
        log.error("runtime failure: %s", exc)
        return EXIT_RUNTIME
    except Exception as exc:  # keep the contractually defined exit code
        log.error("runtime failure: %s", exc, exc_info=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
