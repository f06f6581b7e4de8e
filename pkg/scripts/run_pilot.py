#!/usr/bin/env python3
"""Pilot runs backing the acceptance thresholds.

Drives the CLI end to end on the desk configuration and records the
numbers the acceptance suite pins against:

  * overfit: 4-utterance denoising corpus, 200 steps; loss ratio and
    stage-1 token accuracy.
  * end_to_end: 200/40-clip denoising corpus, 2000 steps; fraction of
    held-out clips where enhancement beats the degraded input on SI-SNR.
  * ablation: sequential vs parallel prediction and full vs first-stage
    global conditioning on the dn+bwe benchmark; mean token accuracies.

Results land in scripts/pilot_results.json (committed with the repo).

    python scripts/run_pilot.py [--workdir DIR]
"""

import argparse
import json
import sys
import time
from pathlib import Path

from udse.cli import main as udse_main

OVERFIT_CFG = """
[optim]
lr = 0.002
warmup_steps = 25
total_steps = 200

[data]
work_dir = {work}
recipe = dn
seed = 3
train_count = 4
test_count = 0
synthesize_clean = 4
"""

END_TO_END_CFG = """
[optim]
lr = 0.002
warmup_steps = 25
total_steps = 2000

[data]
work_dir = {work}
recipe = dn
seed = 3
train_count = 200
test_count = 40
synthesize_clean = 240
"""

ABLATION_CFG = """
[optim]
lr = 0.002
warmup_steps = 25
total_steps = 1200

[data]
work_dir = {work}
recipe = dn+bwe
seed = 3
train_count = 200
test_count = 40
synthesize_clean = 240
"""


def _run(cfg_text, workdir, commands):
    workdir.mkdir(parents=True, exist_ok=True)
    cfg_path = workdir / "run.cfg"
    cfg_path.write_text(cfg_text.format(work=workdir / "work"))
    for command in commands:
        code = udse_main(["--config", str(cfg_path)] + command)
        if code != 0:
            raise SystemExit(f"{command} failed with exit code {code}")
    return workdir / "work"


def parse_report_aggregates(report_path):
    out = {}
    for line in Path(report_path).read_text().splitlines():
        if line.startswith("# improvement_fraction"):
            out["improvement_fraction"] = float(line.split("\t")[1])
        if line.startswith("# si_snr_db"):
            out["si_snr_mean"] = float(line.split("\t")[1].split("=")[1])
        if line.startswith("# noisy_si_snr_db"):
            out["noisy_si_snr_mean"] = float(line.split("\t")[1].split("=")[1])
    return out


def parse_ablation_table(path):
    lines = Path(path).read_text().splitlines()
    mean_line = [l for l in lines if l.startswith("mean\t")][0]
    _, base, variant, delta = mean_line.split("\t")
    return {"sequential_mean_acc": float(base), "variant_mean_acc": float(variant),
            "delta": float(delta)}


def overfit_pilot(root):
    t0 = time.time()
    work = _run(OVERFIT_CFG, root / "overfit", [["train-codec"], ["build-corpus"],
                                                ["train-udse"]])
    metrics = json.loads((work / "train_metrics.json").read_text())
    return {
        "initial_loss": metrics["initial_loss"],
        "final_loss": metrics["final_loss"],
        "loss_ratio": metrics["final_loss"] / metrics["initial_loss"],
        "stage1_accuracy": metrics["epochs"][-1]["stage_accuracy"][0],
        "chance_accuracy": 1 / 64,
        "wall_seconds": time.time() - t0,
    }


def end_to_end_pilot(root):
    t0 = time.time()
    work = _run(END_TO_END_CFG, root / "end_to_end",
                [["train-codec"], ["build-corpus"], ["train-udse"], ["eval"]])
    result = parse_report_aggregates(work / "report.tsv")
    result["wall_seconds"] = time.time() - t0
    return result


def ablation_pilot(root):
    t0 = time.time()
    work = _run(ABLATION_CFG, root / "ablation",
                [["ablate", "parallel"], ["ablate", "global-condition"]])
    return {
        "parallel": parse_ablation_table(work / "ablation_parallel.tsv"),
        "global_condition": parse_ablation_table(
            work / "ablation_global-first-only.tsv"),
        "wall_seconds": time.time() - t0,
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="runs/pilot")
    parser.add_argument("--out", default=Path(__file__).parent / "pilot_results.json")
    args = parser.parse_args()
    root = Path(args.workdir)

    results = {"overfit": overfit_pilot(root)}
    print(json.dumps(results["overfit"], indent=2))
    results["end_to_end"] = end_to_end_pilot(root)
    print(json.dumps(results["end_to_end"], indent=2))
    results["ablation"] = ablation_pilot(root)
    print(json.dumps(results["ablation"], indent=2))

    Path(args.out).write_text(json.dumps(results, indent=2) + "\n")
    print(f"pilot results written to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
