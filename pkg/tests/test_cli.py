"""End-to-end CLI pipeline on a micro configuration."""

import numpy as np
import pytest

from udse.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from udse.audio_io import read_wav, write_wav
from udse.synth import make_clean_utterance

MICRO_CFG = """
[codec]
num_stages = 2
codebook_size = 8
feature_dim = 16
frame_length = 32
sample_rate = 16000

[model]
channels = 8
heads = 2
global_blocks = 1
predictor_blocks = 1

[optim]
lr = 0.002
warmup_steps = 2
total_steps = 12

[data]
work_dir = {work}
recipe = dn
seed = 3
train_count = 4
test_count = 2
clip_seconds = 0.2
synthesize_clean = 6
"""


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run the full micro pipeline once; commands assert exit code 0."""
    root = tmp_path_factory.mktemp("cli")
    work = root / "work"
    cfg_path = root / "run.cfg"
    cfg_path.write_text(MICRO_CFG.format(work=work))
    for command in (["train-codec"], ["build-corpus"], ["train-udse"], ["eval"]):
        code = main(["--config", str(cfg_path)] + command)
        assert code == EXIT_OK, f"{command} exited {code}"
    return root, work, cfg_path


class TestPipeline:
    def test_artifacts_exist(self, pipeline):
        _, work, _ = pipeline
        assert (work / "codec.udsecdc").is_file()
        assert (work / "model.udsenn").is_file()
        assert (work / "corpus" / "train" / "manifest.tsv").is_file()
        assert (work / "corpus" / "test" / "manifest.tsv").is_file()
        assert (work / "report.tsv").is_file()
        assert (work / "train_metrics.json").is_file()

    def test_done_markers_and_run_logs(self, pipeline):
        _, work, _ = pipeline
        for command in ("train-codec", "build-corpus", "train-udse", "eval"):
            assert (work / "logs" / f"{command}.DONE").is_file()
            log_text = (work / "logs" / f"{command}.log").read_text()
            assert "resolved config" in log_text
            assert "sha256=" in log_text or command == "train-codec"

    def test_report_header(self, pipeline):
        _, work, _ = pipeline
        assert (work / "report.tsv").read_text().startswith("UDSE-EVAL v1\n")

    def test_enhance_roundtrip(self, pipeline, tmp_path):
        root, work, cfg_path = pipeline
        noisy = tmp_path / "in.wav"
        out = tmp_path / "out.wav"
        write_wav(make_clean_utterance(77, 0.2, 16000), noisy, format="pcm16")
        assert main(["--config", str(cfg_path), "enhance", str(noisy), str(out)]) \
            == EXIT_OK
        result = read_wav(out)
        assert len(result) == len(read_wav(noisy))

    def test_enhance_refuses_model_from_other_codec(self, pipeline, tmp_path):
        import shutil
        root, work, cfg_path = pipeline
        # clone the workspace, then retrain its codec with another seed so
        # the stored digest no longer matches the saved model
        clone = tmp_path / "clone"
        shutil.copytree(work, clone)
        other_cfg = tmp_path / "other.cfg"
        other_cfg.write_text(cfg_path.read_text()
                             .replace(str(work), str(clone))
                             .replace("seed = 3", "seed = 4"))
        assert main(["--config", str(other_cfg), "train-codec"]) == EXIT_OK
        noisy = tmp_path / "n.wav"
        write_wav(make_clean_utterance(5, 0.2, 16000), noisy, format="pcm16")
        code = main(["--config", str(other_cfg), "enhance", str(noisy),
                     str(tmp_path / "o.wav")])
        assert code == EXIT_CONFIG


class TestErrorPaths:
    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("[codec]\nnum_stages = -1\n")
        assert main(["--config", str(bad), "train-codec"]) == EXIT_CONFIG

    def test_unknown_key_exit_code(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("[codec]\nwat = 1\n")
        assert main(["--config", str(bad), "train-codec"]) == EXIT_CONFIG

    def test_missing_codec_for_training(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text(MICRO_CFG.format(work=tmp_path / "w"))
        assert main(["--config", str(cfg), "train-udse"]) == EXIT_CONFIG

    def test_enhance_missing_input(self, pipeline, tmp_path):
        _, _, cfg_path = pipeline
        code = main(["--config", str(cfg_path), "enhance",
                     str(tmp_path / "ghost.wav"), str(tmp_path / "o.wav")])
        assert code == EXIT_DATA

    def test_seed_flag_overrides(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text(MICRO_CFG.format(work=tmp_path / "w"))
        assert main(["--config", str(cfg), "--seed", "11", "train-codec"]) == EXIT_OK
        log_text = (tmp_path / "w" / "logs" / "train-codec.log").read_text()
        assert "seed = 11" in log_text


class TestDeterminism:
    def test_identical_runs_identical_checkpoints(self, tmp_path):
        import hashlib
        digests = []
        for name in ("r1", "r2"):
            cfg = tmp_path / f"{name}.cfg"
            cfg.write_text(MICRO_CFG.format(work=tmp_path / name))
            assert main(["--config", str(cfg), "train-codec"]) == EXIT_OK
            assert main(["--config", str(cfg), "build-corpus"]) == EXIT_OK
            assert main(["--config", str(cfg), "train-udse"]) == EXIT_OK
            blob = (tmp_path / name / "model.udsenn").read_bytes()
            digests.append(hashlib.sha256(blob).hexdigest())
        assert digests[0] == digests[1]
