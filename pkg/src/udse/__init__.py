"""Discrete-domain speech enhancement.

A transform codec with residual vector quantization turns waveforms into
small grids of integer tokens; a cascade of conditioned classifiers
predicts the clean-speech tokens from a degraded input; decoding the
predicted tokens reconstructs the enhanced waveform. The package also
ships the distortion simulators used to build training corpora, objective
metrics, and a batch CLI.
"""

__version__ = "0.1.0"

from .audio_io import Waveform, read_wav, resample, write_wav
from .codec import (RvqCodebooks, decode, dequantize, encode, load_codec, lookup,
                    quantize, quantize_stage, save_codec, train_codebooks,
                    train_codec)
from .errors import (ConfigError, DegenerateInput, IoError, ParseError,
                     RangeError, UdseError, UnsupportedFormat)
from .metrics import log_spectral_distance, si_snr, token_accuracy
from .model import (ModelConfig, UdseModel, enhance, extract_global, load_model,
                    predict_tokens, save_model, teacher_forced_logits, train_model,
                    udse_loss)
from .nn import cross_entropy, softmax_columns
