"""Feature partition and fusion for lightweight speaker-embedding models."""

from ._backend import backend_name, set_backend, set_default_dtype
from .complexity import ComplexityReport, complexity, complexity_report, count_macs, count_params
from .features import extract_logmel, mel_bank, read_wav, sliding_cmvn, write_wav
from .fmat import read_fmat, write_fmat
from .metrics import TrialSet, compute_eer, cosine_score
from .model import ModelConfig, ModelGraph, build_model, load_config, load_model, model_forward, save_model
from .partition import PartitionError, PartitionPlan, concat_subsets, plan_partition, split
from .tensor import ConfigError, ShapeError, Tape, Tensor, UsageError, backward, parameter
from .tm import TmParams, tm_forward, tm_init
from .train import TrainConfig, synth_dataset, train_toy

__version__ = "0.1.0"

__all__ = [
    "ComplexityReport", "ConfigError", "ModelConfig", "ModelGraph", "PartitionError", "PartitionPlan",
    "ShapeError", "Tape", "Tensor", "TmParams", "TrainConfig", "TrialSet", "UsageError",
    "backend_name", "backward", "build_model", "complexity", "complexity_report", "compute_eer",
    "concat_subsets", "cosine_score", "count_macs", "count_params", "extract_logmel", "load_config",
    "load_model", "mel_bank", "model_forward", "parameter", "plan_partition", "read_fmat", "read_wav",
    "save_model", "set_backend", "set_default_dtype", "sliding_cmvn", "split", "synth_dataset",
    "tm_forward", "tm_init", "train_toy", "write_fmat", "write_wav",
]
