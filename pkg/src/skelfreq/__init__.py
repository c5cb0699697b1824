"""Frequency-aware skeleton action recognition, self-contained.

A small transformer for skeleton sequences that attends over joints in
both the coordinate and frequency domains, with its own reverse-mode
autodiff engine, binary formats, synthetic data generator, and CLI.
"""

from skelfreq.data import (
    MODALITIES,
    SkeletonSequence,
    build_manifest,
    chain_parents,
    derive_modalities,
    load_binary,
    load_jsonl,
    normalize,
    prepare_arrays,
    save_binary,
    save_jsonl,
    synth_generate,
)
from skelfreq.frequency import (
    FrequencyConfig,
    SpectralTensor,
    band_energies,
    cosine_basis,
    dct,
    idct,
    map_partition,
)
from skelfreq.model import (
    ModelConfig,
    ModelParams,
    count_parameters,
    forward,
    forward_sample,
    init_params,
    load_model,
    save_model,
)
from skelfreq.tensor import Tensor, backward, grad_check, no_grad
from skelfreq.training import (
    EpochMetrics,
    ScheduleConfig,
    TrainResult,
    accuracy,
    cross_entropy,
    ensemble_fuse,
    evaluate,
    fuse_scores,
    lr_schedule,
    predict_scores,
    train_loop,
)

__all__ = [
    "MODALITIES",
    "SkeletonSequence",
    "build_manifest",
    "chain_parents",
    "derive_modalities",
    "load_binary",
    "load_jsonl",
    "normalize",
    "prepare_arrays",
    "save_binary",
    "save_jsonl",
    "synth_generate",
    "FrequencyConfig",
    "SpectralTensor",
    "band_energies",
    "cosine_basis",
    "dct",
    "idct",
    "map_partition",
    "ModelConfig",
    "ModelParams",
    "count_parameters",
    "forward",
    "forward_sample",
    "init_params",
    "load_model",
    "save_model",
    "Tensor",
    "backward",
    "grad_check",
    "no_grad",
    "EpochMetrics",
    "ScheduleConfig",
    "TrainResult",
    "accuracy",
    "cross_entropy",
    "ensemble_fuse",
    "evaluate",
    "fuse_scores",
    "lr_schedule",
    "predict_scores",
    "train_loop",
]

__version__ = "0.1.0"
