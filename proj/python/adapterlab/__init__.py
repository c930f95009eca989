"""Desk-scale laboratory for comparing adapter-based tuning with full fine-tuning.

Everything lives in the compiled extension; this package re-exports it.
"""

from ._core import (
    AdapterConfig,
    EncoderModel,
    EvalPoint,
    LoadedCheckpoint,
    Quartiles,
    RunRecord,
    SweepCell,
    SyntheticTaskSpec,
    TaskDataset,
    TokenizedCorpus,
    TrainConfig,
    TransformerConfig,
    TuningPolicy,
    adapter_forward,
    count_parameters,
    count_parameters_config,
    dataset_loss,
    default_alpha_grid,
    default_sweep_lrs,
    evaluate,
    layer_similarity,
    load_checkpoint,
    load_task,
    loss_landscape,
    lr_at,
    lr_sweep,
    make_synthetic_task,
    mixout_effective_weight,
    quartiles,
    rsa_score,
    save_checkpoint,
    tapt_pretrain,
    tokenize_lines,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AdapterConfig",
    "EncoderModel",
    "EvalPoint",
    "LoadedCheckpoint",
    "Quartiles",
    "RunRecord",
    "SweepCell",
    "SyntheticTaskSpec",
    "TaskDataset",
    "TokenizedCorpus",
    "TrainConfig",
    "TransformerConfig",
    "TuningPolicy",
    "adapter_forward",
    "count_parameters",
    "count_parameters_config",
    "dataset_loss",
    "default_alpha_grid",
    "default_sweep_lrs",
    "evaluate",
    "layer_similarity",
    "load_checkpoint",
    "load_task",
    "loss_landscape",
    "lr_at",
    "lr_sweep",
    "make_synthetic_task",
    "mixout_effective_weight",
    "quartiles",
    "rsa_score",
    "save_checkpoint",
    "tapt_pretrain",
    "tokenize_lines",
    "train",
    "__version__",
]
