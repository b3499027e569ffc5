from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, resolve_checkpoint_dir, save_checkpoint
from .config import ConfigError, ExperimentConfig
from .runs import (
    ABLATION_COLUMNS,
    export_features,
    run_ablation,
    run_eval,
    run_finetune_cls,
    run_finetune_sr,
    run_pretrain,
    synthesize,
    write_ablation_table,
    write_tables,
)

__all__ = [
    "ABLATION_COLUMNS",
    "Checkpoint",
    "CheckpointError",
    "ConfigError",
    "ExperimentConfig",
    "export_features",
    "load_checkpoint",
    "resolve_checkpoint_dir",
    "run_ablation",
    "run_eval",
    "run_finetune_cls",
    "run_finetune_sr",
    "run_pretrain",
    "save_checkpoint",
    "synthesize",
    "write_ablation_table",
    "write_tables",
]
