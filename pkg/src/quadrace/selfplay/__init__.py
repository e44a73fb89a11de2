"""Staged self-play training: checkpoint pool, evaluation gate, stage loop."""

from .pool import CheckpointPool, PoolEntry, update_pool
from .stages import (
    EvalGateResult,
    StageConfig,
    TrainingLog,
    evaluation_gate,
    run_stage,
    sample_opponents,
)

__all__ = [
    "CheckpointPool",
    "EvalGateResult",
    "PoolEntry",
    "StageConfig",
    "TrainingLog",
    "evaluation_gate",
    "run_stage",
    "sample_opponents",
    "update_pool",
]
