from .adam import AdamState, adam_step
from .checkpoint import (
    Checkpoint,
    CheckpointChecksumError,
    CheckpointError,
    CheckpointMagicError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from .trainer import (
    LogRow,
    NumericalError,
    TrainConfig,
    TrainResult,
    early_stop,
    load_parts,
    read_log,
    train,
    train_baseline,
    train_supcon,
    validation_ce,
    validation_supcon,
    write_log,
)
