"""Encoder-decoder translation models with an autodiff core: layers,
RNN and Transformer architectures, training, decoding, checkpoints."""

from graphmt.nmt.checkpoint import (
    Checkpoint,
    CheckpointError,
    load_checkpoint,
    restore_model,
    save_checkpoint,
    vocab_hash,
)
from graphmt.nmt.decode import (
    Hypothesis,
    UNK_MODES,
    beam_search,
    greedy_decode,
    unk_replace,
)
from graphmt.nmt.layers import (
    AdditiveAttention,
    Embedding,
    FeedForward,
    LayerNorm,
    Linear,
    LSTMCell,
    Module,
    MultiHeadAttention,
    dropout,
    sinusoidal_positions,
)
from graphmt.nmt.models import (
    RnnDecoder,
    RnnEncoder,
    RnnSeq2Seq,
    TransformerDecoder,
    TransformerEncoder,
    TransformerSeq2Seq,
)
from graphmt.nmt.train import (
    TrainConfig,
    TrainingDiverged,
    TrainResult,
    build_model,
    default_config,
    train,
)

__all__ = [
    "AdditiveAttention", "Checkpoint", "CheckpointError", "Embedding",
    "FeedForward", "Hypothesis", "LayerNorm", "Linear", "LSTMCell",
    "Module", "MultiHeadAttention", "RnnDecoder", "RnnEncoder",
    "RnnSeq2Seq", "TrainConfig", "TrainResult", "TrainingDiverged",
    "TransformerDecoder", "TransformerEncoder", "TransformerSeq2Seq",
    "UNK_MODES", "beam_search", "build_model", "default_config", "dropout",
    "greedy_decode", "load_checkpoint", "restore_model", "save_checkpoint",
    "sinusoidal_positions", "train", "unk_replace", "vocab_hash",
]
