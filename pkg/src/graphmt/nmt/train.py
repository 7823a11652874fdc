"""Teacher-forced cross-entropy training for both architectures.

RNN models use plain SGD; Transformer models use Adam under an
inverse-square-root warmup schedule scaled by a constant factor
(a literal constant learning rate of 2 diverges, so the factor
interpretation is used). Batching is sentence-count based for the RNN
and token-budget based for the Transformer. Training is single-threaded
and fully seeded: fixed seed implies bit-identical trained parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from graphmt.tensor import Tensor
from graphmt.tokenize import BOS_ID, EOS_ID, PAD_ID
from graphmt.nmt.layers import Embedding
from graphmt.nmt.models import (
    RnnDecoder,
    RnnEncoder,
    RnnSeq2Seq,
    TransformerDecoder,
    TransformerEncoder,
    TransformerSeq2Seq,
)

ARCHITECTURES = ("rnn", "transformer")
OPTIMIZERS = ("sgd", "adam")


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; carries diagnostics."""


@dataclass
class TrainConfig:
    architecture: str = "rnn"
    batch_size: int = 32          # sentences per batch (rnn)
    token_budget: int = 4076      # tokens per batch (transformer)
    optimizer: str = "sgd"
    lr: float = 0.0002
    dropout: float = 0.3
    max_len: int = 80
    epochs: int = 1
    seed: int = 1
    dim: int = 64                 # embedding size
    hidden: int = 64              # recurrent hidden / transformer model dim
    layers: int = 2
    heads: int = 8
    ff_hidden: int = 256
    max_positions: int = 512
    warmup: int = 8000
    lr_factor: float = 2.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-9

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.max_len < 1 or self.epochs < 0:
            raise ValueError("max_len must be >= 1 and epochs >= 0")
        if self.architecture == "transformer" and self.hidden % self.heads:
            raise ValueError(f"model dim {self.hidden} is not divisible "
                             f"by {self.heads} heads")


def default_config(architecture: str) -> TrainConfig:
    """Published training settings per architecture; desk-size runs
    override the dimensions explicitly."""
    if architecture == "rnn":
        return TrainConfig(architecture="rnn", batch_size=32,
                           optimizer="sgd", lr=0.0002, dropout=0.3,
                           max_len=80, dim=500, hidden=500)
    if architecture == "transformer":
        return TrainConfig(architecture="transformer", token_budget=4076,
                           optimizer="adam", dropout=0.1, max_len=80,
                           dim=512, hidden=512, layers=6, heads=8,
                           ff_hidden=2048)
    raise ValueError(f"unknown architecture {architecture!r}")


@dataclass
class TrainResult:
    epoch_losses: list[float]
    skipped: int
    steps: int


def build_model(config: TrainConfig, src_vocab_size: int, tgt_vocab_size: int,
                src_matrix: np.ndarray | None = None,
                tgt_matrix: np.ndarray | None = None):
    """Construct a fresh model. Fused matrices, when given, replace the
    random embedding init and must cover the whole vocabulary."""
    rng = np.random.default_rng(config.seed)

    def embedding(size: int, dim: int, matrix: np.ndarray | None) -> Embedding:
        if matrix is None:
            return Embedding(size, dim, rng)
        if matrix.shape[0] != size:
            raise ValueError(f"fused matrix has {matrix.shape[0]} rows but "
                             f"the vocabulary has {size} tokens")
        return Embedding.from_matrix(matrix)

    if config.architecture == "rnn":
        src_emb = embedding(src_vocab_size, config.dim, src_matrix)
        tgt_emb = embedding(tgt_vocab_size, config.dim, tgt_matrix)
        encoder = RnnEncoder(src_emb, config.hidden, config.layers, rng,
                             dropout_p=config.dropout)
        # decoder width matches the direction-concatenated encoder states
        # so its initial state can be their mean verbatim
        decoder = RnnDecoder(tgt_emb, 2 * config.hidden, config.layers,
                             tgt_vocab_size, rng, dropout_p=config.dropout)
        return RnnSeq2Seq(encoder, decoder)
    src_emb = embedding(src_vocab_size, config.hidden, src_matrix)
    tgt_emb = embedding(tgt_vocab_size, config.hidden, tgt_matrix)
    encoder = TransformerEncoder(src_emb, config.hidden, config.heads,
                                 config.layers, config.ff_hidden, rng,
                                 max_len=config.max_positions,
                                 dropout_p=config.dropout)
    decoder = TransformerDecoder(tgt_emb, config.hidden, config.heads,
                                 config.layers, config.ff_hidden,
                                 tgt_vocab_size, rng,
                                 max_len=config.max_positions,
                                 dropout_p=config.dropout)
    return TransformerSeq2Seq(encoder, decoder)


def _pad_batch(rows: list[list[int]]) -> np.ndarray:
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), PAD_ID, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
    return out


def make_batches(pairs, config: TrainConfig,
                 rng: np.random.Generator) -> list[list[int]]:
    """Shuffled batch index lists: fixed sentence count for the RNN, a
    greedy token-budget packing for the Transformer."""
    order = rng.permutation(len(pairs))
    if config.architecture == "rnn":
        return [list(order[i:i + config.batch_size])
                for i in range(0, len(order), config.batch_size)]
    batches: list[list[int]] = []
    current: list[int] = []
    widest = 0
    for idx in order:
        src, tgt = pairs[idx]
        need = max(len(src) + 1, len(tgt) + 1)
        if current and (len(current) + 1) * max(widest, need) > config.token_budget:
            batches.append(current)
            current, widest = [], 0
        current.append(int(idx))
        widest = max(widest, need)
    if current:
        batches.append(current)
    return batches


def batch_loss(model, src: np.ndarray, tgt_in: np.ndarray,
               labels: np.ndarray, rng: np.random.Generator,
               train: bool) -> tuple[Tensor, int]:
    """Token-mean cross entropy over non-pad label positions."""
    logits, _ = model(src, tgt_in, rng, train)
    log_probs = logits.log_softmax(axis=-1)
    b, t = labels.shape
    picked = log_probs[np.arange(b)[:, None], np.arange(t)[None, :], labels]
    mask = (labels != PAD_ID).astype(np.float64)
    tokens = int(mask.sum())
    loss = -(picked * mask).sum() * (1.0 / tokens)
    return loss, tokens


class _SgdOptimizer:
    def __init__(self, params: list[Tensor], lr: float):
        self.params = params
        self.lr = lr
        self.steps = 0

    def step(self):
        self.steps += 1
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad

    @property
    def current_lr(self) -> float:
        return self.lr


class _AdamOptimizer:
    """Adam with the inverse-square-root warmup schedule
    lr_t = factor * dim^-0.5 * min(t^-0.5, t * warmup^-1.5)."""

    def __init__(self, params: list[Tensor], config: TrainConfig):
        self.params = params
        self.config = config
        self.steps = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    @property
    def current_lr(self) -> float:
        t = max(1, self.steps)
        c = self.config
        return (c.lr_factor * c.hidden ** -0.5 *
                min(t ** -0.5, t * c.warmup ** -1.5))

    def step(self):
        self.steps += 1
        lr = self.current_lr
        c = self.config
        b1, b2 = c.adam_beta1, c.adam_beta2
        bc1 = 1.0 - b1 ** self.steps
        bc2 = 1.0 - b2 ** self.steps
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * p.grad
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * p.grad * p.grad
            p.data -= lr * (self.m[i] / bc1) / (np.sqrt(self.v[i] / bc2) + c.adam_eps)


def make_optimizer(model, config: TrainConfig):
    params = model.parameters()
    if config.optimizer == "sgd":
        return _SgdOptimizer(params, config.lr)
    return _AdamOptimizer(params, config)


def train(model, pairs: list[tuple[list[int], list[int]]],
          config: TrainConfig) -> TrainResult:
    """Train in place over (source ids, target ids) pairs; ids carry no
    BOS/EOS markers, they are added here. Sentences longer than max_len
    on either side are skipped and counted."""
    if not pairs:
        raise ValueError("training corpus is empty")
    kept = [(s, t) for s, t in pairs
            if len(s) <= config.max_len and len(t) <= config.max_len]
    skipped = len(pairs) - len(kept)
    if not kept:
        raise ValueError(f"all {len(pairs)} sentences exceed max_len "
                         f"{config.max_len}")
    prepared = [(list(s) + [EOS_ID], [BOS_ID] + list(t), list(t) + [EOS_ID])
                for s, t in kept]
    optimizer = make_optimizer(model, config)
    params = model.parameters()
    drop_rng = np.random.default_rng([config.seed, 104729])
    epoch_losses: list[float] = []
    for epoch in range(config.epochs):
        shuffle_rng = np.random.default_rng([config.seed, 7919, epoch])
        batches = make_batches(kept, config, shuffle_rng)
        total_loss = 0.0
        total_tokens = 0
        for b_idx, batch in enumerate(batches):
            src = _pad_batch([prepared[i][0] for i in batch])
            tgt_in = _pad_batch([prepared[i][1] for i in batch])
            labels = _pad_batch([prepared[i][2] for i in batch])
            for p in params:
                p.grad = None
            loss, tokens = batch_loss(model, src, tgt_in, labels,
                                      drop_rng, train=True)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} batch {b_idx} "
                    f"(size {len(batch)}, lr {optimizer.current_lr:.6g})")
            loss.backward()
            optimizer.step()
            total_loss += value * tokens
            total_tokens += tokens
        epoch_losses.append(total_loss / total_tokens)
    return TrainResult(epoch_losses=epoch_losses, skipped=skipped,
                       steps=optimizer.steps)
