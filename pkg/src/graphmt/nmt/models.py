"""Both translation architectures: a 2-layer bidirectional LSTM
encoder-decoder with additive attention, and a pre-norm Transformer.

Stacked layers in both models are residual: layer l computes
h^l_i = h^{l-1}_i + f(h^{l-1}_i, ...), so a layer with zeroed sublayer
parameters propagates its input unchanged. Encoder and decoder sessions
expose a uniform step interface used by beam search.
"""

from __future__ import annotations

import numpy as np

from graphmt.tensor import Tensor, concat, no_grad, stack
from graphmt.tokenize import BOS_ID, EOS_ID, PAD_ID
from graphmt.nmt.layers import (
    AdditiveAttention,
    Embedding,
    FeedForward,
    LayerNorm,
    Linear,
    LSTMCell,
    Module,
    ModuleList,
    MultiHeadAttention,
    attention_bias,
    causal_bias,
    dropout,
    padding_mask,
    sinusoidal_positions,
)

_INFER_RNG = np.random.default_rng(0)  # never consumed: dropout off at inference


def _check_ids(ids: np.ndarray) -> np.ndarray:
    ids = np.asarray(ids)
    if ids.ndim != 2 or ids.shape[1] == 0:
        raise ValueError("token id batch must be 2-D and nonempty")
    return ids


class RnnEncoder(Module):
    """Bidirectional stacked LSTM. `hidden` is the size of each
    direction; the per-position state is the direction concatenation
    (width 2 * hidden). Layers above the first are residual with
    direction-local recurrence."""

    def __init__(self, embedding: Embedding, hidden: int, layers: int,
                 rng: np.random.Generator, dropout_p: float = 0.0):
        super().__init__()
        self.hidden = hidden
        self.output_dim = 2 * hidden
        self.dropout_p = dropout_p
        self.embedding = embedding
        fwd, bwd = [], []
        for layer in range(layers):
            in_dim = embedding.dim if layer == 0 else self.output_dim
            fwd.append(LSTMCell(in_dim, hidden, rng))
            bwd.append(LSTMCell(in_dim, hidden, rng))
        self.fwd = ModuleList(fwd)
        self.bwd = ModuleList(bwd)

    def _run_direction(self, cell: LSTMCell, inputs: Tensor,
                       mask: np.ndarray, reverse: bool) -> list[Tensor]:
        b, t = mask.shape
        h = Tensor(np.zeros((b, cell.hidden_dim)))
        c = Tensor(np.zeros((b, cell.hidden_dim)))
        steps = range(t - 1, -1, -1) if reverse else range(t)
        out: dict[int, Tensor] = {}
        for i in steps:
            h, c = cell(inputs[:, i], h, c)
            # reset state at padding so it never leaks across the boundary
            m = mask[:, i:i + 1]
            h = h * m
            c = c * m
            out[i] = h
        return [out[i] for i in range(t)]

    def __call__(self, src_ids: np.ndarray, rng: np.random.Generator,
                 train: bool) -> tuple[list[Tensor], Tensor, Tensor]:
        """Returns (per-layer states, final states (B, T, 2H), masked
        time-mean of the final states (B, 2H))."""
        src_ids = _check_ids(src_ids)
        mask = padding_mask(src_ids, PAD_ID)
        x = dropout(self.embedding(src_ids), self.dropout_p, rng, train)
        states: list[Tensor] = []
        for layer, (fc, bc) in enumerate(zip(self.fwd, self.bwd)):
            f_steps = self._run_direction(fc, x, mask, reverse=False)
            b_steps = self._run_direction(bc, x, mask, reverse=True)
            per_pos = [concat([f, b], axis=-1) for f, b in zip(f_steps, b_steps)]
            y = stack(per_pos, axis=1)
            x = y if layer == 0 else x + y
            states.append(x)
        final = states[-1]
        lengths = mask.sum(axis=1, keepdims=True)
        mean = (final * mask[:, :, None]).sum(axis=1) * (1.0 / lengths)
        return states, final, mean


class RnnDecoder(Module):
    """Stacked unidirectional LSTM with additive attention over encoder
    states and a tanh bottleneck before the vocabulary projection."""

    def __init__(self, embedding: Embedding, hidden: int, layers: int,
                 vocab_size: int, rng: np.random.Generator,
                 dropout_p: float = 0.0):
        super().__init__()
        self.hidden = hidden
        self.dropout_p = dropout_p
        self.embedding = embedding
        cells = []
        for layer in range(layers):
            in_dim = embedding.dim if layer == 0 else hidden
            cells.append(LSTMCell(in_dim, hidden, rng))
        self.cells = ModuleList(cells)
        self.attention = AdditiveAttention(hidden, hidden, hidden, rng)
        self.combine = Linear(2 * hidden, hidden, rng)
        self.out_proj = Linear(hidden, vocab_size, rng)

    def initial_state(self, enc_mean: Tensor) -> list[tuple[Tensor, Tensor]]:
        b = enc_mean.shape[0]
        zero = Tensor(np.zeros((b, self.hidden)))
        return [(enc_mean, zero) for _ in self.cells]

    def step(self, x: Tensor, state: list[tuple[Tensor, Tensor]],
             enc_states: Tensor, enc_mask: np.ndarray,
             rng: np.random.Generator, train: bool):
        new_state = []
        below = x
        for layer, cell in enumerate(self.cells):
            h_prev, c_prev = state[layer]
            h_raw, c_next = cell(below, h_prev, c_prev)
            h_next = h_raw if layer == 0 else below + h_raw
            new_state.append((h_next, c_next))
            below = h_next
        context, weights = self.attention(below, enc_states, enc_mask)
        feature = self.combine(concat([below, context], axis=-1)).tanh()
        feature = dropout(feature, self.dropout_p, rng, train)
        return self.out_proj(feature), weights, new_state


class RnnSeq2Seq(Module):
    architecture = "rnn"

    def __init__(self, encoder: RnnEncoder, decoder: RnnDecoder):
        super().__init__()
        self.encoder = encoder
        self.decoder = decoder

    def __call__(self, src_ids: np.ndarray, tgt_in: np.ndarray,
                 rng: np.random.Generator | None = None,
                 train: bool = False) -> tuple[Tensor, np.ndarray]:
        """Teacher-forced pass. Returns (logits (B, Tt, V), attention
        weights (B, Tt, Ts) as a plain array)."""
        rng = _INFER_RNG if rng is None else rng
        tgt_in = _check_ids(tgt_in)
        _, enc_states, enc_mean = self.encoder(src_ids, rng, train)
        enc_mask = padding_mask(src_ids, PAD_ID)
        state = self.decoder.initial_state(enc_mean)
        emb = dropout(self.decoder.embedding(tgt_in),
                      self.decoder.dropout_p, rng, train)
        logit_steps, attn_rows = [], []
        for t in range(tgt_in.shape[1]):
            logits, weights, state = self.decoder.step(
                emb[:, t], state, enc_states, enc_mask, rng, train)
            logit_steps.append(logits)
            attn_rows.append(weights.data)
        return stack(logit_steps, axis=1), np.stack(attn_rows, axis=1)

    def begin(self, src_ids: list[int]) -> "RnnSession":
        return RnnSession(self, src_ids)


class RnnSession:
    """Single-sentence decoding context. States are immutable tuples of
    tensors, so beam hypotheses can share them without copying."""

    def __init__(self, model: RnnSeq2Seq, src_ids: list[int]):
        self.model = model
        batch = np.asarray([src_ids])
        with no_grad():
            _, self.enc_states, enc_mean = model.encoder(
                batch, _INFER_RNG, train=False)
            init = model.decoder.initial_state(enc_mean)
        self.enc_mask = padding_mask(batch, PAD_ID)
        self._initial = tuple(init)

    def initial_state(self):
        return self._initial

    def advance(self, state, token_id: int):
        """Feed one target token; returns (log-probs (V,), attention row
        over source positions (Ts,), next state)."""
        with no_grad():
            x = self.model.decoder.embedding(np.asarray([[token_id]]))
            logits, weights, new_state = self.model.decoder.step(
                x[:, 0], list(state), self.enc_states, self.enc_mask,
                _INFER_RNG, train=False)
            log_probs = logits.log_softmax(axis=-1)
        return log_probs.data[0], weights.data[0], tuple(new_state)


class TransformerEncoderLayer(Module):
    def __init__(self, dim: int, heads: int, ff_hidden: int,
                 rng: np.random.Generator):
        super().__init__()
        self.norm_attn = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm_ff = LayerNorm(dim)
        self.ff = FeedForward(dim, ff_hidden, rng)

    def __call__(self, x: Tensor, bias: np.ndarray, p: float,
                 rng: np.random.Generator, train: bool) -> Tensor:
        y = self.norm_attn(x)
        a, _ = self.attn(y, y, bias)
        x = x + dropout(a, p, rng, train)
        f = self.ff(self.norm_ff(x))
        return x + dropout(f, p, rng, train)


class TransformerDecoderLayer(Module):
    def __init__(self, dim: int, heads: int, ff_hidden: int,
                 rng: np.random.Generator):
        super().__init__()
        self.norm_self = LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads, rng)
        self.norm_cross = LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, heads, rng)
        self.norm_ff = LayerNorm(dim)
        self.ff = FeedForward(dim, ff_hidden, rng)

    def __call__(self, x: Tensor, memory: Tensor, self_bias: np.ndarray,
                 cross_bias: np.ndarray, p: float, rng: np.random.Generator,
                 train: bool) -> tuple[Tensor, np.ndarray]:
        y = self.norm_self(x)
        a, _ = self.self_attn(y, y, self_bias)
        x = x + dropout(a, p, rng, train)
        y = self.norm_cross(x)
        c, cross_weights = self.cross_attn(y, memory, cross_bias)
        x = x + dropout(c, p, rng, train)
        f = self.ff(self.norm_ff(x))
        return x + dropout(f, p, rng, train), cross_weights


class TransformerEncoder(Module):
    """Pre-norm Transformer stack; h^0 = token embedding + fixed
    sinusoidal position encoding."""

    def __init__(self, embedding: Embedding, dim: int, heads: int,
                 layers: int, ff_hidden: int, rng: np.random.Generator,
                 max_len: int = 512, dropout_p: float = 0.0):
        super().__init__()
        if embedding.dim != dim:
            raise ValueError(f"embedding dim {embedding.dim} must equal "
                             f"model dim {dim}")
        self.dim = dim
        self.dropout_p = dropout_p
        self.embedding = embedding
        self.positions = sinusoidal_positions(max_len, dim)
        self.layers = ModuleList(
            [TransformerEncoderLayer(dim, heads, ff_hidden, rng)
             for _ in range(layers)])
        self.norm_final = LayerNorm(dim)

    def __call__(self, src_ids: np.ndarray, rng: np.random.Generator,
                 train: bool) -> tuple[list[Tensor], Tensor]:
        """Returns (per-layer states before the final norm, final states)."""
        src_ids = _check_ids(src_ids)
        t = src_ids.shape[1]
        if t > self.positions.shape[0]:
            raise ValueError(f"sequence length {t} exceeds the position "
                             f"table ({self.positions.shape[0]})")
        mask = padding_mask(src_ids, PAD_ID)
        x = self.embedding(src_ids) + self.positions[:t]
        x = dropout(x, self.dropout_p, rng, train)
        bias = attention_bias(mask)
        states = []
        for layer in self.layers:
            x = layer(x, bias, self.dropout_p, rng, train)
            states.append(x)
        return states, self.norm_final(x)


class TransformerDecoder(Module):
    def __init__(self, embedding: Embedding, dim: int, heads: int,
                 layers: int, ff_hidden: int, vocab_size: int,
                 rng: np.random.Generator, max_len: int = 512,
                 dropout_p: float = 0.0):
        super().__init__()
        if embedding.dim != dim:
            raise ValueError(f"embedding dim {embedding.dim} must equal "
                             f"model dim {dim}")
        self.dim = dim
        self.dropout_p = dropout_p
        self.embedding = embedding
        self.positions = sinusoidal_positions(max_len, dim)
        self.layers = ModuleList(
            [TransformerDecoderLayer(dim, heads, ff_hidden, rng)
             for _ in range(layers)])
        self.norm_final = LayerNorm(dim)
        self.out_proj = Linear(dim, vocab_size, rng)

    def __call__(self, tgt_in: np.ndarray, memory: Tensor,
                 src_mask: np.ndarray, rng: np.random.Generator,
                 train: bool) -> tuple[Tensor, np.ndarray]:
        """Returns (logits (B, Tt, V), final-layer head-averaged
        cross-attention (B, Tt, Ts))."""
        tgt_in = _check_ids(tgt_in)
        t = tgt_in.shape[1]
        if t > self.positions.shape[0]:
            raise ValueError(f"sequence length {t} exceeds the position "
                             f"table ({self.positions.shape[0]})")
        x = self.embedding(tgt_in) + self.positions[:t]
        x = dropout(x, self.dropout_p, rng, train)
        self_bias = causal_bias(t) + attention_bias(padding_mask(tgt_in, PAD_ID))
        cross_bias = attention_bias(src_mask)
        cross = None
        for layer in self.layers:
            x, cross = layer(x, memory, self_bias, cross_bias,
                             self.dropout_p, rng, train)
        return self.out_proj(self.norm_final(x)), cross


class TransformerSeq2Seq(Module):
    architecture = "transformer"

    def __init__(self, encoder: TransformerEncoder, decoder: TransformerDecoder):
        super().__init__()
        self.encoder = encoder
        self.decoder = decoder

    def __call__(self, src_ids: np.ndarray, tgt_in: np.ndarray,
                 rng: np.random.Generator | None = None,
                 train: bool = False) -> tuple[Tensor, np.ndarray]:
        rng = _INFER_RNG if rng is None else rng
        _, memory = self.encoder(src_ids, rng, train)
        src_mask = padding_mask(src_ids, PAD_ID)
        return self.decoder(tgt_in, memory, src_mask, rng, train)

    def begin(self, src_ids: list[int]) -> "TransformerSession":
        return TransformerSession(self, src_ids)


class TransformerSession:
    """Decoding context. The state is the generated prefix (a tuple), and
    each step re-runs the decoder over prefix + token."""

    def __init__(self, model: TransformerSeq2Seq, src_ids: list[int]):
        self.model = model
        batch = np.asarray([src_ids])
        with no_grad():
            _, self.memory = model.encoder(batch, _INFER_RNG, train=False)
        self.src_mask = padding_mask(batch, PAD_ID)

    def initial_state(self):
        return ()

    def advance(self, state, token_id: int):
        prefix = state + (token_id,)
        with no_grad():
            logits, cross = self.model.decoder(
                np.asarray([prefix]), self.memory, self.src_mask,
                _INFER_RNG, train=False)
            log_probs = logits[:, -1].log_softmax(axis=-1)
        return log_probs.data[0], cross[0, -1], prefix
