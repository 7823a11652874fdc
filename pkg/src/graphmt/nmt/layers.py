"""Trainable building blocks shared by both translation architectures:
parameter bookkeeping, embeddings, LSTM cell, additive and multi-head
attention, feed-forward block, layer normalization, dropout, and fixed
sinusoidal position encodings.
"""

from __future__ import annotations

import numpy as np

from graphmt.tensor import Tensor, parameter, rows

# additive mask value for blocked attention positions
NEG_INF = -1e9
_LN_EPS = 1e-5


class Module:
    """Parameter container. Tensor and Module attributes are registered in
    assignment order, so named_parameters() is deterministic."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [(name, p) for name, p in self._params.items()]
        for child_name, child in self._children.items():
            out.extend((f"{child_name}.{sub}", p)
                       for sub, p in child.named_parameters())
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


class ModuleList(Module):
    def __init__(self, modules):
        super().__init__()
        self.items = list(modules)
        for i, m in enumerate(self.items):
            self._children[str(i)] = m

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)

    def __getitem__(self, idx):
        return self.items[idx]


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 bias: bool = True):
        super().__init__()
        self.weight = parameter((in_dim, out_dim), rng)
        self.bias = parameter((out_dim,), rng) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out


class Embedding(Module):
    """Token-id to vector lookup, optionally seeded from a fused matrix."""

    def __init__(self, num_tokens: int, dim: int, rng: np.random.Generator):
        super().__init__()
        self.table = parameter((num_tokens, dim), rng)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "Embedding":
        emb = cls.__new__(cls)
        Module.__init__(emb)
        emb.table = Tensor(np.array(matrix, dtype=np.float64),
                           requires_grad=True)
        return emb

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def __call__(self, ids: np.ndarray) -> Tensor:
        return rows(self.table, np.asarray(ids))


class LSTMCell(Module):
    """Single LSTM step. The four gates come out of one fused matmul in
    the fixed order (input, forget, cell, output)."""

    def __init__(self, input_dim: int, hidden_dim: int,
                 rng: np.random.Generator):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.w_input = parameter((input_dim, 4 * hidden_dim), rng)
        self.w_recur = parameter((hidden_dim, 4 * hidden_dim), rng)
        self.bias = parameter((4 * hidden_dim,), rng)

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        n = self.hidden_dim
        z = x @ self.w_input + h @ self.w_recur + self.bias
        i = z[:, 0 * n:1 * n].sigmoid()
        f = z[:, 1 * n:2 * n].sigmoid()
        g = z[:, 2 * n:3 * n].tanh()
        o = z[:, 3 * n:4 * n].sigmoid()
        c_next = f * c + i * g
        h_next = o * c_next.tanh()
        return h_next, c_next


class LayerNorm(Module):
    def __init__(self, dim: int):
        super().__init__()
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.shift = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        normed = centered * (var + _LN_EPS).pow_const(-0.5)
        return normed * self.gain + self.shift


class AdditiveAttention(Module):
    """Concat-style attention: score(s, h) = v . tanh(W_q s + W_k h)."""

    def __init__(self, query_dim: int, key_dim: int, attn_dim: int,
                 rng: np.random.Generator):
        super().__init__()
        self.w_query = parameter((query_dim, attn_dim), rng)
        self.w_key = parameter((key_dim, attn_dim), rng)
        self.v = parameter((attn_dim, 1), rng)

    def __call__(self, query: Tensor, keys: Tensor,
                 mask: np.ndarray) -> tuple[Tensor, Tensor]:
        """query (B, Q), keys (B, T, K), mask (B, T) with 1 = real token.
        Returns (context (B, K), weights (B, T))."""
        b, t, _ = keys.shape
        q = (query @ self.w_query).reshape(b, 1, -1)
        k = keys @ self.w_key
        scores = ((q + k).tanh() @ self.v).reshape(b, t)
        scores = scores + (np.asarray(mask, dtype=np.float64) - 1.0) * -NEG_INF
        weights = scores.softmax(axis=-1)
        context = (weights.reshape(b, 1, t) @ keys).reshape(b, -1)
        return context, weights


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(
                f"model dim {dim} is not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.w_query = Linear(dim, dim, rng)
        self.w_key = Linear(dim, dim, rng)
        self.w_value = Linear(dim, dim, rng)
        self.w_out = Linear(dim, dim, rng)

    def __call__(self, query: Tensor, keys: Tensor,
                 mask: np.ndarray | None) -> tuple[Tensor, np.ndarray]:
        """query (B, Tq, D), keys (B, Tk, D); mask is additive, broadcastable
        to (B, heads, Tq, Tk). Returns (output (B, Tq, D), head-averaged
        attention weights (B, Tq, Tk))."""
        b, tq, _ = query.shape
        tk = keys.shape[1]
        h, dh = self.heads, self.head_dim

        def split(x: Tensor, t: int) -> Tensor:
            return x.reshape(b, t, h, dh).swapaxes(1, 2)

        q = split(self.w_query(query), tq)
        k = split(self.w_key(keys), tk)
        v = split(self.w_value(keys), tk)
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dh))
        if mask is not None:
            scores = scores + np.asarray(mask, dtype=np.float64)
        attn = scores.softmax(axis=-1)
        mixed = (attn @ v).swapaxes(1, 2).reshape(b, tq, self.dim)
        return self.w_out(mixed), attn.data.mean(axis=1)


class FeedForward(Module):
    """Position-wise two-layer network with ReLU."""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.expand = Linear(dim, hidden, rng)
        self.contract = Linear(hidden, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.contract(self.expand(x).relu())


def dropout(x: Tensor, p: float, rng: np.random.Generator,
            train: bool) -> Tensor:
    if not train or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(np.float64) / (1.0 - p)
    return x * keep


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """Fixed position encodings: sin on even components, cos on odd."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    idx = np.arange(dim, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * np.floor(idx / 2.0) / dim)
    table = np.empty((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angles[:, 0::2])
    table[:, 1::2] = np.cos(angles[:, 1::2])
    return table


def padding_mask(ids: np.ndarray, pad_id: int = 0) -> np.ndarray:
    """(B, T) float mask, 1.0 on real tokens."""
    return (np.asarray(ids) != pad_id).astype(np.float64)


def attention_bias(key_mask: np.ndarray) -> np.ndarray:
    """Additive (B, 1, 1, Tk) bias blocking attention to padding keys."""
    return ((key_mask - 1.0) * -NEG_INF)[:, None, None, :]


def causal_bias(t: int) -> np.ndarray:
    """Additive (1, 1, T, T) bias blocking attention to future positions."""
    future = np.triu(np.ones((t, t)), k=1)
    return (future * NEG_INF)[None, None, :, :]
