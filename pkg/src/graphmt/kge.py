"""Knowledge-graph embedding trainer: a linear bag-of-words classifier
with hierarchical softmax over a Huffman tree of labels and optional
subword character n-grams.

Each record is (feature-token bag z_n, label token y_n); the model
minimizes -(1/N) sum_n log P(y_n | mean of V rows of z_n) by SGD with a
linearly decaying learning rate. The per-record inner loop lives in a
swappable kernel: `graphmt._kge_inner` (compiled) when importable, else
`graphmt.kge_inner` (pure Python). Set GRAPHMT_KERNEL=python|cython to
force one.
"""

from __future__ import annotations

import heapq
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from graphmt.kb import KgeRecordSet

_FORCED = os.environ.get("GRAPHMT_KERNEL", "").strip().lower()
if _FORCED not in ("", "python", "cython"):
    raise ImportError(f"GRAPHMT_KERNEL must be 'python' or 'cython', got {_FORCED!r}")
if _FORCED == "python":
    from graphmt import kge_inner as _kernel
    KERNEL_BACKEND = "python"
else:
    try:
        from graphmt import _kge_inner as _kernel  # type: ignore[no-redef]
        KERNEL_BACKEND = "cython"
    except ImportError:
        if _FORCED == "cython":
            raise
        from graphmt import kge_inner as _kernel  # type: ignore[no-redef]
        KERNEL_BACKEND = "python"

FNV_OFFSET = 2166136261
FNV_PRIME = 16777619


@dataclass
class KgeConfig:
    dim: int = 500
    epochs: int = 5
    lr: float = 0.05
    min_subword: int = 2
    max_subword: int = 5
    bucket_count: int = 1 << 21
    threads: int = 1
    seed: int = 1
    mode: str = "structure"

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.min_subword > self.max_subword:
            raise ValueError("min_subword must be <= max_subword")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.bucket_count < 1 or self.bucket_count & (self.bucket_count - 1):
            raise ValueError("bucket_count must be a power of two")
        if self.mode not in ("structure", "semantic"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def use_subwords(self) -> bool:
        return self.mode == "semantic"


@dataclass
class HuffmanTree:
    """Prefix-free codes over labels plus per-label internal-node paths.

    `paths[label]` lists internal-node indices from the root down;
    `codes[label]` holds the branch bit taken at each of those nodes
    (0 = left/smaller at build time, 1 = right). `depths[i]` is the
    distance of internal node i from the root.
    """

    labels: tuple[str, ...]
    codes: dict[str, tuple[int, ...]]
    paths: dict[str, tuple[int, ...]]
    depths: tuple[int, ...]

    @property
    def internal_count(self) -> int:
        return len(self.depths)


def build_huffman(label_freqs: dict[str, int]) -> HuffmanTree:
    """Build a deterministic Huffman tree over label frequencies.

    Heap keys are (freq, kind, tiebreak) with leaves ordered before
    internal nodes of equal frequency, leaf ties broken by token and
    internal ties by creation order, so the shape is a pure function of
    the frequency map.
    """
    if not label_freqs:
        raise ValueError("label_freqs must be nonempty")
    for token, freq in label_freqs.items():
        if freq <= 0:
            raise ValueError(f"label {token!r} has nonpositive frequency")
    labels = tuple(sorted(label_freqs))
    if len(labels) == 1:
        return HuffmanTree(labels, {labels[0]: ()}, {labels[0]: ()}, ())

    # heap entries: (freq, kind, tiebreak, node); leaves carry their token,
    # internal nodes their creation index, so same-kind keys stay comparable
    heap: list[tuple[int, int, object, object]] = [
        (label_freqs[t], 0, t, t) for t in labels]
    heapq.heapify(heap)
    children: list[tuple[object, object]] = []
    while len(heap) > 1:
        fa, _, _, a = heapq.heappop(heap)
        fb, _, _, b = heapq.heappop(heap)
        idx = len(children)
        children.append((a, b))
        heapq.heappush(heap, (fa + fb, 1, idx, idx))

    root = len(children) - 1
    codes: dict[str, tuple[int, ...]] = {}
    paths: dict[str, tuple[int, ...]] = {}
    depths = [0] * len(children)
    stack: list[tuple[object, tuple[int, ...], tuple[int, ...], int]] = [(root, (), (), 0)]
    while stack:
        node, code, path, depth = stack.pop()
        if isinstance(node, str):
            codes[node] = code
            paths[node] = path
            continue
        depths[node] = depth
        left, right = children[node]
        stack.append((left, code + (0,), path + (node,), depth + 1))
        stack.append((right, code + (1,), path + (node,), depth + 1))
    return HuffmanTree(labels, codes, paths, tuple(depths))


def subword_ngrams(token: str, min_n: int, max_n: int) -> list[str]:
    """Character n-grams of "<token>", shorter lengths first, left to right."""
    if not token:
        raise ValueError("token must be nonempty")
    if min_n > max_n:
        raise ValueError("min_n must be <= max_n")
    marked = f"<{token}>"
    grams = []
    for n in range(min_n, max_n + 1):
        for i in range(len(marked) - n + 1):
            grams.append(marked[i:i + n])
    return grams


def fnv1a(text: str) -> int:
    """32-bit FNV-1a over the UTF-8 bytes of `text`."""
    h = FNV_OFFSET
    for b in text.encode("utf-8"):
        h = ((h ^ b) * FNV_PRIME) & 0xFFFFFFFF
    return h


@dataclass
class KgeModel:
    """Trained classifier state: lookup matrix V over dictionary tokens
    (plus subword buckets in semantic mode) and hierarchical-softmax node
    vectors W."""

    config: KgeConfig
    tokens: tuple[str, ...]
    token_ids: dict[str, int]
    tree: HuffmanTree
    label_ids: dict[str, int]
    V: np.ndarray
    W: np.ndarray
    epoch_losses: list[float] = field(default_factory=list)
    bucket_access_count: int = 0

    @property
    def dim(self) -> int:
        return self.config.dim

    def _bucket_rows(self, token: str) -> list[int]:
        base = len(self.tokens)
        cfg = self.config
        return [base + fnv1a(g) % cfg.bucket_count
                for g in subword_ngrams(token, cfg.min_subword, cfg.max_subword)]

    def input_rows(self, token: str) -> list[int]:
        """All V rows a feature token contributes: its dictionary row plus,
        in semantic mode, one row per hashed subword n-gram."""
        rows = []
        tid = self.token_ids.get(token)
        if tid is not None:
            rows.append(tid)
        if self.config.use_subwords:
            rows.extend(self._bucket_rows(token))
        return rows

    def to_embedding(self) -> "KgEmbedding":
        vectors = {t: self.V[i].copy() for i, t in enumerate(self.tokens)}
        buckets = self.V[len(self.tokens):].copy() if self.config.use_subwords else None
        return KgEmbedding(vectors=vectors, dim=self.config.dim,
                           min_subword=self.config.min_subword,
                           max_subword=self.config.max_subword,
                           bucket_count=self.config.bucket_count,
                           hash_name="fnv1a32",
                           buckets=buckets)


@dataclass
class KgEmbedding:
    """Token-to-vector map; in semantic mode the hashed n-gram bucket rows
    are retained so unseen tokens resolve to their subword mean."""

    vectors: dict[str, np.ndarray]
    dim: int
    min_subword: int = 2
    max_subword: int = 5
    bucket_count: int = 0
    hash_name: str = ""
    buckets: np.ndarray | None = None

    @property
    def semantic(self) -> bool:
        return self.buckets is not None

    def resolve(self, token: str) -> np.ndarray | None:
        """Exact-match vector, else subword composition, else None."""
        vec = self.vectors.get(token)
        if vec is not None:
            return vec
        if self.buckets is None or not token:
            return None
        rows = [fnv1a(g) % self.bucket_count
                for g in subword_ngrams(token, self.min_subword, self.max_subword)]
        return self.buckets[rows].mean(axis=0)

    def save(self, path: str) -> None:
        from graphmt import fusion
        fusion.write_vectors(path, list(self.vectors), np.array(
            [self.vectors[t] for t in self.vectors]))


def _pack_records(records: KgeRecordSet, config: KgeConfig):
    """CSR-pack records into kernel arrays plus dictionaries and the tree."""
    token_ids: dict[str, int] = {}
    label_freqs: dict[str, int] = {}
    for rec in records:
        for tok in rec.features:
            if tok not in token_ids:
                token_ids[tok] = len(token_ids)
        label_freqs[rec.label] = label_freqs.get(rec.label, 0) + 1

    tree = build_huffman(label_freqs)
    label_ids = {t: i for i, t in enumerate(tree.labels)}
    n_tokens = len(token_ids)

    feat_flat: list[int] = []
    feat_off = [0]
    path_flat: list[int] = []
    code_flat: list[int] = []
    path_off = [0]
    for rec in records:
        for tok in rec.features:
            feat_flat.append(token_ids[tok])
            if config.use_subwords:
                feat_flat.extend(
                    n_tokens + fnv1a(g) % config.bucket_count
                    for g in subword_ngrams(tok, config.min_subword, config.max_subword))
        feat_off.append(len(feat_flat))
        path_flat.extend(tree.paths[rec.label])
        code_flat.extend(tree.codes[rec.label])
        path_off.append(len(path_flat))

    arrays = (
        np.asarray(feat_flat, dtype=np.int32),
        np.asarray(feat_off, dtype=np.int64),
        np.asarray(path_flat, dtype=np.int32),
        np.asarray(code_flat, dtype=np.int8),
        np.asarray(path_off, dtype=np.int64),
    )
    return token_ids, label_ids, tree, arrays


def train_kge(records: KgeRecordSet, config: KgeConfig) -> KgeModel:
    """Train the classifier over `records`; deterministic when threads=1."""
    if len(records) == 0:
        raise ValueError("records must be nonempty")
    token_ids, label_ids, tree, arrays = _pack_records(records, config)
    feat_flat, feat_off, path_flat, code_flat, path_off = arrays

    rng = np.random.default_rng(config.seed)
    n_rows = len(token_ids) + (config.bucket_count if config.use_subwords else 0)
    V = rng.uniform(-1.0 / config.dim, 1.0 / config.dim,
                    (n_rows, config.dim)).astype(np.float64)
    W = np.zeros((max(1, tree.internal_count), config.dim), dtype=np.float64)

    n = len(records)
    total = n * config.epochs
    model = KgeModel(config=config, tokens=tuple(token_ids), token_ids=token_ids,
                     tree=tree, label_ids=label_ids, V=V, W=W)
    for epoch in range(config.epochs):
        order = rng.permutation(n).astype(np.int64)
        loss = _kernel.train_shard(V, W, feat_flat, feat_off,
                                   path_flat, code_flat, path_off, order,
                                   config.lr, epoch * n, total, config.threads)
        model.epoch_losses.append(loss / n)
    return model


def kge_vector(source: KgeModel | KgEmbedding, token: str) -> np.ndarray | None:
    """Vector for `token`: its dictionary row, else (semantic mode) the
    mean of its hashed subword-bucket rows, else None."""
    if isinstance(source, KgEmbedding):
        return source.resolve(token)
    tid = source.token_ids.get(token)
    if tid is not None:
        return source.V[tid].copy()
    if not source.config.use_subwords or not token:
        return None
    rows = source._bucket_rows(token)
    source.bucket_access_count += len(rows)
    return source.V[rows].mean(axis=0)


def hidden_for_features(model: KgeModel, features: Sequence[str]) -> np.ndarray:
    """BoW hidden state: mean of all V rows contributed by `features`."""
    rows: list[int] = []
    for tok in features:
        rows.extend(model.input_rows(tok))
    if not rows:
        raise ValueError("no feature resolves to any input row")
    return model.V[rows].mean(axis=0)


def label_log_probs(model: KgeModel, features: Sequence[str]) -> dict[str, float]:
    """log P(label | features) for every label, via tree-path products."""
    h = hidden_for_features(model, features)
    out = {}
    for label in model.tree.labels:
        total = 0.0
        for node, bit in zip(model.tree.paths[label], model.tree.codes[label]):
            s = float(model.W[node] @ h)
            total += -_np_softplus(-s) if bit else -_np_softplus(s)
        out[label] = total
    return out


def _np_softplus(x: float) -> float:
    if x > 30.0:
        return x
    if x < -30.0:
        return float(np.exp(x))
    return float(np.log1p(np.exp(x)))


def nearest_neighbors(embedding: KgEmbedding, token: str, k: int) -> list[tuple[str, float]]:
    """Top-k dictionary tokens by cosine similarity to `token`'s vector,
    excluding the query itself; ties broken lexicographically. Zero-norm
    candidates are skipped (their cosine is undefined)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    query = embedding.resolve(token)
    if query is None:
        raise KeyError(f"token {token!r} is not resolvable in this embedding")
    qnorm = float(np.linalg.norm(query))
    if qnorm == 0.0:
        raise ValueError(f"token {token!r} has a zero vector; cosine undefined")
    scored = []
    for cand in sorted(embedding.vectors):
        if cand == token:
            continue
        vec = embedding.vectors[cand]
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            continue
        cos = float(query @ vec) / (qnorm * norm)
        scored.append((-cos, cand))
    scored.sort()
    return [(tok, -negcos) for negcos, tok in scored[:k]]


def loss_and_grads(V: np.ndarray, W: np.ndarray, records: Iterable[tuple[list[int], str]],
                   tree: HuffmanTree) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean hierarchical-softmax loss over records plus analytic gradients
    for every V row and W node vector, at 64-bit precision.

    Records are (input row list, label token) pairs. This is the
    reference implementation the SGD kernels and the finite-difference
    checks are validated against; it performs no updates.
    """
    V = np.asarray(V, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    dV = np.zeros_like(V)
    dW = np.zeros_like(W)
    records = list(records)
    n = len(records)
    if n == 0:
        raise ValueError("records must be nonempty")
    total = 0.0
    for rows, label in records:
        h = V[rows].mean(axis=0)
        gh = np.zeros_like(h)
        for node, bit in zip(tree.paths[label], tree.codes[label]):
            s = float(W[node] @ h)
            f = 1.0 / (1.0 + np.exp(-np.clip(s, -500, 500)))
            total += _np_softplus(-s) if bit else _np_softplus(s)
            # d loss / d s = f - bit
            dW[node] += (f - bit) * h
            gh += (f - bit) * W[node]
        for r in rows:
            dV[r] += gh / len(rows)
    return total / n, dV / n, dW / n
