"""Embedding file I/O (word2vec text format) and the two KG fusion
strategies: concat(E, E') appending KG vectors to internal embeddings,
and init(E') seeding the NMT embedding matrix.

Fusion accepts any vector source with `.dim` and `.resolve(token)`
(returning a vector or None): a trained KgEmbedding, a loaded
EmbeddingTable, or any external embedding file read back through
`read_embeddings` — the init path is the same mechanism used for
pretrained monolingual vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from graphmt.linker import split_annotation
from graphmt.tokenize import PAD_ID, Vocabulary


class VectorSource(Protocol):
    dim: int

    def resolve(self, token: str) -> np.ndarray | None: ...


class EmbeddingFormatError(Exception):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class EmbeddingTable:
    vectors: dict[str, np.ndarray]
    dim: int

    def __len__(self) -> int:
        return len(self.vectors)

    def resolve(self, token: str) -> np.ndarray | None:
        return self.vectors.get(token)


@dataclass
class CoverageReport:
    covered: int = 0
    zero_filled: int = 0
    random_init: int = 0

    @property
    def total(self) -> int:
        return self.covered + self.zero_filled + self.random_init

    def report(self) -> str:
        return (f"covered\t{self.covered}\n"
                f"zero_filled\t{self.zero_filled}\n"
                f"random_init\t{self.random_init}\n")


@dataclass
class FusedEmbeddingMatrix:
    matrix: np.ndarray
    coverage: CoverageReport
    mode: str

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return self.matrix.shape[0]


def write_vectors(path: str, tokens: list[str], matrix: np.ndarray) -> None:
    """word2vec text format; floats written in shortest round-trip form."""
    matrix = np.asarray(matrix)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{len(tokens)} {matrix.shape[1]}\n")
        for token, row in zip(tokens, matrix):
            f.write(token + " " + " ".join(repr(float(x)) for x in row) + "\n")


def read_vectors(path: str) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        parts = header.split()
        if len(parts) != 2:
            raise EmbeddingFormatError("header must be 'token_count dim'", 1)
        try:
            count, dim = int(parts[0]), int(parts[1])
        except ValueError:
            raise EmbeddingFormatError("header must be 'token_count dim'", 1) from None
        if count < 0 or dim < 1:
            raise EmbeddingFormatError("header counts out of range", 1)
        tokens: list[str] = []
        vecs = np.empty((count, dim), dtype=np.float64)
        line_no = 1
        for line in f:
            line_no += 1
            line = line.rstrip("\n")
            if not line:
                continue
            if len(tokens) == count:
                raise EmbeddingFormatError(
                    f"more rows than the declared {count}", line_no)
            fields = line.split(" ")
            if len(fields) != dim + 1:
                raise EmbeddingFormatError(
                    f"expected 1 token + {dim} floats, got {len(fields)} fields",
                    line_no)
            try:
                vecs[len(tokens)] = [float(x) for x in fields[1:]]
            except ValueError:
                raise EmbeddingFormatError("malformed float", line_no) from None
            tokens.append(fields[0])
        if len(tokens) != count:
            raise EmbeddingFormatError(
                f"header declared {count} rows but file has {len(tokens)}",
                line_no + 1)
    return tokens, vecs


def write_embeddings(table: EmbeddingTable, path: str) -> None:
    tokens = list(table.vectors)
    write_vectors(path, tokens, np.array([table.vectors[t] for t in tokens]))


def read_embeddings(path: str) -> EmbeddingTable:
    tokens, vecs = read_vectors(path)
    return EmbeddingTable({t: vecs[i] for i, t in enumerate(tokens)},
                          int(vecs.shape[1]))


def _kge_slice(kge: VectorSource, token: str) -> np.ndarray | None:
    """Resolve the KGE vector for a vocab token: its annotation URI part
    first, else the bare token."""
    parts = split_annotation(token)
    if parts is not None:
        vec = kge.resolve(parts[1])
        if vec is not None:
            return vec
    return kge.resolve(token)


def fuse_concat(nmt_emb: EmbeddingTable, kge: VectorSource,
                vocab: Vocabulary) -> FusedEmbeddingMatrix:
    """Per vocab token: [E(token) || E'(uri part or bare token)], with a
    zero KGE slice when nothing resolves. Output dim = m + d."""
    m, d = nmt_emb.dim, kge.dim
    out = np.zeros((len(vocab), m + d), dtype=np.float64)
    cov = CoverageReport()
    for idx, token in enumerate(vocab.id_to_token):
        base = nmt_emb.resolve(token)
        if base is None:
            raise ValueError(f"internal embedding missing vocab token {token!r}")
        out[idx, :m] = base
        kvec = _kge_slice(kge, token)
        if kvec is None:
            cov.zero_filled += 1
        else:
            out[idx, m:] = kvec
            cov.covered += 1
    return FusedEmbeddingMatrix(out, cov, "concat")


def fuse_init(kge: VectorSource, vocab: Vocabulary, m: int,
              rng: np.random.Generator) -> FusedEmbeddingMatrix:
    """Seed a |vocab| x m matrix from E': resolved tokens get their KGE
    vector, the PAD row is zero, everything else draws uniform[-0.1, 0.1]."""
    if kge.dim != m:
        raise ValueError(f"dimension mismatch: embeddings are {kge.dim}-dim "
                         f"but the model expects {m}")
    out = np.empty((len(vocab), m), dtype=np.float64)
    cov = CoverageReport()
    for idx, token in enumerate(vocab.id_to_token):
        if idx == PAD_ID:
            out[idx] = 0.0
            cov.zero_filled += 1
            continue
        vec = _kge_slice(kge, token)
        if vec is None:
            out[idx] = rng.uniform(-0.1, 0.1, m)
            cov.random_init += 1
        else:
            out[idx] = vec
            cov.covered += 1
    return FusedEmbeddingMatrix(out, cov, "init")
