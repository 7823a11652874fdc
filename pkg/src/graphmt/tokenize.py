"""Word tokenization helpers, BPE merge learning/application with
protected entity-annotation tokens, and closed-vocabulary construction.

The end-of-word convention appends "</w>" to the last symbol of every
word, so de-BPE is "concatenate, then split on the marker".
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
RESERVED = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = range(4)

EOW = "</w>"
MERGES_HEADER = "#bpe v1"

_UNESCAPED_PIPE = re.compile(r"(?<!\\)\|")


def is_protected(token: str) -> bool:
    """True for entity-annotation tokens: those containing an unescaped `|`."""
    return _UNESCAPED_PIPE.search(token) is not None


@dataclass
class MergeTable:
    merges: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        if len(set(self.merges)) != len(self.merges):
            raise ValueError("duplicate merge pair")

    def __len__(self) -> int:
        return len(self.merges)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(MERGES_HEADER + "\n")
            for left, right in self.merges:
                f.write(f"{left} {right}\n")

    @classmethod
    def load(cls, path: str) -> "MergeTable":
        merges = []
        with open(path, encoding="utf-8") as f:
            header = f.readline().rstrip("\n")
            if header != MERGES_HEADER:
                raise ValueError(f"{path}: expected header {MERGES_HEADER!r}, "
                                 f"got {header!r}")
            for line_no, line in enumerate(f, start=2):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split(" ")
                if len(parts) != 2:
                    raise ValueError(f"{path}:{line_no}: expected 'left right'")
                merges.append((parts[0], parts[1]))
        return cls(merges)


def word_symbols(word: str) -> tuple[str, ...]:
    """Initial BPE symbol sequence: characters, last one carrying the marker."""
    if EOW in word:
        # a raw marker inside a word would make de-BPE ambiguous
        raise ValueError(f"token {word!r} contains the reserved marker {EOW!r}")
    chars = list(word)
    chars[-1] += EOW
    return tuple(chars)


def learn_bpe(corpus: Iterable[Sequence[str]], num_merges: int,
              protected: Callable[[str], bool] = is_protected) -> MergeTable:
    """Learn `num_merges` merges by repeatedly joining the most frequent
    adjacent symbol pair; count ties go to the lexicographically smaller
    pair. Tokens satisfying `protected` are excluded from the statistics.
    """
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    word_freqs: dict[tuple[str, ...], int] = {}
    for sentence in corpus:
        for token in sentence:
            if not token or protected(token):
                continue
            key = word_symbols(token)
            word_freqs[key] = word_freqs.get(key, 0) + 1

    merges: list[tuple[str, str]] = []
    words = list(word_freqs.items())
    for _ in range(num_merges):
        pair_counts: dict[tuple[str, str], int] = {}
        for symbols, freq in words:
            for pair in zip(symbols, symbols[1:]):
                pair_counts[pair] = pair_counts.get(pair, 0) + freq
        if not pair_counts:
            break
        best = min(pair_counts, key=lambda p: (-pair_counts[p], p))
        merges.append(best)
        words = [(_merge_word(symbols, best), freq) for symbols, freq in words]
    return MergeTable(merges)


def _merge_word(symbols: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    out = []
    i = 0
    n = len(symbols)
    while i < n:
        if i + 1 < n and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(symbols[i] + symbols[i + 1])
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def apply_bpe(tokens: Sequence[str], merges: MergeTable,
              protected: Callable[[str], bool] = is_protected) -> list[str]:
    """Apply merges in table order to each word; protected tokens pass
    through atomically (no marker, no segmentation)."""
    out: list[str] = []
    cache: dict[str, tuple[str, ...]] = {}
    for token in tokens:
        if not token:
            continue
        if protected(token):
            out.append(token)
            continue
        segmented = cache.get(token)
        if segmented is None:
            symbols = word_symbols(token)
            for pair in merges.merges:
                if len(symbols) == 1:
                    break
                symbols = _merge_word(symbols, pair)
            cache[token] = symbols
            segmented = symbols
        out.extend(segmented)
    return out


def debpe(subwords: Sequence[str],
          protected: Callable[[str], bool] = is_protected) -> list[str]:
    """Invert apply_bpe: join symbols until an end-of-word marker closes a
    word; protected tokens (never segmented) are copied through."""
    out: list[str] = []
    buf: list[str] = []
    for sym in subwords:
        if protected(sym):
            if buf:
                out.append("".join(buf))
                buf = []
            out.append(sym)
            continue
        if sym.endswith(EOW):
            buf.append(sym[:-len(EOW)])
            out.append("".join(buf))
            buf = []
        else:
            buf.append(sym)
    if buf:
        out.append("".join(buf))
    return out


@dataclass
class Vocabulary:
    token_to_id: dict[str, int]
    id_to_token: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self.id_to_token[idx]

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for token in self.id_to_token:
                f.write(token + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            tokens = [line.rstrip("\n") for line in f]
        while tokens and tokens[-1] == "":
            tokens.pop()
        if tuple(tokens[:4]) != RESERVED:
            raise ValueError(f"{path}: first four lines must be the reserved "
                             f"tokens {RESERVED}")
        if len(set(tokens)) != len(tokens):
            raise ValueError(f"{path}: duplicate token")
        return cls({t: i for i, t in enumerate(tokens)}, tuple(tokens))


def build_vocab(corpus: Iterable[Sequence[str]], max_size: int) -> Vocabulary:
    """Most frequent tokens (ties: lexicographically smaller first), with
    the four reserved tokens prepended at ids 0..3."""
    if max_size <= 4:
        raise ValueError("max_size must be > 4")
    freqs: dict[str, int] = {}
    for sentence in corpus:
        for token in sentence:
            if token:
                freqs[token] = freqs.get(token, 0) + 1
    for r in RESERVED:
        freqs.pop(r, None)
    kept = sorted(freqs, key=lambda t: (-freqs[t], t))[:max_size - 4]
    tokens = RESERVED + tuple(kept)
    return Vocabulary({t: i for i, t in enumerate(tokens)}, tokens)


def numericalize(tokens: Sequence[str], vocab: Vocabulary) -> list[int]:
    return [vocab.id(t) for t in tokens]


def denumericalize(ids: Sequence[int], vocab: Vocabulary) -> list[str]:
    return [vocab.token(i) for i in ids]


def read_corpus(path: str) -> list[list[str]]:
    """One sentence per line, tokens space-separated."""
    with open(path, encoding="utf-8") as f:
        return [line.split() for line in f.read().splitlines()]


def write_corpus(sentences: Iterable[Sequence[str]], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for sent in sentences:
            f.write(" ".join(sent) + "\n")
