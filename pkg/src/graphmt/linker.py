"""Dictionary-based entity linking: mention detection against a label
index, context-overlap disambiguation, and corpus annotation into
`surface|dbr_URI` tokens.

Mentions are matched case-insensitively; the annotated token keeps the
original surface casing, with its tokens joined by "_" and any literal
"|" escaped as "\\|". Lossless de-annotation assumes word tokens do not
themselves contain "_", the joiner character.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from graphmt.kb import (
    RDFS_LABEL,
    LabelIndex,
    Literal,
    TripleSet,
    _encode_localname,
    iri_localname,
    normalize_label,
)

DEFAULT_MAX_SPAN = 5
SOURCE_PREFIX = "dbr_"
TARGET_PREFIX = "dbr_de_"

_UNESCAPED_PIPE = re.compile(r"(?<!\\)\|")


@dataclass(frozen=True)
class Mention:
    start: int
    end: int
    surface: str
    candidates: tuple[tuple[str, int], ...]

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValueError("mention span must satisfy 0 <= start < end")


@dataclass
class AnnotationStats:
    mentions_detected: int = 0
    mentions_linked: int = 0
    ambiguous_resolved: int = 0

    def report(self) -> str:
        return (f"mentions_detected\t{self.mentions_detected}\n"
                f"mentions_linked\t{self.mentions_linked}\n"
                f"ambiguous_resolved\t{self.ambiguous_resolved}\n")


@dataclass
class AnnotatedParallelCorpus:
    source: list[list[str]]
    target: list[list[str]]
    stats: AnnotationStats = field(default_factory=AnnotationStats)


def detect_mentions(tokens: Sequence[str], index: LabelIndex,
                    max_span: int = DEFAULT_MAX_SPAN) -> list[Mention]:
    """Greedy leftmost-longest matching of normalized token windows.

    At each position, windows of max_span down to 1 tokens are looked up;
    the first (longest) hit becomes a mention and scanning resumes after
    it, so returned spans are disjoint and sorted.
    """
    if max_span < 1:
        raise ValueError("max_span must be >= 1")
    mentions = []
    i = 0
    n = len(tokens)
    while i < n:
        matched = False
        for span in range(min(max_span, n - i), 0, -1):
            window = tokens[i:i + span]
            candidates = index.lookup(" ".join(window))
            if candidates:
                mentions.append(Mention(i, i + span, " ".join(window), candidates))
                i += span
                matched = True
                break
        if not matched:
            i += 1
    return mentions


def build_entity_contexts(kb: TripleSet,
                          label_relations: Sequence[str] = (RDFS_LABEL,)
                          ) -> dict[str, frozenset[str]]:
    """Per entity: the normalized words of its own labels plus the label
    words of every entity it shares a relational triple with."""
    rels = frozenset(label_relations)
    own: dict[str, set[str]] = {}
    neighbors: dict[str, set[str]] = {}
    for t in kb:
        if t.relation in rels and isinstance(t.object, Literal):
            own.setdefault(t.subject, set()).update(
                normalize_label(t.object.text).split())
        elif t.is_relational:
            neighbors.setdefault(t.subject, set()).add(t.object)
            neighbors.setdefault(t.object, set()).add(t.subject)
    out = {}
    for entity in set(own) | set(neighbors):
        words = set(own.get(entity, ()))
        for nb in neighbors.get(entity, ()):
            words.update(own.get(nb, ()))
        out[entity] = frozenset(words)
    return out


def disambiguate(mention: Mention, context: Sequence[str],
                 entity_contexts: Mapping[str, frozenset[str]] | None = None
                 ) -> str:
    """Pick one candidate entity: highest context-overlap count, then
    highest prior, then lexicographically smallest IRI.

    The overlap count is the number of context token occurrences whose
    normalized form appears among the candidate's KB label words and
    neighbor-entity label words (per `entity_contexts`).
    """
    if not mention.candidates:
        raise ValueError(f"mention {mention.surface!r} has no candidates")
    ctx_words = [normalize_label(tok) for tok in context]
    best = None
    for iri, prior in mention.candidates:
        cand_words = (entity_contexts or {}).get(iri, frozenset())
        overlap = sum(1 for w in ctx_words if w in cand_words)
        key = (-overlap, -prior, iri)
        if best is None or key < best[0]:
            best = (key, iri)
    return best[1]


def _escape_pipes(token: str) -> str:
    return token.replace("|", "\\|")


def _unescape_pipes(token: str) -> str:
    return token.replace("\\|", "|")


def annotation_token(surface_tokens: Sequence[str], iri: str, prefix: str) -> str:
    surface = "_".join(_escape_pipes(t) for t in surface_tokens)
    return f"{surface}|{prefix}{_encode_localname(iri_localname(iri))}"


def split_annotation(token: str) -> tuple[str, str] | None:
    """Split an annotated token at its last unescaped `|` into
    (surface part, URI token part); None for plain tokens."""
    positions = [m.start() for m in _UNESCAPED_PIPE.finditer(token)]
    if not positions:
        return None
    p = positions[-1]
    return token[:p], token[p + 1:]


def strip_annotations(tokens: Sequence[str]) -> list[str]:
    """Invert annotation: drop `|URI` suffixes, unescape pipes, split the
    underscore-joined surfaces back into their original tokens."""
    out: list[str] = []
    for token in tokens:
        parts = split_annotation(token)
        if parts is None:
            out.append(_unescape_pipes(token))
        else:
            out.extend(_unescape_pipes(w) for w in parts[0].split("_"))
    return out


def annotate_sentence(tokens: Sequence[str], index: LabelIndex, prefix: str,
                      entity_contexts: Mapping[str, frozenset[str]] | None = None,
                      max_span: int = DEFAULT_MAX_SPAN,
                      stats: AnnotationStats | None = None) -> list[str]:
    mentions = detect_mentions(tokens, index, max_span)
    if stats is not None:
        stats.mentions_detected += len(mentions)
    out: list[str] = []
    pos = 0
    for m in mentions:
        out.extend(_escape_pipes(t) for t in tokens[pos:m.start])
        iri = disambiguate(m, tokens, entity_contexts)
        out.append(annotation_token(tokens[m.start:m.end], iri, prefix))
        if stats is not None:
            stats.mentions_linked += 1
            if len(m.candidates) > 1:
                stats.ambiguous_resolved += 1
        pos = m.end
    out.extend(_escape_pipes(t) for t in tokens[pos:])
    return out


def annotate_corpus(source: Sequence[Sequence[str]], target: Sequence[Sequence[str]],
                    index_src: LabelIndex, index_tgt: LabelIndex,
                    contexts_src: Mapping[str, frozenset[str]] | None = None,
                    contexts_tgt: Mapping[str, frozenset[str]] | None = None,
                    max_span: int = DEFAULT_MAX_SPAN) -> AnnotatedParallelCorpus:
    """Annotate both sides of a parallel corpus independently; the source
    side gets `dbr_` URI tokens, the target side `dbr_de_`."""
    if len(source) != len(target):
        raise ValueError(f"line-count mismatch: {len(source)} source vs "
                         f"{len(target)} target sentences")
    stats = AnnotationStats()
    out_src = [annotate_sentence(s, index_src, SOURCE_PREFIX, contexts_src,
                                 max_span, stats) for s in source]
    out_tgt = [annotate_sentence(t, index_tgt, TARGET_PREFIX, contexts_tgt,
                                 max_span, stats) for t in target]
    return AnnotatedParallelCorpus(out_src, out_tgt, stats)
