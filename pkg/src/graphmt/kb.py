"""Knowledge-base ingestion: N-Triples parsing, label indexing, bilingual
lexicon extraction and classification-record generation for KGE training.

Only the line-oriented N-Triples subset is supported (one statement per
line, UTF-8). Blank nodes are kept as opaque ``_:name`` tokens.
"""

from __future__ import annotations

import io
import re
import unicodedata
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Mapping, Sequence, Union

RDFS_LABEL = "http://www.w3.org/2000/01/rdf-schema#label"
OWL_SAMEAS = "http://www.w3.org/2002/07/owl#sameAs"

DEFAULT_MAX_LINE = 1 << 20
DEFAULT_MAX_BAG = 50


class KbError(Exception):
    """Base class for knowledge-base ingestion errors."""


class ParseError(KbError):
    def __init__(self, message: str, line: int, column: int = 0):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class EncodingError(KbError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Literal:
    """A literal object value with an optional lowercase language tag."""

    text: str
    lang: str | None = None


@dataclass(frozen=True)
class Triple:
    subject: str
    relation: str
    object: Union[str, Literal]

    @property
    def is_relational(self) -> bool:
        """True when the object is an IRI (or blank node), not a literal."""
        return not isinstance(self.object, Literal)


class TripleSet:
    """An ordered multiset of triples with cached entity/relation counts.

    Iteration order equals insertion order; instances are immutable once
    built and safe to share across threads.
    """

    def __init__(self, triples: Iterable[Triple]):
        self._triples = tuple(triples)
        entities = set()
        relations = set()
        for t in self._triples:
            entities.add(t.subject)
            relations.add(t.relation)
            if t.is_relational:
                entities.add(t.object)
        self._entity_count = len(entities)
        self._relation_count = len(relations)

    @property
    def triples(self) -> tuple[Triple, ...]:
        return self._triples

    @property
    def entity_count(self) -> int:
        return self._entity_count

    @property
    def relation_count(self) -> int:
        return self._relation_count

    def __iter__(self) -> Iterator[Triple]:
        return iter(self._triples)

    def __len__(self) -> int:
        return len(self._triples)

    def __eq__(self, other) -> bool:
        return isinstance(other, TripleSet) and self._triples == other._triples

    def merge(self, other: "TripleSet") -> "TripleSet":
        return TripleSet(self._triples + other._triples)


_IRIREF = re.compile(r"<([^<>\"{}|^`\\\x00-\x20]*)>")
_BNODE = re.compile(r"_:[A-Za-z0-9][A-Za-z0-9._-]*")
_LANGTAG = re.compile(r"@([A-Za-z]+(?:-[A-Za-z0-9]+)*)")

_ESCAPES = {'"': '"', "\\": "\\", "n": "\n", "r": "\r", "t": "\t"}


def _unescape(raw: str, line_no: int, col: int) -> str:
    if "\\" not in raw:
        return raw
    out = []
    i = 0
    n = len(raw)
    while i < n:
        ch = raw[i]
        if ch != "\\":
            out.append(ch)
            i += 1
            continue
        if i + 1 >= n:
            raise ParseError("dangling escape in literal", line_no, col + i + 1)
        nxt = raw[i + 1]
        if nxt in _ESCAPES:
            out.append(_ESCAPES[nxt])
            i += 2
        elif nxt == "u" and i + 6 <= n:
            out.append(chr(int(raw[i + 2:i + 6], 16)))
            i += 6
        elif nxt == "U" and i + 10 <= n:
            out.append(chr(int(raw[i + 2:i + 10], 16)))
            i += 10
        else:
            raise ParseError(f"unsupported escape '\\{nxt}' in literal", line_no, col + i + 1)
    return "".join(out)


def _escape_literal(text: str) -> str:
    return (text.replace("\\", "\\\\").replace('"', '\\"')
            .replace("\n", "\\n").replace("\r", "\\r").replace("\t", "\\t"))


class _LineParser:
    """Cursor-based parser for a single N-Triples statement line."""

    def __init__(self, line: str, line_no: int):
        self.line = line
        self.line_no = line_no
        self.pos = 0

    def error(self, message: str) -> ParseError:
        return ParseError(message, self.line_no, self.pos + 1)

    def skip_ws(self) -> None:
        while self.pos < len(self.line) and self.line[self.pos] in " \t":
            self.pos += 1

    def term(self, allow_literal: bool) -> Union[str, Literal]:
        self.skip_ws()
        if self.pos >= len(self.line):
            raise self.error("unexpected end of statement")
        ch = self.line[self.pos]
        if ch == "<":
            m = _IRIREF.match(self.line, self.pos)
            if not m:
                raise self.error("malformed IRI")
            self.pos = m.end()
            return m.group(1)
        if ch == "_":
            m = _BNODE.match(self.line, self.pos)
            if not m:
                raise self.error("malformed blank node")
            self.pos = m.end()
            return m.group(0)
        if ch == '"':
            if not allow_literal:
                raise self.error("literal not allowed in this position")
            return self._literal()
        raise self.error(f"unexpected character {ch!r}")

    def _literal(self) -> Literal:
        start = self.pos
        i = self.pos + 1
        line = self.line
        while i < len(line):
            if line[i] == "\\":
                i += 2
                continue
            if line[i] == '"':
                break
            i += 1
        if i >= len(line):
            raise self.error("unterminated literal")
        text = _unescape(line[start + 1:i], self.line_no, start + 1)
        self.pos = i + 1
        lang = None
        if self.pos < len(line) and line[self.pos] == "@":
            m = _LANGTAG.match(line, self.pos)
            if not m:
                raise self.error("malformed language tag")
            # normalize to the lowercase primary subtag ("en-US" -> "en")
            lang = m.group(1).split("-")[0].lower()
            self.pos = m.end()
        elif line.startswith("^^", self.pos):
            self.pos += 2
            m = _IRIREF.match(line, self.pos)
            if not m:
                raise self.error("malformed datatype IRI")
            self.pos = m.end()
        return Literal(text, lang)

    def end_of_statement(self) -> None:
        self.skip_ws()
        if self.pos >= len(self.line) or self.line[self.pos] != ".":
            raise self.error("statement must end with '.'")
        self.pos += 1
        self.skip_ws()
        if self.pos < len(self.line):
            raise self.error("trailing content after '.'")


def parse_ntriples(source: Union[bytes, str, IO[bytes]],
                   max_line_length: int = DEFAULT_MAX_LINE) -> TripleSet:
    """Parse an N-Triples byte stream into a :class:`TripleSet`.

    ``source`` may be raw bytes, a filesystem path, or a binary file
    object. Angle brackets are stripped from IRIs and literal escapes are
    decoded. Raises :class:`ParseError` with 1-based line/column on
    malformed statements and :class:`EncodingError` on invalid UTF-8.
    """
    if isinstance(source, bytes):
        stream: IO[bytes] = io.BytesIO(source)
        close = True
    elif isinstance(source, str):
        stream = open(source, "rb")
        close = True
    else:
        stream = source
        close = False
    try:
        triples = []
        for line_no, raw in enumerate(stream, start=1):
            if len(raw) > max_line_length:
                raise ParseError(f"line exceeds {max_line_length} bytes", line_no, max_line_length)
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise EncodingError(f"invalid UTF-8 ({exc.reason})", line_no) from exc
            line = line.rstrip("\r\n")
            stripped = line.lstrip(" \t")
            if not stripped or stripped.startswith("#"):
                continue
            p = _LineParser(line, line_no)
            subject = p.term(allow_literal=False)
            relation = p.term(allow_literal=False)
            if not isinstance(relation, str) or relation.startswith("_:"):
                raise ParseError("predicate must be an IRI", line_no, p.pos)
            obj = p.term(allow_literal=True)
            p.end_of_statement()
            triples.append(Triple(subject, relation, obj))
        return TripleSet(triples)
    finally:
        if close:
            stream.close()


def serialize_ntriples(kb: TripleSet, stream: IO[bytes] | None = None) -> bytes | None:
    """Serialize a TripleSet back to N-Triples bytes (round-trip stable)."""
    out = stream or io.BytesIO()
    for t in kb:
        parts = [_format_term(t.subject), _format_term(t.relation), _format_term(t.object)]
        out.write((" ".join(parts) + " .\n").encode("utf-8"))
    if stream is None:
        return out.getvalue()
    return None


def _format_term(term: Union[str, Literal]) -> str:
    if isinstance(term, Literal):
        body = f'"{_escape_literal(term.text)}"'
        return f"{body}@{term.lang}" if term.lang else body
    if term.startswith("_:"):
        return term
    return f"<{term}>"


def normalize_label(text: str) -> str:
    """Normalize a surface form: NFC, lowercase, collapse whitespace."""
    return " ".join(unicodedata.normalize("NFC", text).lower().split())


class LabelIndex:
    """Maps normalized surface forms to candidate entities.

    Candidate lists are sorted by frequency prior (descending), then IRI
    (ascending), so lookups are total and deterministic.
    """

    def __init__(self, index: Mapping[str, Sequence[tuple[str, int]]]):
        self._index = {
            surface: tuple(sorted(cands, key=lambda c: (-c[1], c[0])))
            for surface, cands in index.items()
        }

    def lookup(self, surface: str) -> tuple[tuple[str, int], ...]:
        return self._index.get(normalize_label(surface), ())

    def __contains__(self, surface: str) -> bool:
        return normalize_label(surface) in self._index

    def __len__(self) -> int:
        return len(self._index)

    def surfaces(self) -> Iterator[str]:
        return iter(self._index)


def build_label_index(kb: TripleSet,
                      label_relations: Iterable[str] = (RDFS_LABEL,)) -> LabelIndex:
    """Index every label literal in ``kb`` under its normalized surface.

    The disambiguation prior of an entity is the number of triples it
    appears in (as subject or object).
    """
    rels = frozenset(label_relations)
    if not rels:
        raise ValueError("label_relations must be nonempty")
    prior: dict[str, int] = {}
    for t in kb:
        prior[t.subject] = prior.get(t.subject, 0) + 1
        if t.is_relational:
            prior[t.object] = prior.get(t.object, 0) + 1
    index: dict[str, dict[str, int]] = {}
    for t in kb:
        if t.relation in rels and isinstance(t.object, Literal):
            surface = normalize_label(t.object.text)
            if not surface:
                continue
            index.setdefault(surface, {})[t.subject] = prior[t.subject]
    return LabelIndex({s: list(c.items()) for s, c in index.items()})


@dataclass
class BilingualLexicon:
    """Source-label to target-label mapping derived from sameAs links."""

    entries: dict[str, tuple[str, ...]] = field(default_factory=dict)
    skipped: tuple[str, ...] = ()

    def lookup(self, surface: str) -> tuple[str, ...]:
        return self.entries.get(normalize_label(surface), ())

    def __len__(self) -> int:
        return len(self.entries)

    def skip_report(self) -> list[str]:
        return [f"skipped sameAs pair without labels: {iri}" for iri in self.skipped]


def extract_bilingual_lexicon(kb_src: TripleSet, kb_tgt: TripleSet,
                              sameas_relation: str = OWL_SAMEAS) -> BilingualLexicon:
    """Derive label translations from sameAs-connected entity pairs.

    Every source label of a linked entity maps to every target label of
    its counterpart. Pairs whose endpoints carry no labels on either side
    are skipped and reported.
    """
    src_labels = _labels_by_entity(kb_src)
    tgt_labels = _labels_by_entity(kb_tgt)
    entries: dict[str, dict[str, None]] = {}
    skipped = []
    for t in kb_src.triples + kb_tgt.triples:
        if t.relation != sameas_relation or not t.is_relational:
            continue
        sources = src_labels.get(t.subject, ())
        targets = tgt_labels.get(t.object, ())
        if not sources or not targets:
            skipped.append(f"{t.subject} -> {t.object}")
            continue
        for s in sources:
            bucket = entries.setdefault(normalize_label(s), {})
            for g in targets:
                bucket[g] = None
    return BilingualLexicon(
        entries={k: tuple(v) for k, v in entries.items()},
        skipped=tuple(skipped),
    )


def _labels_by_entity(kb: TripleSet,
                      label_relations: frozenset[str] = frozenset({RDFS_LABEL})
                      ) -> dict[str, tuple[str, ...]]:
    out: dict[str, dict[str, None]] = {}
    for t in kb:
        if t.relation in label_relations and isinstance(t.object, Literal):
            out.setdefault(t.subject, {})[t.object.text] = None
    return {k: tuple(v) for k, v in out.items()}


# --- token encoding shared by records, annotation and embedding fusion ---

_TOKEN_SAFE = frozenset(
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789_()")
_HOST_LANG = re.compile(r"^[a-z][a-z0-9+.-]*://([a-z0-9-]{2,3})\.[^/]+\.[^/]+/")


def _encode_localname(local: str) -> str:
    out = []
    for ch in local:
        if ch in _TOKEN_SAFE:
            out.append(ch)
        else:
            out.append("".join(f"%{b:02X}" for b in ch.encode("utf-8")))
    return "".join(out)


def iri_localname(iri: str) -> str:
    tail = iri.rsplit("#", 1)[-1]
    return tail.rsplit("/", 1)[-1]


def entity_token(iri: str) -> str:
    """Encode an entity IRI as a corpus-safe token, e.g. ``dbr_Cancer``.

    A two/three-letter language subdomain in the IRI host (as in the
    German chapter of a KB) becomes part of the prefix: ``dbr_de_Krebs``.
    """
    if iri.startswith("_:"):
        return "dbr_" + _encode_localname(iri[2:])
    m = _HOST_LANG.match(iri)
    sub = m.group(1) if m else None
    prefix = f"dbr_{sub}_" if sub and sub != "www" else "dbr_"
    return prefix + _encode_localname(iri_localname(iri))


def relation_token(iri: str) -> str:
    return _encode_localname(iri_localname(iri)) or "rel"


# --- classification records for the KGE trainer ---

@dataclass(frozen=True)
class KgeRecord:
    features: tuple[str, ...]
    label: str


@dataclass
class KgeRecordSet:
    records: list[KgeRecord]
    warnings: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[KgeRecord]:
        return iter(self.records)


def triples_to_records(kb: TripleSet, mode: str = "structure",
                       max_bag: int = DEFAULT_MAX_BAG,
                       label_relations: Iterable[str] = (RDFS_LABEL,)) -> KgeRecordSet:
    """Turn a KB into bidirectional link-prediction records.

    Per relational triple two records are emitted, ``{h, r} -> t`` and
    ``{t, r} -> h``. In semantic mode, label words of the input-side
    entity are appended to the bag (dropped first when the bag exceeds
    ``max_bag``) and each label triple additionally yields a
    ``{label words} -> entity`` record. Entities keep their IRI-derived
    tokens so that annotated corpora and the KGE share a vocabulary.
    """
    if len(kb) == 0:
        raise ValueError("cannot build records from an empty knowledge base")
    if max_bag < 2:
        raise ValueError("max_bag must be >= 2")
    if mode not in ("structure", "semantic"):
        raise ValueError(f"unknown mode {mode!r}")
    rels = frozenset(label_relations)
    semantic = mode == "semantic"

    label_words: dict[str, list[str]] = {}
    if semantic:
        for t in kb:
            if t.relation in rels and isinstance(t.object, Literal):
                words = normalize_label(t.object.text).split()
                if words:
                    label_words.setdefault(t.subject, []).extend(words)

    records = []
    warnings = []
    for t in kb:
        if not t.is_relational:
            continue
        h = entity_token(t.subject)
        r = relation_token(t.relation)
        o = entity_token(t.object)
        records.append(_make_record([h, r], label_words.get(t.subject) if semantic else None,
                                    o, max_bag))
        records.append(_make_record([o, r], label_words.get(t.object) if semantic else None,
                                    h, max_bag))
    if semantic:
        for t in kb:
            if t.relation in rels and isinstance(t.object, Literal):
                words = normalize_label(t.object.text).split()
                if words:
                    records.append(KgeRecord(tuple(words[:max_bag]), entity_token(t.subject)))
        if not label_words:
            warnings.append("semantic mode requested but the KB contains no label triples; "
                            "only structure records were emitted")
    return KgeRecordSet(records, warnings)


def _make_record(core: list[str], extra: list[str] | None, label: str, max_bag: int) -> KgeRecord:
    bag = list(core)
    if extra:
        bag.extend(extra[:max(0, max_bag - len(bag))])
    return KgeRecord(tuple(bag), label)


def write_records(recset: KgeRecordSet, path: str) -> None:
    """One record per line: space-separated features, tab, label token."""
    with open(path, "w", encoding="utf-8") as f:
        for rec in recset:
            f.write(" ".join(rec.features) + "\t" + rec.label + "\n")


def read_records(path: str) -> KgeRecordSet:
    records = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                features, label = line.split("\t")
            except ValueError:
                raise KbError(f"{path}:{line_no}: expected 'features<TAB>label'") from None
            records.append(KgeRecord(tuple(features.split()), label))
    return KgeRecordSet(records)
