import io

import pytest
from hypothesis import given, settings, strategies as st

from graphmt import kb
from graphmt.kb import (
    BilingualLexicon,
    EncodingError,
    Literal,
    ParseError,
    Triple,
    TripleSet,
    build_label_index,
    entity_token,
    extract_bilingual_lexicon,
    normalize_label,
    parse_ntriples,
    read_records,
    relation_token,
    serialize_ntriples,
    triples_to_records,
    write_records,
)

RDFS = "http://www.w3.org/2000/01/rdf-schema#label"
SAME = "http://www.w3.org/2002/07/owl#sameAs"
DBR = "http://dbpedia.org/resource/"
DBR_DE = "http://de.dbpedia.org/resource/"


def nt(*lines):
    return ("\n".join(lines) + "\n").encode("utf-8")


class TestParseNtriples:
    def test_conference_triple(self):
        # "NAACL takes place in North America" as a relational statement
        data = nt(f"<{DBR}NAACL> <http://dbpedia.org/ontology/areaServed> <{DBR}North_America> .")
        ts = parse_ntriples(data)
        assert ts.triples == (
            Triple(f"{DBR}NAACL", "http://dbpedia.org/ontology/areaServed", f"{DBR}North_America"),
        )
        assert ts.entity_count == 2
        assert ts.relation_count == 1

    def test_empty_input(self):
        ts = parse_ntriples(b"")
        assert len(ts) == 0
        assert ts.entity_count == 0
        assert ts.relation_count == 0

    def test_missing_dot_reports_line(self):
        data = nt(
            f"<{DBR}A> <{DBR}p> <{DBR}B> .",
            f"<{DBR}A> <{DBR}p> <{DBR}C>",
        )
        with pytest.raises(ParseError) as exc:
            parse_ntriples(data)
        assert exc.value.line == 2
        assert exc.value.column >= 1

    def test_literal_with_language_tag(self):
        data = nt(f'<{DBR}Cancer> <{RDFS}> "cancer"@en .')
        (t,) = parse_ntriples(data).triples
        assert t.object == Literal("cancer", "en")
        assert not t.is_relational

    def test_region_subtag_collapsed_to_primary(self):
        data = nt(f'<{DBR}Cancer> <{RDFS}> "cancer"@en-US .')
        (t,) = parse_ntriples(data).triples
        assert t.object.lang == "en"

    def test_escape_decoding(self):
        data = nt(f'<{DBR}X> <{RDFS}> "a\\"b\\\\c\\nd\\te" .')
        (t,) = parse_ntriples(data).triples
        assert t.object.text == 'a"b\\c\nd\te'

    def test_unicode_escape(self):
        data = nt(f'<{DBR}X> <{RDFS}> "Gro\\u00DFbritannien" .')
        (t,) = parse_ntriples(data).triples
        assert t.object.text == "Großbritannien"

    def test_comments_and_blank_lines_skipped(self):
        data = nt("# header", "", f"  <{DBR}A> <{DBR}p> <{DBR}B> .")
        assert len(parse_ntriples(data)) == 1

    def test_datatype_literal_accepted(self):
        data = nt(f'<{DBR}A> <{DBR}p> "42"^^<http://www.w3.org/2001/XMLSchema#integer> .')
        (t,) = parse_ntriples(data).triples
        assert t.object == Literal("42", None)

    def test_blank_node_object(self):
        data = nt(f"<{DBR}A> <{DBR}p> _:b0 .")
        (t,) = parse_ntriples(data).triples
        assert t.object == "_:b0"
        assert t.is_relational

    def test_literal_subject_rejected_with_column(self):
        data = nt(f'"x" <{DBR}p> <{DBR}B> .')
        with pytest.raises(ParseError) as exc:
            parse_ntriples(data)
        assert exc.value.line == 1
        assert exc.value.column == 1

    def test_blank_node_predicate_rejected(self):
        data = nt(f"<{DBR}A> _:p <{DBR}B> .")
        with pytest.raises(ParseError):
            parse_ntriples(data)

    def test_invalid_utf8(self):
        with pytest.raises(EncodingError) as exc:
            parse_ntriples(b"<http://a> <http://b> \xff .\n")
        assert exc.value.line == 1

    def test_trailing_garbage_rejected(self):
        data = nt(f"<{DBR}A> <{DBR}p> <{DBR}B> . extra")
        with pytest.raises(ParseError):
            parse_ntriples(data)

    def test_line_length_limit(self):
        data = b"<http://a> <http://b> <http://" + b"c" * 100 + b"> .\n"
        with pytest.raises(ParseError):
            parse_ntriples(data, max_line_length=50)

    def test_file_and_stream_sources(self, tmp_path):
        data = nt(f"<{DBR}A> <{DBR}p> <{DBR}B> .")
        p = tmp_path / "kb.nt"
        p.write_bytes(data)
        assert parse_ntriples(str(p)) == parse_ntriples(io.BytesIO(data))


class TestLabelIndex:
    def test_single_label(self):
        data = nt(f'<{DBR}Cancer> <{RDFS}> "cancer"@en .')
        idx = build_label_index(parse_ntriples(data))
        ((iri, prior),) = idx.lookup("cancer")
        assert iri == f"{DBR}Cancer"
        assert prior == 1

    def test_no_label_triples(self):
        data = nt(f"<{DBR}A> <{DBR}p> <{DBR}B> .")
        assert len(build_label_index(parse_ntriples(data))) == 0

    def test_ambiguous_label_ordered_by_prior_then_iri(self):
        # Hand enumeration over the fixture: Kiwifruit appears in 3 triples,
        # Kiwi_(bird) in 2, so the fruit candidate comes first.
        data = nt(
            f'<{DBR}Kiwi_(bird)> <{RDFS}> "Kiwi"@en .',
            f'<{DBR}Kiwifruit> <{RDFS}> "kiwi"@en .',
            f"<{DBR}Kiwi_(bird)> <{DBR}class> <{DBR}Bird> .",
            f"<{DBR}Kiwifruit> <{DBR}family> <{DBR}Actinidia> .",
            f"<{DBR}Kiwifruit> <{DBR}origin> <{DBR}China> .",
        )
        idx = build_label_index(parse_ntriples(data))
        assert idx.lookup("kiwi") == (
            (f"{DBR}Kiwifruit", 3),
            (f"{DBR}Kiwi_(bird)", 2),
        )

    def test_prior_tie_broken_by_iri(self):
        data = nt(
            f'<{DBR}B_ent> <{RDFS}> "kiwi"@en .',
            f'<{DBR}A_ent> <{RDFS}> "Kiwi"@en .',
        )
        idx = build_label_index(parse_ntriples(data))
        assert idx.lookup("kiwi") == ((f"{DBR}A_ent", 1), (f"{DBR}B_ent", 1))

    def test_lookup_normalizes_surface(self):
        data = nt(f'<{DBR}North_America> <{RDFS}> "North  America"@en .')
        idx = build_label_index(parse_ntriples(data))
        assert idx.lookup("NORTH AMERICA")[0][0] == f"{DBR}North_America"

    def test_requires_label_relations(self):
        with pytest.raises(ValueError):
            build_label_index(TripleSet([]), label_relations=())


class TestNormalizeLabel:
    def test_nfc_lower_collapse(self):
        # "Ä" as combining sequence normalizes to the composed code point
        assert normalize_label("Ärzte  \t Haus") == "ärzte haus"

    def test_empty(self):
        assert normalize_label("   ") == ""


class TestBilingualLexicon:
    def fixture(self):
        src = nt(
            f'<{DBR}Cancer> <{RDFS}> "cancer"@en .',
            f"<{DBR}Cancer> <{SAME}> <{DBR_DE}Krebs_(Medizin)> .",
            f"<{DBR}Cancer> <{SAME}> <{DBR_DE}Tumor> .",
        )
        tgt = nt(
            f'<{DBR_DE}Krebs_(Medizin)> <{RDFS}> "Krebs"@de .',
            f'<{DBR_DE}Tumor> <{RDFS}> "Tumor"@de .',
            f'<{DBR_DE}Tumor> <{RDFS}> "Geschwulst"@de .',
        )
        return parse_ntriples(src), parse_ntriples(tgt)

    def test_cancer_maps_to_krebs(self):
        lex = extract_bilingual_lexicon(*self.fixture())
        assert "Krebs" in lex.lookup("cancer")

    def test_two_targets_union_of_label_sets(self):
        # Manual path enumeration over the 6-triple fixture above.
        lex = extract_bilingual_lexicon(*self.fixture())
        assert set(lex.lookup("cancer")) == {"Krebs", "Tumor", "Geschwulst"}
        assert len(lex) == 1
        assert lex.skipped == ()

    def test_no_sameas(self):
        src = parse_ntriples(nt(f'<{DBR}A> <{RDFS}> "a"@en .'))
        tgt = parse_ntriples(nt(f'<{DBR_DE}B> <{RDFS}> "b"@de .'))
        lex = extract_bilingual_lexicon(src, tgt)
        assert len(lex) == 0

    def test_dangling_pair_skipped_and_reported(self):
        src = parse_ntriples(nt(
            f'<{DBR}A> <{RDFS}> "a"@en .',
            f"<{DBR}A> <{SAME}> <{DBR_DE}NoLabels> .",
        ))
        tgt = parse_ntriples(b"")
        lex = extract_bilingual_lexicon(src, tgt)
        assert len(lex) == 0
        assert len(lex.skipped) == 1
        assert "NoLabels" in lex.skip_report()[0]

    def test_lookup_is_case_insensitive_on_source(self):
        lex = BilingualLexicon(entries={"cancer": ("Krebs",)})
        assert lex.lookup("Cancer") == ("Krebs",)


class TestTokenEncoding:
    def test_plain_entity(self):
        assert entity_token(f"{DBR}Cancer") == "dbr_Cancer"

    def test_parentheses_kept(self):
        assert entity_token(f"{DBR}Krebs_(Medizin)") == "dbr_Krebs_(Medizin)"

    def test_language_host_prefix(self):
        assert entity_token(f"{DBR_DE}Krebs_(Medizin)") == "dbr_de_Krebs_(Medizin)"

    def test_unsafe_chars_percent_encoded(self):
        assert entity_token(f"{DBR}C%2B%2B") == "dbr_C%252B%252B"
        assert entity_token(f"{DBR}Saarbrücken") == "dbr_Saarbr%C3%BCcken"

    def test_www_not_a_language(self):
        assert entity_token("http://www.example.org/thing/Cancer") == "dbr_Cancer"

    def test_relation_token(self):
        assert relation_token("http://dbpedia.org/ontology/areaServed") == "areaServed"
        assert relation_token(RDFS) == "label"

    def test_token_never_contains_whitespace_or_pipe(self):
        tok = entity_token(f"{DBR}odd token|here")
        assert " " not in tok and "|" not in tok


class TestRecords:
    def test_structure_mode_doubles_triples(self):
        data = nt(f"<{DBR}NAACL> <http://dbpedia.org/ontology/areaServed> <{DBR}North_America> .")
        recs = triples_to_records(parse_ntriples(data), mode="structure")
        assert [(r.features, r.label) for r in recs] == [
            (("dbr_NAACL", "areaServed"), "dbr_North_America"),
            (("dbr_North_America", "areaServed"), "dbr_NAACL"),
        ]

    def test_semantic_mode_label_record(self):
        data = nt(
            f'<{DBR}NAACL> <{RDFS}> "North American Chapter of the'
            f' Association for Computational Linguistics"@en .',
        )
        recs = triples_to_records(parse_ntriples(data), mode="semantic")
        (rec,) = recs.records
        assert rec.label == "dbr_NAACL"
        assert rec.features[:3] == ("north", "american", "chapter")

    def test_semantic_mode_appends_input_side_labels(self):
        data = nt(
            f'<{DBR}NAACL> <{RDFS}> "naacl conference"@en .',
            f"<{DBR}NAACL> <{DBR}areaServed> <{DBR}North_America> .",
        )
        recs = triples_to_records(parse_ntriples(data), mode="semantic")
        by_label = {r.label: r.features for r in recs}
        assert by_label["dbr_North_America"] == (
            "dbr_NAACL", "areaServed", "naacl", "conference")
        # reverse direction: North_America has no labels, bag stays {t, r}
        assert by_label["dbr_NAACL"] in (
            ("dbr_North_America", "areaServed"),
            ("naacl", "conference"),
        )

    def test_max_bag_drops_label_tokens_first(self):
        words = " ".join(f"w{i}" for i in range(10))
        data = nt(
            f'<{DBR}E> <{RDFS}> "{words}"@en .',
            f"<{DBR}E> <{DBR}p> <{DBR}F> .",
        )
        recs = triples_to_records(parse_ntriples(data), mode="semantic", max_bag=4)
        rec = next(r for r in recs if r.label == "dbr_F")
        assert rec.features == ("dbr_E", "p", "w0", "w1")

    def test_empty_kb_rejected(self):
        with pytest.raises(ValueError):
            triples_to_records(TripleSet([]), mode="structure")

    def test_semantic_without_labels_warns(self):
        data = nt(f"<{DBR}A> <{DBR}p> <{DBR}B> .")
        recs = triples_to_records(parse_ntriples(data), mode="semantic")
        assert len(recs) == 2
        assert recs.warnings

    def test_bad_mode_rejected(self):
        data = nt(f"<{DBR}A> <{DBR}p> <{DBR}B> .")
        with pytest.raises(ValueError):
            triples_to_records(parse_ntriples(data), mode="translational")

    def test_record_file_round_trip(self, tmp_path):
        data = nt(
            f'<{DBR}A> <{RDFS}> "alpha beta"@en .',
            f"<{DBR}A> <{DBR}p> <{DBR}B> .",
        )
        recs = triples_to_records(parse_ntriples(data), mode="semantic")
        path = str(tmp_path / "records.txt")
        write_records(recs, path)
        back = read_records(path)
        assert [(r.features, r.label) for r in back] == \
               [(r.features, r.label) for r in recs]

    def test_record_tokens_nonempty_whitespace_free(self):
        data = nt(
            f'<{DBR}Krebs_(Medizin)> <{RDFS}> "Krebs (Medizin)"@de .',
            f"<{DBR}Krebs_(Medizin)> <{DBR}p> <{DBR}B> .",
        )
        recs = triples_to_records(parse_ntriples(data), mode="semantic")
        for rec in recs:
            for tok in rec.features + (rec.label,):
                assert tok and not any(c.isspace() for c in tok)


# --- property tests over randomized KBs ---

_iri = st.builds(
    lambda host, path: f"http://{host}/{path}",
    st.sampled_from(["dbpedia.org", "de.dbpedia.org", "example.com"]),
    st.text(st.sampled_from("abcdefgXYZ0123_().-"), min_size=1, max_size=12),
)
_bnode = st.builds(lambda s: f"_:{s}", st.text(
    st.sampled_from("abc012"), min_size=1, max_size=6))
_lang = st.sampled_from([None, "en", "de"])
_literal = st.builds(Literal, st.text(max_size=30).filter(
    lambda s: not any(0xD800 <= ord(c) <= 0xDFFF for c in s)), _lang)
_triple = st.builds(
    Triple,
    st.one_of(_iri, _bnode),
    st.one_of(_iri, st.just(RDFS)),
    st.one_of(_iri, _bnode, _literal),
)
_tripleset = st.lists(_triple, max_size=25).map(TripleSet)


@settings(max_examples=150, deadline=None)
@given(_tripleset)
def test_serialize_parse_round_trip(ts):
    once = parse_ntriples(serialize_ntriples(ts))
    twice = parse_ntriples(serialize_ntriples(once))
    assert once == twice
    assert once.triples == ts.triples


@settings(max_examples=150, deadline=None)
@given(_tripleset)
def test_counts_match_brute_force(ts):
    ents = {t.subject for t in ts} | {t.object for t in ts if t.is_relational}
    rels = {t.relation for t in ts}
    assert ts.entity_count == len(ents)
    assert ts.relation_count == len(rels)


@settings(max_examples=100, deadline=None)
@given(_tripleset)
def test_structure_record_count(ts):
    relational = sum(1 for t in ts if t.is_relational)
    if len(ts) == 0:
        return
    recs = triples_to_records(ts, mode="structure")
    assert len(recs) == 2 * relational


@settings(max_examples=100, deadline=None)
@given(_tripleset)
def test_every_label_reachable(ts):
    idx = build_label_index(ts)
    for t in ts:
        if t.relation == RDFS and isinstance(t.object, Literal):
            surface = normalize_label(t.object.text)
            if not surface:
                continue
            assert t.subject in [iri for iri, _ in idx.lookup(t.object.text)]


@settings(max_examples=100, deadline=None)
@given(_tripleset)
def test_label_index_order_deterministic(ts):
    a = build_label_index(ts)
    b = build_label_index(ts)
    for surface in a.surfaces():
        cands = a.lookup(surface)
        assert cands == b.lookup(surface)
        priors = [p for _, p in cands]
        assert priors == sorted(priors, reverse=True)
        for (i1, p1), (i2, p2) in zip(cands, cands[1:]):
            if p1 == p2:
                assert i1 < i2
