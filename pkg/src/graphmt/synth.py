"""Synthetic bilingual corpus and knowledge base generator.

Builds a template-based English-German parallel corpus whose entity
mentions are backed by a two-sided synthetic KB (labels plus sameAs
links), sized so that a full train-translate-evaluate experiment runs
on one CPU core in minutes. Entities are split into frequency bands:

  frequent   many training occurrences
  rare       exactly two training occurrences
  singleton  exactly one training occurrence
  held_out   test-only; never seen in training text

Held-out entities exercise unknown-word replacement, singletons give
the model in-domain UNK-to-UNK training signal once the vocabulary
cutoff drops them, and the rare band separates systems by how well
barely-seen tokens are represented.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from graphmt.kb import Literal, OWL_SAMEAS, RDFS_LABEL, Triple, TripleSet, serialize_ntriples
from graphmt.tokenize import write_corpus

EN_HOST = "http://dbpedia.org/resource/"
DE_HOST = "http://de.dbpedia.org/resource/"
EN_ONTO = "http://dbpedia.org/ontology/"
DE_ONTO = "http://de.dbpedia.org/ontology/"

BANDS = ("frequent", "rare", "singleton", "held_out")

# share of trainable entities per band; held_out is carved off first
FREQUENT_SHARE = 0.4
RARE_SHARE = 0.3
# share of training sentences without any entity slot
ENTITY_FREE_SHARE = 0.08
# share of entities whose German surface equals the English one
IDENTICAL_SURFACE_SHARE = 0.2

_SYLLABLES = (
    "ba bel bran dor fal gor hel kan kel lam lim mir mon nor pol "
    "ral sam tor val ven wen zel dran fol gri plo sten tur").split()


@dataclass(frozen=True)
class SynthConfig:
    train_pairs: int = 5000
    test_pairs: int = 400
    entities: int = 500
    held_out: int = 50
    seed: int = 13

    def __post_init__(self) -> None:
        if self.entities < 40:
            raise ValueError("need at least 40 entities, got %d" % self.entities)
        if not 0 < self.held_out < self.entities // 2:
            raise ValueError(
                "held_out must be positive and below half the entities")
        trainable = self.entities - self.held_out
        singles = trainable - int(trainable * (FREQUENT_SHARE + RARE_SHARE))
        rare = int(trainable * RARE_SHARE)
        floor = singles + 2 * rare + int(self.train_pairs * ENTITY_FREE_SHARE)
        if self.train_pairs < floor:
            raise ValueError(
                "train_pairs %d too small for %d entities (need >= %d)"
                % (self.train_pairs, self.entities, floor))
        if self.test_pairs < 2 * self.held_out + rare:
            raise ValueError(
                "test_pairs %d too small (need >= %d)"
                % (self.test_pairs, 2 * self.held_out + rare))


@dataclass(frozen=True)
class SynthEntity:
    iri: str
    iri_de: str
    surface: str
    surface_de: str
    etype: str
    band: str


@dataclass
class SynthData:
    train_source: list[list[str]]
    train_target: list[list[str]]
    test_source: list[list[str]]
    test_target: list[list[str]]
    kb_source: TripleSet
    kb_target: TripleSet
    entity_testset: list[tuple[int, str]]
    entities: list[SynthEntity]

    def band(self, name: str) -> list[SynthEntity]:
        if name not in BANDS:
            raise ValueError("unknown band %r" % name)
        return [e for e in self.entities if e.band == name]


# Each template is (source, target, fillers); {e} marks the entity slot
# and every other placeholder draws an aligned (english, german) pair.
_ADJ_CITY = [("large", "gross"), ("old", "alt"), ("beautiful", "schoen"),
             ("famous", "beruehmt")]
_GEO = [("valley", "tal"), ("forest", "wald"), ("border", "grenze"),
        ("mountains", "gebirge")]
_DAY = [("monday", "montag"), ("friday", "freitag"), ("sunday", "sonntag")]
_PLACE = [("market", "markt"), ("museum", "museum"), ("castle", "schloss"),
          ("harbour", "hafen")]
_SEASON = [("spring", "fruehjahr"), ("autumn", "herbst"), ("summer", "sommer")]
_TIME = [("year", "jahr"), ("month", "monat")]
_NUM = [("two", "zwei"), ("three", "drei"), ("four", "vier"), ("five", "fuenf")]

_TEMPLATES = {
    "city": [
        ("the city of {e} is {adj}", "die stadt {e} ist {adj}",
         {"adj": _ADJ_CITY}),
        ("many tourists visit {e} every {time}",
         "viele touristen besuchen {e} jedes {time}", {"time": _TIME}),
        ("{e} lies near the {geo}", "{e} liegt nahe dem {geo}",
         {"geo": _GEO}),
        ("the mayor of {e} spoke on {day}",
         "der buergermeister von {e} sprach am {day}", {"day": _DAY}),
    ],
    "river": [
        ("the river {e} flows through the {geo}",
         "der fluss {e} fliesst durch das {geo}", {"geo": _GEO}),
        ("a bridge crosses the {e} near the {place}",
         "eine bruecke ueberquert den {e} nahe dem {place}",
         {"place": _PLACE}),
        ("the {e} floods every {season}",
         "der {e} steigt jedes {season} stark an", {"season": _SEASON}),
        ("boats travel on the {e} in {season}",
         "boote fahren im {season} auf dem {e}", {"season": _SEASON}),
    ],
    "person": [
        ("{e} visited the {place} on {day}",
         "{e} besuchte den {place} am {day}",
         {"place": _PLACE, "day": _DAY}),
        ("{e} wrote a {adj} book", "{e} schrieb ein {adj} buch",
         {"adj": [("long", "langes"), ("short", "kurzes"),
                  ("famous", "beruehmtes")]}),
        ("the minister met {e} in the {place}",
         "der minister traf {e} im {place}", {"place": _PLACE}),
        ("{e} speaks {num} languages", "{e} spricht {num} sprachen",
         {"num": _NUM}),
    ],
    "company": [
        ("{e} builds {adj} engines", "{e} baut {adj} motoren",
         {"adj": [("fast", "schnelle"), ("modern", "moderne"),
                  ("heavy", "schwere")]}),
        ("{e} hired {num} workers this {time}",
         "{e} stellte dieses {time} {num} arbeiter ein",
         {"num": _NUM, "time": _TIME}),
        ("the factory of {e} stands near the {geo}",
         "die fabrik von {e} steht nahe dem {geo}", {"geo": _GEO}),
        ("{e} sells machines in every {place}",
         "{e} verkauft maschinen in jedem {place}", {"place": _PLACE}),
    ],
}

_PLAIN_TEMPLATES = [
    ("the weather was {adj} on {day}", "das wetter war am {day} {adj}",
     {"adj": [("cold", "kalt"), ("warm", "warm"), ("rainy", "regnerisch")],
      "day": _DAY}),
    ("farmers harvest {crop} in {season}",
     "bauern ernten {crop} im {season}",
     {"crop": [("wheat", "weizen"), ("corn", "mais"), ("hops", "hopfen")],
      "season": _SEASON}),
    ("the train arrives at {tod}", "der zug kommt am {tod} an",
     {"tod": [("noon", "mittag"), ("dawn", "morgen")]}),
    ("children play near the {geo}", "kinder spielen nahe dem {geo}",
     {"geo": _GEO}),
]

_TYPE_INFO = {
    # (english type node, german type node, german surface suffixes)
    "city": ("City", "Stadt", ("stadt", "burg", "heim")),
    "river": ("River", "Fluss", ("bach", "au")),
    "person": ("Person", "Person", ("mann", "sohn")),
    "company": ("Company", "Werk", ("werke", "bau")),
}
_REGION_COUNT = 8


def _template_lexicon() -> set[str]:
    words: set[str] = set()
    pools = list(_PLAIN_TEMPLATES)
    for tpls in _TEMPLATES.values():
        pools.extend(tpls)
    for src, tgt, fillers in pools:
        words.update(w.strip("{}") for w in src.split())
        words.update(w.strip("{}") for w in tgt.split())
        for pairs in fillers.values():
            for en, de in pairs:
                words.add(en)
                words.add(de)
    return words


def _make_entities(rng: np.random.Generator, config: SynthConfig) -> list[SynthEntity]:
    taken = _template_lexicon()
    types = sorted(_TEMPLATES)

    def fresh_name(syllable_count: int) -> str:
        while True:
            name = "".join(_SYLLABLES[int(rng.integers(len(_SYLLABLES)))]
                           for _ in range(syllable_count))
            if name not in taken:
                taken.add(name)
                return name

    trainable = config.entities - config.held_out
    frequent = int(trainable * FREQUENT_SHARE)
    rare = int(trainable * RARE_SHARE)
    bands = (["frequent"] * frequent + ["rare"] * rare
             + ["singleton"] * (trainable - frequent - rare)
             + ["held_out"] * config.held_out)

    entities = []
    for i, band in enumerate(bands):
        etype = types[i % len(types)]
        surface = fresh_name(int(rng.integers(2, 4)))
        if rng.random() < IDENTICAL_SURFACE_SHARE:
            surface_de = surface
        else:
            suffixes = _TYPE_INFO[etype][2]
            surface_de = surface + suffixes[int(rng.integers(len(suffixes)))]
            if surface_de in taken:
                surface_de = fresh_name(3)
            taken.add(surface_de)
        entities.append(SynthEntity(
            iri=EN_HOST + surface.capitalize(),
            iri_de=DE_HOST + surface_de.capitalize(),
            surface=surface,
            surface_de=surface_de,
            etype=etype,
            band=band,
        ))
    return entities


def _build_kbs(entities: Sequence[SynthEntity],
               rng: np.random.Generator) -> tuple[TripleSet, TripleSet]:
    en_triples: list[Triple] = []
    de_triples: list[Triple] = []
    for e in entities:
        en_type, de_type, _ = _TYPE_INFO[e.etype]
        region = int(rng.integers(_REGION_COUNT))
        en_triples.append(Triple(e.iri, RDFS_LABEL, Literal(e.surface, "en")))
        en_triples.append(Triple(e.iri, EN_ONTO + "type", EN_HOST + en_type))
        en_triples.append(
            Triple(e.iri, EN_ONTO + "region", EN_HOST + "Region%d" % region))
        en_triples.append(Triple(e.iri, OWL_SAMEAS, e.iri_de))
        de_triples.append(
            Triple(e.iri_de, RDFS_LABEL, Literal(e.surface_de, "de")))
        de_triples.append(Triple(e.iri_de, DE_ONTO + "type", DE_HOST + de_type))
        de_triples.append(
            Triple(e.iri_de, DE_ONTO + "region", DE_HOST + "Region%d" % region))
    return TripleSet(en_triples), TripleSet(de_triples)


def _render(rng: np.random.Generator, template, entity: SynthEntity | None
            ) -> tuple[list[str], list[str]]:
    src_tpl, tgt_tpl, fillers = template
    src_args: dict[str, str] = {}
    tgt_args: dict[str, str] = {}
    for key in sorted(fillers):
        pairs = fillers[key]
        en, de = pairs[int(rng.integers(len(pairs)))]
        src_args[key] = en
        tgt_args[key] = de
    if entity is not None:
        src_args["e"] = entity.surface
        tgt_args["e"] = entity.surface_de
    return (src_tpl.format(**src_args).split(),
            tgt_tpl.format(**tgt_args).split())


def _pick_template(rng: np.random.Generator, entity: SynthEntity | None):
    if entity is None:
        return _PLAIN_TEMPLATES[int(rng.integers(len(_PLAIN_TEMPLATES)))]
    pool = _TEMPLATES[entity.etype]
    return pool[int(rng.integers(len(pool)))]


def generate(config: SynthConfig = SynthConfig()) -> SynthData:
    """Produce the full corpus, KBs, and held-out entity testset."""
    rng = np.random.default_rng(config.seed)
    entities = _make_entities(rng, config)
    kb_en, kb_de = _build_kbs(entities, rng)

    frequent = [e for e in entities if e.band == "frequent"]
    rare = [e for e in entities if e.band == "rare"]
    singleton = [e for e in entities if e.band == "singleton"]
    held_out = [e for e in entities if e.band == "held_out"]

    slots: list[SynthEntity | None] = []
    slots.extend(singleton)
    slots.extend(rare)
    slots.extend(rare)
    free = int(config.train_pairs * ENTITY_FREE_SHARE)
    slots.extend([None] * free)
    remaining = config.train_pairs - len(slots)
    slots.extend(frequent[int(i)] for i in rng.integers(len(frequent),
                                                        size=remaining))
    order = rng.permutation(len(slots))
    train_src, train_tgt = [], []
    for i in order:
        src, tgt = _render(rng, _pick_template(rng, slots[i]), slots[i])
        train_src.append(src)
        train_tgt.append(tgt)

    test_slots: list[SynthEntity | None] = []
    test_slots.extend(held_out)
    test_slots.extend(held_out)
    test_slots.extend(rare)
    anchors = max(0, config.test_pairs - len(test_slots))
    plain = anchors // 4
    test_slots.extend(frequent[int(i)] for i in rng.integers(
        len(frequent), size=anchors - plain))
    test_slots.extend([None] * plain)
    test_order = rng.permutation(len(test_slots))
    test_src, test_tgt = [], []
    testset: list[tuple[int, str]] = []
    for line, i in enumerate(test_order):
        entity = test_slots[int(i)]
        src, tgt = _render(rng, _pick_template(rng, entity), entity)
        test_src.append(src)
        test_tgt.append(tgt)
        if entity is not None and entity.band == "held_out":
            testset.append((line, entity.surface_de))

    return SynthData(train_src, train_tgt, test_src, test_tgt,
                     kb_en, kb_de, testset, entities)


def write_synth(data: SynthData, out_dir: str | Path) -> dict[str, Path]:
    """Persist every artifact; returns the path of each written file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "train_source": out / "train.src",
        "train_target": out / "train.tgt",
        "test_source": out / "test.src",
        "test_target": out / "test.tgt",
        "kb_source": out / "kb_en.nt",
        "kb_target": out / "kb_de.nt",
        "entity_testset": out / "entity_testset.tsv",
        "entities": out / "entities.tsv",
    }
    write_corpus(data.train_source, str(paths["train_source"]))
    write_corpus(data.train_target, str(paths["train_target"]))
    write_corpus(data.test_source, str(paths["test_source"]))
    write_corpus(data.test_target, str(paths["test_target"]))
    paths["kb_source"].write_bytes(serialize_ntriples(data.kb_source))
    paths["kb_target"].write_bytes(serialize_ntriples(data.kb_target))
    with open(paths["entity_testset"], "w", encoding="utf-8") as f:
        for index, surface in data.entity_testset:
            f.write("%d\t%s\n" % (index, surface))
    with open(paths["entities"], "w", encoding="utf-8") as f:
        f.write("iri\tiri_de\tsurface\tsurface_de\ttype\tband\n")
        for e in data.entities:
            f.write("\t".join((e.iri, e.iri_de, e.surface, e.surface_de,
                               e.etype, e.band)) + "\n")
    return paths


def read_entity_testset(path: str | Path) -> list[tuple[int, str]]:
    """Parse index-tab-surface lines written by write_synth."""
    rows = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[1]:
                raise ValueError(
                    "%s:%d: expected 'index<TAB>surface'" % (path, line_no))
            try:
                index = int(parts[0])
            except ValueError:
                raise ValueError(
                    "%s:%d: bad index %r" % (path, line_no, parts[0])) from None
            rows.append((index, parts[1]))
    return rows


def generate_block_kg(entity_count: int = 200, blocks: int = 4,
                      edges_per_entity: int = 3, seed: int = 5) -> TripleSet:
    """A KG whose relational edges stay inside equal-sized entity blocks.

    Link prediction on such a graph should place same-block entities
    near each other, which makes intra- versus inter-block embedding
    similarity a clean training sanity check.
    """
    if entity_count < blocks * 2:
        raise ValueError("need at least two entities per block")
    rng = np.random.default_rng(seed)
    block_size = entity_count // blocks
    triples = []
    for i in range(entity_count):
        block = min(i // block_size, blocks - 1)
        start, stop = block * block_size, min((block + 1) * block_size,
                                              entity_count)
        if block == blocks - 1:
            stop = entity_count
        subject = EN_HOST + "E%d" % i
        for _ in range(edges_per_entity):
            other = int(rng.integers(start, stop))
            if other == i:
                other = start + (i - start + 1) % (stop - start)
            triples.append(Triple(subject, EN_ONTO + "linksTo",
                                  EN_HOST + "E%d" % other))
    return TripleSet(triples)
