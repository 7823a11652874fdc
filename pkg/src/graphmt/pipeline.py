"""End-to-end experiment driver.

One call runs a full experiment from a validated config: corpus and KB
loading, optional entity annotation or BPE, vocabulary construction,
KG embedding training and fusion, NMT training, decoding with UNK
replacement, and evaluation. Every run claims a fresh ``run_NNNN``
directory under the configured output root (reruns never overwrite)
and leaves a manifest recording the effective config, input hashes,
seeds, corpus statistics, and per-stage timings.

Strategy flows:

* ``baseline``   tokenize -> vocab -> train -> decode -> eval
* ``el_kge``     annotate both sides -> structure-mode KGE over the
  merged KBs -> concat fusion onto random internal embeddings
* ``sem_kge``    semantic-mode KGE (labels + subwords) -> init fusion
  seeding the whole embedding matrix

Hypotheses are always de-BPE'd and de-annotated before evaluation, so
reports are comparable across strategies. The decoder's raw output is
kept alongside as ``translations.raw.txt``; its ``<unk>`` count is the
pre-replacement OOV statistic.
"""

from __future__ import annotations

import hashlib
import os
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

import graphmt
from graphmt.config import PipelineConfig, deterministic_override
from graphmt.fusion import EmbeddingTable, fuse_concat, fuse_init
from graphmt.kb import (
    BilingualLexicon,
    build_label_index,
    extract_bilingual_lexicon,
    parse_ntriples,
    triples_to_records,
)
from graphmt.kge import train_kge
from graphmt.linker import annotate_corpus, build_entity_contexts, strip_annotations
from graphmt.metrics import EvalReport, evaluate, oov_count
from graphmt.nmt import (
    beam_search,
    build_model,
    greedy_decode,
    save_checkpoint,
    train,
    unk_replace,
    vocab_hash,
)
from graphmt.synth import read_entity_testset
from graphmt.tokenize import (
    PAD_ID,
    apply_bpe,
    build_vocab,
    debpe,
    denumericalize,
    learn_bpe,
    numericalize,
    read_corpus,
)


class PipelineError(Exception):
    pass


@dataclass
class RunResult:
    run_dir: Path
    report: EvalReport
    raw_translations: list[str]
    translations: list[str]
    manifest_path: Path
    checkpoint_path: Path


def claim_run_dir(root: Path) -> Path:
    """Create and return the lowest unused run_NNNN directory.

    Claiming via mkdir keeps the scheme append-only: an existing run is
    never reused, even after deletions leave gaps elsewhere.
    """
    root.mkdir(parents=True, exist_ok=True)
    n = 1
    while True:
        candidate = root / ("run_%04d" % n)
        try:
            candidate.mkdir()
            return candidate
        except FileExistsError:
            n += 1


def _sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _write_lines(path: Path, lines: list[str]) -> None:
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


class _Manifest:
    """Accumulates manifest sections; written atomically, possibly twice
    (once on failure with the failed stage marked, once on completion)."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.inputs: list[tuple[str, str]] = []
        self.stats: list[tuple[str, object]] = []
        self.timings: list[tuple[str, float]] = []

    def write(self, path: Path, status: str) -> None:
        lines = [
            "# experiment run manifest",
            "version = %s" % graphmt.__version__,
            "status = %s" % status,
            "",
            "[config]",
            self.config.to_text().rstrip("\n"),
            "",
            "[inputs]",
        ]
        lines += ["%s = sha256:%s" % (name, digest)
                  for name, digest in self.inputs]
        lines += [
            "",
            "[seeds]",
            "run = %d" % self.config.seed,
            "kge = %d" % self.config.kge.seed,
            "nmt = %d" % self.config.nmt.seed,
            "",
            "[stats]",
        ]
        lines += ["%s = %s" % (name, value) for name, value in self.stats]
        lines += ["", "[timings]"]
        lines += ["%s = %.3f" % (name, seconds)
                  for name, seconds in self.timings]
        _atomic_write(path, "\n".join(lines) + "\n")


def _hash_inputs(config: PipelineConfig, manifest: _Manifest) -> None:
    named = [
        ("train_source", config.train_source),
        ("train_target", config.train_target),
        ("test_source", config.test_source),
        ("test_target", config.test_target),
        ("kb_source", config.kb_source),
        ("kb_target", config.kb_target),
        ("entity_testset", config.entity_testset),
    ]
    for name, path in named:
        if path is not None:
            manifest.inputs.append((name, _sha256_file(path)))


def _internal_table(vocab, dim: int, rng: np.random.Generator) -> EmbeddingTable:
    """Random internal embeddings for the concat strategy; PAD stays zero
    like every other embedding row the models never train on."""
    vectors = {}
    for idx, token in enumerate(vocab.id_to_token):
        if idx == PAD_ID:
            vectors[token] = np.zeros(dim)
        else:
            vectors[token] = rng.uniform(-0.1, 0.1, dim)
    return EmbeddingTable(vectors, dim)


def _write_matrix(path: Path, vocab, matrix: np.ndarray) -> None:
    from graphmt.fusion import write_vectors

    write_vectors(str(path), list(vocab.id_to_token), matrix)


def run_pipeline(config: PipelineConfig) -> RunResult:
    """Execute one experiment; returns the evaluation and artifact paths.

    On any stage failure the manifest is still written with a
    ``failed at <stage>`` status before the exception propagates.
    """
    config = deterministic_override(config)
    run_dir = claim_run_dir(Path(config.output_dir))
    manifest = _Manifest(config)
    manifest_path = run_dir / "manifest.txt"
    stage = "setup"
    t_start = time.perf_counter()

    def tick(name: str, t0: float) -> None:
        manifest.timings.append((name, time.perf_counter() - t0))

    try:
        stage = "hash_inputs"
        t0 = time.perf_counter()
        _hash_inputs(config, manifest)
        tick(stage, t0)

        stage = "load_corpora"
        t0 = time.perf_counter()
        train_src = read_corpus(config.train_source)
        train_tgt = read_corpus(config.train_target)
        test_src = read_corpus(config.test_source)
        test_tgt = read_corpus(config.test_target)
        if len(train_src) != len(train_tgt):
            raise PipelineError(
                "training corpus sides have %d vs %d lines"
                % (len(train_src), len(train_tgt)))
        if len(test_src) != len(test_tgt):
            raise PipelineError(
                "test corpus sides have %d vs %d lines"
                % (len(test_src), len(test_tgt)))
        references = [" ".join(toks) for toks in test_tgt]
        testset = (read_entity_testset(config.entity_testset)
                   if config.entity_testset else None)
        manifest.stats.append(("train_pairs", len(train_src)))
        manifest.stats.append(("test_pairs", len(test_src)))
        tick(stage, t0)

        lexicon = BilingualLexicon()
        kb_src = kb_tgt = None
        if config.kb_source is not None:
            stage = "parse_kbs"
            t0 = time.perf_counter()
            kb_src = parse_ntriples(config.kb_source)
            kb_tgt = parse_ntriples(config.kb_target)
            manifest.stats.append(("kb_source_triples", len(kb_src)))
            manifest.stats.append(("kb_target_triples", len(kb_tgt)))
            if config.decode_unk_mode == "lexicon_then_copy":
                lexicon = extract_bilingual_lexicon(kb_src, kb_tgt)
                manifest.stats.append(("lexicon_entries", len(lexicon)))
            tick(stage, t0)

        if config.strategy == "el_kge":
            stage = "annotate"
            t0 = time.perf_counter()
            index_src = build_label_index(kb_src)
            index_tgt = build_label_index(kb_tgt)
            contexts_src = build_entity_contexts(kb_src)
            contexts_tgt = build_entity_contexts(kb_tgt)
            annotated_train = annotate_corpus(
                train_src, train_tgt, index_src, index_tgt,
                contexts_src, contexts_tgt, config.el_max_span)
            annotated_test = annotate_corpus(
                test_src, test_tgt, index_src, index_tgt,
                contexts_src, contexts_tgt, config.el_max_span)
            train_src, train_tgt = annotated_train.source, annotated_train.target
            test_src = annotated_test.source
            stats = annotated_train.stats
            manifest.stats.append(("mentions_detected", stats.mentions_detected))
            manifest.stats.append(("mentions_linked", stats.mentions_linked))
            manifest.stats.append(("ambiguous_resolved", stats.ambiguous_resolved))
            tick(stage, t0)

        if config.tokenization == "bpe":
            stage = "bpe"
            t0 = time.perf_counter()
            merges_src = learn_bpe(train_src, config.bpe_merges)
            merges_tgt = learn_bpe(train_tgt, config.bpe_merges)
            merges_src.save(str(run_dir / "bpe.src.merges"))
            merges_tgt.save(str(run_dir / "bpe.tgt.merges"))
            train_src = [apply_bpe(s, merges_src) for s in train_src]
            train_tgt = [apply_bpe(s, merges_tgt) for s in train_tgt]
            test_src = [apply_bpe(s, merges_src) for s in test_src]
            tick(stage, t0)

        stage = "vocab"
        t0 = time.perf_counter()
        vocab_src = build_vocab(train_src, config.vocab_max_source)
        vocab_tgt = build_vocab(train_tgt, config.vocab_max_target)
        vocab_src.save(str(run_dir / "vocab.src.txt"))
        vocab_tgt.save(str(run_dir / "vocab.tgt.txt"))
        manifest.stats.append(("vocab_source", len(vocab_src)))
        manifest.stats.append(("vocab_target", len(vocab_tgt)))
        tick(stage, t0)

        train_cfg = config.nmt
        src_matrix = tgt_matrix = None
        if config.strategy in ("el_kge", "sem_kge"):
            stage = "kge"
            t0 = time.perf_counter()
            records = triples_to_records(kb_src.merge(kb_tgt),
                                         mode=config.kge.mode)
            embedding = train_kge(records, config.kge).to_embedding()
            manifest.stats.append(("kge_records", len(records.records)))
            manifest.stats.append(("kge_vectors", len(embedding.vectors)))
            tick(stage, t0)

            stage = "fuse"
            t0 = time.perf_counter()
            rng = np.random.default_rng(config.seed)
            if config.strategy == "sem_kge":
                fused_src = fuse_init(embedding, vocab_src, config.nmt.dim, rng)
                fused_tgt = fuse_init(embedding, vocab_tgt, config.nmt.dim, rng)
            else:
                fused_src = fuse_concat(
                    _internal_table(vocab_src, config.nmt.dim, rng),
                    embedding, vocab_src)
                fused_tgt = fuse_concat(
                    _internal_table(vocab_tgt, config.nmt.dim, rng),
                    embedding, vocab_tgt)
            src_matrix, tgt_matrix = fused_src.matrix, fused_tgt.matrix
            # the checkpoint's config echo must rebuild the fused width
            train_cfg = replace(config.nmt, dim=src_matrix.shape[1])
            _write_matrix(run_dir / "embeddings.src.vec", vocab_src, src_matrix)
            _write_matrix(run_dir / "embeddings.tgt.vec", vocab_tgt, tgt_matrix)
            for side, fused in (("source", fused_src), ("target", fused_tgt)):
                cov = fused.coverage
                manifest.stats.append(
                    ("fuse_%s_covered" % side, cov.covered))
                manifest.stats.append(
                    ("fuse_%s_uncovered" % side,
                     cov.zero_filled + cov.random_init))
            tick(stage, t0)

        stage = "train"
        t0 = time.perf_counter()
        pairs = [(numericalize(s, vocab_src), numericalize(t, vocab_tgt))
                 for s, t in zip(train_src, train_tgt)]
        model = build_model(train_cfg, len(vocab_src), len(vocab_tgt),
                            src_matrix=src_matrix, tgt_matrix=tgt_matrix)
        result = train(model, pairs, train_cfg)
        if result.epoch_losses:
            manifest.stats.append(("train_loss_first", "%.6f" % result.epoch_losses[0]))
            manifest.stats.append(("train_loss_last", "%.6f" % result.epoch_losses[-1]))
        manifest.stats.append(("train_steps", result.steps))
        manifest.stats.append(("train_pairs_skipped", result.skipped))
        tick(stage, t0)

        stage = "checkpoint"
        t0 = time.perf_counter()
        checkpoint_path = run_dir / "model.gmt"
        save_checkpoint(str(checkpoint_path), model, train_cfg, {
            "source": vocab_hash(vocab_src.id_to_token),
            "target": vocab_hash(vocab_tgt.id_to_token),
        })
        tick(stage, t0)

        stage = "decode"
        t0 = time.perf_counter()
        raw_lines: list[str] = []
        final_lines: list[str] = []
        for src_tokens in test_src:
            ids = numericalize(src_tokens, vocab_src)
            if config.beam == 1:
                hyp = greedy_decode(model, ids, max_out_len=config.nmt.max_len)
            else:
                hyp = beam_search(model, ids, beam=config.beam,
                                  max_out_len=config.nmt.max_len)[0]
            raw_lines.append(" ".join(denumericalize(hyp.token_ids, vocab_tgt)))
            tokens = unk_replace(hyp, list(src_tokens), lexicon,
                                 config.decode_unk_mode, vocab_tgt)
            if config.tokenization == "bpe":
                tokens = debpe(tokens)
            final_lines.append(" ".join(strip_annotations(tokens)))
        _write_lines(run_dir / "translations.raw.txt", raw_lines)
        _write_lines(run_dir / "translations.txt", final_lines)
        manifest.stats.append(("raw_unk_count", oov_count(raw_lines)))
        tick(stage, t0)

        stage = "evaluate"
        t0 = time.perf_counter()
        report = evaluate(final_lines, references, testset)
        _atomic_write(run_dir / "report.txt", report.text() + "\n")
        _atomic_write(run_dir / "report.tsv", report.machine_line() + "\n")
        tick(stage, t0)
    except BaseException:
        manifest.timings.append(("total", time.perf_counter() - t_start))
        manifest.write(manifest_path, "failed at %s" % stage)
        raise

    manifest.timings.append(("total", time.perf_counter() - t_start))
    manifest.write(manifest_path, "complete")
    return RunResult(
        run_dir=run_dir,
        report=report,
        raw_translations=raw_lines,
        translations=final_lines,
        manifest_path=manifest_path,
        checkpoint_path=checkpoint_path,
    )
