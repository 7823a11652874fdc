"""Command-line interface.

Subcommands wrap one module each (`kb`, `kge`, `el`, `bpe`, `vocab`,
`fuse`, `nmt`, `eval`, `synth`) plus `pipeline run`, which drives a
whole experiment from a config file.

Exit codes: 0 on success, 1 for configuration errors (config file
validation, invariant violations detected before any work), 2 for
runtime failures (unreadable inputs, parse errors, training failures).
"""

from __future__ import annotations

import contextlib
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

import graphmt
from graphmt.config import ConfigError, validate_config
from graphmt.fusion import (
    EmbeddingFormatError,
    EmbeddingTable,
    fuse_concat,
    fuse_init,
    read_embeddings,
    read_vectors,
    write_vectors,
)
from graphmt.kb import (
    BilingualLexicon,
    KbError,
    extract_bilingual_lexicon,
    build_label_index,
    parse_ntriples,
    read_records,
    serialize_ntriples,
    triples_to_records,
    write_records,
    OWL_SAMEAS,
    RDFS_LABEL,
)
from graphmt.kge import KgeConfig, train_kge
from graphmt.linker import annotate_corpus, build_entity_contexts, strip_annotations
from graphmt.metrics import evaluate
from graphmt.nmt import (
    CheckpointError,
    TrainConfig,
    TrainingDiverged,
    beam_search,
    build_model,
    greedy_decode,
    load_checkpoint,
    restore_model,
    save_checkpoint,
    train,
    unk_replace,
    vocab_hash,
)
from graphmt.pipeline import PipelineError, run_pipeline
from graphmt.synth import SynthConfig, generate, read_entity_testset, write_synth
from graphmt.tokenize import (
    MergeTable,
    Vocabulary,
    apply_bpe,
    build_vocab,
    learn_bpe,
    numericalize,
    denumericalize,
    read_corpus,
    write_corpus,
)


class _ConfigFailure(click.ClickException):
    exit_code = 1


class _RuntimeFailure(click.ClickException):
    exit_code = 2


@contextlib.contextmanager
def _guard():
    """Map domain exceptions onto the documented exit codes."""
    try:
        yield
    except ConfigError as exc:
        raise _ConfigFailure("\n".join(exc.errors)) from exc
    except (KbError, CheckpointError, PipelineError, TrainingDiverged,
            EmbeddingFormatError, OSError, ValueError, KeyError) as exc:
        raise _RuntimeFailure(str(exc)) from exc


@click.group()
@click.version_option(graphmt.__version__, prog_name="graphmt")
def cli():
    """Knowledge-graph augmented machine translation toolkit."""


# --------------------------------------------------------------- kb

@cli.group()
def kb():
    """Knowledge base parsing and KGE record extraction."""


@kb.command("parse")
@click.argument("kb_file", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out", type=click.Path(dir_okay=False),
              help="Re-serialize the parsed KB as canonical N-Triples.")
def kb_parse(kb_file, out):
    """Parse an N-Triples file and report its shape."""
    with _guard():
        kb_set = parse_ntriples(kb_file)
        subjects = {t.subject for t in kb_set}
        labels = sum(1 for t in kb_set if t.relation == RDFS_LABEL)
        sameas = sum(1 for t in kb_set if t.relation == OWL_SAMEAS)
        if out:
            Path(out).write_bytes(serialize_ntriples(kb_set))
    click.echo("triples\t%d" % len(kb_set))
    click.echo("subjects\t%d" % len(subjects))
    click.echo("labels\t%d" % labels)
    click.echo("sameas\t%d" % sameas)


@kb.command("records")
@click.argument("kb_file", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False))
@click.option("--mode", type=click.Choice(["structure", "semantic"]),
              default="structure", show_default=True)
@click.option("--max-bag", type=int, default=64, show_default=True,
              help="Cap on feature-bag size per record.")
def kb_records(kb_file, out, mode, max_bag):
    """Emit link-prediction training records for the KGE trainer."""
    with _guard():
        kb_set = parse_ntriples(kb_file)
        records = triples_to_records(kb_set, mode=mode, max_bag=max_bag)
        write_records(records, out)
    click.echo("records\t%d" % len(records))
    for warning in records.warnings:
        click.echo("warning\t%s" % warning, err=True)


# --------------------------------------------------------------- kge

@cli.group()
def kge():
    """Knowledge graph embedding training."""


@kge.command("train")
@click.argument("records_file", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False),
              help="Output embedding file (word2vec text format).")
@click.option("--dim", type=int, default=500, show_default=True)
@click.option("--epochs", type=int, default=5, show_default=True)
@click.option("--lr", type=float, default=0.05, show_default=True)
@click.option("--mode", type=click.Choice(["structure", "semantic"]),
              default="structure", show_default=True)
@click.option("--min-subword", type=int, default=2, show_default=True)
@click.option("--max-subword", type=int, default=5, show_default=True)
@click.option("--bucket-count", type=int, default=1 << 21, show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=1, show_default=True)
def kge_train(records_file, out, dim, epochs, lr, mode, min_subword,
              max_subword, bucket_count, threads, seed):
    """Train embeddings from a records file."""
    with _guard():
        records = read_records(records_file)
        config = KgeConfig(dim=dim, epochs=epochs, lr=lr, mode=mode,
                           min_subword=min_subword, max_subword=max_subword,
                           bucket_count=bucket_count, threads=threads,
                           seed=seed)
        model = train_kge(records, config)
        embedding = model.to_embedding()
        tokens = list(embedding.vectors)
        write_vectors(out, tokens,
                      np.array([embedding.vectors[t] for t in tokens]))
    click.echo("records\t%d" % len(records))
    click.echo("vectors\t%d" % len(tokens))
    click.echo("final_loss\t%.6f" % model.epoch_losses[-1])


# --------------------------------------------------------------- el

@cli.group()
def el():
    """Entity linking over parallel corpora."""


@el.command("annotate")
@click.argument("source", type=click.Path(exists=True, dir_okay=False))
@click.argument("target", type=click.Path(exists=True, dir_okay=False))
@click.option("--kb-source", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--kb-target", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out-source", required=True, type=click.Path(dir_okay=False))
@click.option("--out-target", required=True, type=click.Path(dir_okay=False))
@click.option("--max-span", type=int, default=5, show_default=True)
def el_annotate(source, target, kb_source, kb_target, out_source, out_target,
                max_span):
    """Annotate entity mentions with `surface|dbr_URI` tokens."""
    with _guard():
        src_corpus = read_corpus(source)
        tgt_corpus = read_corpus(target)
        kb_src = parse_ntriples(kb_source)
        kb_tgt = parse_ntriples(kb_target)
        annotated = annotate_corpus(
            src_corpus, tgt_corpus,
            build_label_index(kb_src), build_label_index(kb_tgt),
            build_entity_contexts(kb_src), build_entity_contexts(kb_tgt),
            max_span)
        write_corpus(annotated.source, out_source)
        write_corpus(annotated.target, out_target)
    click.echo(annotated.stats.report(), nl=False)


# --------------------------------------------------------------- bpe

@cli.group()
def bpe():
    """Byte pair encoding."""


@bpe.command("learn")
@click.argument("corpus", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False))
@click.option("--merges", type=int, default=500, show_default=True)
def bpe_learn(corpus, out, merges):
    """Learn a merge table from a tokenized corpus."""
    with _guard():
        table = learn_bpe(read_corpus(corpus), merges)
        table.save(out)
    click.echo("merges\t%d" % len(table))


@bpe.command("apply")
@click.argument("corpus", type=click.Path(exists=True, dir_okay=False))
@click.argument("merges_file", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False))
def bpe_apply(corpus, merges_file, out):
    """Segment a corpus with a learned merge table."""
    with _guard():
        table = MergeTable.load(merges_file)
        segmented = [apply_bpe(line, table) for line in read_corpus(corpus)]
        write_corpus(segmented, out)
    click.echo("sentences\t%d" % len(segmented))


# --------------------------------------------------------------- vocab

@cli.group()
def vocab():
    """Closed vocabulary construction."""


@vocab.command("build")
@click.argument("corpus", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False))
@click.option("--max-size", type=int, default=50000, show_default=True)
def vocab_build(corpus, out, max_size):
    """Build a frequency-ranked vocabulary file."""
    with _guard():
        built = build_vocab(read_corpus(corpus), max_size)
        built.save(out)
    click.echo("tokens\t%d" % len(built))


# --------------------------------------------------------------- fuse

@cli.group()
def fuse():
    """Embedding fusion.

    Vocabulary files define the row order of every emitted matrix.
    """


@fuse.command("concat")
@click.option("--internal", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Internal NMT embeddings (word2vec text).")
@click.option("--kge", "kge_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--vocab", "vocab_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False))
def fuse_concat_cmd(internal, kge_file, vocab_file, out):
    """Append KG vectors to internal embeddings per vocabulary token."""
    with _guard():
        vocabulary = Vocabulary.load(vocab_file)
        fused = fuse_concat(read_embeddings(internal),
                            read_embeddings(kge_file), vocabulary)
        write_vectors(out, list(vocabulary.id_to_token), fused.matrix)
    click.echo(fused.coverage.report(), nl=False)


@fuse.command("init")
@click.option("--kge", "kge_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--vocab", "vocab_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--dim", type=int, required=True,
              help="Model embedding width; must equal the KGE dimension.")
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False))
def fuse_init_cmd(kge_file, vocab_file, dim, seed, out):
    """Seed a full embedding matrix from KG vectors."""
    with _guard():
        vocabulary = Vocabulary.load(vocab_file)
        fused = fuse_init(read_embeddings(kge_file), vocabulary, dim,
                          np.random.default_rng(seed))
        write_vectors(out, list(vocabulary.id_to_token), fused.matrix)
    click.echo(fused.coverage.report(), nl=False)


# --------------------------------------------------------------- nmt

@cli.group()
def nmt():
    """Translation model training and decoding."""


def _matrix_for_vocab(path: str, vocabulary: Vocabulary) -> np.ndarray:
    tokens, matrix = read_vectors(path)
    rows = {t: i for i, t in enumerate(tokens)}
    missing = [t for t in vocabulary.id_to_token if t not in rows]
    if missing:
        raise ValueError("embedding file %s lacks %d vocabulary tokens "
                         "(first: %r)" % (path, len(missing), missing[0]))
    return np.array([matrix[rows[t]] for t in vocabulary.id_to_token])


@nmt.command("train")
@click.argument("source", type=click.Path(exists=True, dir_okay=False))
@click.argument("target", type=click.Path(exists=True, dir_okay=False))
@click.option("--src-vocab", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--tgt-vocab", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False),
              help="Checkpoint output path.")
@click.option("--arch", type=click.Choice(["rnn", "transformer"]),
              default="rnn", show_default=True)
@click.option("--epochs", type=int, default=1, show_default=True)
@click.option("--batch-size", type=int, default=32, show_default=True)
@click.option("--token-budget", type=int, default=4076, show_default=True)
@click.option("--optimizer", type=click.Choice(["sgd", "adam"]),
              default="sgd", show_default=True)
@click.option("--lr", type=float, default=0.0002, show_default=True)
@click.option("--dropout", type=float, default=0.3, show_default=True)
@click.option("--max-len", type=int, default=80, show_default=True)
@click.option("--dim", type=int, default=64, show_default=True)
@click.option("--hidden", type=int, default=64, show_default=True)
@click.option("--layers", type=int, default=2, show_default=True)
@click.option("--heads", type=int, default=8, show_default=True)
@click.option("--ff-hidden", type=int, default=256, show_default=True)
@click.option("--warmup", type=int, default=8000, show_default=True)
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("--src-embeddings", type=click.Path(exists=True, dir_okay=False),
              help="Fused source embedding matrix (word2vec text).")
@click.option("--tgt-embeddings", type=click.Path(exists=True, dir_okay=False))
def nmt_train(source, target, src_vocab, tgt_vocab, out, arch, epochs,
              batch_size, token_budget, optimizer, lr, dropout, max_len,
              dim, hidden, layers, heads, ff_hidden, warmup, seed,
              src_embeddings, tgt_embeddings):
    """Train an encoder-decoder model on a parallel corpus."""
    with _guard():
        src_corpus = read_corpus(source)
        tgt_corpus = read_corpus(target)
        if len(src_corpus) != len(tgt_corpus):
            raise ValueError("corpus sides have %d vs %d lines"
                             % (len(src_corpus), len(tgt_corpus)))
        vocab_src = Vocabulary.load(src_vocab)
        vocab_tgt = Vocabulary.load(tgt_vocab)
        src_matrix = (_matrix_for_vocab(src_embeddings, vocab_src)
                      if src_embeddings else None)
        tgt_matrix = (_matrix_for_vocab(tgt_embeddings, vocab_tgt)
                      if tgt_embeddings else None)
        config = TrainConfig(architecture=arch, batch_size=batch_size,
                             token_budget=token_budget, optimizer=optimizer,
                             lr=lr, dropout=dropout, max_len=max_len,
                             epochs=epochs, seed=seed, dim=dim, hidden=hidden,
                             layers=layers, heads=heads, ff_hidden=ff_hidden,
                             warmup=warmup)
        if src_matrix is not None:
            # the checkpoint echo must rebuild the matrix width
            config = replace(config, dim=src_matrix.shape[1])
        pairs = [(numericalize(s, vocab_src), numericalize(t, vocab_tgt))
                 for s, t in zip(src_corpus, tgt_corpus)]
        model = build_model(config, len(vocab_src), len(vocab_tgt),
                            src_matrix=src_matrix, tgt_matrix=tgt_matrix)
        result = train(model, pairs, config)
        save_checkpoint(out, model, config, {
            "source": vocab_hash(vocab_src.id_to_token),
            "target": vocab_hash(vocab_tgt.id_to_token),
        })
    for epoch, loss in enumerate(result.epoch_losses, 1):
        click.echo("epoch\t%d\tloss\t%.6f" % (epoch, loss))
    click.echo("steps\t%d" % result.steps)
    click.echo("skipped\t%d" % result.skipped)


@nmt.command("translate")
@click.argument("source", type=click.Path(exists=True, dir_okay=False))
@click.option("--model", "model_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--src-vocab", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--tgt-vocab", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False))
@click.option("--beam", type=int, default=5, show_default=True)
@click.option("--max-out-len", type=int, default=80, show_default=True)
@click.option("--unk", type=click.Choice(["off", "copy", "lexicon_then_copy"]),
              default="off", show_default=True)
@click.option("--kb-source", type=click.Path(exists=True, dir_okay=False),
              help="Required with --unk lexicon_then_copy.")
@click.option("--kb-target", type=click.Path(exists=True, dir_okay=False))
@click.option("--raw-out", type=click.Path(dir_okay=False),
              help="Also write pre-replacement decoder output here.")
def nmt_translate(source, model_file, src_vocab, tgt_vocab, out, beam,
                  max_out_len, unk, kb_source, kb_target, raw_out):
    """Decode a corpus with a trained checkpoint.

    Output lines are post-processed: unknown tokens replaced per --unk
    and annotation suffixes stripped.
    """
    if unk == "lexicon_then_copy" and not (kb_source and kb_target):
        raise _ConfigFailure(
            "--unk lexicon_then_copy requires --kb-source and --kb-target")
    with _guard():
        vocab_src = Vocabulary.load(src_vocab)
        vocab_tgt = Vocabulary.load(tgt_vocab)
        checkpoint = load_checkpoint(model_file)
        for side, vocabulary in (("source", vocab_src), ("target", vocab_tgt)):
            expected = checkpoint.vocab_hashes.get(side)
            if expected and expected != vocab_hash(vocabulary.id_to_token):
                raise CheckpointError(
                    "%s vocabulary does not match the checkpoint" % side)
        model = restore_model(checkpoint, len(vocab_src), len(vocab_tgt))
        lexicon = BilingualLexicon()
        if unk == "lexicon_then_copy":
            lexicon = extract_bilingual_lexicon(parse_ntriples(kb_source),
                                                parse_ntriples(kb_target))
        mode = "copy_only" if unk == "copy" else unk
        raw_lines, final_lines = [], []
        for tokens in read_corpus(source):
            ids = numericalize(tokens, vocab_src)
            if beam == 1:
                hyp = greedy_decode(model, ids, max_out_len=max_out_len)
            else:
                hyp = beam_search(model, ids, beam=beam,
                                  max_out_len=max_out_len)[0]
            raw_lines.append(" ".join(denumericalize(hyp.token_ids, vocab_tgt)))
            replaced = unk_replace(hyp, list(tokens), lexicon, mode, vocab_tgt)
            final_lines.append(" ".join(strip_annotations(replaced)))
        Path(out).write_text("".join(l + "\n" for l in final_lines),
                             encoding="utf-8")
        if raw_out:
            Path(raw_out).write_text("".join(l + "\n" for l in raw_lines),
                                     encoding="utf-8")
    click.echo("sentences\t%d" % len(final_lines))


# --------------------------------------------------------------- eval

@cli.command("eval")
@click.argument("hypotheses", type=click.Path(exists=True, dir_okay=False))
@click.argument("references", type=click.Path(exists=True, dir_okay=False))
@click.option("--entity-testset", type=click.Path(exists=True, dir_okay=False),
              help="TSV of line-index and expected target surface.")
@click.option("--machine", is_flag=True,
              help="Print the single tab-separated metrics line only.")
def eval_cmd(hypotheses, references, entity_testset, machine):
    """Score translations: BLEU, chrF3, OOV count, entity accuracy.

    Annotation suffixes are stripped from both files before scoring.
    """
    with _guard():
        def load(path):
            return [" ".join(strip_annotations(line))
                    for line in read_corpus(path)]

        testset = (read_entity_testset(entity_testset)
                   if entity_testset else None)
        report = evaluate(load(hypotheses), load(references), testset)
    click.echo(report.machine_line() if machine else report.text())


# --------------------------------------------------------------- pipeline

@cli.group()
def pipeline():
    """Whole-experiment orchestration."""


@pipeline.command("run")
@click.argument("config_file", type=click.Path(dir_okay=False))
def pipeline_run(config_file):
    """Validate a config and execute the full experiment."""
    with _guard():
        config = validate_config(config_file)
        result = run_pipeline(config)
    click.echo("run_dir\t%s" % result.run_dir)
    click.echo(result.report.text())


# --------------------------------------------------------------- synth

@cli.command("synth")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--train-pairs", type=int, default=5000, show_default=True)
@click.option("--test-pairs", type=int, default=400, show_default=True)
@click.option("--entities", type=int, default=500, show_default=True)
@click.option("--held-out", type=int, default=50, show_default=True)
@click.option("--seed", type=int, default=13, show_default=True)
def synth_cmd(out, train_pairs, test_pairs, entities, held_out, seed):
    """Generate the synthetic bilingual corpus and knowledge bases."""
    with _guard():
        config = SynthConfig(train_pairs=train_pairs, test_pairs=test_pairs,
                             entities=entities, held_out=held_out, seed=seed)
        paths = write_synth(generate(config), out)
    for name in sorted(paths):
        click.echo("%s\t%s" % (name, paths[name]))


def main():
    cli()


if __name__ == "__main__":
    main()
