"""Corpus-level translation quality metrics.

BLEU and chrF operate on pre-tokenized text: lines are split on
whitespace for word n-grams, and chrF removes all whitespace before
extracting character n-grams. Nothing here re-tokenizes, lowercases,
or otherwise normalizes its input.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

from graphmt.tokenize import UNK

BLEU_SMOOTHING = ("none", "add_one")


def _require_parallel(hypotheses: Sequence[str], references: Sequence[str]) -> None:
    if len(hypotheses) != len(references):
        raise ValueError(
            "corpus size mismatch: %d hypotheses vs %d references"
            % (len(hypotheses), len(references)))
    if not hypotheses:
        raise ValueError("empty corpus: no sentence pairs to score")


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


@dataclass(frozen=True)
class BleuStatistics:
    """Corpus-aggregated modified n-gram counts plus length totals."""

    matches: Tuple[int, ...]
    totals: Tuple[int, ...]
    hypothesis_length: int
    reference_length: int

    def precision(self, order: int) -> float:
        total = self.totals[order - 1]
        return self.matches[order - 1] / total if total else 0.0


def bleu_statistics(hypotheses: Sequence[str],
                    references: Sequence[str],
                    max_ngram: int = 4) -> BleuStatistics:
    """Count clipped n-gram matches and totals over the whole corpus."""
    _require_parallel(hypotheses, references)
    if max_ngram < 1:
        raise ValueError("max_ngram must be at least 1, got %d" % max_ngram)
    matches = [0] * max_ngram
    totals = [0] * max_ngram
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_tokens = hyp.split()
        ref_tokens = ref.split()
        hyp_len += len(hyp_tokens)
        ref_len += len(ref_tokens)
        for n in range(1, max_ngram + 1):
            hyp_counts = _ngram_counts(hyp_tokens, n)
            if not hyp_counts:
                continue
            ref_counts = _ngram_counts(ref_tokens, n)
            totals[n - 1] += sum(hyp_counts.values())
            matches[n - 1] += sum(
                min(count, ref_counts[gram]) for gram, count in hyp_counts.items())
    return BleuStatistics(tuple(matches), tuple(totals), hyp_len, ref_len)


def brevity_penalty(hypothesis_length: int, reference_length: int) -> float:
    if hypothesis_length <= 0:
        return 0.0
    if hypothesis_length > reference_length:
        return 1.0
    return math.exp(1.0 - reference_length / hypothesis_length)


def bleu(hypotheses: Sequence[str],
         references: Sequence[str],
         max_ngram: int = 4,
         smoothing: str = "add_one") -> float:
    """Corpus BLEU on a 0..100 scale.

    Geometric mean of modified n-gram precisions for orders 1..max_ngram,
    scaled by the brevity penalty. With smoothing "add_one", any order
    with zero matches gets 1 added to both its numerator and denominator;
    with "none", a zero-match order zeroes the whole score.
    """
    if smoothing not in BLEU_SMOOTHING:
        raise ValueError(
            "unknown smoothing %r (choose from %s)"
            % (smoothing, ", ".join(BLEU_SMOOTHING)))
    stats = bleu_statistics(hypotheses, references, max_ngram)
    if stats.hypothesis_length == 0:
        return 0.0
    log_sum = 0.0
    for order in range(1, max_ngram + 1):
        matched = stats.matches[order - 1]
        total = stats.totals[order - 1]
        if smoothing == "add_one" and matched == 0:
            matched, total = matched + 1, total + 1
        if matched == 0:
            return 0.0
        log_sum += math.log(matched / total)
    penalty = brevity_penalty(stats.hypothesis_length, stats.reference_length)
    return 100.0 * penalty * math.exp(log_sum / max_ngram)


def _char_ngram_counts(line: str, n: int) -> Counter:
    squeezed = "".join(line.split())
    return Counter(squeezed[i:i + n] for i in range(len(squeezed) - n + 1))


def chrf(hypotheses: Sequence[str],
         references: Sequence[str],
         beta: float = 3.0,
         max_char_ngram: int = 6) -> float:
    """Character n-gram F-score on a 0..100 scale (chrF3 at the default beta).

    Counts are aggregated over the corpus per order; the score is the
    mean F_beta over orders that have at least one n-gram on either
    side. Whitespace is removed before n-gram extraction.
    """
    _require_parallel(hypotheses, references)
    if beta <= 0:
        raise ValueError("beta must be positive, got %r" % beta)
    if max_char_ngram < 1:
        raise ValueError(
            "max_char_ngram must be at least 1, got %d" % max_char_ngram)
    factor = beta * beta
    f_sum = 0.0
    included = 0
    for n in range(1, max_char_ngram + 1):
        matched = hyp_total = ref_total = 0
        for hyp, ref in zip(hypotheses, references):
            hyp_counts = _char_ngram_counts(hyp, n)
            ref_counts = _char_ngram_counts(ref, n)
            hyp_total += sum(hyp_counts.values())
            ref_total += sum(ref_counts.values())
            matched += sum(
                min(count, ref_counts[gram]) for gram, count in hyp_counts.items())
        if hyp_total + ref_total == 0:
            continue
        precision = matched / hyp_total if hyp_total else 0.0
        recall = matched / ref_total if ref_total else 0.0
        denom = factor * precision + recall
        f_sum += (1.0 + factor) * precision * recall / denom if denom else 0.0
        included += 1
    if included == 0:
        # Neither corpus has a single character: nothing mismatches.
        return 100.0
    return 100.0 * f_sum / included


def oov_count(hypotheses: Sequence[str]) -> int:
    """Total occurrences of the literal UNK token across all lines."""
    return sum(line.split().count(UNK) for line in hypotheses)


EntityTestset = Sequence[Tuple[int, str]]


def entity_match_counts(hypotheses: Sequence[str],
                        entity_testset: EntityTestset) -> Tuple[int, int]:
    """Count testset entries whose expected surface shows up in the hypothesis.

    A surface matches when its whitespace tokens appear as a contiguous,
    case-sensitive run inside the hypothesis line at the given index.
    """
    correct = 0
    for index, surface in entity_testset:
        if not 0 <= index < len(hypotheses):
            raise ValueError(
                "entity testset index %d outside corpus of %d lines"
                % (index, len(hypotheses)))
        needle = surface.split()
        if not needle:
            raise ValueError("entity testset entry at index %d has an empty "
                             "expected surface" % index)
        tokens = hypotheses[index].split()
        span = len(needle)
        if any(tokens[i:i + span] == needle
               for i in range(len(tokens) - span + 1)):
            correct += 1
    return correct, len(entity_testset)


def entity_accuracy(hypotheses: Sequence[str],
                    references: Sequence[str],
                    entity_testset: EntityTestset) -> float:
    """Fraction of expected entity surfaces found in the hypotheses."""
    _require_parallel(hypotheses, references)
    if not entity_testset:
        raise ValueError("entity testset is empty: accuracy is undefined")
    correct, total = entity_match_counts(hypotheses, entity_testset)
    return correct / total


@dataclass(frozen=True)
class EvalReport:
    """Scores for one system output, with a fixed serialized form.

    meteor is a placeholder: computing it needs external synonym and
    paraphrase resources, so it is always reported as unsupported.
    """

    bleu: float
    chrf3: float
    oov_count: int
    entity_correct: int
    entity_total: int
    sentences: int
    meteor: Optional[float] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.bleu <= 100.0:
            raise ValueError("bleu out of range: %r" % self.bleu)
        if not 0.0 <= self.chrf3 <= 100.0:
            raise ValueError("chrf3 out of range: %r" % self.chrf3)
        if self.oov_count < 0:
            raise ValueError("oov_count negative: %d" % self.oov_count)
        if not 0 <= self.entity_correct <= self.entity_total:
            raise ValueError(
                "inconsistent entity counts: %d correct of %d"
                % (self.entity_correct, self.entity_total))
        if self.sentences <= 0:
            raise ValueError("sentences must be positive: %d" % self.sentences)
        if self.meteor is not None:
            raise ValueError("meteor is unsupported and must stay unset")

    @property
    def entity_accuracy(self) -> Optional[float]:
        if self.entity_total == 0:
            return None
        return self.entity_correct / self.entity_total

    def _accuracy_field(self) -> str:
        accuracy = self.entity_accuracy
        return "n/a" if accuracy is None else "%.4f" % accuracy

    def text(self) -> str:
        lines = [
            "sentences\t%d" % self.sentences,
            "bleu\t%.4f" % self.bleu,
            "chrf3\t%.4f" % self.chrf3,
            "oov\t%d" % self.oov_count,
            "entity_accuracy\t%s (%d/%d)" % (
                self._accuracy_field(), self.entity_correct, self.entity_total),
            "meteor\tunsupported",
        ]
        return "\n".join(lines)

    def machine_line(self) -> str:
        return "\t".join([
            "%.4f" % self.bleu,
            "%.4f" % self.chrf3,
            "%d" % self.oov_count,
            self._accuracy_field(),
            "%d" % self.sentences,
        ])


def evaluate(hypotheses: Sequence[str],
             references: Sequence[str],
             entity_testset: Optional[EntityTestset] = None) -> EvalReport:
    """Score a system output against references in one pass."""
    bleu_score = bleu(hypotheses, references)
    chrf_score = chrf(hypotheses, references)
    if entity_testset is None:
        correct = total = 0
    else:
        if not entity_testset:
            raise ValueError("entity testset is empty: accuracy is undefined")
        correct, total = entity_match_counts(hypotheses, entity_testset)
    return EvalReport(
        bleu=bleu_score,
        chrf3=chrf_score,
        oov_count=oov_count(hypotheses),
        entity_correct=correct,
        entity_total=total,
        sentences=len(hypotheses),
    )
