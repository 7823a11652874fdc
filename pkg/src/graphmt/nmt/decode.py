"""Length-normalized beam search, greedy decoding, and attention-based
UNK replacement with a bilingual-lexicon / copy fallback."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from graphmt.kb import BilingualLexicon
from graphmt.linker import split_annotation
from graphmt.tokenize import BOS_ID, EOS_ID, UNK, Vocabulary

UNK_MODES = ("lexicon_then_copy", "copy_only", "off")


@dataclass
class Hypothesis:
    """One decoded candidate. token_ids excludes BOS and EOS; log_prob
    sums every step including the terminating EOS; attention holds one
    source distribution per emitted token."""

    token_ids: tuple[int, ...]
    log_prob: float
    attention: np.ndarray

    @property
    def score(self) -> float:
        """Length-normalized log-probability (per generated step)."""
        steps = max(1, len(self.token_ids) + 1)
        return self.log_prob / steps


def _top_ids(log_probs: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest values; ties break toward smaller ids."""
    order = np.lexsort((np.arange(log_probs.size), -log_probs))
    return order[:k]


def beam_search(model, src_ids: list[int], beam: int = 5,
                max_out_len: int = 64) -> list[Hypothesis]:
    """Ranked hypotheses (best first) by length-normalized log-prob.
    Candidates end at EOS or are force-terminated at max_out_len.

    The source gets the same end marker training appends, so attention
    rows carry one trailing column for it."""
    if beam < 1:
        raise ValueError(f"beam must be >= 1, got {beam}")
    prepared = list(src_ids) + [EOS_ID]
    session = model.begin(prepared)
    # alive: (raw log-prob, tokens, attention rows, last token, state)
    alive = [(0.0, (), (), BOS_ID, session.initial_state())]
    finished: list[Hypothesis] = []
    src_len = len(prepared)
    for _ in range(max_out_len):
        candidates = []
        for logp, tokens, rows, last, state in alive:
            step_lp, attn, new_state = session.advance(state, last)
            for tid in _top_ids(step_lp, beam):
                candidates.append((logp + step_lp[tid], tokens, rows,
                                   int(tid), attn, new_state))
        candidates.sort(key=lambda c: (-c[0], c[3]))
        # a completed hypothesis takes up one of the beam slots, so
        # beam = 1 terminates exactly where greedy decoding does
        alive = []
        slots = beam
        for logp, tokens, rows, tid, attn, new_state in candidates:
            if slots == 0:
                break
            slots -= 1
            if tid == EOS_ID:
                finished.append(Hypothesis(
                    tokens, logp,
                    np.array(rows).reshape(len(tokens), src_len)))
            else:
                alive.append((logp, tokens + (tid,), rows + (attn,),
                              tid, new_state))
        if not alive:
            break
    for logp, tokens, rows, _, _ in alive:
        finished.append(Hypothesis(
            tokens, logp, np.array(rows).reshape(len(tokens), src_len)))
    finished.sort(key=lambda h: (-h.score, h.token_ids))
    return finished[:beam]


def greedy_decode(model, src_ids: list[int],
                  max_out_len: int = 64) -> Hypothesis:
    """Argmax decoding; equivalent to beam_search with beam = 1."""
    prepared = list(src_ids) + [EOS_ID]
    session = model.begin(prepared)
    state = session.initial_state()
    last = BOS_ID
    tokens: list[int] = []
    rows: list[np.ndarray] = []
    log_prob = 0.0
    for _ in range(max_out_len):
        step_lp, attn, state = session.advance(state, last)
        tid = int(_top_ids(step_lp, 1)[0])
        log_prob += float(step_lp[tid])
        if tid == EOS_ID:
            break
        tokens.append(tid)
        rows.append(attn)
        last = tid
    return Hypothesis(tuple(tokens),
                      log_prob,
                      np.array(rows).reshape(len(tokens), len(prepared)))


def _source_surface(token: str) -> str:
    """Annotation suffix stripped, pipe escapes undone, underscores kept."""
    split = split_annotation(token)
    surface = split[0] if split else token
    return surface.replace("\\|", "|")


def unk_replace(hyp: Hypothesis, source_tokens: list[str],
                lexicon: BilingualLexicon, mode: str,
                vocab: Vocabulary) -> list[str]:
    """Rewrite each emitted UNK using the source token under its highest
    attention weight: lexicon translation first (lexicon_then_copy), the
    source surface itself (copy_only), or leave untouched (off)."""
    if mode not in UNK_MODES:
        raise ValueError(f"unknown unk replacement mode {mode!r}")
    out = []
    for step, tid in enumerate(hyp.token_ids):
        token = vocab.token(tid)
        if token != UNK or mode == "off":
            out.append(token)
            continue
        row = hyp.attention[step][:len(source_tokens)]
        aligned = int(np.argmax(row))
        surface = _source_surface(source_tokens[aligned])
        if mode == "lexicon_then_copy":
            translations = lexicon.lookup(surface.replace("_", " "))
            if translations:
                out.append(min(translations))
                continue
        out.append(surface)
    return out
