import itertools

import numpy as np
import pytest

from graphmt.kb import BilingualLexicon
from graphmt.tokenize import EOS_ID, RESERVED, UNK_ID, Vocabulary
from graphmt.nmt.decode import Hypothesis, beam_search, greedy_decode, unk_replace
from graphmt.nmt.train import TrainConfig, build_model, train

A, B = 4, 5


def vocab_of(*extra):
    tokens = tuple(RESERVED) + tuple(extra)
    return Vocabulary({t: i for i, t in enumerate(tokens)}, tokens)


class ScriptedModel:
    """Model whose step distributions are a pure function of the
    generated prefix; lets exhaustive enumeration rank every path."""

    def __init__(self, dists):
        self.dists = dists

    def begin(self, src_ids):
        return _ScriptedSession(self.dists, len(src_ids))


class _ScriptedSession:
    def __init__(self, dists, src_len):
        self.dists = dists
        self.src_len = src_len

    def initial_state(self):
        return ()

    def advance(self, state, token):
        prefix = state if token == 2 else state + (token,)
        probs = self.dists(prefix)
        attn = np.full(self.src_len, 1.0 / self.src_len)
        return np.log(probs), attn, prefix


def greedy_trap_dists(prefix):
    """Greedy takes A then EOS; the globally best path is B, B, EOS."""
    probs = np.full(6, 1e-12)
    if prefix == ():
        probs[A], probs[B], probs[EOS_ID] = 0.55, 0.40, 0.05
    elif prefix == (A,):
        probs[EOS_ID], probs[A], probs[B] = 0.90, 0.05, 0.05
    elif prefix == (B,):
        probs[B], probs[EOS_ID], probs[A] = 0.95, 0.04, 0.01
    elif prefix == (B, B):
        probs[EOS_ID], probs[A], probs[B] = 0.99, 0.005, 0.005
    else:
        probs[EOS_ID] = 1.0
    return probs / probs.sum()


def enumerate_best(dists, max_len):
    """Exhaustive search over every path; rank like the decoder does."""
    best = None
    for length in range(0, max_len + 1):
        for seq in itertools.product((A, B), repeat=length):
            logp = 0.0
            for i, tid in enumerate(seq):
                logp += np.log(dists(seq[:i])[tid])
            ends_eos = length < max_len
            if ends_eos:
                logp += np.log(dists(seq)[EOS_ID])
            steps = max(1, length + (1 if ends_eos else 0))
            score = logp / steps
            if best is None or score > best[0]:
                best = (score, seq)
    return best


class TestBeamSearch:
    def test_beam_must_be_positive(self):
        with pytest.raises(ValueError):
            beam_search(ScriptedModel(greedy_trap_dists), [A], beam=0)

    def test_beam_two_matches_exhaustive_oracle(self):
        model = ScriptedModel(greedy_trap_dists)
        hyps = beam_search(model, [A, B], beam=2, max_out_len=6)
        score, seq = enumerate_best(greedy_trap_dists, 6)
        assert hyps[0].token_ids == seq == (B, B)
        assert abs(hyps[0].score - score) <= 1e-12

    def test_greedy_falls_into_the_trap(self):
        model = ScriptedModel(greedy_trap_dists)
        hyp = greedy_decode(model, [A, B], max_out_len=6)
        assert hyp.token_ids == (A,)

    def test_ranked_by_normalized_score(self):
        model = ScriptedModel(greedy_trap_dists)
        hyps = beam_search(model, [A, B], beam=2, max_out_len=6)
        scores = [h.score for h in hyps]
        assert scores == sorted(scores, reverse=True)
        assert len(hyps) <= 2

    def test_attention_rows_per_emitted_token(self):
        model = ScriptedModel(greedy_trap_dists)
        hyps = beam_search(model, [A, B, A], beam=2, max_out_len=6)
        for h in hyps:
            # one row per token, a column per source position + end marker
            assert h.attention.shape == (len(h.token_ids), 4)
            if len(h.token_ids):
                assert np.allclose(h.attention.sum(axis=-1), 1.0, atol=1e-6)


def trained_models():
    pairs = [([4, 5], [5, 4]), ([5, 6], [6, 5]), ([6, 4], [4, 6]),
             ([4, 6, 5], [5, 6, 4])]
    rnn_cfg = TrainConfig(architecture="rnn", dim=12, hidden=12, layers=2,
                          dropout=0.0, epochs=6, batch_size=2,
                          optimizer="adam", warmup=5, seed=2)
    rnn = build_model(rnn_cfg, 8, 8)
    train(rnn, pairs, rnn_cfg)
    tf_cfg = TrainConfig(architecture="transformer", dim=8, hidden=8,
                         heads=2, ff_hidden=16, layers=2, dropout=0.0,
                         epochs=6, optimizer="adam", warmup=5,
                         token_budget=32, seed=2)
    tf = build_model(tf_cfg, 8, 8)
    train(tf, pairs, tf_cfg)
    return rnn, tf


class TestGreedyBeamEquivalence:
    def test_beam_one_equals_greedy_all_models_and_inputs(self):
        inputs = [[4, 5], [6], [4, 6, 5, 4], [5, 5, 5]]
        for model in trained_models():
            for src in inputs:
                greedy = greedy_decode(model, src, max_out_len=8)
                (top,) = beam_search(model, src, beam=1, max_out_len=8)
                assert top.token_ids == greedy.token_ids
                assert abs(top.log_prob - greedy.log_prob) <= 1e-9
                assert np.allclose(top.attention, greedy.attention,
                                   atol=1e-12)

    def test_hypothesis_log_prob_is_sum_of_steps(self):
        rnn, _ = trained_models()
        src = [4, 6, 5]
        max_len = 8
        hyp = greedy_decode(rnn, src, max_out_len=max_len)
        steps = list(hyp.token_ids)
        if len(steps) < max_len:  # ended by emitting the end marker
            steps.append(EOS_ID)
        session = rnn.begin(src + [EOS_ID])
        state = session.initial_state()
        last, total = 2, 0.0
        for tid in steps:
            lp, _, state = session.advance(state, last)
            total += lp[tid]
            last = tid
        assert abs(total - hyp.log_prob) <= 1e-9


class TestHypothesisScore:
    def test_normalizes_by_generated_steps(self):
        hyp = Hypothesis((5, 6), -3.0, np.zeros((2, 3)))
        assert hyp.score == -1.0

    def test_empty_hypothesis_score(self):
        hyp = Hypothesis((), -0.5, np.zeros((0, 3)))
        assert hyp.score == -0.5


class TestUnkReplace:
    def setup_method(self):
        self.vocab = vocab_of("Krebs", "liegt", "hier")
        self.lexicon = BilingualLexicon(entries={
            "cancer": ("Krebs",),
            "north america": ("Nordamerika",),
            "ward": ("Station", "Abteilung"),
        })

    def hyp(self, ids, peaks, width):
        attn = np.full((len(ids), width), 1e-3)
        for row, col in enumerate(peaks):
            attn[row, col] = 1.0
        return Hypothesis(tuple(ids), -1.0, attn)

    def test_lexicon_hit(self):
        hyp = self.hyp([UNK_ID], [0], 3)
        out = unk_replace(hyp, ["cancer", "research"], self.lexicon,
                          "lexicon_then_copy", self.vocab)
        assert out == ["Krebs"]

    def test_lexicon_miss_copies_source(self):
        hyp = self.hyp([UNK_ID], [1], 3)
        out = unk_replace(hyp, ["from", "Chad"], self.lexicon,
                          "lexicon_then_copy", self.vocab)
        assert out == ["Chad"]

    def test_no_unk_output_unchanged(self):
        ids = [self.vocab.token_to_id["Krebs"], self.vocab.token_to_id["hier"]]
        hyp = self.hyp(ids, [0, 1], 3)
        out = unk_replace(hyp, ["cancer", "here"], self.lexicon,
                          "lexicon_then_copy", self.vocab)
        assert out == ["Krebs", "hier"]

    def test_copy_only_ignores_lexicon(self):
        hyp = self.hyp([UNK_ID], [0], 2)
        out = unk_replace(hyp, ["cancer"], self.lexicon, "copy_only",
                          self.vocab)
        assert out == ["cancer"]

    def test_off_leaves_unk(self):
        hyp = self.hyp([UNK_ID], [0], 2)
        out = unk_replace(hyp, ["cancer"], self.lexicon, "off", self.vocab)
        assert out == ["<unk>"]

    def test_annotated_source_stripped_for_lookup(self):
        hyp = self.hyp([UNK_ID], [0], 2)
        out = unk_replace(hyp, ["cancer|dbr_Cancer"], self.lexicon,
                          "lexicon_then_copy", self.vocab)
        assert out == ["Krebs"]

    def test_annotated_source_stripped_when_copied(self):
        hyp = self.hyp([UNK_ID], [0], 2)
        out = unk_replace(hyp, ["Chad|dbr_Chad"], self.lexicon,
                          "lexicon_then_copy", self.vocab)
        assert out == ["Chad"]

    def test_multiword_surface_keeps_underscores_on_copy(self):
        lexicon = BilingualLexicon(entries={})
        hyp = self.hyp([UNK_ID], [0], 2)
        out = unk_replace(hyp, ["North_America|dbr_North_America"], lexicon,
                          "lexicon_then_copy", self.vocab)
        assert out == ["North_America"]

    def test_multiword_surface_resolves_in_lexicon(self):
        hyp = self.hyp([UNK_ID], [0], 2)
        out = unk_replace(hyp, ["North_America|dbr_North_America"],
                          self.lexicon, "lexicon_then_copy", self.vocab)
        assert out == ["Nordamerika"]

    def test_ambiguous_lexicon_entry_picks_smallest(self):
        hyp = self.hyp([UNK_ID], [0], 2)
        out = unk_replace(hyp, ["ward"], self.lexicon, "lexicon_then_copy",
                          self.vocab)
        assert out == ["Abteilung"]

    def test_escaped_pipe_unescaped_on_copy(self):
        hyp = self.hyp([UNK_ID], [0], 2)
        out = unk_replace(hyp, ["a\\|b"], self.lexicon, "copy_only",
                          self.vocab)
        assert out == ["a|b"]

    def test_end_marker_column_never_wins(self):
        # attention peaks on the trailing end-marker column; the argmax
        # must stay within the real source tokens
        attn = np.array([[0.1, 0.2, 0.7]])
        hyp = Hypothesis((UNK_ID,), -1.0, attn)
        out = unk_replace(hyp, ["from", "Chad"], self.lexicon, "copy_only",
                          self.vocab)
        assert out == ["Chad"]

    def test_unknown_mode_rejected(self):
        hyp = self.hyp([UNK_ID], [0], 2)
        with pytest.raises(ValueError):
            unk_replace(hyp, ["x"], self.lexicon, "always", self.vocab)
