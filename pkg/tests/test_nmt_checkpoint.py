import numpy as np
import pytest

from graphmt.nmt.checkpoint import (
    CheckpointError,
    load_checkpoint,
    restore_model,
    save_checkpoint,
    vocab_hash,
)
from graphmt.nmt.decode import greedy_decode
from graphmt.nmt.train import TrainConfig, build_model, train


def make_trained(tmp_path, arch="rnn"):
    if arch == "rnn":
        cfg = TrainConfig(architecture="rnn", dim=8, hidden=8, layers=2,
                          dropout=0.0, epochs=2, batch_size=2, lr=0.2, seed=4)
    else:
        cfg = TrainConfig(architecture="transformer", dim=8, hidden=8,
                          heads=2, ff_hidden=16, layers=1, dropout=0.0,
                          epochs=2, optimizer="adam", warmup=5,
                          token_budget=32, seed=4)
    model = build_model(cfg, 10, 10)
    train(model, [([4, 5], [5, 4]), ([6, 7], [7, 6])], cfg)
    return model, cfg


class TestRoundTrip:
    def test_config_hashes_and_tensors_survive(self, tmp_path):
        model, cfg = make_trained(tmp_path)
        hashes = {"source": vocab_hash(["a", "b"]),
                  "target": vocab_hash(["c", "d"])}
        path = tmp_path / "model.gmt"
        save_checkpoint(path, model, cfg, hashes)
        ckpt = load_checkpoint(path)
        assert ckpt.config == cfg
        assert ckpt.vocab_hashes == hashes
        for name, p in model.named_parameters():
            assert np.array_equal(ckpt.tensors[name], p.data)

    def test_restore_reproduces_decoding(self, tmp_path):
        for arch in ("rnn", "transformer"):
            model, cfg = make_trained(tmp_path, arch)
            path = tmp_path / f"{arch}.gmt"
            save_checkpoint(path, model, cfg, {})
            restored = restore_model(load_checkpoint(path), 10, 10)
            for src in ([4, 5], [6, 7, 4]):
                a = greedy_decode(model, src, max_out_len=6)
                b = greedy_decode(restored, src, max_out_len=6)
                assert a.token_ids == b.token_ids
                assert abs(a.log_prob - b.log_prob) <= 1e-12

    def test_save_is_byte_identical(self, tmp_path):
        model, cfg = make_trained(tmp_path)
        p1, p2 = tmp_path / "a.gmt", tmp_path / "b.gmt"
        save_checkpoint(p1, model, cfg, {"source": "x"})
        save_checkpoint(p2, model, cfg, {"source": "x"})
        assert p1.read_bytes() == p2.read_bytes()

    def test_vocab_hash_frozen_value(self):
        # sha256 of "a\nb", computed with an external tool
        assert vocab_hash(["a", "b"]) == (
            "7e18f737311b2dc3b2f269dd78396b0351f14fb66efa879f768cb23181883c78")

    def test_header_carries_shapes(self, tmp_path):
        model, cfg = make_trained(tmp_path)
        path = tmp_path / "m.gmt"
        save_checkpoint(path, model, cfg, {})
        raw = path.read_bytes()
        assert raw[:4] == b"GMT1"
        ckpt = load_checkpoint(path)
        named = dict(model.named_parameters())
        assert set(ckpt.tensors) == set(named)
        for name, arr in ckpt.tensors.items():
            assert arr.shape == named[name].data.shape


class TestErrors:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.gmt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncated_payload(self, tmp_path):
        model, cfg = make_trained(tmp_path)
        path = tmp_path / "m.gmt"
        save_checkpoint(path, model, cfg, {})
        raw = path.read_bytes()
        (tmp_path / "cut.gmt").write_bytes(raw[:len(raw) - 64])
        with pytest.raises(CheckpointError, match="end of the file"):
            load_checkpoint(tmp_path / "cut.gmt")

    def test_restore_rejects_wrong_vocab_size(self, tmp_path):
        model, cfg = make_trained(tmp_path)
        path = tmp_path / "m.gmt"
        save_checkpoint(path, model, cfg, {})
        ckpt = load_checkpoint(path)
        with pytest.raises(CheckpointError):
            restore_model(ckpt, 10, 12)
