"""Self-describing binary model checkpoint.

Layout: 4-byte magic "GMT1", little-endian uint32 header length, a JSON
header (sorted keys, no whitespace) describing config, vocabulary hashes
and tensor metadata (name, shape, offset, byte count), then the raw
float64 little-endian tensor payloads in header order. The format has no
timestamps or environment echoes, so identical inputs produce identical
bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from graphmt.nmt.train import TrainConfig, build_model

MAGIC = b"GMT1"


class CheckpointError(Exception):
    pass


@dataclass
class Checkpoint:
    config: TrainConfig
    vocab_hashes: dict[str, str]
    tensors: dict[str, np.ndarray]


def vocab_hash(tokens) -> str:
    payload = "\n".join(tokens).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def save_checkpoint(path, model, config: TrainConfig,
                    vocab_hashes: dict[str, str]) -> None:
    named = model.named_parameters()
    meta = []
    offset = 0
    blobs = []
    for name, p in named:
        blob = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        meta.append({"name": name, "shape": list(p.data.shape),
                     "dtype": "float64", "offset": offset,
                     "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "config": asdict(config),
        "vocab_hashes": dict(sorted(vocab_hashes.items())),
        "tensors": meta,
    }
    encoded = json.dumps(header, sort_keys=True,
                         separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(encoded)))
        f.write(encoded)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
        (header_len,) = struct.unpack("<I", f.read(4))
        try:
            header = json.loads(f.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"unreadable header: {e}") from None
        payload = f.read()
    tensors: dict[str, np.ndarray] = {}
    for meta in header["tensors"]:
        start, nbytes = meta["offset"], meta["nbytes"]
        if start + nbytes > len(payload):
            raise CheckpointError(f"tensor {meta['name']!r} extends past "
                                  f"the end of the file")
        arr = np.frombuffer(payload[start:start + nbytes], dtype="<f8")
        tensors[meta["name"]] = arr.reshape(meta["shape"]).astype(np.float64)
    try:
        config = TrainConfig(**header["config"])
    except TypeError as e:
        raise CheckpointError(f"config does not match this version: {e}") from None
    return Checkpoint(config=config, vocab_hashes=header["vocab_hashes"],
                      tensors=tensors)


def restore_model(checkpoint: Checkpoint, src_vocab_size: int,
                  tgt_vocab_size: int):
    """Rebuild the architecture from the config echo and load weights."""
    model = build_model(checkpoint.config, src_vocab_size, tgt_vocab_size)
    named = dict(model.named_parameters())
    if set(named) != set(checkpoint.tensors):
        missing = sorted(set(named) ^ set(checkpoint.tensors))
        raise CheckpointError(f"parameter names do not line up: {missing[:5]}")
    for name, p in named.items():
        arr = checkpoint.tensors[name]
        if arr.shape != p.data.shape:
            raise CheckpointError(
                f"tensor {name!r} has shape {arr.shape}, expected "
                f"{p.data.shape}")
        p.data = arr.copy()
    return model
