"""Key-value experiment configuration with whole-file validation.

The config format is one ``key = value`` assignment per line, ``#``
comments, and dotted keys namespaced per module. Validation never
stops at the first problem: every unknown key, type error, missing
file, and invariant violation is reported together, each prefixed
with the key path it concerns.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from graphmt.kge import KgeConfig
from graphmt.linker import DEFAULT_MAX_SPAN
from graphmt.nmt import TrainConfig

STRATEGIES = ("baseline", "el_kge", "sem_kge")
TOKENIZATIONS = ("word", "bpe")
MODELS = ("rnn", "transformer")
UNK_MODES = ("off", "copy", "lexicon_then_copy")

DETERMINISTIC_ENV = "GRAPHMT_DETERMINISTIC"


class ConfigError(Exception):
    """Carries every diagnostic found in one validation pass."""

    def __init__(self, errors: list[str]):
        super().__init__("\n".join(errors))
        self.errors = list(errors)


def _parse_bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError("expected a boolean (true/false)")


# key -> (kind, default); REQUIRED means the key must be present,
# None means the key is optional with no default value
_REQUIRED = object()

_SCHEMA: dict[str, tuple[str, object]] = {
    "run.strategy": ("enum:" + ",".join(STRATEGIES), "baseline"),
    "run.tokenization": ("enum:" + ",".join(TOKENIZATIONS), "word"),
    "run.output_dir": ("str", _REQUIRED),
    "run.seed": ("int", 1),
    "run.deterministic": ("bool", True),
    "data.kb_source": ("path", None),
    "data.kb_target": ("path", None),
    "data.train_source": ("path", _REQUIRED),
    "data.train_target": ("path", _REQUIRED),
    "data.test_source": ("path", _REQUIRED),
    "data.test_target": ("path", _REQUIRED),
    "data.entity_testset": ("path", None),
    "vocab.max_size": ("int", 50000),
    "vocab.max_size_source": ("int", None),
    "vocab.max_size_target": ("int", None),
    "bpe.merges": ("int", 500),
    "el.max_span": ("int", DEFAULT_MAX_SPAN),
    "kge.dim": ("int", 64),
    "kge.epochs": ("int", 8),
    "kge.lr": ("float", 0.05),
    "kge.seed": ("int", 1),
    "kge.threads": ("int", 1),
    "kge.bucket_count": ("int", 1 << 17),
    "kge.min_subword": ("int", 2),
    "kge.max_subword": ("int", 5),
    "nmt.model": ("enum:" + ",".join(MODELS), "rnn"),
    "nmt.epochs": ("int", 1),
    "nmt.batch_size": ("int", 32),
    "nmt.token_budget": ("int", 4076),
    "nmt.optimizer": ("enum:sgd,adam", "sgd"),
    "nmt.lr": ("float", 0.0002),
    "nmt.dropout": ("float", 0.3),
    "nmt.max_len": ("int", 80),
    "nmt.seed": ("int", 1),
    "nmt.dim": ("int", 64),
    "nmt.hidden": ("int", 64),
    "nmt.layers": ("int", 2),
    "nmt.heads": ("int", 8),
    "nmt.ff_hidden": ("int", 256),
    "nmt.warmup": ("int", 8000),
    "nmt.unk": ("enum:" + ",".join(UNK_MODES) + ",copy_only", "off"),
    "nmt.beam": ("int", 5),
    "nmt.max_positions": ("int", 512),
}


@dataclass
class PipelineConfig:
    """Validated, fully defaulted experiment configuration."""

    strategy: str
    tokenization: str
    output_dir: str
    seed: int
    deterministic: bool
    train_source: str
    train_target: str
    test_source: str
    test_target: str
    kb_source: Optional[str]
    kb_target: Optional[str]
    entity_testset: Optional[str]
    vocab_max_source: int
    vocab_max_target: int
    bpe_merges: int
    el_max_span: int
    unk_mode: str
    beam: int
    kge: KgeConfig
    nmt: TrainConfig

    @property
    def decode_unk_mode(self) -> str:
        """The replacement routine's name for the configured mode."""
        return "copy_only" if self.unk_mode == "copy" else self.unk_mode

    def to_text(self) -> str:
        """Canonical key = value rendering of the effective config."""
        rows = {
            "run.strategy": self.strategy,
            "run.tokenization": self.tokenization,
            "run.output_dir": self.output_dir,
            "run.seed": self.seed,
            "run.deterministic": str(self.deterministic).lower(),
            "data.train_source": self.train_source,
            "data.train_target": self.train_target,
            "data.test_source": self.test_source,
            "data.test_target": self.test_target,
            "data.kb_source": self.kb_source or "",
            "data.kb_target": self.kb_target or "",
            "data.entity_testset": self.entity_testset or "",
            "vocab.max_size_source": self.vocab_max_source,
            "vocab.max_size_target": self.vocab_max_target,
            "bpe.merges": self.bpe_merges,
            "el.max_span": self.el_max_span,
            "nmt.unk": self.unk_mode,
            "nmt.beam": self.beam,
            "kge.dim": self.kge.dim,
            "kge.epochs": self.kge.epochs,
            "kge.lr": repr(self.kge.lr),
            "kge.seed": self.kge.seed,
            "kge.threads": self.kge.threads,
            "kge.bucket_count": self.kge.bucket_count,
            "kge.min_subword": self.kge.min_subword,
            "kge.max_subword": self.kge.max_subword,
            "nmt.model": self.nmt.architecture,
            "nmt.epochs": self.nmt.epochs,
            "nmt.batch_size": self.nmt.batch_size,
            "nmt.token_budget": self.nmt.token_budget,
            "nmt.optimizer": self.nmt.optimizer,
            "nmt.lr": repr(self.nmt.lr),
            "nmt.dropout": repr(self.nmt.dropout),
            "nmt.max_len": self.nmt.max_len,
            "nmt.seed": self.nmt.seed,
            "nmt.dim": self.nmt.dim,
            "nmt.hidden": self.nmt.hidden,
            "nmt.layers": self.nmt.layers,
            "nmt.heads": self.nmt.heads,
            "nmt.ff_hidden": self.nmt.ff_hidden,
            "nmt.warmup": self.nmt.warmup,
            "nmt.max_positions": self.nmt.max_positions,
        }
        # unset optional paths are omitted so the echo re-validates cleanly
        return "\n".join("%s = %s" % (k, rows[k])
                         for k in sorted(rows) if rows[k] != "") + "\n"


def parse_config_text(text: str) -> dict[str, str]:
    """Raw key/value extraction; reports every malformed line at once."""
    values: dict[str, str] = {}
    errors: list[str] = []
    for line_no, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            errors.append("line %d: expected 'key = value', got %r"
                          % (line_no, stripped))
            continue
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if not key:
            errors.append("line %d: missing key before '='" % line_no)
            continue
        if key in values:
            errors.append("line %d: duplicate key %r" % (line_no, key))
            continue
        values[key] = raw
    if errors:
        raise ConfigError(errors)
    return values


def _convert(key: str, kind: str, raw: str, errors: list[str]):
    if kind == "str" or kind == "path":
        return raw
    if kind == "int":
        try:
            return int(raw)
        except ValueError:
            errors.append("%s: expected an integer, got %r" % (key, raw))
            return None
    if kind == "float":
        try:
            return float(raw)
        except ValueError:
            errors.append("%s: expected a number, got %r" % (key, raw))
            return None
    if kind == "bool":
        try:
            return _parse_bool(raw)
        except ValueError:
            errors.append("%s: expected a boolean, got %r" % (key, raw))
            return None
    choices = kind.split(":", 1)[1].split(",")
    if raw not in choices:
        errors.append("%s: must be one of %s, got %r"
                      % (key, ", ".join(dict.fromkeys(choices)), raw))
        return None
    return raw


def validate_config(path: str | Path) -> PipelineConfig:
    """Parse, type-check, and cross-validate a config file.

    Raises ConfigError carrying one diagnostic per problem; the config
    is only returned when every check passes.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(["cannot read config file: %s" % exc]) from None
    raw_values = parse_config_text(text)

    errors: list[str] = []
    values: dict[str, object] = {}
    for key, raw in raw_values.items():
        if key not in _SCHEMA:
            errors.append("unknown key %r" % key)
    for key, (kind, default) in _SCHEMA.items():
        if key in raw_values:
            converted = _convert(key, kind, raw_values[key], errors)
            if converted is not None:
                values[key] = converted
        elif default is _REQUIRED:
            errors.append("%s: required key is missing" % key)
        elif default is not None:
            values[key] = default

    def have(*keys: str) -> bool:
        return all(k in values for k in keys)

    # referenced input files must exist at validation time
    for key, (kind, _) in _SCHEMA.items():
        if kind == "path" and key in values:
            if not Path(str(values[key])).is_file():
                errors.append("%s: file does not exist: %s"
                              % (key, values[key]))

    strategy = values.get("run.strategy")
    unk_mode = values.get("nmt.unk")
    if unk_mode == "copy_only":
        unk_mode = "copy"
        values["nmt.unk"] = "copy"
    if strategy == "el_kge" and values.get("run.tokenization") == "bpe":
        errors.append("run.tokenization: bpe cannot be combined with "
                      "strategy el_kge; annotated corpora are word-level only")
    needs_kb = strategy in ("el_kge", "sem_kge") or unk_mode == "lexicon_then_copy"
    if needs_kb:
        reason = ("strategy %s" % strategy if strategy != "baseline"
                  else "nmt.unk lexicon_then_copy")
        for key in ("data.kb_source", "data.kb_target"):
            if key not in values:
                errors.append("%s: required for %s" % (key, reason))
    if strategy == "sem_kge" and have("kge.dim", "nmt.dim") \
            and values["kge.dim"] != values["nmt.dim"]:
        errors.append("kge.dim: must equal nmt.dim (%s) for strategy "
                      "sem_kge, got %s" % (values["nmt.dim"], values["kge.dim"]))
    if have("run.seed") and int(values["run.seed"]) < 0:  # type: ignore[arg-type]
        errors.append("run.seed: must be nonnegative")
    if have("nmt.beam") and int(values["nmt.beam"]) < 1:  # type: ignore[arg-type]
        errors.append("nmt.beam: must be at least 1")
    if have("bpe.merges") and int(values["bpe.merges"]) < 1:  # type: ignore[arg-type]
        errors.append("bpe.merges: must be at least 1")
    if have("el.max_span") and int(values["el.max_span"]) < 1:  # type: ignore[arg-type]
        errors.append("el.max_span: must be at least 1")
    for key in ("vocab.max_size", "vocab.max_size_source",
                "vocab.max_size_target"):
        if key in values and int(values[key]) <= 4:  # type: ignore[arg-type]
            errors.append("%s: must be above 4 (the reserved tokens)" % key)

    # sub-configs validate themselves; map their complaints to key paths
    kge_cfg = None
    mode = "semantic" if strategy == "sem_kge" else "structure"
    try:
        kge_cfg = KgeConfig(
            dim=int(values.get("kge.dim", 64)),
            epochs=int(values.get("kge.epochs", 8)),
            lr=float(values.get("kge.lr", 0.05)),
            min_subword=int(values.get("kge.min_subword", 2)),
            max_subword=int(values.get("kge.max_subword", 5)),
            bucket_count=int(values.get("kge.bucket_count", 1 << 17)),
            threads=int(values.get("kge.threads", 1)),
            seed=int(values.get("kge.seed", 1)),
            mode=mode,
        )
    except (ValueError, TypeError) as exc:
        errors.append("kge: %s" % exc)
    nmt_cfg = None
    try:
        nmt_cfg = TrainConfig(
            architecture=str(values.get("nmt.model", "rnn")),
            batch_size=int(values.get("nmt.batch_size", 32)),
            token_budget=int(values.get("nmt.token_budget", 4076)),
            optimizer=str(values.get("nmt.optimizer", "sgd")),
            lr=float(values.get("nmt.lr", 0.0002)),
            dropout=float(values.get("nmt.dropout", 0.3)),
            max_len=int(values.get("nmt.max_len", 80)),
            epochs=int(values.get("nmt.epochs", 1)),
            seed=int(values.get("nmt.seed", 1)),
            dim=int(values.get("nmt.dim", 64)),
            hidden=int(values.get("nmt.hidden", 64)),
            layers=int(values.get("nmt.layers", 2)),
            heads=int(values.get("nmt.heads", 8)),
            ff_hidden=int(values.get("nmt.ff_hidden", 256)),
            max_positions=int(values.get("nmt.max_positions", 512)),
            warmup=int(values.get("nmt.warmup", 8000)),
        )
    except (ValueError, TypeError) as exc:
        errors.append("nmt: %s" % exc)

    if errors:
        raise ConfigError(errors)
    assert kge_cfg is not None and nmt_cfg is not None

    max_size = int(values["vocab.max_size"])  # type: ignore[arg-type]
    return PipelineConfig(
        strategy=str(strategy),
        tokenization=str(values["run.tokenization"]),
        output_dir=str(values["run.output_dir"]),
        seed=int(values["run.seed"]),  # type: ignore[arg-type]
        deterministic=bool(values["run.deterministic"]),
        train_source=str(values["data.train_source"]),
        train_target=str(values["data.train_target"]),
        test_source=str(values["data.test_source"]),
        test_target=str(values["data.test_target"]),
        kb_source=str(values["data.kb_source"]) if "data.kb_source" in values else None,
        kb_target=str(values["data.kb_target"]) if "data.kb_target" in values else None,
        entity_testset=(str(values["data.entity_testset"])
                        if "data.entity_testset" in values else None),
        vocab_max_source=int(values.get("vocab.max_size_source", max_size)),  # type: ignore[arg-type]
        vocab_max_target=int(values.get("vocab.max_size_target", max_size)),  # type: ignore[arg-type]
        bpe_merges=int(values["bpe.merges"]),  # type: ignore[arg-type]
        el_max_span=int(values["el.max_span"]),  # type: ignore[arg-type]
        unk_mode=str(values["nmt.unk"]),
        beam=int(values["nmt.beam"]),  # type: ignore[arg-type]
        kge=kge_cfg,
        nmt=nmt_cfg,
    )


def deterministic_override(config: PipelineConfig) -> PipelineConfig:
    """Apply the environment override and its consequences."""
    env = os.environ.get(DETERMINISTIC_ENV)
    deterministic = config.deterministic
    if env is not None:
        deterministic = _parse_bool(env)
    kge = config.kge
    if deterministic and kge.threads != 1:
        kge = KgeConfig(dim=kge.dim, epochs=kge.epochs, lr=kge.lr,
                        min_subword=kge.min_subword,
                        max_subword=kge.max_subword,
                        bucket_count=kge.bucket_count, threads=1,
                        seed=kge.seed, mode=kge.mode)
    return PipelineConfig(**{**config.__dict__, "deterministic": deterministic,
                             "kge": kge})
