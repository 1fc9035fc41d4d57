"""Training configuration and its plain-text serialization.

The on-disk format is one `key = value` per line with `#` comments;
every key is a TrainConfig field. `vocab_size = 0` means "infer from
the dataset" and is resolved before training starts.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # grammar sizes per modality
    lang_nonterminals: int = 4
    lang_preterminals: int = 4
    vocab_size: int = 0
    vis_nonterminals: int = 4
    vis_preterminals: int = 6
    # dimensions
    symbol_dim: int = 24
    embed_scale: float = 0.3
    z_dim: int = 8
    mlp_hidden: int = 48
    net_layers: int = 2
    rnn_hidden: int = 24
    enc_embed_dim: int = 24
    align_dim: int = 24
    feat_dim: int = 16
    cluster_dim: int = 16
    cluster_layers: int = 1
    perception_layers: int = 0
    perception_hidden: int = 32
    # objective
    lambda_language: float = 1.0
    lambda_vision: float = 1.0
    lambda_contrastive: float = 1.0
    margin: float = 0.2
    include_unit_spans: bool = False
    normalize_alignment: bool = True
    # optimization
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    epochs: int = 30
    seed: int = 0
    # schedule
    curriculum_len_cap: int = 0
    curriculum_epochs: int = 0
    eval_every: int = 0
    warm_start_clustering: bool = True
    warm_start_scale: float = 4.0
    warm_start_samples: int = 512
    # evaluation
    retrieval_k: int = 8
    retrieval_trials: int = 2000
    # diagnostics
    debug_checks: bool = False

    def __post_init__(self):
        positive = (
            "lang_nonterminals", "lang_preterminals", "vis_nonterminals",
            "vis_preterminals", "symbol_dim", "mlp_hidden", "rnn_hidden",
            "enc_embed_dim", "align_dim", "feat_dim", "cluster_dim",
            "batch_size", "epochs", "retrieval_k",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("lambda_language", "lambda_vision", "lambda_contrastive"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.z_dim < 0:
            raise ConfigError("z_dim must be >= 0")
        if self.lambda_contrastive > 0 and self.batch_size < 2:
            raise ConfigError("contrastive training needs batch_size >= 2")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _parse_value(name, raw):
    ftype = _FIELDS[name].type
    raw = raw.strip()
    if ftype in ("bool", bool):
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if ftype in ("int", int):
        return int(raw)
    if ftype in ("float", float):
        return float(raw)
    return raw


def parse_config(text):
    """TrainConfig from `key = value` lines; unknown keys are errors."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _parse_value(key, raw)
        except ValueError as e:
            raise ConfigError(f"line {lineno}: {e}") from None
    return TrainConfig(**values)


def config_to_text(config):
    lines = []
    for f in dataclasses.fields(TrainConfig):
        lines.append(f"{f.name} = {getattr(config, f.name)!r}")
    return "\n".join(lines) + "\n"


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())
