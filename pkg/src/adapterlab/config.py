"""Run configuration: one flat key space shared by config files and CLI flags.

Config files are line-based ``key = value`` text; ``#`` starts a comment.
Precedence is CLI override > file > default. Unknown keys are rejected
with a nearest-key suggestion, and the fully resolved config is echoed
into the run directory so a run can be reproduced from its artifacts
alone.
"""

from __future__ import annotations

import dataclasses
import difflib
from dataclasses import dataclass

from .model import FFN_KINDS, ModelConfig
from .training import TrainConfig

__all__ = ["ConfigError", "RunConfig", "parse_config", "write_config"]

TASKS = ("sst", "cfimdb", "paraphrase", "sonnet")


class ConfigError(ValueError):
    """Unknown key, bad value, or malformed config line."""


@dataclass
class RunConfig:
    """Every tunable of a run, with documented defaults.

    task           one of sst | cfimdb | paraphrase | sonnet
    epochs         0 means the per-task default (10 for sentiment and
                   sonnet runs, 4 for paraphrase)
    vocab_size     0 means "derive from the tokenizer"
    train_path /   empty means "use the built-in toy synthesizer"
    dev_path
    vocab_path /   empty means "use the byte-level fallback vocabulary"
    merges_path
    """

    task: str = "sst"
    # model
    vocab_size: int = 0
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 2
    max_seq_len: int = 128
    ffn_kind: str = "mlp"
    ffn_mult: int = 4
    lora_r: int = 32
    lora_alpha: float = 64.0
    lora_dropout_p: float = 0.0
    lora_targets: str = "attn_q,attn_v,ffn"
    kan_grid_size: int = 5
    kan_spline_order: int = 3
    kan_grid_min: float = -1.0
    kan_grid_max: float = 1.0
    kan_scale_base: float = 1.0
    kan_scale_spline: float = 1.0
    gat_heads: int = 4
    gat_window: int = 3
    gat_leaky_slope: float = 0.2
    # training
    learning_rate: float = 1e-5
    dropout_p: float = 0.5
    weight_decay: float = 0.2
    epochs: int = 0
    batch_size: int = 8
    seed: int = 0
    early_stop_patience: int = 3
    max_steps: int = 0
    grad_clip: float = 1.0
    # generation
    temperature: float = 1.2
    top_p: float = 0.9
    max_new_tokens: int = 64
    # data and output
    train_path: str = ""
    dev_path: str = ""
    vocab_path: str = ""
    merges_path: str = ""
    out_dir: str = "run"

    def resolved_epochs(self) -> int:
        if self.epochs > 0:
            return self.epochs
        return 4 if self.task == "paraphrase" else 10

    def model_config(self, vocab_size: int | None = None) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size if vocab_size is not None else self.vocab_size,
            d_model=self.d_model,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            max_seq_len=self.max_seq_len,
            ffn_kind=self.ffn_kind,
            dropout_p=self.dropout_p,
            ffn_mult=self.ffn_mult,
            lora_r=self.lora_r,
            lora_alpha=self.lora_alpha,
            lora_dropout_p=self.lora_dropout_p,
            lora_targets=self.lora_targets,
            kan_grid_size=self.kan_grid_size,
            kan_spline_order=self.kan_spline_order,
            kan_grid_min=self.kan_grid_min,
            kan_grid_max=self.kan_grid_max,
            kan_scale_base=self.kan_scale_base,
            kan_scale_spline=self.kan_scale_spline,
            gat_heads=self.gat_heads,
            gat_window=self.gat_window,
            gat_leaky_slope=self.gat_leaky_slope,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            dropout_p=self.dropout_p,
            weight_decay=self.weight_decay,
            epochs=self.resolved_epochs(),
            batch_size=self.batch_size,
            seed=self.seed,
            lora_r=self.lora_r,
            lora_alpha=self.lora_alpha,
            ffn_kind=self.ffn_kind,
            early_stop_patience=self.early_stop_patience,
            max_steps=self.max_steps or None,
            grad_clip=self.grad_clip,
        )


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _convert(key: str, raw: str):
    ftype = _FIELDS[key].type
    raw = raw.strip()
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"value {raw!r} for key {key!r} is not a valid {ftype}") from exc


def _check_key(key: str):
    if key not in _FIELDS:
        close = difflib.get_close_matches(key, _FIELDS, n=1)
        hint = f"; did you mean {close[0]!r}?" if close else ""
        raise ConfigError(f"unknown config key {key!r}{hint}")


def parse_config(path: str | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Build a RunConfig from an optional file plus CLI-style overrides."""
    values: dict[str, object] = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        for lineno, line in enumerate(lines, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, raw = stripped.split("=", 1)
            key = key.strip()
            _check_key(key)
            values[key] = _convert(key, raw)
    for key, raw in (overrides or {}).items():
        _check_key(key)
        values[key] = _convert(key, raw) if isinstance(raw, str) else raw
    cfg = RunConfig(**values)
    if cfg.task not in TASKS:
        raise ConfigError(f"unknown task {cfg.task!r}; expected one of {TASKS}")
    if cfg.ffn_kind not in FFN_KINDS:
        raise ConfigError(f"unknown ffn_kind {cfg.ffn_kind!r}; expected one of {FFN_KINDS}")
    return cfg


def write_config(cfg: RunConfig, path: str) -> None:
    """Echo the fully resolved config as 'key = value' lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for f in dataclasses.fields(RunConfig):
            fh.write(f"{f.name} = {getattr(cfg, f.name)}\n")
