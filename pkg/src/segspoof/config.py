"""Run configuration: a flat key = value text file, environment overrides,
and content digests that bind artifacts together.

Two digest scopes: the corpus digest covers everything that determines the
generated dataset; the run digest additionally covers the detector and
training keys (and the corpus digest), and is what checkpoints embed.
Output paths never enter a digest.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import get_type_hints

from .model import DetectorConfig
from .training import TrainSettings

ENV_PREFIX = "SEGSPOOF_"

_PATH_KEYS = ("data_dir", "checkpoint_path", "stats_path", "scores_path")
_CORPUS_KEYS = (
    "corpus_seed",
    "sample_rate",
    "n_utterances",
    "fake_fraction",
    "n_speakers",
    "mode_weights",
    "proxy_noise_delta",
    "proxy_am_depth",
    "proxy_am_hz",
    "tokens_min",
    "tokens_max",
    "token_seconds_min",
    "token_seconds_max",
    "crossfade_ms",
    "train_fraction",
    "val_fraction",
)


@dataclass(frozen=True)
class RunConfig:
    # seeds
    seed: int = 0  # training: init, shuffling, gate noise
    corpus_seed: int = 0  # dataset generation

    # front-end
    sample_rate: int = 16000
    win_ms: float = 25.0
    hop_ms: float = 10.0
    fft_size: int = 512
    coarse_mels: int = 64
    fine_mels: int = 128
    fmin: float = 0.0
    fmax: float = 8000.0

    # detector
    frames_per_window: int = 100
    window_feat_dim: int = 32
    encoder_channels: int = 64
    coarse_layers: int = 4
    fine_layers: int = 4
    hidden_size: int = 128
    fine_penalty: float = 0.1
    gate_temperature: float = 1.0
    fine_loss_reduction: str = "sum"
    dtype: str = "float64"

    # training
    learning_rate: float = 1e-5
    batch_size: int = 1
    max_epochs: int = 12
    stop_patience: int = 20
    lr_patience: int = 5
    lr_decay: float = 0.5
    grad_clip: float = 0.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    train_gate_mode: str = "sample"  # "off" trains the coarse-only ablation

    # corpus
    n_utterances: int = 2000
    fake_fraction: float = 0.5
    n_speakers: int = 30
    mode_weights: str = "1,1,1"
    proxy_noise_delta: float = 0.02
    proxy_am_depth: float = 0.5
    proxy_am_hz: float = 37.0
    tokens_min: int = 4
    tokens_max: int = 10
    token_seconds_min: float = 0.22
    token_seconds_max: float = 0.50
    crossfade_ms: float = 10.0
    train_fraction: float = 0.8
    val_fraction: float = 0.1

    # paths (excluded from digests)
    data_dir: str = "data"
    checkpoint_path: str = "checkpoint.bin"
    stats_path: str = "training_stats.jsonl"
    scores_path: str = "scores.jsonl"

    def detector(self) -> DetectorConfig:
        return DetectorConfig(
            sample_rate=self.sample_rate,
            win_ms=self.win_ms,
            hop_ms=self.hop_ms,
            fft_size=self.fft_size,
            coarse_mels=self.coarse_mels,
            fine_mels=self.fine_mels,
            fmin=self.fmin,
            fmax=self.fmax,
            frames_per_window=self.frames_per_window,
            window_feat_dim=self.window_feat_dim,
            encoder_channels=self.encoder_channels,
            coarse_layers=self.coarse_layers,
            fine_layers=self.fine_layers,
            hidden_size=self.hidden_size,
            fine_penalty=self.fine_penalty,
            gate_temperature=self.gate_temperature,
            fine_loss_reduction=self.fine_loss_reduction,
            dtype=self.dtype,
        )

    def train_settings(self) -> TrainSettings:
        return TrainSettings(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            stop_patience=self.stop_patience,
            lr_patience=self.lr_patience,
            lr_decay=self.lr_decay,
            grad_clip=self.grad_clip,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps,
            seed=self.seed,
            gate_mode=self.train_gate_mode,
        )

    def to_text(self) -> str:
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    def corpus_digest(self) -> str:
        text = "\n".join(f"{k} = {getattr(self, k)}" for k in _CORPUS_KEYS)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def run_digest(self) -> str:
        keys = [
            f.name for f in fields(self) if f.name not in _PATH_KEYS and f.name not in _CORPUS_KEYS
        ]
        text = "\n".join(f"{k} = {getattr(self, k)}" for k in sorted(keys))
        text += f"\ncorpus = {self.corpus_digest()}"
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _field_types() -> dict[str, type]:
    return get_type_hints(RunConfig)


def _convert(name: str, raw: str, target: type):
    raw = raw.strip()
    if target is int:
        return int(raw)
    if target is float:
        return float(raw)
    if target is str:
        return raw
    raise ValueError(f"unsupported config type for {name}")


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse `key = value` lines; '#' starts a comment; unknown keys fail."""
    cfg = base or RunConfig()
    types = _field_types()
    updates = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in types:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        updates[key] = _convert(key, raw, types[key])
    return replace(cfg, **updates)


def apply_env_overrides(cfg: RunConfig, env: dict | None = None) -> RunConfig:
    """Apply SEGSPOOF_<KEY> environment overrides."""
    env = os.environ if env is None else env
    types = _field_types()
    updates = {}
    for key, target in types.items():
        env_key = ENV_PREFIX + key.upper()
        if env_key in env:
            updates[key] = _convert(key, env[env_key], target)
    return replace(cfg, **updates) if updates else cfg


def load_config(
    path: str | Path | None, env: dict | None = None, seed: int | None = None
) -> RunConfig:
    """Resolve a config: defaults <- file <- environment <- explicit seed."""
    cfg = RunConfig()
    if path is not None:
        cfg = parse_config_text(Path(path).read_text(encoding="utf-8"), cfg)
    cfg = apply_env_overrides(cfg, env)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def write_resolved_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(cfg.to_text(), encoding="utf-8")
