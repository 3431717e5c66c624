"""Training loop: per-utterance sampled-gate gradients, Adam, plateau lr
decay, early stopping on validation loss, and resumable checkpoints.

Utterances are visited in a seeded per-epoch order; gate noise comes from a
generator derived from (seed, epoch, utterance index), so runs are exactly
reproducible and resuming from a checkpoint continues the same trajectory.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .model import (
    GATE_ARGMAX,
    GATE_SAMPLE,
    GATE_WARMUP,
    DetectorConfig,
    FeatureSet,
    FrameLabels,
    init_params,
    run_utterance,
    zero_grads,
)
from .nn import AdamState, adam_init, adam_step


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite; message carries diagnostics."""


@dataclass
class TrainItem:
    utterance_id: str
    features: FeatureSet
    labels: FrameLabels
    split: str


@dataclass(frozen=True)
class TrainSettings:
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
    seed: int = 0
    gate_mode: str = GATE_SAMPLE  # "off" trains the coarse-only ablation
    warmup_epochs: int = 0  # initial epochs in "warmup" mode (sampled gating only)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    activation_rate: float
    lr: float
    seed: int

    def record(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "activation_rate": self.activation_rate,
            "lr": self.lr,
            "seed": self.seed,
        }


@dataclass
class TrainState:
    params: dict[str, np.ndarray]
    adam: AdamState
    epoch: int = 0
    best_val: float = float("inf")
    best_params: dict[str, np.ndarray] | None = None
    epochs_since_best: int = 0
    epochs_since_lr_drop: int = 0
    stats: list[EpochStats] = field(default_factory=list)


def _clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


def utterance_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, index])


def eval_mode_for(gate_mode: str) -> str:
    """Deterministic inference mode matching a training gate mode: forced
    modes evaluate forced, sampled training evaluates with hard argmax."""
    return gate_mode if gate_mode in ("on", "off") else GATE_ARGMAX


def validation_loss(
    items: list[TrainItem],
    params: dict[str, np.ndarray],
    cfg: DetectorConfig,
    mode: str = GATE_ARGMAX,
) -> float:
    """Mean per-window loss under deterministic gating."""
    total = 0.0
    windows = 0
    for item in items:
        result = run_utterance(item.features, params, cfg, mode=mode, labels=item.labels)
        total += result.loss_sum
        windows += result.n_windows
    return total / max(1, windows)


def train_epoch(
    items: list[TrainItem],
    state: TrainState,
    cfg: DetectorConfig,
    settings: TrainSettings,
) -> tuple[float, float]:
    """One pass over the training items; returns (mean loss, activation rate).

    Gradients are averaged over the windows of each batch; the update order
    and gate noise are fully determined by (seed, epoch).
    """
    mode = settings.gate_mode
    if settings.gate_mode == GATE_SAMPLE and state.epoch < settings.warmup_epochs:
        mode = GATE_WARMUP
    order = np.random.default_rng([settings.seed, state.epoch, 0xA11CE]).permutation(len(items))
    batch_grads = zero_grads(state.params)
    batch_windows = 0
    batch_count = 0
    loss_total = 0.0
    window_total = 0
    fine_on = 0

    for pos, idx in enumerate(order):
        item = items[int(idx)]
        rng = utterance_rng(settings.seed, state.epoch, int(idx))
        result = run_utterance(
            item.features,
            state.params,
            cfg,
            mode=mode,
            labels=item.labels,
            rng=rng,
            with_grads=True,
        )
        if not np.isfinite(result.loss_sum):
            raise TrainingDiverged(
                f"non-finite loss at epoch {state.epoch}, utterance {item.utterance_id!r} "
                f"(loss={result.loss_sum})"
            )
        loss_total += result.loss_sum
        window_total += result.n_windows
        fine_on += sum(t.fine_ran for t in result.traces)
        for k, g in result.grads.items():
            batch_grads[k] += g
        batch_windows += result.n_windows
        batch_count += 1

        if batch_count == settings.batch_size or pos == len(order) - 1:
            for g in batch_grads.values():
                g /= max(1, batch_windows)
            if settings.grad_clip > 0:
                _clip_grads(batch_grads, settings.grad_clip)
            adam_step(state.adam, state.params, batch_grads)
            batch_grads = zero_grads(state.params)
            batch_windows = 0
            batch_count = 0

    return loss_total / max(1, window_total), fine_on / max(1, window_total)


def fit(
    train_items: list[TrainItem],
    val_items: list[TrainItem],
    cfg: DetectorConfig,
    settings: TrainSettings,
    state: TrainState | None = None,
    on_epoch=None,
) -> TrainState:
    """Train until max_epochs or stop_patience stagnant validation epochs.

    `on_epoch(stats)` is called after each epoch (used to append stats
    records). Returns the final state; `best_params` holds the
    best-validation parameters.
    """
    if not train_items:
        raise ValueError("no training items")
    if state is None:
        params = init_params(cfg, settings.seed)
        state = TrainState(
            params=params,
            adam=adam_init(
                params,
                settings.learning_rate,
                settings.adam_beta1,
                settings.adam_beta2,
                settings.adam_eps,
            ),
        )

    eval_mode = eval_mode_for(settings.gate_mode)
    while state.epoch < settings.max_epochs:
        train_loss, activation = train_epoch(train_items, state, cfg, settings)
        val_loss = (
            validation_loss(val_items, state.params, cfg, mode=eval_mode)
            if val_items
            else train_loss
        )
        state.epoch += 1
        stats = EpochStats(
            epoch=state.epoch,
            train_loss=train_loss,
            val_loss=val_loss,
            activation_rate=activation,
            lr=state.adam.lr,
            seed=settings.seed,
        )
        state.stats.append(stats)
        if on_epoch is not None:
            on_epoch(stats)

        in_warmup = settings.gate_mode == GATE_SAMPLE and state.epoch <= settings.warmup_epochs
        if in_warmup:
            # Plateau and stopping bookkeeping starts with the sampled phase.
            state.epochs_since_best = 0
            state.epochs_since_lr_drop = 0
        elif val_loss < state.best_val - 1e-12:
            state.best_val = val_loss
            state.best_params = copy.deepcopy(state.params)
            state.epochs_since_best = 0
            state.epochs_since_lr_drop = 0
        else:
            state.epochs_since_best += 1
            state.epochs_since_lr_drop += 1
            if state.epochs_since_lr_drop >= settings.lr_patience:
                state.adam.lr *= settings.lr_decay
                state.epochs_since_lr_drop = 0
            if state.epochs_since_best >= settings.stop_patience:
                break

    if state.best_params is None:
        state.best_params = copy.deepcopy(state.params)
    return state


# ---------------------------------------------------------------------------
# Checkpoint round-trip
# ---------------------------------------------------------------------------

_META_KEYS = ("epoch", "best_val", "adam_step", "adam_lr", "epochs_since_best", "epochs_since_lr_drop")


def state_to_tensors(state: TrainState) -> dict[str, np.ndarray]:
    tensors: dict[str, np.ndarray] = {}
    for k, v in state.params.items():
        tensors[f"param.{k}"] = v
    best = state.best_params if state.best_params is not None else state.params
    for k, v in best.items():
        tensors[f"best.{k}"] = v
    for k, v in state.adam.m.items():
        tensors[f"adam.m.{k}"] = v
    for k, v in state.adam.v.items():
        tensors[f"adam.v.{k}"] = v
    tensors["meta"] = np.array(
        [
            float(state.epoch),
            float(state.best_val),
            float(state.adam.step),
            float(state.adam.lr),
            float(state.epochs_since_best),
            float(state.epochs_since_lr_drop),
        ]
    )
    return tensors


def save_train_state(path, state: TrainState, config_digest: str) -> None:
    save_checkpoint(path, state_to_tensors(state), config_digest)


def load_train_state(path, settings: TrainSettings) -> tuple[TrainState, str]:
    tensors, digest = load_checkpoint(path)
    params = {k[len("param.") :]: v for k, v in tensors.items() if k.startswith("param.")}
    best = {k[len("best.") :]: v for k, v in tensors.items() if k.startswith("best.")}
    adam = adam_init(
        params, settings.learning_rate, settings.adam_beta1, settings.adam_beta2, settings.adam_eps
    )
    for k in params:
        adam.m[k] = tensors[f"adam.m.{k}"]
        adam.v[k] = tensors[f"adam.v.{k}"]
    meta = tensors["meta"]
    adam.step = int(meta[2])
    adam.lr = float(meta[3])
    state = TrainState(
        params=params,
        adam=adam,
        epoch=int(meta[0]),
        best_val=float(meta[1]),
        best_params=best,
        epochs_since_best=int(meta[4]),
        epochs_since_lr_drop=int(meta[5]),
    )
    return state, digest


def load_detector_params(path) -> tuple[dict[str, np.ndarray], str]:
    """Best-validation parameters and config digest from a checkpoint."""
    tensors, digest = load_checkpoint(path)
    params = {k[len("best.") :]: v for k, v in tensors.items() if k.startswith("best.")}
    if not params:
        params = {k[len("param.") :]: v for k, v in tensors.items() if k.startswith("param.")}
    return params, digest
