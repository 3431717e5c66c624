"""Bilevel segmental spoof detector.

A coarse stream encodes each 1 s window of 64-bin log-mel frames into a
small feature vector, runs an LSTM over the window sequence, and scores
each window as real/fake. A learned gate looks at the window feature and
both streams' previous hidden states and decides whether to spend compute
on the fine stream: an LSTM over the window's 10 ms 128-bin log-mel frames
(each concatenated with the window feature) scoring every frame. The fine
stream's state either advances to the window's final candidate state or is
carried over unchanged, selected by the gate vector.

Training samples the gate with Gumbel noise (straight-through: the sampled
branch runs, gradients flow through the temperature-softmax relaxation).
A fully soft mode runs both branches and is exactly differentiable, which
is what the finite-difference tests exercise.

All gradients are computed by hand; `run_utterance(..., with_grads=True)`
returns a flat {name: array} gradient dict aligned with the parameter dict.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import flops, gating
from .audio import Waveform
from .dsp import hann_window, mel_filterbank, windowed_log_mel
from .gating import GateDecision
from .nn import (
    LstmLayer,
    bce,
    conv1d_backward,
    conv1d_forward,
    init_lstm_layers,
    lstm_backward,
    lstm_forward,
    sigmoid,
    uniform_init,
)

# Fixed affine applied to log-mel inputs so the networks see O(1) values.
FEAT_OFFSET = 8.0
FEAT_SCALE = 0.2

PROB_EPS = 1e-7
CONV_KERNEL = 3

GATE_SAMPLE = "sample"  # training: hard forward, soft backward
GATE_SOFT = "soft"  # relaxed: both branches run, exactly differentiable
GATE_ARGMAX = "argmax"  # inference: argmax of logits, no noise
GATE_ON = "on"  # fine stream forced on
GATE_OFF = "off"  # fine stream forced off (coarse-only ablation)
GATE_WARMUP = "warmup"  # both streams trained at full weight; gate learns
# its comparison from the observed branch costs without steering compute

_TRAIN_MODES = (GATE_SAMPLE, GATE_SOFT, GATE_ON, GATE_OFF, GATE_WARMUP)


@dataclass(frozen=True)
class DetectorConfig:
    """Architecture and front-end settings."""

    sample_rate: int = 16000
    win_ms: float = 25.0
    hop_ms: float = 10.0
    fft_size: int = 512
    coarse_mels: int = 64
    fine_mels: int = 128
    fmin: float = 0.0
    fmax: float = 8000.0
    frames_per_window: int = 100
    window_feat_dim: int = 32
    encoder_channels: int = 64
    coarse_layers: int = 4
    fine_layers: int = 4
    hidden_size: int = 128
    fine_penalty: float = 0.1
    gate_temperature: float = 1.0
    fine_loss_reduction: str = "sum"  # "sum" per the composite loss; "mean" optional
    dtype: str = "float64"  # "float32" roughly halves training wall clock

    def __post_init__(self):
        if self.frames_per_window < 1:
            raise ValueError("frames_per_window must be >= 1")
        if self.fine_penalty < 0:
            raise ValueError("fine_penalty must be >= 0")
        if self.gate_temperature <= 0:
            raise ValueError("gate_temperature must be > 0")
        if self.fine_loss_reduction not in ("sum", "mean"):
            raise ValueError(f"unknown fine_loss_reduction {self.fine_loss_reduction!r}")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"unknown dtype {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    @property
    def win_samples(self) -> int:
        return int(round(self.win_ms * self.sample_rate / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000.0))

    @property
    def hop_seconds(self) -> float:
        return self.hop_samples / self.sample_rate

    @property
    def window_seconds(self) -> float:
        return self.frames_per_window * self.hop_samples / self.sample_rate

    @property
    def gate_input_dim(self) -> int:
        return self.window_feat_dim + 2 * self.hidden_size

    @property
    def fine_input_dim(self) -> int:
        return self.fine_mels + self.window_feat_dim


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


def init_params(cfg: DetectorConfig, seed: int) -> dict[str, np.ndarray]:
    """Seeded parameter dict covering both streams, the gate, and the heads."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    k = CONV_KERNEL
    params["encoder.w1"] = uniform_init(
        rng, (k * cfg.coarse_mels, cfg.encoder_channels), k * cfg.coarse_mels
    )
    params["encoder.b1"] = np.zeros(cfg.encoder_channels)
    params["encoder.w2"] = uniform_init(
        rng, (k * cfg.encoder_channels, cfg.window_feat_dim), k * cfg.encoder_channels
    )
    params["encoder.b2"] = np.zeros(cfg.window_feat_dim)
    for prefix, layers, input_dim in (
        ("coarse", cfg.coarse_layers, cfg.window_feat_dim),
        ("fine", cfg.fine_layers, cfg.fine_input_dim),
    ):
        for li, layer in enumerate(init_lstm_layers(layers, input_dim, cfg.hidden_size, rng)):
            params[f"{prefix}.l{li}.w_x"] = layer.w_x
            params[f"{prefix}.l{li}.w_h"] = layer.w_h
            params[f"{prefix}.l{li}.b"] = layer.b
    params["gate.w"] = uniform_init(rng, (2, cfg.gate_input_dim), cfg.gate_input_dim)
    params["coarse_head.w"] = uniform_init(rng, (cfg.hidden_size,), cfg.hidden_size)
    params["fine_head.w"] = uniform_init(rng, (cfg.hidden_size,), cfg.hidden_size)
    return {k: np.ascontiguousarray(v, dtype=cfg.np_dtype) for k, v in params.items()}


class ModelViews(NamedTuple):
    """Typed views over the flat parameter dict (same underlying arrays)."""

    enc_w1: np.ndarray
    enc_b1: np.ndarray
    enc_w2: np.ndarray
    enc_b2: np.ndarray
    coarse_layers: list[LstmLayer]
    fine_layers: list[LstmLayer]
    gate_w: np.ndarray
    coarse_head: np.ndarray
    fine_head: np.ndarray


def build_views(params: dict[str, np.ndarray], cfg: DetectorConfig) -> ModelViews:
    def stack(prefix: str, n: int) -> list[LstmLayer]:
        return [
            LstmLayer(
                params[f"{prefix}.l{i}.w_x"],
                params[f"{prefix}.l{i}.w_h"],
                params[f"{prefix}.l{i}.b"],
            )
            for i in range(n)
        ]

    return ModelViews(
        enc_w1=params["encoder.w1"],
        enc_b1=params["encoder.b1"],
        enc_w2=params["encoder.w2"],
        enc_b2=params["encoder.b2"],
        coarse_layers=stack("coarse", cfg.coarse_layers),
        fine_layers=stack("fine", cfg.fine_layers),
        gate_w=params["gate.w"],
        coarse_head=params["coarse_head.w"],
        fine_head=params["fine_head.w"],
    )


def zero_grads(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


# ---------------------------------------------------------------------------
# Features and labels
# ---------------------------------------------------------------------------


@dataclass
class FeatureSet:
    """Per-window log-mel blocks for both streams plus the validity mask."""

    coarse: np.ndarray  # [T, F, coarse_mels]
    fine: np.ndarray  # [T, F, fine_mels]
    valid: np.ndarray  # [T, F] bool
    n_samples: int
    sample_rate: int

    @property
    def n_windows(self) -> int:
        return self.coarse.shape[0]


class FeatureExtractor:
    """Waveform -> FeatureSet with precomputed filterbanks."""

    def __init__(self, cfg: DetectorConfig):
        self.cfg = cfg
        self.window = hann_window(cfg.win_samples)
        self.coarse_fb = mel_filterbank(
            cfg.coarse_mels, cfg.fft_size, cfg.sample_rate, cfg.fmin, cfg.fmax
        )
        self.fine_fb = mel_filterbank(
            cfg.fine_mels, cfg.fft_size, cfg.sample_rate, cfg.fmin, cfg.fmax
        )

    def __call__(self, waveform: Waveform) -> FeatureSet:
        cfg = self.cfg
        if waveform.sample_rate != cfg.sample_rate:
            raise ValueError(
                f"sample rate {waveform.sample_rate} Hz not supported "
                f"(expected {cfg.sample_rate} Hz)"
            )
        if len(waveform) < cfg.win_samples:
            raise ValueError(
                f"audio too short: {len(waveform)} samples < one analysis window"
            )
        coarse, valid = windowed_log_mel(
            waveform,
            cfg.coarse_mels,
            cfg.win_samples,
            cfg.hop_samples,
            cfg.fft_size,
            self.coarse_fb,
            self.window,
            cfg.frames_per_window,
        )
        fine, _ = windowed_log_mel(
            waveform,
            cfg.fine_mels,
            cfg.win_samples,
            cfg.hop_samples,
            cfg.fft_size,
            self.fine_fb,
            self.window,
            cfg.frames_per_window,
        )
        return FeatureSet(coarse, fine, valid, len(waveform), waveform.sample_rate)


def hf_features(
    waveform: Waveform, cfg: DetectorConfig | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Fine-stream log-mel frames grouped per window: ([T, F, mels], valid)."""
    cfg = cfg or DetectorConfig()
    ext = FeatureExtractor(cfg)
    fs = ext(waveform)
    return fs.fine, fs.valid


@dataclass
class FrameLabels:
    """1.0 = real, 0.0 = fake; a window is fake if any valid frame is fake."""

    frames: np.ndarray  # [T, F]
    windows: np.ndarray  # [T]


def labels_from_spans(
    spans: list[tuple[float, float]],
    n_windows: int,
    frames_per_window: int,
    hop_seconds: float,
    valid: np.ndarray,
) -> FrameLabels:
    """Frame/window labels from fake time spans; straddling frames count fake."""
    total = n_windows * frames_per_window
    starts = np.arange(total) * hop_seconds
    ends = starts + hop_seconds
    fake = np.zeros(total, dtype=bool)
    for s, e in spans:
        fake |= (starts < e) & (ends > s)
    frames = (~fake).astype(np.float64).reshape(n_windows, frames_per_window)
    window_fake = np.any((frames == 0.0) & valid, axis=1)
    return FrameLabels(frames=frames, windows=(~window_fake).astype(np.float64))


# ---------------------------------------------------------------------------
# Forward / backward engine
# ---------------------------------------------------------------------------


@dataclass
class WindowTrace:
    """Per-window record of features, gate decision, predictions, and loss."""

    index: int
    window_feature: np.ndarray
    gate: GateDecision
    gate_weights: np.ndarray  # mixture applied in the forward pass
    fine_ran: bool
    coarse_real_prob: float
    fine_real_probs: np.ndarray | None
    loss: float | None = None


@dataclass
class _WindowCache:
    gate_in: np.ndarray
    fine_cache: object | None
    fine_h_top: np.ndarray | None
    fine_final: tuple[np.ndarray, np.ndarray] | None
    prev_state: tuple[np.ndarray, np.ndarray]
    fine_probs: np.ndarray | None
    fine_branch: float | None
    coarse_branch: float | None


@dataclass
class UtteranceResult:
    traces: list[WindowTrace]
    loss_sum: float
    n_windows: int
    grads: dict[str, np.ndarray] | None = None

    @property
    def mean_loss(self) -> float:
        return self.loss_sum / max(1, self.n_windows)

    @property
    def activation_rate(self) -> float:
        if not self.traces:
            return 0.0
        return float(np.mean([t.fine_ran for t in self.traces]))


def _normalize(logmel: np.ndarray, dtype=np.float64) -> np.ndarray:
    return (np.asarray(logmel, dtype=dtype) + FEAT_OFFSET) * FEAT_SCALE


def _encode_window(z: np.ndarray, views: ModelViews):
    """Conv -> ReLU -> conv -> ReLU -> temporal mean pool."""
    y1, cols1 = conv1d_forward(z, views.enc_w1, views.enc_b1, CONV_KERNEL)
    a1 = np.maximum(y1, 0.0)
    y2, cols2 = conv1d_forward(a1, views.enc_w2, views.enc_b2, CONV_KERNEL)
    a2 = np.maximum(y2, 0.0)
    u = a2.mean(axis=0)
    return u, (cols1, y1 > 0, cols2, y2 > 0)


def _encode_backward(du: np.ndarray, cache, views: ModelViews, grads: dict[str, np.ndarray]):
    cols1, mask1, cols2, mask2 = cache
    n_frames = cols1.shape[0]
    da2 = np.repeat(du[None, :] / n_frames, n_frames, axis=0)
    dy2 = da2 * mask2
    dw2, db2, da1 = conv1d_backward(
        dy2, cols2, views.enc_w2, CONV_KERNEL, views.enc_w1.shape[1]
    )
    dy1 = da1 * mask1
    dw1, db1, _ = conv1d_backward(
        dy1, cols1, views.enc_w1, CONV_KERNEL, cols1.shape[1] // CONV_KERNEL
    )
    grads["encoder.w1"] += dw1
    grads["encoder.b1"] += db1
    grads["encoder.w2"] += dw2
    grads["encoder.b2"] += db2


def lf_encode(
    waveform: Waveform, params: dict[str, np.ndarray], cfg: DetectorConfig | None = None
) -> np.ndarray:
    """Window feature vectors [n_windows x window_feat_dim] for a waveform."""
    cfg = cfg or DetectorConfig()
    views = build_views(params, cfg)
    fs = FeatureExtractor(cfg)(waveform)
    out = np.empty((fs.n_windows, cfg.window_feat_dim))
    for t in range(fs.n_windows):
        out[t], _ = _encode_window(_normalize(fs.coarse[t]), views)
    return out


def lf_step(
    u_window: np.ndarray,
    state: tuple[np.ndarray, np.ndarray] | None,
    views: ModelViews,
) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """One coarse step: real probability for the window plus the new state."""
    h0, c0 = state if state is not None else (None, None)
    h_top, final, _ = lstm_forward(views.coarse_layers, u_window[None, :], h0, c0)
    prob = float(sigmoid(h_top[0] @ views.coarse_head))
    return prob, final


def hf_window(
    fine_logmel: np.ndarray,
    u_window: np.ndarray,
    state: tuple[np.ndarray, np.ndarray],
    views: ModelViews,
    frames_per_window: int,
) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """Fine stream over one window's frames; returns probabilities and the
    candidate final state used by the state merge."""
    if fine_logmel.shape[0] != frames_per_window:
        raise ValueError(
            f"expected {frames_per_window} fine frames, got {fine_logmel.shape[0]}"
        )
    x = np.concatenate(
        [_normalize(fine_logmel), np.repeat(u_window[None, :], fine_logmel.shape[0], 0)],
        axis=1,
    )
    h_top, final, _ = lstm_forward(views.fine_layers, x, state[0], state[1])
    probs = sigmoid(h_top @ views.fine_head)
    return probs, final


def propagate_state(
    gate_vector: np.ndarray,
    candidate: tuple[np.ndarray, np.ndarray],
    previous: tuple[np.ndarray, np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    """Mix candidate and carried-over fine states by the 2-vector gate."""
    g0, g1 = float(gate_vector[0]), float(gate_vector[1])
    return (
        g0 * candidate[0] + g1 * previous[0],
        g0 * candidate[1] + g1 * previous[1],
    )


def window_loss(
    gate_weights: np.ndarray,
    coarse_prob: float,
    fine_probs: np.ndarray | None,
    y_window: float,
    y_frames: np.ndarray | None,
    valid: np.ndarray | None,
    penalty: float,
    reduction: str = "sum",
) -> float:
    """Composite per-window loss: gate-weighted mix of the fine branch
    (penalty + summed frame BCE) and the coarse branch (window BCE)."""
    coarse_term = float(bce(y_window, coarse_prob))
    w_fine = float(gate_weights[0])
    if w_fine != 0.0:
        if fine_probs is None or y_frames is None:
            raise ValueError("fine branch is active but fine predictions/labels are missing")
        mask = np.ones_like(y_frames, dtype=bool) if valid is None else valid
        frame_bce = bce(y_frames, fine_probs) * mask
        total = frame_bce.sum()
        if reduction == "mean":
            total = total / max(1, int(mask.sum()))
        fine_term = penalty + float(total)
    else:
        fine_term = 0.0
    return w_fine * fine_term + float(gate_weights[1]) * coarse_term


def trace_loss(
    trace: WindowTrace,
    y_window: float,
    y_frames: np.ndarray | None,
    penalty: float,
    valid: np.ndarray | None = None,
    reduction: str = "sum",
) -> float:
    """Composite loss of a recorded window trace against labels."""
    return window_loss(
        trace.gate_weights,
        trace.coarse_real_prob,
        trace.fine_real_probs,
        y_window,
        y_frames,
        valid,
        penalty,
        reduction,
    )


def run_utterance(
    features: FeatureSet,
    params: dict[str, np.ndarray],
    cfg: DetectorConfig,
    mode: str = GATE_ARGMAX,
    labels: FrameLabels | None = None,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
    with_grads: bool = False,
) -> UtteranceResult:
    """Run the detector over one utterance.

    mode: "sample" (straight-through training), "soft" (relaxed, both
    branches), "argmax" (inference), "on"/"off" (forced gate), or "warmup"
    (both branches at full weight -- the reported window loss is their sum --
    while the gate projection alone learns from the branch costs). `noise`
    ([T x 2]) freezes the gate perturbation for gradient checks.
    with_grads requires labels and a differentiable mode.
    """
    if mode not in (GATE_SAMPLE, GATE_SOFT, GATE_ARGMAX, GATE_ON, GATE_OFF, GATE_WARMUP):
        raise ValueError(f"unknown gate mode {mode!r}")
    if with_grads:
        if labels is None:
            raise ValueError("gradients require labels")
        if mode not in _TRAIN_MODES:
            raise ValueError(f"mode {mode!r} does not define training gradients")

    views = build_views(params, cfg)
    dtype = views.gate_w.dtype
    label_frames = None if labels is None else np.asarray(labels.frames, dtype=dtype)
    n_windows = features.n_windows
    fpw = cfg.frames_per_window
    hidden = cfg.hidden_size
    wfd = cfg.window_feat_dim
    temperature = cfg.gate_temperature
    penalty = cfg.fine_penalty
    reduction = cfg.fine_loss_reduction

    # Window features through the encoder.
    u_seq = np.empty((n_windows, wfd), dtype=dtype)
    enc_caches = []
    for t in range(n_windows):
        u_seq[t], cache = _encode_window(_normalize(features.coarse[t], dtype), views)
        enc_caches.append(cache)

    # Coarse stream over the whole window sequence (independent of gating).
    coarse_h, _, coarse_cache = lstm_forward(views.coarse_layers, u_seq)
    coarse_scores = coarse_h @ views.coarse_head
    flops.add(n_windows * hidden)
    coarse_probs = sigmoid(coarse_scores)

    state_h = np.zeros((cfg.fine_layers, hidden), dtype=dtype)
    state_c = np.zeros((cfg.fine_layers, hidden), dtype=dtype)
    traces: list[WindowTrace] = []
    win_caches: list[_WindowCache] = []
    loss_sum = 0.0

    for t in range(n_windows):
        h_coarse_prev = coarse_h[t - 1] if t > 0 else np.zeros(hidden, dtype=dtype)
        gate_in = np.concatenate([u_seq[t], h_coarse_prev, state_h[-1]])
        logits = views.gate_w @ gate_in
        flops.add(views.gate_w.size)

        if mode in (GATE_SAMPLE, GATE_SOFT, GATE_WARMUP):
            decision = gating.decide(
                logits, temperature, rng, noise=None if noise is None else noise[t]
            )
        elif mode == GATE_ARGMAX:
            hard = gating.hard_gate(logits)
            one_hot = np.zeros(2)
            one_hot[hard] = 1.0
            decision = GateDecision(logits=logits, soft=one_hot, hard=hard)
        else:
            hard = 0 if mode == GATE_ON else 1
            one_hot = np.zeros(2)
            one_hot[hard] = 1.0
            decision = GateDecision(logits=logits, soft=one_hot, hard=hard)

        run_fine = mode in (GATE_SOFT, GATE_WARMUP) or decision.hard == gating.FINE_ON
        gate_weights = decision.soft.copy()
        if mode == GATE_SAMPLE:
            gate_weights = np.zeros(2)
            gate_weights[decision.hard] = 1.0
        elif mode == GATE_WARMUP:
            gate_weights = np.ones(2)

        prev_state = (state_h, state_c)
        fine_probs = None
        fine_cache = None
        fine_h_top = None
        fine_final = None
        if run_fine:
            fine_x = np.concatenate(
                [_normalize(features.fine[t], dtype), np.repeat(u_seq[t][None, :], fpw, 0)],
                axis=1,
            )
            fine_h_top, fine_final, fine_cache = lstm_forward(
                views.fine_layers, fine_x, state_h, state_c
            )
            fine_scores = fine_h_top @ views.fine_head
            flops.add(fpw * hidden)
            fine_probs = sigmoid(fine_scores)

        if mode == GATE_SOFT:
            state_h, state_c = propagate_state(
                decision.soft, fine_final, (state_h, state_c)
            )
        elif mode == GATE_WARMUP or decision.hard == gating.FINE_ON:
            state_h, state_c = fine_final

        fine_branch = None
        coarse_branch = None
        loss_t = None
        if labels is not None:
            coarse_branch = float(bce(labels.windows[t], coarse_probs[t]))
            if fine_probs is not None:
                frame_bce = bce(label_frames[t], fine_probs) * features.valid[t]
                total = frame_bce.sum()
                if reduction == "mean":
                    total = total / max(1, int(features.valid[t].sum()))
                fine_branch = penalty + float(total)
            loss_t = float(gate_weights[0]) * (fine_branch or 0.0) + float(
                gate_weights[1]
            ) * coarse_branch
            loss_sum += loss_t

        traces.append(
            WindowTrace(
                index=t,
                window_feature=u_seq[t],
                gate=decision,
                gate_weights=gate_weights,
                fine_ran=bool(run_fine),
                coarse_real_prob=float(coarse_probs[t]),
                fine_real_probs=fine_probs,
                loss=loss_t,
            )
        )
        if with_grads:
            win_caches.append(
                _WindowCache(
                    gate_in=gate_in,
                    fine_cache=fine_cache,
                    fine_h_top=fine_h_top,
                    fine_final=fine_final,
                    prev_state=prev_state,
                    fine_probs=fine_probs,
                    fine_branch=fine_branch,
                    coarse_branch=coarse_branch,
                )
            )

    result = UtteranceResult(traces=traces, loss_sum=loss_sum, n_windows=n_windows)
    if not with_grads:
        return result

    # ---------------- backward ----------------
    grads = zero_grads(params)
    d_u = np.zeros_like(u_seq)
    d_coarse_h = np.zeros_like(coarse_h)
    d_state_h = np.zeros((cfg.fine_layers, hidden), dtype=dtype)
    d_state_c = np.zeros((cfg.fine_layers, hidden), dtype=dtype)

    for t in range(n_windows - 1, -1, -1):
        wc = win_caches[t]
        trace = traces[t]
        soft = trace.gate.soft
        hard = trace.gate.hard
        w_fine = float(trace.gate_weights[0])
        w_coarse = float(trace.gate_weights[1])
        fine_ran = wc.fine_probs is not None

        # Coarse prediction path (fused BCE+sigmoid gradient).
        ds = w_coarse * (float(coarse_probs[t]) - labels.windows[t])
        grads["coarse_head.w"] += ds * coarse_h[t]
        d_coarse_h[t] += ds * views.coarse_head

        d_fh_top = None
        if fine_ran and w_fine != 0.0:
            dsf = w_fine * (wc.fine_probs - label_frames[t]) * features.valid[t]
            if reduction == "mean":
                dsf = dsf / max(1, int(features.valid[t].sum()))
            grads["fine_head.w"] += wc.fine_h_top.T @ dsf
            d_fh_top = np.outer(dsf, views.fine_head)
        elif fine_ran:
            d_fh_top = np.zeros((fpw, hidden), dtype=dtype)

        # Gate bracket gradients (entries that were actually computed).
        d_gate = np.zeros(2)
        if mode in (GATE_SAMPLE, GATE_SOFT, GATE_WARMUP):
            d_gate[0] += wc.fine_branch if wc.fine_branch is not None else penalty
            d_gate[1] += wc.coarse_branch

        # State merge path.
        prev_h, prev_c = wc.prev_state
        dh_fin = dc_fin = None
        if mode == GATE_SOFT:
            dh_fin = soft[0] * d_state_h
            dc_fin = soft[0] * d_state_c
            d_prev_h = soft[1] * d_state_h
            d_prev_c = soft[1] * d_state_c
            d_gate[0] += float(
                np.sum(d_state_h * wc.fine_final[0]) + np.sum(d_state_c * wc.fine_final[1])
            )
            d_gate[1] += float(np.sum(d_state_h * prev_h) + np.sum(d_state_c * prev_c))
        elif mode == GATE_WARMUP or hard == gating.FINE_ON:
            dh_fin = d_state_h
            dc_fin = d_state_c
            d_prev_h = np.zeros_like(d_state_h)
            d_prev_c = np.zeros_like(d_state_c)
            if mode == GATE_SAMPLE:
                d_gate[0] += float(
                    np.sum(d_state_h * wc.fine_final[0])
                    + np.sum(d_state_c * wc.fine_final[1])
                )
                d_gate[1] += float(np.sum(d_state_h * prev_h) + np.sum(d_state_c * prev_c))
        else:
            d_prev_h = d_state_h.copy()
            d_prev_c = d_state_c.copy()
            if mode == GATE_SAMPLE:
                d_gate[1] += float(np.sum(d_state_h * prev_h) + np.sum(d_state_c * prev_c))

        if fine_ran and (d_fh_top is not None):
            fgrads, d_fine_x, d_init_h, d_init_c = lstm_backward(
                views.fine_layers, wc.fine_cache, d_fh_top, dh_final=dh_fin, dc_final=dc_fin
            )
            for li, (dwx, dwh, db) in enumerate(fgrads):
                grads[f"fine.l{li}.w_x"] += dwx
                grads[f"fine.l{li}.w_h"] += dwh
                grads[f"fine.l{li}.b"] += db
            d_u[t] += d_fine_x[:, cfg.fine_mels :].sum(axis=0)
            d_prev_h += d_init_h
            d_prev_c += d_init_c

        if mode in (GATE_SAMPLE, GATE_SOFT, GATE_WARMUP):
            d_logits = gating.relaxed_gate_vjp(soft, d_gate, temperature)
            grads["gate.w"] += np.outer(d_logits, wc.gate_in)
            if mode != GATE_WARMUP:
                # Warmup trains the gate projection alone; the sampled and
                # soft paths also push credit into the gate's inputs.
                d_gate_in = views.gate_w.T @ d_logits
                d_u[t] += d_gate_in[:wfd]
                if t > 0:
                    d_coarse_h[t - 1] += d_gate_in[wfd : wfd + hidden]
                d_prev_h[-1] += d_gate_in[wfd + hidden :]

        d_state_h, d_state_c = d_prev_h, d_prev_c

    cgrads, d_u_lstm, _, _ = lstm_backward(views.coarse_layers, coarse_cache, d_coarse_h)
    for li, (dwx, dwh, db) in enumerate(cgrads):
        grads[f"coarse.l{li}.w_x"] += dwx
        grads[f"coarse.l{li}.w_h"] += dwh
        grads[f"coarse.l{li}.b"] += db
    d_u += d_u_lstm

    for t in range(n_windows):
        _encode_backward(d_u[t], enc_caches[t], views, grads)

    result.grads = grads
    return result


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


@dataclass
class ScoredFrames:
    """Per 10 ms frame real-probability scores with frame start times."""

    utterance_id: str
    scores: np.ndarray
    times: np.ndarray
    fine_ran: np.ndarray  # per-window gate outcome
    spans: list[tuple[float, float]]  # predicted fake spans (seconds)
    labels: np.ndarray | None = None


def frame_scores_from_traces(
    traces: list[WindowTrace], valid: np.ndarray, frames_per_window: int
) -> np.ndarray:
    """Flatten traces to per-frame scores: fine scores where the fine stream
    ran, the window's coarse score broadcast elsewhere; padded frames dropped."""
    rows = []
    for trace, valid_row in zip(traces, valid):
        if trace.fine_ran and trace.fine_real_probs is not None:
            row = trace.fine_real_probs
        else:
            row = np.full(frames_per_window, trace.coarse_real_prob)
        rows.append(row[valid_row])
    scores = np.concatenate(rows) if rows else np.zeros(0)
    return np.clip(scores, PROB_EPS, 1.0 - PROB_EPS)


def spans_from_scores(
    scores: np.ndarray, hop_seconds: float, threshold: float = 0.5
) -> list[tuple[float, float]]:
    """Maximal runs of frames scored below threshold, as time spans."""
    fake = scores < threshold
    spans = []
    start = None
    for i, flag in enumerate(fake):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            spans.append((start * hop_seconds, i * hop_seconds))
            start = None
    if start is not None:
        spans.append((start * hop_seconds, len(fake) * hop_seconds))
    return spans


def detect(
    waveform: Waveform,
    params: dict[str, np.ndarray],
    cfg: DetectorConfig,
    utterance_id: str = "",
    extractor: FeatureExtractor | None = None,
    mode: str = GATE_ARGMAX,
) -> ScoredFrames:
    """Score every 10 ms frame of a waveform as real/fake and emit fake spans."""
    extractor = extractor or FeatureExtractor(cfg)
    features = extractor(waveform)
    result = run_utterance(features, params, cfg, mode=mode)
    scores = frame_scores_from_traces(result.traces, features.valid, cfg.frames_per_window)
    times = np.arange(scores.shape[0]) * cfg.hop_seconds
    fine_ran = np.array([t.fine_ran for t in result.traces], dtype=bool)
    return ScoredFrames(
        utterance_id=utterance_id,
        scores=scores,
        times=times,
        fine_ran=fine_ran,
        spans=spans_from_scores(scores, cfg.hop_seconds),
    )
