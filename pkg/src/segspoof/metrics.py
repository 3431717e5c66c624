"""Detection and efficiency metrics: EER, span IoU, gate statistics, and
the gated-vs-always-fine benchmark."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import flops
from .model import (
    CONV_KERNEL,
    GATE_ARGMAX,
    GATE_OFF,
    GATE_ON,
    DetectorConfig,
    FeatureSet,
    run_utterance,
)


def eer(scores, labels) -> float:
    """Equal error rate in percent.

    scores are "real" probabilities (higher = more bona fide); labels are
    1/true for real and 0/false for fake. Thresholds sweep the observed
    scores; the FAR = FRR crossing is linearly interpolated between the two
    bracketing thresholds. All-equal scores come out at 50 by construction.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and equally long")
    n_real = int(labels.sum())
    n_fake = int(labels.size - n_real)
    if n_real == 0 or n_fake == 0:
        raise ValueError("both classes must be present to compute EER")

    real_sorted = np.sort(scores[labels])
    fake_sorted = np.sort(scores[~labels])
    thresholds = np.unique(scores)
    # Accept as real iff score >= threshold; add a sentinel above the max.
    far = (n_fake - np.searchsorted(fake_sorted, thresholds, side="left")) / n_fake
    frr = np.searchsorted(real_sorted, thresholds, side="left") / n_real
    far = np.append(far, 0.0)
    frr = np.append(frr, 1.0)
    diff = frr - far
    k = int(np.argmax(diff >= 0.0))
    if diff[k] == 0.0:
        value = far[k]
    else:
        t = -diff[k - 1] / (diff[k] - diff[k - 1])
        value = far[k - 1] + t * (far[k] - far[k - 1])
    return float(100.0 * value)


def activation_rate(fine_ran) -> float:
    """Fraction of coarse windows where the fine stream ran."""
    trace = np.asarray(fine_ran)
    if trace.size == 0:
        raise ValueError("empty gate trace")
    return float(np.mean(trace.astype(bool)))


def merge_intervals(spans) -> list[tuple[float, float]]:
    cleaned = sorted((float(s), float(e)) for s, e in spans if e > s)
    merged: list[tuple[float, float]] = []
    for s, e in cleaned:
        if merged and s <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], e))
        else:
            merged.append((s, e))
    return merged


def span_iou(predicted, true) -> float:
    """Intersection-over-union of unioned time spans for one utterance.

    Both empty -> 1.0; exactly one empty -> 0.0.
    """
    pred = merge_intervals(predicted)
    ref = merge_intervals(true)
    if not pred and not ref:
        return 1.0
    if not pred or not ref:
        return 0.0
    inter = 0.0
    for ps, pe in pred:
        for rs, re in ref:
            inter += max(0.0, min(pe, re) - max(ps, rs))
    total = sum(e - s for s, e in pred) + sum(e - s for s, e in ref) - inter
    return float(inter / total) if total > 0 else 1.0


def mean_span_iou(pairs) -> float:
    """Average span_iou over (predicted, true) pairs."""
    values = [span_iou(p, t) for p, t in pairs]
    if not values:
        raise ValueError("no span pairs")
    return float(np.mean(values))


# ---------------------------------------------------------------------------
# Compute accounting
# ---------------------------------------------------------------------------


def stream_mac_costs(cfg: DetectorConfig) -> tuple[int, int]:
    """(coarse MACs per window, fine MACs per frame) of the analytic model.

    Counts multiply-accumulates of matrix products only: encoder convs,
    LSTM projections, heads, and the gate.
    """
    h = cfg.hidden_size
    fpw = cfg.frames_per_window
    enc = fpw * CONV_KERNEL * cfg.coarse_mels * cfg.encoder_channels
    enc += fpw * CONV_KERNEL * cfg.encoder_channels * cfg.window_feat_dim
    coarse_lstm = 0
    for li in range(cfg.coarse_layers):
        d = cfg.window_feat_dim if li == 0 else h
        coarse_lstm += 4 * h * (d + h)
    coarse = enc + coarse_lstm + h + 2 * cfg.gate_input_dim
    fine_step = 0
    for li in range(cfg.fine_layers):
        d = cfg.fine_input_dim if li == 0 else h
        fine_step += 4 * h * (d + h)
    fine_step += h
    return coarse, fine_step


def formula_macs(cfg: DetectorConfig, n_windows: int, activation: float) -> float:
    """Bilevel complexity: T*C_coarse + p*T*T'*C_fine."""
    coarse, fine_step = stream_mac_costs(cfg)
    return n_windows * coarse + activation * n_windows * cfg.frames_per_window * fine_step


@dataclass
class BenchReport:
    wall_gated: float
    wall_always: float
    speedup: float
    macs_gated: int
    macs_always: int
    mac_ratio: float
    formula_gated: float
    formula_always: float
    activation: float
    n_windows: int

    def record(self) -> dict:
        return {
            "wall_gated_s": self.wall_gated,
            "wall_always_s": self.wall_always,
            "speedup": self.speedup,
            "macs_gated": self.macs_gated,
            "macs_always": self.macs_always,
            "mac_ratio": self.mac_ratio,
            "formula_macs_gated": self.formula_gated,
            "formula_macs_always": self.formula_always,
            "activation_rate": self.activation,
            "n_windows": self.n_windows,
        }


def _inference_pass(
    feature_sets: list[FeatureSet], params, cfg: DetectorConfig, mode: str
) -> tuple[int, int]:
    fine_on = 0
    windows = 0
    for features in feature_sets:
        result = run_utterance(features, params, cfg, mode=mode)
        fine_on += sum(t.fine_ran for t in result.traces)
        windows += result.n_windows
    return fine_on, windows


def bench_speedup(
    params,
    cfg: DetectorConfig,
    feature_sets: list[FeatureSet],
    reps: int = 5,
    force_activation: str | None = None,
) -> BenchReport:
    """Median-of-`reps` wall clock and measured/analytic MACs for gated vs
    always-fine inference over a corpus of feature sets.

    force_activation: None (learned gate), "on", or "off" for the gated arm.
    """
    gated_mode = {None: GATE_ARGMAX, "on": GATE_ON, "off": GATE_OFF}[force_activation]

    with flops.count_macs() as counter:
        fine_on, windows = _inference_pass(feature_sets, params, cfg, gated_mode)
    macs_gated = counter.macs
    activation = fine_on / max(1, windows)

    with flops.count_macs() as counter:
        _inference_pass(feature_sets, params, cfg, GATE_ON)
    macs_always = counter.macs

    times_gated = []
    times_always = []
    for _ in range(reps):
        start = time.perf_counter()
        _inference_pass(feature_sets, params, cfg, gated_mode)
        times_gated.append(time.perf_counter() - start)
        start = time.perf_counter()
        _inference_pass(feature_sets, params, cfg, GATE_ON)
        times_always.append(time.perf_counter() - start)
    wall_gated = float(np.median(times_gated))
    wall_always = float(np.median(times_always))

    return BenchReport(
        wall_gated=wall_gated,
        wall_always=wall_always,
        speedup=wall_always / wall_gated if wall_gated > 0 else float("inf"),
        macs_gated=macs_gated,
        macs_always=macs_always,
        mac_ratio=macs_always / max(1, macs_gated),
        formula_gated=formula_macs(cfg, windows, activation),
        formula_always=formula_macs(cfg, windows, 1.0),
        activation=activation,
        n_windows=windows,
    )
