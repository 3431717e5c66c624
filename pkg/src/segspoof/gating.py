"""Learned binary gate over coarse windows.

A linear map scores the concatenated [window feature, previous coarse hidden,
previous fine hidden] into two logits: index 0 means "run the fine stream",
index 1 means "skip it". Training samples the decision with Gumbel noise and
relaxes it through a temperature softmax; inference takes the argmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import flops

UNIFORM_CLAMP = 1e-10

FINE_ON = 0
FINE_OFF = 1


@dataclass(frozen=True)
class GateDecision:
    logits: np.ndarray  # [2]
    soft: np.ndarray  # [2] on the simplex
    hard: int  # argmax(soft), 0 = fine stream on


def gate_logits(
    u_window: np.ndarray,
    h_coarse_prev: np.ndarray,
    h_fine_prev: np.ndarray,
    weights: np.ndarray,
) -> np.ndarray:
    """Two logits from the gate projection; weights: [2 x concat dim]."""
    features = np.concatenate([u_window, h_coarse_prev, h_fine_prev])
    if weights.shape[1] != features.shape[0]:
        raise ValueError(
            f"gate weights expect input dim {weights.shape[1]}, got {features.shape[0]}"
        )
    flops.add(weights.shape[0] * weights.shape[1])
    return weights @ features


def sample_gumbel(rng: np.random.Generator, size: int = 2) -> np.ndarray:
    """Gumbel(0,1) noise -log(-log U) with clamped uniform draws."""
    u = np.clip(rng.uniform(size=size), UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP)
    return -np.log(-np.log(u))


def softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - np.max(x))
    return e / e.sum()


def relaxed_gate(logits: np.ndarray, noise: np.ndarray, temperature: float) -> np.ndarray:
    """Temperature softmax over noise-perturbed logits; differentiable in logits."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return softmax((logits + noise) / temperature)


def gumbel_softmax(
    logits: np.ndarray, temperature: float, rng: np.random.Generator
) -> np.ndarray:
    """Draw one relaxed categorical sample; components sum to 1."""
    return relaxed_gate(logits, sample_gumbel(rng, logits.shape[0]), temperature)


def relaxed_gate_vjp(soft: np.ndarray, d_soft: np.ndarray, temperature: float) -> np.ndarray:
    """Backprop d(relaxed_gate)/d(logits) for fixed noise."""
    return soft * (d_soft - np.dot(d_soft, soft)) / temperature


def hard_gate(logits: np.ndarray) -> int:
    """Argmax decision; an exact tie resolves to 1 (fine stream off)."""
    if not np.all(np.isfinite(logits)):
        raise ValueError("gate logits must be finite")
    return FINE_ON if logits[FINE_ON] > logits[FINE_OFF] else FINE_OFF


def decide(
    logits: np.ndarray,
    temperature: float,
    rng: np.random.Generator | None,
    noise: np.ndarray | None = None,
) -> GateDecision:
    """Sampled decision (training). Supply `noise` to freeze the perturbation."""
    if noise is None:
        if rng is None:
            raise ValueError("either rng or frozen noise is required")
        noise = sample_gumbel(rng, logits.shape[0])
    soft = relaxed_gate(logits, noise, temperature)
    return GateDecision(logits=logits, soft=soft, hard=int(np.argmax(soft)))
