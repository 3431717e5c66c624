"""Segmental manipulation pipeline: transcripts, edit plans, and rendering.

An edit plan names a target token and one of three modes: inversion
(replace the token's text), insertion (add a token immediately before the
target), or deletion (drop the target). Rendering synthesizes replacement
audio through a pluggable synthesizer backend and splices it into the
original with short crossfades, returning the manipulated waveform plus
the fake time spans (synthesized material including both fade ramps).

Backends are deliberately simple contracts: a transcriber maps audio to a
transcript, a target selector picks the token to attack, a synthesizer
maps (context audio, text) to a rendered segment. Deterministic stubs are
provided here and in the corpus module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .audio import Waveform

INVERSION = "inversion"
INSERTION = "insertion"
DELETION = "deletion"
EDIT_MODES = (INVERSION, INSERTION, DELETION)

DEFAULT_CROSSFADE_S = 0.010


@dataclass(frozen=True)
class Token:
    text: str
    start: float
    end: float


@dataclass(frozen=True)
class Transcript:
    """Time-ordered, non-overlapping tokens with start/end in seconds."""

    tokens: tuple[Token, ...]

    def __post_init__(self):
        prev_end = 0.0
        for tok in self.tokens:
            if not (0.0 <= tok.start < tok.end):
                raise ValueError(f"bad token timing: {tok}")
            if tok.start < prev_end - 1e-12:
                raise ValueError(f"overlapping tokens at {tok}")
            prev_end = tok.end

    def __len__(self) -> int:
        return len(self.tokens)

    def texts(self) -> list[str]:
        return [t.text for t in self.tokens]


@dataclass(frozen=True)
class EditPlan:
    mode: str
    target: int
    replacement: str = ""

    def __post_init__(self):
        if self.mode not in EDIT_MODES:
            raise ValueError(f"unknown edit mode {self.mode!r}")
        if self.mode in (INVERSION, INSERTION) and not self.replacement:
            raise ValueError(f"{self.mode} requires replacement text")
        if self.mode == DELETION and self.replacement:
            raise ValueError("deletion carries no replacement text")


Synthesizer = Callable[[Waveform, str], Waveform]
TargetSelector = Callable[[Transcript], int]


def _check_plan(transcript: Transcript, plan: EditPlan) -> None:
    if len(transcript) == 0:
        raise ValueError("empty transcript")
    if not (0 <= plan.target < len(transcript)):
        raise ValueError(f"target index {plan.target} out of range for {len(transcript)} tokens")


def build_manipulated_transcript(transcript: Transcript, plan: EditPlan) -> Transcript:
    """Apply an edit plan to the token sequence.

    Inversion swaps text in place; insertion places the new token right
    before the target (downstream tokens shift right by its provisional
    duration); deletion removes the target and shifts downstream tokens
    left by its duration.
    """
    _check_plan(transcript, plan)
    tokens = list(transcript.tokens)
    i = plan.target
    target = tokens[i]
    if plan.mode == INVERSION:
        tokens[i] = Token(plan.replacement, target.start, target.end)
    elif plan.mode == INSERTION:
        # Provisional duration mirrors the target's; rendering measures the
        # actually synthesized audio.
        dur = target.end - target.start
        inserted = Token(plan.replacement, target.start, target.start + dur)
        shifted = [Token(t.text, t.start + dur, t.end + dur) for t in tokens[i:]]
        tokens = tokens[:i] + [inserted] + shifted
    else:  # deletion
        dur = target.end - target.start
        shifted = [Token(t.text, t.start - dur, t.end - dur) for t in tokens[i + 1 :]]
        tokens = tokens[:i] + shifted
    return Transcript(tuple(tokens))


def fixed_index_selector(index: int) -> TargetSelector:
    """Stub selector that always proposes a fixed index (clamped to range)."""

    def select(transcript: Transcript) -> int:
        if len(transcript) == 0:
            raise ValueError("empty transcript")
        return min(index, len(transcript) - 1)

    return select


def rarest_token_selector(frequencies: Mapping[str, int]) -> TargetSelector:
    """Stub selector: token with the lowest corpus frequency, ties to the
    lowest index; unseen tokens count as frequency zero."""

    def select(transcript: Transcript) -> int:
        if len(transcript) == 0:
            raise ValueError("empty transcript")
        freqs = [frequencies.get(t, 0) for t in transcript.texts()]
        return int(np.argmin(freqs))

    return select


def select_target(transcript: Transcript, selector: TargetSelector) -> int:
    """Run a selector and validate its choice."""
    if len(transcript) == 0:
        raise ValueError("empty transcript")
    index = selector(transcript)
    if not (0 <= index < len(transcript)):
        raise ValueError(f"selector returned invalid index {index}")
    return index


class ManifestTranscriber:
    """Transcriber stub backed by ground-truth transcripts keyed by id."""

    def __init__(self, table: Mapping[str, Transcript]):
        self.table = dict(table)

    def __call__(self, waveform: Waveform, utterance_id: str) -> Transcript:
        if utterance_id not in self.table:
            raise KeyError(f"no transcript for utterance {utterance_id!r}")
        return self.table[utterance_id]


# ---------------------------------------------------------------------------
# Waveform surgery
# ---------------------------------------------------------------------------


def trim_silence(waveform: Waveform, threshold: float) -> Waveform:
    """Drop leading/trailing runs with |sample| <= threshold."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    loud = np.flatnonzero(np.abs(waveform.samples) > threshold)
    if loud.size == 0:
        raise ValueError("all samples are at or below the silence threshold")
    return Waveform(waveform.samples[loud[0] : loud[-1] + 1], waveform.sample_rate)


def crossfade_splice(a: Waveform, b: Waveform, overlap: int) -> Waveform:
    """Join two waveforms with complementary linear fades over `overlap`
    samples; output length is len(a) + len(b) - overlap."""
    if a.sample_rate != b.sample_rate:
        raise ValueError(f"sample-rate mismatch: {a.sample_rate} vs {b.sample_rate}")
    if overlap < 0 or overlap > min(len(a), len(b)):
        raise ValueError(f"overlap {overlap} exceeds an input length")
    if overlap == 0:
        return Waveform(np.concatenate([a.samples, b.samples]), a.sample_rate)
    ramp = np.arange(1, overlap + 1) / (overlap + 1)
    mixed = a.samples[-overlap:] * (1.0 - ramp) + b.samples[:overlap] * ramp
    out = np.concatenate([a.samples[:-overlap], mixed, b.samples[overlap:]])
    return Waveform(out, a.sample_rate)


def render_deepfake(
    waveform: Waveform,
    transcript: Transcript,
    plan: EditPlan,
    synthesizer: Synthesizer,
    crossfade_s: float = DEFAULT_CROSSFADE_S,
    trim_threshold: float = 1e-4,
) -> tuple[Waveform, list[tuple[float, float]]]:
    """Render an edit plan into audio.

    The edit region [s, e) of the target token is replaced by synthesized
    audio (empty for deletion; e == s for insertion). Crossfade ramps reuse
    the original samples adjacent to the cut, so audio outside the returned
    fake span is sample-identical to the source. The span covers the
    synthesized material plus both ramps.
    """
    _check_plan(transcript, plan)
    sr = waveform.sample_rate
    overlap = int(round(crossfade_s * sr))
    target = transcript.tokens[plan.target]
    s = int(round(target.start * sr))
    e = int(round(target.end * sr))
    if plan.mode == INSERTION:
        e = s
    n = len(waveform)
    if s + overlap > n or e - overlap < 0:
        raise ValueError("edit region too close to the signal edge for the crossfade")

    if plan.mode == DELETION:
        segment_samples = np.zeros(0)
    else:
        segment = synthesizer(waveform, plan.replacement)
        if segment.sample_rate != sr:
            raise ValueError("synthesizer returned a different sample rate")
        segment = trim_silence(segment, trim_threshold)
        if len(segment) < overlap:
            raise ValueError("synthesized segment shorter than the crossfade")
        segment_samples = segment.samples

    prefix = Waveform(waveform.samples[: s + overlap], sr)
    suffix = Waveform(waveform.samples[e - overlap :], sr)
    if segment_samples.shape[0] == 0:
        out = crossfade_splice(prefix, suffix, overlap)
        span_end = s + overlap
    else:
        mid = crossfade_splice(prefix, Waveform(segment_samples, sr), overlap)
        out = crossfade_splice(mid, suffix, overlap)
        span_end = s + segment_samples.shape[0]
    span = (s / sr, span_end / sr)
    return out, [span]


def plan_record(utterance_id: str, plan: EditPlan) -> dict:
    """Line-delimited serialization shape for edit plans."""
    return {
        "utterance_id": utterance_id,
        "mode": plan.mode,
        "target": plan.target,
        "replacement": plan.replacement,
    }


def plan_from_record(record: Mapping) -> EditPlan:
    return EditPlan(
        mode=record["mode"], target=int(record["target"]), replacement=record.get("replacement", "")
    )
