"""Synthetic labeled corpus of pseudo-speech utterances with segmental fakes.

Utterances are sequences of harmonic tone bursts ("tokens") separated by
short silences; the transcript timing is exact by construction. Bona-fide
tokens use per-instance random phases and a low noise floor. The proxy
synthesizer stands in for a TTS backend: it renders the same token text
with zeroed harmonic phases and an elevated noise floor, which makes fake
segments statistically separable while keeping generation hermetic.

One edit (inversion / insertion / deletion) is applied per manipulated
utterance via the editing pipeline; fake spans land in the manifest.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import Waveform, write_wav
from .editing import (
    DELETION,
    EDIT_MODES,
    INSERTION,
    INVERSION,
    EditPlan,
    Token,
    Transcript,
    build_manipulated_transcript,
    rarest_token_selector,
    render_deepfake,
    select_target,
)

VOCABULARY = (
    "bak", "dem", "fip", "gor", "hun", "jel", "kam", "lor", "mip", "nod",
    "pag", "qun", "ral", "sev", "tob", "vun", "wem", "yal", "zib", "cho",
    "dra", "fle", "gri", "klu", "mno", "pra", "sku", "tre", "vla", "wri",
    "bel", "cor", "dun", "fen", "gam", "hiv", "jor", "kel", "lum", "mor",
    "nib", "oruk", "pel", "quim", "rost", "sil", "tam", "ulv",
)

PAD_SECONDS = 0.15
GAP_RANGE = (0.05, 0.12)
MAX_HARMONICS = 12
AMP_RANGE = (0.25, 0.40)


@dataclass(frozen=True)
class SpeakerSpec:
    """Generation parameters for one synthetic speaker."""

    speaker_id: str
    f0: float  # Hz
    rolloff: float  # per-harmonic amplitude decay
    noise_floor: float  # broadband noise amplitude
    duration_range: tuple[float, float]  # token seconds
    seed: int

    def __post_init__(self):
        if self.f0 <= 0:
            raise ValueError("f0 must be positive")
        if not (0 < self.duration_range[0] <= self.duration_range[1]):
            raise ValueError("bad token duration range")


def token_pitch_multiplier(text: str) -> float:
    """Stable per-text pitch multiplier in [0.8, 1.6)."""
    return 0.8 + 0.8 * ((zlib.crc32(text.encode("utf-8")) % 1000) / 1000.0)


def render_token(
    text: str,
    spec: SpeakerSpec,
    duration: float,
    sample_rate: int,
    rng: np.random.Generator,
    fixed_phase: bool = False,
    noise_floor: float | None = None,
    amplitude: float | None = None,
    tremolo_depth: float = 0.0,
    tremolo_hz: float = 37.0,
    alt_floor: tuple[float, float] | None = None,
    alt_hz: float = 25.0,
) -> np.ndarray:
    """Harmonic burst for one token with a raised-cosine envelope.

    tremolo_depth > 0 adds sinusoidal amplitude modulation; alt_floor
    switches the noise floor between two levels every half period of
    alt_hz. Both are strong frame-to-frame cues that barely move
    one-second averages.
    """
    n = int(round(duration * sample_rate))
    f0 = spec.f0 * token_pitch_multiplier(text)
    n_harm = max(1, min(MAX_HARMONICS, int(0.45 * sample_rate / f0)))
    t = np.arange(n) / sample_rate
    phases = np.zeros(n_harm) if fixed_phase else rng.uniform(0.0, 2.0 * np.pi, n_harm)
    amps = spec.rolloff ** np.arange(n_harm)
    sig = np.zeros(n)
    for k in range(n_harm):
        sig += amps[k] * np.sin(2.0 * np.pi * (k + 1) * f0 * t + phases[k])
    peak = np.max(np.abs(sig))
    if peak > 0:
        sig /= peak
    amp = amplitude if amplitude is not None else rng.uniform(*AMP_RANGE)
    sig *= amp
    if alt_floor is not None:
        high = np.sin(2.0 * np.pi * alt_hz * t) >= 0.0
        floor_env = np.where(high, alt_floor[0], alt_floor[1])
        sig = sig + floor_env * rng.standard_normal(n)
    else:
        floor = spec.noise_floor if noise_floor is None else noise_floor
        sig = sig + floor * rng.standard_normal(n)
    if tremolo_depth > 0.0:
        sig = sig * (1.0 + tremolo_depth * np.sin(2.0 * np.pi * tremolo_hz * t))
    edge = max(1, min(n // 4, int(0.010 * sample_rate)))
    env = np.ones(n)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(edge) / edge)
    env[:edge] = ramp
    env[-edge:] = ramp[::-1]
    return sig * env


def generate_utterance(
    spec: SpeakerSpec,
    n_tokens: int,
    rng: np.random.Generator,
    sample_rate: int = 16000,
) -> tuple[Waveform, Transcript]:
    """Pseudo-speech utterance with exact token timestamps.

    Layout: pad silence, tokens separated by short silences, pad silence.
    """
    if n_tokens < 1:
        raise ValueError("n_tokens must be >= 1")
    pad = int(round(PAD_SECONDS * sample_rate))
    pieces = [np.zeros(pad)]
    tokens = []
    cursor = pad
    for i in range(n_tokens):
        if i > 0:
            gap = int(round(rng.uniform(*GAP_RANGE) * sample_rate))
            pieces.append(np.zeros(gap))
            cursor += gap
        text = str(rng.choice(VOCABULARY))
        duration = rng.uniform(*spec.duration_range)
        burst = render_token(text, spec, duration, sample_rate, rng)
        pieces.append(burst)
        tokens.append(Token(text, cursor / sample_rate, (cursor + burst.shape[0]) / sample_rate))
        cursor += burst.shape[0]
    pieces.append(np.zeros(pad))
    return Waveform(np.concatenate(pieces), sample_rate), Transcript(tuple(tokens))


class ProxySynthesizer:
    """Deterministic stand-in for a TTS backend.

    Rendering is keyed by (corpus seed, speaker, token text): the same text
    always synthesizes to the same audio. The generation signature differs
    from bona-fide tokens: zeroed phases, amplitude tremolo of depth
    `am_depth`, and a noise floor that alternates every half period between
    (base + noise_delta) and a depressed level chosen so the log-domain
    average matches the bona-fide floor. Individual frames are clearly
    anomalous while one-second averages barely move, which keeps the coarse
    stream honestly uncertain about where the manipulation sits.
    """

    def __init__(
        self,
        spec: SpeakerSpec,
        noise_delta: float,
        seed: int,
        sample_rate: int = 16000,
        am_depth: float = 0.5,
        am_hz: float = 37.0,
    ):
        self.spec = spec
        self.noise_delta = noise_delta
        self.seed = seed
        self.sample_rate = sample_rate
        self.am_depth = am_depth
        self.am_hz = am_hz

    def __call__(self, context: Waveform, text: str) -> Waveform:
        if not text:
            raise ValueError("empty synthesis text")
        rng = np.random.default_rng(
            [self.seed, self.spec.seed, zlib.crc32(text.encode("utf-8"))]
        )
        duration = rng.uniform(*self.spec.duration_range)
        base = self.spec.noise_floor
        high = base + self.noise_delta
        low = base * base / high  # log-mean of (high, low) equals log(base)
        samples = render_token(
            text,
            self.spec,
            duration,
            self.sample_rate,
            rng,
            fixed_phase=True,
            alt_floor=(high, low),
            tremolo_depth=self.am_depth,
            tremolo_hz=self.am_hz,
        )
        return Waveform(samples, self.sample_rate)


def make_speakers(
    n_speakers: int,
    seed: int,
    duration_range: tuple[float, float] = (0.22, 0.50),
) -> list[SpeakerSpec]:
    rng = np.random.default_rng([seed, 0x5EED])
    speakers = []
    for i in range(n_speakers):
        speakers.append(
            SpeakerSpec(
                speaker_id=f"spk{i:03d}",
                f0=float(rng.uniform(95.0, 250.0)),
                rolloff=float(rng.uniform(0.45, 0.70)),
                noise_floor=float(rng.uniform(0.002, 0.005)),
                duration_range=duration_range,
                seed=i,
            )
        )
    return speakers


def split_speakers(
    speakers: list[SpeakerSpec], seed: int, train_fraction: float, val_fraction: float
) -> dict[str, str]:
    """Disjoint speaker -> split assignment with nonempty splits."""
    if len(speakers) < 3:
        raise ValueError("need at least 3 speakers for disjoint splits")
    order = np.random.default_rng([seed, 0x5817]).permutation(len(speakers))
    n_train = max(1, int(round(train_fraction * len(speakers))))
    n_val = max(1, int(round(val_fraction * len(speakers))))
    n_train = min(n_train, len(speakers) - 2)
    n_val = min(n_val, len(speakers) - n_train - 1)
    assignment = {}
    for rank, idx in enumerate(order):
        spk = speakers[int(idx)].speaker_id
        if rank < n_train:
            assignment[spk] = "train"
        elif rank < n_train + n_val:
            assignment[spk] = "val"
        else:
            assignment[spk] = "test"
    return assignment


def transcript_to_json(transcript: Transcript) -> list[list]:
    return [[t.text, t.start, t.end] for t in transcript.tokens]


def transcript_from_json(data) -> Transcript:
    return Transcript(tuple(Token(str(x[0]), float(x[1]), float(x[2])) for x in data))


def _parse_mode_weights(mode_weights) -> np.ndarray:
    if isinstance(mode_weights, str):
        weights = np.array([float(x) for x in mode_weights.split(",")])
    else:
        weights = np.asarray(mode_weights, dtype=np.float64)
    if weights.shape != (3,) or np.any(weights < 0) or weights.sum() <= 0:
        raise ValueError("mode_weights must be 3 nonnegative values with positive sum")
    return weights / weights.sum()


def make_dataset(
    out_dir: str | Path,
    n_utterances: int = 2000,
    fake_fraction: float = 0.5,
    mode_weights="1,1,1",
    seed: int = 0,
    n_speakers: int = 30,
    tokens_min: int = 4,
    tokens_max: int = 10,
    token_seconds_min: float = 0.22,
    token_seconds_max: float = 0.50,
    proxy_noise_delta: float = 0.02,
    proxy_am_depth: float = 0.5,
    proxy_am_hz: float = 37.0,
    crossfade_s: float = 0.010,
    train_fraction: float = 0.8,
    val_fraction: float = 0.1,
    sample_rate: int = 16000,
    config_digest: str = "",
) -> list[dict]:
    """Generate WAVs plus a line-delimited manifest; returns the records.

    Exactly round(n * fake_fraction) utterances are manipulated (one edit
    each); the rest are bona-fide negatives. Splits are disjoint by speaker.
    """
    if not (0.0 <= fake_fraction <= 1.0):
        raise ValueError("fake_fraction must be in [0, 1]")
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wavs"
    wav_dir.mkdir(parents=True, exist_ok=True)

    weights = _parse_mode_weights(mode_weights)
    speakers = make_speakers(n_speakers, seed, (token_seconds_min, token_seconds_max))
    split_of = split_speakers(speakers, seed, train_fraction, val_fraction)
    master = np.random.default_rng([seed, 0xC0FFEE])
    speaker_idx = master.integers(0, n_speakers, size=n_utterances)
    n_fake = int(round(n_utterances * fake_fraction))
    fake_flags = np.zeros(n_utterances, dtype=bool)
    fake_flags[:n_fake] = True
    master.shuffle(fake_flags)
    token_counts = master.integers(tokens_min, tokens_max + 1, size=n_utterances)

    # Pass 1: transcripts (regenerated exactly in pass 2 from the same seeds).
    transcripts: list[Transcript] = []
    for idx in range(n_utterances):
        rng = np.random.default_rng([seed, 2, idx])
        spec = speakers[int(speaker_idx[idx])]
        _, transcript = generate_utterance(spec, int(token_counts[idx]), rng, sample_rate)
        transcripts.append(transcript)

    frequencies: dict[str, int] = {}
    for tr in transcripts:
        for text in tr.texts():
            frequencies[text] = frequencies.get(text, 0) + 1
    selector = rarest_token_selector(frequencies)

    records: list[dict] = []
    for idx in range(n_utterances):
        rng = np.random.default_rng([seed, 2, idx])
        spec = speakers[int(speaker_idx[idx])]
        waveform, transcript = generate_utterance(spec, int(token_counts[idx]), rng, sample_rate)
        uid = f"utt{idx:05d}"
        rel_path = f"wavs/{uid}.wav"
        record = {
            "utterance_id": uid,
            "path": rel_path,
            "speaker": spec.speaker_id,
            "split": split_of[spec.speaker_id],
            "source_duration": waveform.duration,
            "seed": seed,
            "config_digest": config_digest,
        }
        if fake_flags[idx]:
            plan_rng = np.random.default_rng([seed, 3, idx])
            mode = EDIT_MODES[int(plan_rng.choice(3, p=weights))]
            target = select_target(transcript, selector)
            if mode == DELETION:
                replacement = ""
            else:
                target_text = transcript.tokens[target].text
                candidates = [w for w in VOCABULARY if w != target_text]
                replacement = str(plan_rng.choice(candidates))
            plan = EditPlan(mode=mode, target=target, replacement=replacement)
            synth = ProxySynthesizer(
                spec, proxy_noise_delta, seed, sample_rate,
                am_depth=proxy_am_depth, am_hz=proxy_am_hz,
            )
            fake_wave, spans = render_deepfake(
                waveform, transcript, plan, synth, crossfade_s=crossfade_s
            )
            write_wav(out_dir / rel_path, fake_wave)
            record.update(
                {
                    "transcript": transcript_to_json(build_manipulated_transcript(transcript, plan)),
                    "spans": [[s, e] for s, e in spans],
                    "duration": fake_wave.duration,
                    "edit_mode": mode,
                    "edit_target": target,
                    "edit_replacement": replacement,
                }
            )
        else:
            write_wav(out_dir / rel_path, waveform)
            record.update(
                {
                    "transcript": transcript_to_json(transcript),
                    "spans": [],
                    "duration": waveform.duration,
                    "edit_mode": None,
                    "edit_target": None,
                    "edit_replacement": None,
                }
            )
        records.append(record)

    write_manifest(out_dir / "manifest.jsonl", records)
    return records


def write_manifest(path: str | Path, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
