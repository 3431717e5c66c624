"""Manifest-backed data loading for training and evaluation."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio import read_wav
from .model import DetectorConfig, FeatureExtractor, FeatureSet, labels_from_spans
from .training import TrainItem


def _compact(features: FeatureSet) -> FeatureSet:
    """float32 storage; the engine upcasts on use."""
    return FeatureSet(
        coarse=features.coarse.astype(np.float32),
        fine=features.fine.astype(np.float32),
        valid=features.valid,
        n_samples=features.n_samples,
        sample_rate=features.sample_rate,
    )


def load_items(
    records: list[dict],
    data_dir: str | Path,
    cfg: DetectorConfig,
    splits: tuple[str, ...] | None = None,
    extractor: FeatureExtractor | None = None,
) -> list[TrainItem]:
    """Load waveforms, extract both feature streams, and build labels."""
    data_dir = Path(data_dir)
    extractor = extractor or FeatureExtractor(cfg)
    items = []
    for record in records:
        if splits is not None and record["split"] not in splits:
            continue
        waveform = read_wav(data_dir / record["path"], expected_rate=cfg.sample_rate)
        features = _compact(extractor(waveform))
        labels = labels_from_spans(
            [(float(s), float(e)) for s, e in record.get("spans", [])],
            features.n_windows,
            cfg.frames_per_window,
            cfg.hop_seconds,
            features.valid,
        )
        items.append(
            TrainItem(
                utterance_id=record["utterance_id"],
                features=features,
                labels=labels,
                split=record["split"],
            )
        )
    return items


def frame_labels_flat(item: TrainItem) -> np.ndarray:
    """Per-valid-frame labels (1 real / 0 fake) in emission order."""
    return item.labels.frames[item.features.valid]
