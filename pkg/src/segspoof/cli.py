"""Command-line entry point: gen-data, train, detect, eval, bench.

Every command resolves its configuration from defaults, an optional
--config file, SEGSPOOF_* environment overrides, and an optional --seed
flag, then logs the resolved config next to its artifacts. Checkpoints and
manifests embed config digests; commands refuse to mix artifacts from
different configurations.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .audio import read_wav
from .config import RunConfig, load_config, write_resolved_config
from .corpus import make_dataset, read_manifest
from .data import frame_labels_flat, load_items
from .metrics import bench_speedup, eer, mean_span_iou, span_iou
from .model import FeatureExtractor, detect, labels_from_spans
from .training import (
    TrainItem,
    TrainingDiverged,
    fit,
    load_detector_params,
    load_train_state,
    save_train_state,
)


def _resolve_config(args) -> RunConfig:
    return load_config(getattr(args, "config", None), seed=getattr(args, "seed", None))


def _log_run(cfg: RunConfig, note: str) -> None:
    print(f"{note}: run_digest={cfg.run_digest()} corpus_digest={cfg.corpus_digest()} seed={cfg.seed}")


def cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    out_dir = Path(args.out or cfg.data_dir)
    _log_run(cfg, "gen-data")
    records = make_dataset(
        out_dir,
        n_utterances=cfg.n_utterances,
        fake_fraction=cfg.fake_fraction,
        mode_weights=cfg.mode_weights,
        seed=cfg.corpus_seed,
        n_speakers=cfg.n_speakers,
        tokens_min=cfg.tokens_min,
        tokens_max=cfg.tokens_max,
        token_seconds_min=cfg.token_seconds_min,
        token_seconds_max=cfg.token_seconds_max,
        proxy_noise_delta=cfg.proxy_noise_delta,
        proxy_am_depth=cfg.proxy_am_depth,
        proxy_am_hz=cfg.proxy_am_hz,
        crossfade_s=cfg.crossfade_ms / 1000.0,
        train_fraction=cfg.train_fraction,
        val_fraction=cfg.val_fraction,
        sample_rate=cfg.sample_rate,
        config_digest=cfg.corpus_digest(),
    )
    write_resolved_config(cfg, out_dir / "config.resolved.txt")
    n_fake = sum(1 for r in records if r["spans"])
    print(f"wrote {len(records)} utterances ({n_fake} manipulated) to {out_dir}")
    return 0


def _check_manifest_digest(records: list[dict], cfg: RunConfig) -> None:
    digests = {r.get("config_digest", "") for r in records}
    expected = cfg.corpus_digest()
    if digests != {expected}:
        raise SystemExit(
            f"manifest corpus digest {sorted(digests)} does not match config {expected}; "
            "refusing to run"
        )


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    _log_run(cfg, "train")
    records = read_manifest(args.manifest)
    _check_manifest_digest(records, cfg)
    det = cfg.detector()
    train_items = load_items(records, Path(args.manifest).parent, det, splits=("train",))
    val_items = load_items(records, Path(args.manifest).parent, det, splits=("val",))
    if not train_items or not val_items:
        raise SystemExit("train/val splits must be nonempty")

    state = None
    if args.resume:
        state, digest = load_train_state(args.resume, cfg.train_settings())
        if digest != cfg.run_digest():
            raise SystemExit(
                f"checkpoint digest {digest} does not match config {cfg.run_digest()}; refusing to run"
            )

    stats_path = Path(args.stats or cfg.stats_path)
    checkpoint_path = Path(args.out or cfg.checkpoint_path)
    stats_path.parent.mkdir(parents=True, exist_ok=True)
    checkpoint_path.parent.mkdir(parents=True, exist_ok=True)
    stats_file = open(stats_path, "a", encoding="utf-8")

    def on_epoch(stats):
        stats_file.write(json.dumps(stats.record(), sort_keys=True) + "\n")
        stats_file.flush()
        print(
            f"epoch {stats.epoch}: train_loss={stats.train_loss:.4f} "
            f"val_loss={stats.val_loss:.4f} activation={stats.activation_rate:.3f} lr={stats.lr:.2e}"
        )

    try:
        state = fit(train_items, val_items, det, cfg.train_settings(), state=state, on_epoch=on_epoch)
    except TrainingDiverged as exc:
        stats_file.close()
        raise SystemExit(f"training aborted: {exc}")
    stats_file.close()
    save_train_state(checkpoint_path, state, cfg.run_digest())
    write_resolved_config(cfg, checkpoint_path.with_suffix(".config.txt"))
    print(f"best val loss {state.best_val:.4f} at epoch {state.epoch}; checkpoint: {checkpoint_path}")
    return 0


def _load_params_checked(checkpoint: str, cfg: RunConfig):
    params, digest = load_detector_params(checkpoint)
    if digest != cfg.run_digest():
        raise SystemExit(
            f"checkpoint digest {digest} does not match config {cfg.run_digest()}; refusing to run"
        )
    return params


def cmd_detect(args) -> int:
    cfg = _resolve_config(args)
    _log_run(cfg, "detect")
    params = _load_params_checked(args.checkpoint, cfg)
    det = cfg.detector()
    extractor = FeatureExtractor(det)

    targets: list[tuple[str, Path]] = []
    if args.wav:
        targets.append((Path(args.wav).stem, Path(args.wav)))
    if args.manifest:
        base = Path(args.manifest).parent
        for record in read_manifest(args.manifest):
            if args.split and record["split"] != args.split:
                continue
            targets.append((record["utterance_id"], base / record["path"]))
    if not targets:
        raise SystemExit("nothing to score: pass --wav and/or --manifest")

    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for uid, path in targets:
            waveform = read_wav(path, expected_rate=det.sample_rate)
            scored = detect(waveform, params, det, utterance_id=uid, extractor=extractor)
            for t, score in zip(scored.times, scored.scores):
                out.write(
                    json.dumps(
                        {"kind": "frame", "utterance_id": uid, "t": round(float(t), 6),
                         "score": float(score)},
                        sort_keys=True,
                    )
                    + "\n"
                )
            for start, end in scored.spans:
                out.write(
                    json.dumps(
                        {"kind": "span", "utterance_id": uid, "start": float(start),
                         "end": float(end)},
                        sort_keys=True,
                    )
                    + "\n"
                )
            for w, ran in enumerate(scored.fine_ran):
                out.write(
                    json.dumps(
                        {"kind": "gate", "utterance_id": uid, "window": w, "fine_ran": bool(ran)},
                        sort_keys=True,
                    )
                    + "\n"
                )
    finally:
        if args.out:
            out.close()
    return 0


def _frame_label(t: float, hop: float, spans: list[tuple[float, float]]) -> float:
    end = t + hop
    for s, e in spans:
        if t < e and end > s:
            return 0.0
    return 1.0


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    _log_run(cfg, "eval")
    records = {r["utterance_id"]: r for r in read_manifest(args.manifest)}
    hop = cfg.hop_ms / 1000.0

    frames: dict[str, list[tuple[float, float]]] = {}
    pred_spans: dict[str, list[tuple[float, float]]] = {}
    gates: list[bool] = []
    with open(args.scores, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            uid = row["utterance_id"]
            if uid not in records:
                raise SystemExit(f"utterance {uid!r} in scores but not in manifest")
            if row["kind"] == "frame":
                frames.setdefault(uid, []).append((row["t"], row["score"]))
            elif row["kind"] == "span":
                pred_spans.setdefault(uid, []).append((row["start"], row["end"]))
            elif row["kind"] == "gate":
                gates.append(bool(row["fine_ran"]))

    if not frames:
        raise SystemExit("no frame rows in scores file")
    scores = []
    labels = []
    iou_pairs = []
    for uid, rows in frames.items():
        spans = [(float(s), float(e)) for s, e in records[uid].get("spans", [])]
        for t, score in rows:
            scores.append(score)
            labels.append(_frame_label(t, hop, spans))
        iou_pairs.append((pred_spans.get(uid, []), spans))

    frame_eer = eer(np.array(scores), np.array(labels))
    iou = mean_span_iou(iou_pairs)
    activation = float(np.mean(gates)) if gates else float("nan")
    report = {
        "frame_eer_percent": frame_eer,
        "mean_span_iou": iou,
        "activation_rate": activation,
        "n_utterances": len(frames),
        "n_frames": len(scores),
    }
    print(json.dumps(report, sort_keys=True))
    print("metric                 value")
    print(f"frame EER (%)          {frame_eer:8.3f}")
    print(f"mean span IoU          {iou:8.3f}")
    print(f"gate activation rate   {activation:8.3f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(json.dumps(report, sort_keys=True) + "\n")
    return 0


def cmd_bench(args) -> int:
    cfg = _resolve_config(args)
    _log_run(cfg, "bench")
    params = _load_params_checked(args.checkpoint, cfg)
    det = cfg.detector()
    records = read_manifest(args.manifest)
    if args.split:
        records = [r for r in records if r["split"] == args.split]
    if args.limit:
        records = records[: args.limit]
    items = load_items(records, Path(args.manifest).parent, det)
    feature_sets = [item.features for item in items]
    report = bench_speedup(
        params, det, feature_sets, reps=args.reps, force_activation=args.force
    )
    print(json.dumps(report.record(), sort_keys=True))
    print(
        f"gated {report.wall_gated:.3f}s vs always-fine {report.wall_always:.3f}s "
        f"-> speedup {report.speedup:.2f}x; MAC ratio {report.mac_ratio:.2f}; "
        f"activation {report.activation:.3f}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segspoof",
        description="Bilevel segmental spoof detector: corpus generation, training, "
        "detection, evaluation, benchmarking.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="override the training seed")

    p = sub.add_parser("gen-data", help="generate the synthetic corpus")
    common(p)
    p.add_argument("--out", help="output directory (default: config data_dir)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the detector")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="checkpoint path (default: config checkpoint_path)")
    p.add_argument("--stats", help="epoch stats JSONL path")
    p.add_argument("--resume", help="resume from a training checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="score frames of a wav or corpus")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--wav")
    p.add_argument("--manifest")
    p.add_argument("--split", help="limit manifest scoring to one split")
    p.add_argument("--out", help="scores JSONL path (default: stdout)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="metrics from scores + manifest")
    common(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="metrics JSONL path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="gated vs always-fine speedup report")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", help="limit to one split")
    p.add_argument("--limit", type=int, help="max utterances")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--force", choices=["on", "off"], help="force the gate for degenerate checks")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
