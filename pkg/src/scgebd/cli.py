"""Command-line interface: gen-data / train / predict / eval / bench /
dump-simmaps.

Configuration merges three layers: dataclass defaults, then a JSON config
file ({"model": {...}, "train": {...}}), then explicit flags.  All outputs
are written atomically.  Exit codes: 0 success, 1 validation/usage error,
2 runtime or numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time

import numpy as np

from . import data as dio
from . import evaluate as ev
from . import train as tr
from .encoder import attention_flops, global_attention_flops
from .errors import ConfigError, InputError, InternalError, NumericError, ScgebdError, ShapeError, UsageError
from .model import BoundaryDetector, ModelConfig
from .train import TrainConfig

log = logging.getLogger("scgebd")


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def _load_config_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed JSON at line {exc.lineno}: {exc.msg}")
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected an object with 'model'/'train' sections")
    unknown = set(doc) - {"model", "train"}
    if unknown:
        raise ConfigError(f"{path}: unknown top-level sections {sorted(unknown)}")
    return doc


def _apply_section(cls, base, section: dict, origin: str):
    valid = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - valid
    if unknown:
        raise ConfigError(f"{origin}: unknown fields {sorted(unknown)}; valid: {sorted(valid)}")
    values = dataclasses.asdict(base)
    values.update(section)
    if "lr_drop_epochs" in values and isinstance(values["lr_drop_epochs"], list):
        values["lr_drop_epochs"] = tuple(values["lr_drop_epochs"])
    return cls(**values)


def build_configs(args) -> tuple:
    """defaults <- config file <- flags."""
    model_cfg = ModelConfig.paper_config() if getattr(args, "paper_config", False) else ModelConfig()
    train_cfg = TrainConfig.paper_config() if getattr(args, "paper_config", False) else TrainConfig()
    if getattr(args, "config", None):
        doc = _load_config_file(args.config)
        model_cfg = _apply_section(ModelConfig, model_cfg, doc.get("model", {}),
                                   f"{args.config} [model]")
        train_cfg = _apply_section(TrainConfig, train_cfg, doc.get("train", {}),
                                   f"{args.config} [train]")
    model_flags = {
        "in_channels": "in_channels", "channels": "channels", "k": "window",
        "groups": "groups", "layers": "layers", "similarity": "similarity",
        "loss": "loss", "decode_threshold": "decode_threshold",
        "decode_min_separation": "decode_min_separation",
    }
    for flag, fieldname in model_flags.items():
        value = getattr(args, flag, None)
        if value is not None:
            model_cfg = dataclasses.replace(model_cfg, **{fieldname: value})
    if getattr(args, "hard_labels", False):
        model_cfg = dataclasses.replace(model_cfg, gaussian_labels=False)
    if getattr(args, "clamp_right_context", False):
        model_cfg = dataclasses.replace(model_cfg, clamp_right_context=True)
    train_flags = ["lr", "momentum", "weight_decay", "epochs", "batch_videos",
                   "seed", "label_source", "eval_every"]
    for flag in train_flags:
        value = getattr(args, flag, None)
        if value is not None:
            train_cfg = dataclasses.replace(train_cfg, **{flag: value})
    drops = getattr(args, "lr_drops", None)
    if drops is not None:
        parsed = tuple(int(d) for d in drops.split(",") if d.strip())
        train_cfg = dataclasses.replace(train_cfg, lr_drop_epochs=parsed)
    model_cfg.validate()
    train_cfg.validate()
    return model_cfg, train_cfg


def _add_override_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file with model/train sections")
    p.add_argument("--paper-config", action="store_true", dest="paper_config",
                   help="start from the full-size configuration (C=256, 6 layers, 30 epochs)")
    g = p.add_argument_group("model overrides")
    g.add_argument("--in-channels", type=int, dest="in_channels")
    g.add_argument("--channels", type=int)
    g.add_argument("--k", type=int, help="context window size K (L = 2K+1)")
    g.add_argument("--groups", type=int)
    g.add_argument("--layers", type=int)
    g.add_argument("--similarity", choices=["cosine", "euclidean", "manhattan", "chebyshev"])
    g.add_argument("--loss", choices=["bce", "mse"])
    g.add_argument("--hard-labels", action="store_true", dest="hard_labels",
                   help="0/1 targets instead of Gaussian soft labels")
    g.add_argument("--clamp-right-context", action="store_true", dest="clamp_right_context")
    t = p.add_argument_group("train overrides")
    t.add_argument("--lr", type=float)
    t.add_argument("--momentum", type=float)
    t.add_argument("--weight-decay", type=float, dest="weight_decay")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr-drops", dest="lr_drops",
                   help="comma-separated epochs for 10x lr drops; empty disables")
    t.add_argument("--batch-videos", type=int, dest="batch_videos")
    t.add_argument("--seed", type=int)
    t.add_argument("--label-source", choices=["union", "first"], dest="label_source")
    t.add_argument("--eval-every", type=int, dest="eval_every")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    spec = dio.SyntheticSpec(
        seed=args.seed, num_videos=args.num_videos, length=args.length,
        channels=args.channels, fps=args.fps, segments_min=args.segments_min,
        segments_max=args.segments_max, latent_dim=args.latent_dim,
        noise_sigma=args.noise_sigma, jitter_sigma=args.jitter_sigma,
        raters=args.raters, min_segment_frames=args.min_segment_frames,
        transition_frames=args.transition_frames, id_prefix=args.id_prefix)
    spec.validate()
    sequences, annotations = dio.generate_dataset(spec, start_index=args.start_index)
    feat_dir = os.path.join(args.out, "features")
    os.makedirs(feat_dir, exist_ok=True)
    for seq in sequences:
        dio.write_features(os.path.join(feat_dir, f"{seq.video_id}.scxf"), seq)
    dio.write_annotations(os.path.join(args.out, "annotations.json"), annotations)
    print(f"wrote {len(sequences)} videos to {args.out}")
    return 0


def _load_dataset(path: str):
    feat_dir = os.path.join(path, "features")
    annot_path = os.path.join(path, "annotations.json")
    if not os.path.isdir(feat_dir):
        raise InputError(f"no features/ directory under {path}")
    if not os.path.exists(annot_path):
        raise InputError(f"no annotations.json under {path}")
    sequences = [dio.read_features(os.path.join(feat_dir, name))
                 for name in sorted(os.listdir(feat_dir)) if name.endswith(".scxf")]
    if not sequences:
        raise InputError(f"no .scxf feature files under {feat_dir}")
    annotations = dio.read_annotations(annot_path)
    missing = [s.video_id for s in sequences if s.video_id not in annotations]
    if missing:
        raise InputError(f"videos without annotations: {missing[:5]}")
    return sequences, annotations


def cmd_train(args) -> int:
    model_cfg, train_cfg = build_configs(args)
    sequences, annotations = _load_dataset(args.data)
    val_sequences = val_annotations = None
    if args.val_data:
        val_sequences, val_annotations = _load_dataset(args.val_data)
    os.makedirs(args.out, exist_ok=True)
    model, history = tr.train(sequences, annotations, model_cfg, train_cfg,
                              out_dir=args.out, val_sequences=val_sequences,
                              val_annotations=val_annotations)
    log_path = os.path.join(args.out, "trainlog.json")
    dio._atomic_write(log_path, json.dumps(history.as_dict(), indent=2).encode("utf-8"))
    print(f"trained {train_cfg.epochs} epochs; final loss "
          f"{history.epochs[-1].loss:.4f}; checkpoint {os.path.join(args.out, 'model.scxw')}")
    return 0


def _features_from_path(path: str):
    if os.path.isdir(path):
        names = [n for n in sorted(os.listdir(path)) if n.endswith(".scxf")]
        if not names:
            raise InputError(f"no .scxf files under {path}")
        return [dio.read_features(os.path.join(path, n)) for n in names]
    return [dio.read_features(path)]


def cmd_predict(args) -> int:
    cfg = None
    if args.config:
        doc = _load_config_file(args.config)
        cfg = _apply_section(ModelConfig, ModelConfig(), doc.get("model", {}),
                             f"{args.config} [model]")
    model = BoundaryDetector.load(args.ckpt, cfg=cfg)
    if args.threshold is not None:
        model.cfg.decode_threshold = args.threshold
    if args.min_separation is not None:
        model.cfg.decode_min_separation = args.min_separation
    sequences = _features_from_path(args.features)
    predictions = {}
    for seq in sequences:
        result = model.predict(seq)
        predictions[seq.video_id] = result.boundaries
    dio.write_predictions(args.out, predictions)
    print(f"wrote predictions for {len(predictions)} videos to {args.out}")
    return 0


def cmd_eval(args) -> int:
    predictions = dio.read_predictions(args.preds)
    annotations = dio.read_annotations(args.annots)
    report = ev.sweep(predictions, annotations,
                      aggregation="macro" if args.macro else "micro")
    if report.missing_videos:
        print(f"warning: {len(report.missing_videos)} videos lack annotations "
              f"and were excluded: {report.missing_videos[:5]}", file=sys.stderr)
    ev.write_report_csv(report, args.out)
    print(ev.render_report_csv(report), end="")
    return 0


def cmd_bench(args) -> int:
    lengths = [int(t) for t in args.T.split(",")]
    if args.mode == "flops":
        for t in lengths:
            windowed = attention_flops(t, args.channels, args.k)
            global_ = global_attention_flops(t, args.channels)
            print(f"T={t}: windowed {windowed:,} flops, global {global_:,} flops")
        return 0
    cfg = ModelConfig(in_channels=args.in_channels or 16, channels=args.channels,
                      window=args.k, groups=args.groups or 4, layers=args.layers or 2)
    model = BoundaryDetector(cfg, seed=args.seed or 0)
    rng = np.random.default_rng(args.seed or 0)
    timings = []
    for t in lengths:
        seq = dio.FeatureSequence(
            video_id=f"bench{t}", features=rng.normal(0, 1, (t, cfg.in_channels)).astype(np.float32),
            timestamps=dio.default_timestamps(t, 1.0), fps=1.0)
        model.predict(seq)  # warm caches
        best = min(_time_predict(model, seq) for _ in range(args.repeats))
        timings.append((t, best))
        print(f"T={t}: {best * 1e3:.1f} ms, analytic attention flops "
              f"{attention_flops(t, cfg.channels, cfg.window):,}")
    if len(lengths) >= 3:
        share = quadratic_share(timings)
        print(f"quadratic-term share of runtime at T={lengths[-1]}: {share * 100:.1f}%")
    return 0


def _time_predict(model, seq) -> float:
    start = time.perf_counter()
    model.predict(seq)
    return time.perf_counter() - start


def quadratic_share(timings) -> float:
    """Fit t(T) = c2 T^2 + c1 T + c0; share of the quadratic term at max T."""
    ts = np.array([t for t, _ in timings], dtype=np.float64)
    ys = np.array([y for _, y in timings], dtype=np.float64)
    coeffs = np.polyfit(ts, ys, 2)
    t_max = ts.max()
    quad = abs(coeffs[0]) * t_max * t_max
    total = np.polyval(coeffs, t_max)
    return float(quad / total) if total > 0 else 0.0


def cmd_dump_simmaps(args) -> int:
    model = BoundaryDetector.load(args.ckpt)
    sequences = _features_from_path(args.features)
    frames = [int(f) for f in args.frames.split(",")] if args.frames else None
    os.makedirs(args.out, exist_ok=True)
    from . import tensor as tz
    written = 0
    for seq in sequences:
        with tz.no_grad():
            _, maps = model.forward(seq.features, return_similarity=True)
        wanted = frames if frames is not None else range(min(len(seq.features), 4))
        for t in wanted:
            if not 0 <= t < maps.shape[0]:
                raise InputError(f"frame {t} out of range for video {seq.video_id}")
            for g in range(maps.shape[1]):
                path = os.path.join(args.out, f"{seq.video_id}_t{t}_g{g}.csv")
                lines = "\n".join(",".join(f"{v:.6f}" for v in row) for row in maps[t, g])
                dio._atomic_write(path, (lines + "\n").encode("utf-8"))
                written += 1
    print(f"wrote {written} similarity-map grids to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser / dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scgebd",
        description="Event boundary detection over frame feature sequences: "
                    "synthetic data, training, prediction and F1@Rel.Dis evaluation.")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("gen-data", help="generate a synthetic planted-boundary dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-videos", type=int, default=20, dest="num_videos")
    p.add_argument("--start-index", type=int, default=0, dest="start_index")
    p.add_argument("--length", type=int, default=100, help="frames per video (T)")
    p.add_argument("--channels", type=int, default=32, help="feature dimension (C)")
    p.add_argument("--fps", type=float, default=1.0)
    p.add_argument("--segments-min", type=int, default=3, dest="segments_min")
    p.add_argument("--segments-max", type=int, default=6, dest="segments_max")
    p.add_argument("--latent-dim", type=int, default=None, dest="latent_dim")
    p.add_argument("--noise-sigma", type=float, default=0.3, dest="noise_sigma")
    p.add_argument("--jitter-sigma", type=float, default=1.0, dest="jitter_sigma")
    p.add_argument("--raters", type=int, default=3)
    p.add_argument("--min-segment-frames", type=int, default=5, dest="min_segment_frames")
    p.add_argument("--transition-frames", type=int, default=2, dest="transition_frames")
    p.add_argument("--id-prefix", default="synth", dest="id_prefix")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a boundary detector")
    p.add_argument("--data", required=True, help="dataset dir (features/ + annotations.json)")
    p.add_argument("--val-data", dest="val_data", help="optional validation dataset dir")
    p.add_argument("--out", required=True, help="checkpoint output directory")
    _add_override_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score videos and decode boundaries")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--features", required=True, help=".scxf file or directory of them")
    p.add_argument("--out", required=True, help="predictions JSON path")
    p.add_argument("--config", help="model config JSON (defaults to <ckpt>.json)")
    p.add_argument("--threshold", type=float, help="decode threshold override")
    p.add_argument("--min-separation", type=int, dest="min_separation")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="evaluate predictions with F1@Rel.Dis")
    p.add_argument("--preds", required=True)
    p.add_argument("--annots", required=True)
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--macro", action="store_true",
                   help="macro-average per-video F1 instead of micro counts")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="runtime scaling and flop counts")
    p.add_argument("--mode", choices=["scaling", "flops"], default="scaling")
    p.add_argument("--T", default="64,128,256,512")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--in-channels", type=int, dest="in_channels")
    p.add_argument("--groups", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("dump-simmaps", help="export grouped similarity maps as CSV grids")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", help="comma-separated frame indices (default: first 4)")
    p.set_defaults(func=cmd_dump_simmaps)
    return parser


def dispatch(argv) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    if not getattr(args, "command", None):
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except (ConfigError, InputError, UsageError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericError, InternalError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except ScgebdError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
