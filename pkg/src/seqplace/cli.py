"""Command-line pipeline: synth, extract, train, match, eval, sweep, bench.

Every command is flag-driven, optionally seeded by a line-oriented
"key = value" config file (explicit flags win on conflict), and exits 0 on
success, 2 on usage errors, 3 on runtime or training failures. The
SEQPLACE_THREADS environment variable caps internal parallelism (0 = auto).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import neural
from .dataset import (
    DescriptorSequence,
    PositionTrack,
    Traversal,
    load_descriptor_file,
    load_positions_file,
    normalize_positions,
    save_descriptor_file,
)
from .descriptors import ThumbnailConfig, DeltaConfig, l2_normalize, read_pgm, thumbnail_descriptor
from .evaluation import (
    delta_method,
    deep_method,
    delta_window_for,
    ds_sweep,
    load_ground_truth,
    pr_curve,
    save_bench_csv,
    save_pr_csv,
    save_sweep_csv,
    seqslam_method,
    benchmark,
    tolerance_for,
)
from .matching_classic import (
    MatchReport,
    SeqSlamConfig,
    contrast_enhance,
    delta_match,
    difference_matrix,
    seqslam_search,
)
from .synthetic import SynthConfig, SynthPair, generate, generate_revisit, write_dataset

METHODS = ("seqslam", "delta", "deep")


class UsageError(Exception):
    """Bad flags or unusable argument combination; exits with code 2."""


def _require_file(path, what: str) -> str:
    if not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _read_config_flags(path) -> list[str]:
    if not os.path.isfile(path):
        raise UsageError(f"config file not found: {path}")
    flags: list[str] = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if not sep or not key:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            flags.extend([f"--{key.replace('_', '-')}", value])
    return flags


def _inject_config(argv: list[str]) -> list[str]:
    """Expand --config FILE into flags placed before the explicit ones."""
    out = list(argv)
    for i, tok in enumerate(out):
        if tok == "--config":
            if i + 1 >= len(out):
                raise UsageError("--config needs a file argument")
            path = out[i + 1]
            del out[i : i + 2]
            break
        if tok.startswith("--config="):
            path = tok.split("=", 1)[1]
            del out[i : i + 1]
            break
    else:
        return out
    return out[:1] + _read_config_flags(path) + out[1:]


def _parse_drift(text: str | None) -> tuple[float, ...] | None:
    if text is None or text == "" or text.lower() == "none":
        return None
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError:
        raise UsageError(f"--drift expects comma-separated numbers, got {text!r}") from None


def _load_traversal(
    desc_path, pos_path=None, name: str | None = None, normalize: bool = False
) -> Traversal:
    seq = load_descriptor_file(_require_file(desc_path, "descriptor file"))
    if normalize:
        seq = l2_normalize(seq)
    if pos_path is not None:
        raw = load_positions_file(_require_file(pos_path, "positions file"))
        if raw.shape[0] != seq.frame_count:
            raise UsageError(
                f"{pos_path} has {raw.shape[0]} rows but {desc_path} has "
                f"{seq.frame_count} frames"
            )
        track = normalize_positions(raw)
    else:
        track = PositionTrack(np.zeros((seq.frame_count, 2)))
    if name is None:
        name = os.path.splitext(os.path.basename(desc_path))[0]
    return Traversal(name=name, descriptors=seq, positions=track)


def cmd_synth(args) -> int:
    try:
        cfg = SynthConfig(
            frames=args.frames,
            dim=args.dim,
            smoothness=args.smoothness,
            condition_noise=args.noise,
            drift=_parse_drift(args.drift),
            path=args.path,
            seed=args.seed,
        )
        if args.revisit_at is None:
            pair = generate(cfg)
        else:
            pair = generate_revisit(cfg, args.revisit_at, args.revisit_len)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    manifest = write_dataset(pair, args.out, cfg)
    print(manifest)
    return 0


def cmd_extract(args) -> int:
    if not os.path.isdir(args.images):
        raise UsageError(f"image directory not found: {args.images}")
    names = sorted(n for n in os.listdir(args.images) if n.lower().endswith(".pgm"))
    if not names:
        raise UsageError(f"no .pgm images in {args.images}")
    try:
        cfg = ThumbnailConfig(width=args.width, height=args.height, patch_size=args.patch)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = []
    for fname in names:
        path = os.path.join(args.images, fname)
        try:
            image = read_pgm(path)
            block_r = image.shape[0] // cfg.height
            block_c = image.shape[1] // cfg.width
            if block_r == 0 or block_c == 0:
                raise ValueError(
                    f"image {image.shape[0]}x{image.shape[1]} smaller than "
                    f"thumbnail {cfg.height}x{cfg.width}"
                )
            if image.shape != (block_r * cfg.height, block_c * cfg.width):
                print(
                    f"warning: cropping {fname} from "
                    f"{image.shape[0]}x{image.shape[1]} to "
                    f"{block_r * cfg.height}x{block_c * cfg.width}",
                    file=sys.stderr,
                )
            rows.append(thumbnail_descriptor(image, cfg))
        except (ValueError, OSError) as exc:
            raise RuntimeError(f"{path}: {exc}") from None
    seq = DescriptorSequence(data=np.stack(rows), normalized=False)
    save_descriptor_file(seq, args.out)
    print(args.out)
    return 0


def cmd_train(args) -> int:
    if args.ds < 1:
        raise UsageError(f"--ds must be >= 1, got {args.ds}")
    if args.epochs < 0:
        raise UsageError(f"--epochs must be >= 0, got {args.epochs}")
    reference = _load_traversal(args.ref, args.ref_positions, normalize=True)
    model, curves = neural.train(
        reference,
        d_s=args.ds,
        epochs=args.epochs,
        lr=args.lr,
        rng_seed=args.seed,
        hidden=args.hidden,
        batch_size=args.batch,
        clip_norm=args.clip,
    )
    neural.save_checkpoint(model, args.out_checkpoint)
    neural.save_curves_csv(curves, args.out_curves)
    print(args.out_checkpoint)
    print(args.out_curves)
    return 0


def _match_report(args) -> tuple[MatchReport, np.ndarray | None, int]:
    """Deep or seqslam matching; returns (report, exportable matrix, d_s)."""
    if args.method == "deep":
        if args.checkpoint is None:
            raise UsageError("deep matching needs --checkpoint")
        if args.query_positions is None:
            raise UsageError("deep matching needs --query-positions")
        model = neural.load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
        query = _load_traversal(args.query, args.query_positions, normalize=True)
        d_s = args.ds if args.ds is not None else model.d_s
        activity, report = neural.infer(model, query, d_s)
        return report, activity, d_s
    if args.ds is None:
        raise UsageError(f"--ds is required for method {args.method}")
    if args.ds < 1:
        raise UsageError(f"--ds must be >= 1, got {args.ds}")
    query = _load_traversal(args.query)
    reference = _load_traversal(args.ref)
    cfg = SeqSlamConfig(
        d_s=args.ds,
        v_min=args.v_min,
        v_max=args.v_max,
        v_step=args.v_step,
        r_window=args.r_window,
    )
    enhanced = contrast_enhance(
        difference_matrix(query.descriptors, reference.descriptors, args.metric),
        cfg.r_window,
    )
    return seqslam_search(enhanced, cfg), enhanced.data, args.ds


def cmd_match(args) -> int:
    if args.method == "delta":
        if args.ds is None or args.ds < 1:
            raise UsageError("--ds must be >= 1 for method delta")
        query = _load_traversal(args.query)
        reference = _load_traversal(args.ref)
        cfg = DeltaConfig(window=delta_window_for(args.ds))
        report = delta_match(query.descriptors, reference.descriptors, cfg)
        matrix = None
        d_s = args.ds
    else:
        report, matrix, d_s = _match_report(args)
    polarity = "higher" if report.higher_is_better else "lower"
    with open(args.out, "w", encoding="ascii") as fh:
        fh.write(f"# method={args.method}\n")
        fh.write(f"# polarity={polarity}\n")
        fh.write(f"# ds={d_s}\n")
        fh.write("query_index,best_ref,score\n")
        for q, r, s in zip(report.query_indices, report.best_ref, report.scores):
            fh.write(f"{q},{r},{float(s)!r}\n")
    if args.export_matrix is not None:
        if matrix is None:
            raise UsageError(f"method {args.method} has no matrix to export")
        save_descriptor_file(
            DescriptorSequence(data=matrix, normalized=False), args.export_matrix
        )
    print(args.out)
    return 0


def load_match_csv(path) -> tuple[MatchReport, dict[str, str]]:
    """Read a match CSV; raises ValueError with a line number on bad rows."""
    meta: dict[str, str] = {}
    rows: list[tuple[int, int, float]] = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, sep, value = line[1:].strip().partition("=")
                if sep:
                    meta[key.strip()] = value.strip()
                continue
            if line == "query_index,best_ref,score":
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            try:
                rows.append((int(parts[0]), int(parts[1]), float(parts[2])))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed row {line!r}") from None
    if not rows:
        raise ValueError(f"{path}: no match rows")
    polarity = meta.get("polarity")
    if polarity not in ("higher", "lower"):
        raise ValueError(f"{path}: missing or invalid '# polarity=' comment")
    arr = np.array(rows, dtype=np.float64)
    report = MatchReport(
        query_indices=arr[:, 0].astype(np.int64),
        best_ref=arr[:, 1].astype(np.int64),
        scores=arr[:, 2],
        higher_is_better=(polarity == "higher"),
    )
    return report, meta


def cmd_eval(args) -> int:
    report, meta = load_match_csv(_require_file(args.matches, "match CSV"))
    if args.delta is not None:
        delta = args.delta
    else:
        if args.ds is not None:
            d_s = args.ds
        elif "ds" in meta:
            d_s = int(meta["ds"])
        else:
            raise UsageError("need --ds or --delta (match CSV lacks a '# ds=' comment)")
        delta = tolerance_for(d_s)
    truth = None
    if args.ground_truth is not None:
        truth = load_ground_truth(_require_file(args.ground_truth, "ground-truth file"))
    curve = pr_curve(report, delta, truth)
    print(f"# delta={delta}")
    print(f"auc,{curve.auc!r}")
    if args.out_curve is not None:
        save_pr_csv(curve, args.out_curve, delta=delta)
    return 0


def _build_methods(names: list[str], args):
    built = []
    for name in names:
        if name == "seqslam":
            built.append(seqslam_method())
        elif name == "delta":
            built.append(delta_method())
        elif name == "deep":
            built.append(
                deep_method(epochs=args.epochs, lr=args.lr, hidden=args.hidden, seed=args.seed)
            )
        else:
            raise UsageError(f"unknown method {name!r} (choose from {', '.join(METHODS)})")
    return built


def _load_pair(args, need_positions: bool) -> SynthPair:
    pos_given = args.ref_positions is not None and args.query_positions is not None
    if need_positions and not pos_given:
        raise UsageError("deep method needs --ref-positions and --query-positions")
    reference = _load_traversal(args.ref, args.ref_positions, normalize=True)
    query = _load_traversal(args.query, args.query_positions)
    return SynthPair(reference=reference, query=query)


def cmd_sweep(args) -> int:
    names = [n.strip() for n in args.methods.split(",") if n.strip()]
    if not names:
        raise UsageError("--methods must name at least one method")
    try:
        ds_values = [int(v) for v in args.ds_values.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--ds-values expects comma-separated integers, got {args.ds_values!r}") from None
    if not ds_values or min(ds_values) < 1:
        raise UsageError("--ds-values needs integers >= 1")
    pair = _load_pair(args, need_positions="deep" in names)
    cells = ds_sweep(_build_methods(names, args), ds_values, [pair])
    save_sweep_csv(cells, args.out)
    print(args.out)
    return 0


def cmd_bench(args) -> int:
    if args.ds < 1:
        raise UsageError(f"--ds must be >= 1, got {args.ds}")
    if args.reps < 1:
        raise UsageError(f"--reps must be >= 1, got {args.reps}")
    pair = _load_pair(args, need_positions=(args.method == "deep"))
    method = _build_methods([args.method], args)[0]
    result = benchmark(method, pair, args.ds, repetitions=args.reps)
    print(f"{result.method},{result.seconds!r},{result.frames}")
    if args.out is not None:
        save_bench_csv([result], args.out)
    return 0


def _add_deep_flags(sub) -> None:
    sub.add_argument("--epochs", type=int, default=100)
    sub.add_argument("--lr", type=float, default=0.01)
    sub.add_argument("--hidden", type=int, default=512)
    sub.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqplace",
        description="sequence-based visual place recognition toolkit",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate a synthetic reference/query pair")
    p.add_argument("--frames", type=int, default=500)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--smoothness", type=float, default=0.9)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--drift", default=None)
    p.add_argument("--path", choices=("loop", "line"), default="loop")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--revisit-at", type=int, default=None)
    p.add_argument("--revisit-len", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("extract", help="thumbnail descriptors from PGM images")
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--patch", type=int, default=8)
    p.set_defaults(func=cmd_extract)

    p = subs.add_parser("train", help="train the sequence matcher")
    p.add_argument("--ref", required=True)
    p.add_argument("--ref-positions", required=True)
    p.add_argument("--ds", type=int, required=True)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--hidden", type=int, default=512)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clip", type=float, default=None)
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--out-curves", required=True)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("match", help="match a query traversal against a reference")
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--ds", type=int, default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--query-positions", default=None)
    p.add_argument("--metric", choices=("cosine", "euclidean"), default="cosine")
    p.add_argument("--v-min", type=float, default=0.8)
    p.add_argument("--v-max", type=float, default=1.2)
    p.add_argument("--v-step", type=float, default=0.04)
    p.add_argument("--r-window", type=int, default=10)
    p.add_argument("--export-matrix", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_match)

    p = subs.add_parser("eval", help="precision-recall and AUC from a match CSV")
    p.add_argument("--matches", required=True)
    p.add_argument("--ds", type=int, default=None)
    p.add_argument("--delta", type=int, default=None)
    p.add_argument("--ground-truth", default=None)
    p.add_argument("--out-curve", default=None)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("sweep", help="AUC table over methods and sequence lengths")
    p.add_argument("--ref", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--ref-positions", default=None)
    p.add_argument("--query-positions", default=None)
    p.add_argument("--methods", default="seqslam,delta,deep")
    p.add_argument("--ds-values", default="1,2,4")
    _add_deep_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = subs.add_parser("bench", help="deployment wall time for one method")
    p.add_argument("--ref", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--ref-positions", default=None)
    p.add_argument("--query-positions", default=None)
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--ds", type=int, required=True)
    p.add_argument("--reps", type=int, default=3)
    _add_deep_flags(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _inject_config(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return int(args.func(args) or 0)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except neural.TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
