"""Command-line entry point.

Exit codes: 0 success, 1 internal error, 2 bad input (flags, files, schema).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import depth_codec as dc
from .evaluation import DIFFICULTIES, METRICS, EvalConfig, evaluate_metrics
from .geometry import GeometryError
from .heads_io import HeadsSchemaError, read_heads, write_heads
from .kitti_io import (
    KittiFormatError,
    list_frame_ids,
    read_calibration,
    read_label_file,
    serialize_prediction,
)
from .synth import NoiseModel, SceneSpec, generate_scene, perturb, write_dataset
from .targets import (
    FeatureGridMeta,
    ReferenceAreaConfig,
    decode_objects,
    encode_targets,
    raw_heads_from_targets,
)

log = logging.getLogger("centerdepth")

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


# -- helpers -------------------------------------------------------------------

def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(text: str, out: str | None) -> None:
    if out:
        write_atomic(out, text)
    else:
        sys.stdout.write(text)


def _csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _parallel_map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _add_codec_args(p: argparse.ArgumentParser, choices=("eigen", "sid", "lid", "depjoint"), default="lid"):
    g = p.add_argument_group("depth codec")
    g.add_argument("--codec", choices=choices, default=default)
    g.add_argument("--d-min", type=float, default=None,
                   help="range start in meters (sid/lid default 1, depjoint default 0)")
    g.add_argument("--d-max", type=float, default=None,
                   help="range end in meters (sid/lid default 91, depjoint default 60)")
    g.add_argument("--bins", type=int, default=80, help="ordinal bin count N (sid/lid)")
    g.add_argument("--xi", type=float, default=0.0, help="shift added to the sid/lid range")
    g.add_argument("--alpha", type=float, default=0.7, help="depjoint bin 1 scale")
    g.add_argument("--beta", type=float, default=0.3, help="depjoint bin 2 scale")


def codec_from_args(args) -> dc.DepthCodec:
    try:
        if args.codec == "eigen":
            return dc.EigenConfig()
        if args.codec in (dc.SID, dc.LID):
            d_min = 1.0 if args.d_min is None else args.d_min
            d_max = 91.0 if args.d_max is None else args.d_max
            return dc.DiscretizationConfig(d_min, d_max, args.bins, args.codec, args.xi)
        d_min = 0.0 if args.d_min is None else args.d_min
        d_max = 60.0 if args.d_max is None else args.d_max
        return dc.DepJointConfig(args.alpha, args.beta, d_min, d_max)
    except ValueError as exc:
        raise InputError(f"invalid codec parameters: {exc}") from None


def _require_dir(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise InputError(f"{what} is not a directory: {path}")
    return p


# -- eval ------------------------------------------------------------------------

def cmd_eval(args) -> int:
    if not 0.0 < args.iou <= 1.0:
        raise InputError(f"--iou must lie in (0, 1], got {args.iou}")
    metrics = METRICS if args.metric == "all" else (args.metric,)
    gt_dir = _require_dir(args.gt_dir, "ground-truth dir")
    pred_dir = _require_dir(args.pred_dir, "prediction dir")

    gt_ids = list_frame_ids(gt_dir)
    pred_ids = list_frame_ids(pred_dir)
    if pred_ids and set(pred_ids) != set(gt_ids):
        missing = sorted(set(gt_ids) - set(pred_ids))
        extra = sorted(set(pred_ids) - set(gt_ids))
        raise InputError(f"frame mismatch: missing predictions {missing}, unknown frames {extra}")
    if args.calib_dir:
        calib_dir = _require_dir(args.calib_dir, "calibration dir")
        missing = [f for f in gt_ids if not (calib_dir / f"{f}.txt").is_file()]
        if missing:
            raise InputError(f"missing calibration for frames {missing}")

    gts = {f: read_label_file(gt_dir / f"{f}.txt") for f in gt_ids}
    dets = {f: (read_label_file(pred_dir / f"{f}.txt") if pred_ids else []) for f in gt_ids}
    for f, labels in dets.items():
        if any(lab.score is None for lab in labels):
            raise InputError(f"prediction file {f}.txt has lines without a score")

    cfg = EvalConfig(iou_threshold=args.iou, class_name=args.class_name)
    report = evaluate_metrics(gts, dets, cfg, metrics)
    text = json.dumps(report.to_dict(), indent=2)
    if args.out:
        write_atomic(args.out, text + "\n")
    if args.pr_csv:
        rows = [
            (m, d, r, p)
            for m in metrics for d in DIFFICULTIES
            for r, p in report.pr_curves[m][d]
        ]
        write_atomic(args.pr_csv, _csv(("metric", "difficulty", "recall", "precision"), rows))

    print(f"{args.class_name} AP (11-point, IoU {args.iou:g}) over {len(gt_ids)} frames")
    print(f"{'metric':<8}" + "".join(f"{d:>10}" for d in DIFFICULTIES))
    for m in metrics:
        print(f"{m:<8}" + "".join(f"{100 * report.ap[m][d]:>10.2f}" for d in DIFFICULTIES))
    return EXIT_OK


# -- codec analysis ------------------------------------------------------------------

def cmd_codec_table(args) -> int:
    codec = codec_from_args(args)
    if isinstance(codec, dc.DiscretizationConfig):
        rows = dc.bin_table(codec)
    elif isinstance(codec, dc.DepJointConfig):
        bins = dc.depjoint_bins(codec)
        rows = [(k, lo, hi, hi - lo) for k, (lo, hi) in enumerate(bins)]
    else:
        raise InputError("the eigen codec has no bins")
    _emit(_csv(("index", "lo", "hi", "width"), rows), args.out)
    return EXIT_OK


def cmd_depth_hist(args) -> int:
    if not args.bin_width > 0:
        raise InputError(f"--bin-width must be positive, got {args.bin_width}")
    label_dir = _require_dir(args.label_dir, "label dir")
    counts = Counter()
    for fid in list_frame_ids(label_dir):
        for lab in read_label_file(label_dir / f"{fid}.txt"):
            if lab.class_name == args.class_name:
                counts[int(math.floor(lab.depth / args.bin_width))] += 1
    rows = []
    if counts:
        for k in range(min(counts), max(counts) + 1):
            rows.append((k * args.bin_width, (k + 1) * args.bin_width, counts.get(k, 0)))
    _emit(_csv(("lo", "hi", "count"), rows), args.out)
    return EXIT_OK


def cmd_codec_roundtrip(args) -> int:
    if args.n_samples < 2:
        raise InputError("--n-samples must be at least 2")
    args.codec = dc.LID
    lid = codec_from_args(args)
    args.codec = dc.SID
    sid = codec_from_args(args)
    depths = np.linspace(lid.d_min_star, lid.d_max_star, args.n_samples)
    rows = []
    for d in depths:
        d = float(d)
        row = [d]
        for cfg in (lid, sid):
            l = dc.continuous_bin(d, cfg)
            enc = dc.encode_depth(d, cfg)
            k = min(enc.l_int, cfg.n_bins - 1)
            width = dc.decode_depth(k + 1.0, cfg) - dc.decode_depth(float(k), cfg)
            median = dc.median_decode(enc.l_int, cfg)
            refined = dc.decode_depth(l, cfg)
            row += [l, k, width / 2, abs(median - d), abs(refined - d)]
        rows.append(row)
    header = ["depth"]
    for name in ("lid", "sid"):
        header += [f"{name}_l", f"{name}_bin", f"{name}_half_width",
                   f"{name}_err_median", f"{name}_err_residual"]
    _emit(_csv(header, rows), args.out)
    return EXIT_OK


# -- synthetic data ----------------------------------------------------------------------

def _synth_frame(job):
    spec, noise, index = job
    labels, calib = generate_scene(spec, index)
    preds = perturb(labels, noise, spec.seed, calib, index) if noise is not None else None
    return f"{index:06d}", labels, calib, preds


def cmd_synth(args) -> int:
    try:
        spec = SceneSpec(
            seed=args.seed,
            n_objects=(args.min_objects, args.max_objects),
            depth_range=(args.depth_min, args.depth_max),
            lateral_range=(-args.lateral, args.lateral),
        )
        noise = None
        if args.pred_dir:
            noise = NoiseModel(args.center_sigma, args.depth_sigma, args.yaw_sigma,
                               args.dim_sigma, args.fp_rate, args.fn_rate)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if args.frames < 0:
        raise InputError("--frames must be non-negative")

    results = _parallel_map(_synth_frame, [(spec, noise, i) for i in range(args.frames)], args.jobs)
    write_dataset(args.out_dir, {fid: (labels, calib) for fid, labels, calib, _ in results},
                  decimals=args.decimals)
    if args.pred_dir:
        pred_dir = Path(args.pred_dir)
        pred_dir.mkdir(parents=True, exist_ok=True)
        for fid, _, _, preds in results:
            text = "".join(serialize_prediction(p, args.decimals) + "\n" for p in preds)
            write_atomic(pred_dir / f"{fid}.txt", text)
    n_obj = sum(len(r[1]) for r in results)
    print(f"wrote {len(results)} frames, {n_obj} objects to {args.out_dir}")
    return EXIT_OK


# -- encode / decode ----------------------------------------------------------------------

def _encode_frame(job):
    fid, label_path, calib_path, codec, stride, gamma, out_dir = job
    calib = read_calibration(calib_path)
    labels = read_label_file(label_path)
    meta = FeatureGridMeta.for_calib(calib, stride)
    ra = ReferenceAreaConfig(gamma) if gamma is not None else None
    targets = encode_targets(labels, calib, meta, codec, ra)
    write_heads(Path(out_dir) / f"{fid}.json", fid, meta, raw_heads_from_targets(targets))
    return fid, len(targets.instances), dict(targets.drops)


def cmd_encode(args) -> int:
    codec = codec_from_args(args)
    if args.stride < 1:
        raise InputError("--stride must be >= 1")
    if args.gamma is not None and not 0.0 < args.gamma <= 1.0:
        raise InputError("--gamma must lie in (0, 1]")
    label_dir = _require_dir(args.label_dir, "label dir")
    calib_dir = _require_dir(args.calib_dir, "calibration dir")
    ids = list_frame_ids(label_dir)
    missing = [f for f in ids if not (calib_dir / f"{f}.txt").is_file()]
    if missing:
        raise InputError(f"missing calibration for frames {missing}")
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    jobs = [(f, label_dir / f"{f}.txt", calib_dir / f"{f}.txt", codec, args.stride, args.gamma,
             args.out_dir) for f in ids]
    drops = Counter()
    n = 0
    for _, count, frame_drops in _parallel_map(_encode_frame, jobs, args.jobs):
        n += count
        drops.update(frame_drops)
    print(f"encoded {n} instances from {len(ids)} frames; dropped {dict(drops) or 0}")
    return EXIT_OK


def _decode_frame(job):
    fid, meta, heads, calib_path, codec, use_offset3d, out_dir, decimals = job
    calib = read_calibration(calib_path, image_size=(meta.input_width, meta.input_height))
    objects = decode_objects(heads, calib, meta, codec, use_offset3d=use_offset3d)
    text = "".join(serialize_prediction(label, decimals) + "\n" for label, _ in objects)
    write_atomic(Path(out_dir) / f"{fid}.txt", text)
    return fid, len(objects)


def cmd_decode(args) -> int:
    codec = codec_from_args(args)
    src = Path(args.heads)
    if src.is_dir():
        paths = sorted(src.glob("*.json"))
    elif src.is_file():
        paths = [src]
    else:
        raise InputError(f"heads path does not exist: {src}")
    calib_dir = _require_dir(args.calib_dir, "calibration dir")

    docs = [read_heads(p, codec) for p in paths]
    missing = [fid for fid, _, _ in docs if not (calib_dir / f"{fid}.txt").is_file()]
    if missing:
        raise InputError(f"missing calibration for frames {missing}")
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    jobs = [(fid, meta, heads, calib_dir / f"{fid}.txt", codec, not args.no_offset3d,
             args.out_dir, args.decimals) for fid, meta, heads in docs]
    total = sum(n for _, n in _parallel_map(_decode_frame, jobs, args.jobs))
    print(f"decoded {total} objects in {len(docs)} frames to {args.out_dir}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="centerdepth", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="KITTI 11-point AP for 2D / BEV / 3D")
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--calib-dir", default=None)
    p.add_argument("--metric", choices=(*METRICS, "all"), default="all")
    p.add_argument("--iou", type=float, default=0.7)
    p.add_argument("--class", dest="class_name", default="Car")
    p.add_argument("--out", default=None, help="JSON report path")
    p.add_argument("--pr-csv", default=None, help="precision/recall curves as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("codec-table", help="bin layout of a depth codec as CSV")
    _add_codec_args(p, choices=("sid", "lid", "depjoint"))
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_codec_table)

    p = sub.add_parser("depth-hist", help="per-bin object counts by depth")
    p.add_argument("--label-dir", required=True)
    p.add_argument("--bin-width", type=float, default=1.0)
    p.add_argument("--class", dest="class_name", default="Car")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_depth_hist)

    p = sub.add_parser("codec-roundtrip", help="LID vs SID reconstruction error with and without residual")
    _add_codec_args(p, choices=("sid", "lid"))
    p.add_argument("--n-samples", type=int, default=1000)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_codec_roundtrip)

    p = sub.add_parser("synth", help="write a synthetic KITTI-format dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--min-objects", type=int, default=2)
    p.add_argument("--max-objects", type=int, default=8)
    p.add_argument("--depth-min", type=float, default=5.0)
    p.add_argument("--depth-max", type=float, default=80.0)
    p.add_argument("--lateral", type=float, default=20.0, help="max |X| in meters")
    p.add_argument("--pred-dir", default=None, help="also write perturbed predictions here")
    p.add_argument("--center-sigma", type=float, default=0.0)
    p.add_argument("--depth-sigma", type=float, default=0.0)
    p.add_argument("--yaw-sigma", type=float, default=0.0)
    p.add_argument("--dim-sigma", type=float, default=0.0)
    p.add_argument("--fp-rate", type=float, default=0.0)
    p.add_argument("--fn-rate", type=float, default=0.0)
    p.add_argument("--decimals", type=int, default=2)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("encode", help="ideal head outputs (raw-heads JSON) from labels")
    p.add_argument("--label-dir", required=True)
    p.add_argument("--calib-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--gamma", type=float, default=None, help="reference-area scale; off when omitted")
    _add_codec_args(p)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="raw-heads JSON to KITTI prediction files")
    p.add_argument("--heads", required=True, help="a JSON file or a directory of them")
    p.add_argument("--calib-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-offset3d", action="store_true", help="decode 3D at the 2D center")
    p.add_argument("--decimals", type=int, default=2)
    _add_codec_args(p)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_decode)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InputError, KittiFormatError, HeadsSchemaError, dc.DepthRangeError,
            GeometryError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
