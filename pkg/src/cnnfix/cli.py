"""Command line entry point.

Exit status is 0 on success, 2 for usage errors and 3 when a model, image or
annotation cannot be used. Every command computes all of its results before
writing anything, so a failure leaves no partial output behind.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io as fio
from .backtrack import (ARGMAX_LOCATION, FALLBACK_ABORT, FALLBACK_ARGMAX, SAME_LOCATION,
                        BacktrackConfig, BacktrackError, compute_fixations, resolve_start)
from .forward import predict_label, run_forward
from .graph import ModelError, load_model, save_model
from .metrics import (LocalizationRecord, localization_error, per_class_localization_error,
                      precision_at_eer, proposal_metrics)
from .pipeline import localize
from .postprocess import DEFAULT_MIN_FRACTION, image_diagonal
from .tensor import ShapeError

EXIT_USAGE = 2
EXIT_DATA = 3

FIXTURE_KINDS = ("blob", "random-cnn", "inception-toy", "residual-toy", "dense-toy", "toy-lstm")


class UsageError(Exception):
    pass


def parse_start(text: str | None):
    """``None``/``predicted`` or ``"layer:NAME coord:c,x,y"`` (or ``coord:i`` for vectors)."""
    if text is None or text.strip() == "predicted":
        return None
    fields = dict(part.split(":", 1) for part in text.split() if ":" in part)
    if set(fields) != {"layer", "coord"}:
        raise UsageError(f"bad start selector {text!r}; use 'layer:NAME coord:c,x,y'")
    try:
        coord = tuple(int(v) for v in fields["coord"].split(","))
    except ValueError:
        raise UsageError(f"bad coordinate in start selector {text!r}") from None
    return fields["layer"], coord if len(coord) > 1 else coord[0]


def _config(args) -> BacktrackConfig:
    return BacktrackConfig(args.mode, args.fallback)


def _load(args):
    graph = load_model(args.model)
    channels = graph.input_shape[0] if len(graph.input_shape) == 3 else None
    images = [(Path(p), fio.read_image(p, channels)) for p in args.image]
    return graph, images


def _radius(args, shape) -> float:
    if args.radius is not None:
        return args.radius
    return args.radius_fraction * image_diagonal(shape)


def _sigma(args, shape) -> float:
    if args.sigma is not None:
        return args.sigma
    return args.sigma_fraction * image_diagonal(shape)


def _localize(args, graph, image):
    return localize(graph, image, parse_start(args.start), _config(args), args.min_fraction,
                    _radius(args, image.shape), _sigma(args, image.shape))


def cmd_infer(args) -> int:
    graph, images = _load(args)
    lines = []
    for path, image in images:
        trace = run_forward(graph, image)
        scores = " ".join(f"{s:.6f}" for s in trace.scores)
        lines.append(f"{path.name}: class {predict_label(trace)}")
        lines.append(f"{path.name}: scores {scores}")
    print("\n".join(lines))
    return 0


def cmd_fixate(args) -> int:
    graph, images = _load(args)
    cfg = _config(args)
    start = parse_start(args.start)
    outputs = []
    for path, image in images:
        trace = run_forward(graph, image)
        fx = compute_fixations(graph, trace, start, cfg)
        layer, first = resolve_start(graph, trace, start)
        coord = ",".join(str(v) for v in np.ravel(first.coords))
        meta = {"image": path.name, "start": f"layer:{layer} coord:{coord}",
                "predicted_class": trace.predicted, "conv_spatial_mode": cfg.conv_spatial_mode,
                "empty_set_fallback": cfg.empty_set_fallback,
                "fallback_fired": str(fx.fallback).lower()}
        outputs.append((Path(args.out) / f"{path.stem}.fixations.txt",
                        fio.format_points(fx.coords, meta).encode()))
        if args.overlay:
            outputs.append((Path(args.out) / f"{path.stem}.fixations.png",
                            fio.encode_png(fio.fixation_overlay(image, fx.coords))))
    _write_all(outputs)
    return 0


def cmd_heatmap(args) -> int:
    graph, images = _load(args)
    outputs = []
    for path, image in images:
        res = _localize(args, graph, image)
        outputs.append((Path(args.out) / f"{path.stem}.heatmap.png",
                        fio.encode_png(fio.to_uint8(res.heatmap))))
        if args.overlay:
            outputs.append((Path(args.out) / f"{path.stem}.heatmap_overlay.png",
                            fio.encode_png(fio.heatmap_overlay(image, res.heatmap))))
    _write_all(outputs)
    return 0


def cmd_bbox(args) -> int:
    graph, images = _load(args)
    outputs = []
    for path, image in images:
        res = _localize(args, graph, image)
        if res.box is None:
            raise BacktrackError(f"{path.name}: no fixations to fit a box to")
        record = fio.format_box(res.box)
        print(f"{path.name}: {record}", end="")
        outputs.append((Path(args.out) / f"{path.stem}.bbox.txt", record.encode()))
    _write_all(outputs)
    return 0


def cmd_eval(args) -> int:
    graph = load_model(args.model)
    channels = graph.input_shape[0] if len(graph.input_shape) == 3 else None
    paths = fio.list_images(args.images)
    if not paths:
        raise fio.DataError(f"no images in {args.images}")
    records, eer = [], []
    for path in paths:
        cls, boxes = fio.read_annotation(Path(args.annotations) / f"{path.stem}.txt")
        image = fio.read_image(path, channels)
        res = _localize(args, graph, image)
        records.append(LocalizationRecord(res.trace.predicted, cls, res.box, boxes))
        if args.masks:
            mask = fio.read_image(Path(args.masks) / f"{path.stem}.png", 1)[0] > 0.5
            eer.append(precision_at_eer(res.heatmap, mask))
    report = {"images": len(records),
              "classification_accuracy": 100.0 * float(np.mean(
                  [r.predicted_class == r.true_class for r in records])),
              "localization_error": localization_error(records)}
    for cls, err in per_class_localization_error(records).items():
        report[f"class_{cls}_localization_error"] = err
    m_recall, m_precision = proposal_metrics(records)
    report["mean_recall"] = m_recall
    report["mean_precision"] = m_precision
    if eer:
        report["eer_precision"] = 100.0 * float(np.mean(eer))
    text = fio.format_report(report)
    if args.report:
        fio.write_text(args.report, text)
    print(text, end="")
    print(f"localization error {report['localization_error']:.2f}% over {len(records)} images",
          file=sys.stderr)
    return 0


def cmd_make_fixture(args) -> int:
    from . import fixtures as fx
    out = Path(args.out)
    makers = {"random-cnn": lambda s: fx.make_random_cnn(s, depth=2, pool_every=1),
              "inception-toy": fx.make_inception_toy, "residual-toy": fx.make_residual_toy,
              "dense-toy": fx.make_dense_toy, "toy-lstm": fx.make_toy_lstm}
    if args.kind == "blob":
        save_model(fx.make_blob_detector(args.seed), out / "model")
        for n, sample in enumerate(fx.blob_images(args.seed, args.count)):
            stem = f"blob_{n:04d}"
            fio.write_gray(out / "images" / f"{stem}.png", sample.image)
            fio.write_text(out / "annotations" / f"{stem}.txt",
                           fio.format_annotation(sample.label, [sample.box]))
    else:
        graph = makers[args.kind](args.seed)
        save_model(graph, out / "model")
        fio.write_image(out / "images" / "random_0000",
                        fx.random_image(args.seed, graph.input_shape))
    print(f"wrote {args.kind} fixture to {out}")
    return 0


def _write_all(outputs):
    for path, data in outputs:
        fio.write_bytes(path, data)


def _fraction(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 1]")
    return v


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"{text} is not positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cnnfix", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def model_args(p, images=True):
        p.add_argument("--model", required=True, help="manifest file or directory with model.json")
        if images:
            p.add_argument("--image", required=True, nargs="+", help="input image(s)")

    def trace_args(p):
        p.add_argument("--start", default=None,
                       help="'predicted' (default) or 'layer:NAME coord:c,x,y'")
        p.add_argument("--mode", choices=(SAME_LOCATION, ARGMAX_LOCATION), default=SAME_LOCATION)
        p.add_argument("--fallback", choices=(FALLBACK_ARGMAX, FALLBACK_ABORT),
                       default=FALLBACK_ARGMAX)
        p.add_argument("--out", default=".", help="output directory")

    def post_args(p):
        p.add_argument("--min-fraction", type=_fraction, default=DEFAULT_MIN_FRACTION)
        p.add_argument("--radius", type=_positive, default=None, help="outlier radius in pixels")
        p.add_argument("--radius-fraction", type=_positive, default=0.10,
                       help="outlier radius as a share of the image diagonal")
        p.add_argument("--sigma", type=_positive, default=None, help="heat map blur in pixels")
        p.add_argument("--sigma-fraction", type=_positive, default=0.04,
                       help="heat map blur as a share of the image diagonal")

    p = sub.add_parser("infer", help="print predicted class and scores")
    model_args(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("fixate", help="write the fixation point table")
    model_args(p)
    trace_args(p)
    p.add_argument("--overlay", action="store_true", help="also write a red-dot overlay PNG")
    p.set_defaults(func=cmd_fixate)

    p = sub.add_parser("heatmap", help="write the blurred fixation map")
    model_args(p)
    trace_args(p)
    post_args(p)
    p.add_argument("--overlay", action="store_true", help="also write an RGB overlay PNG")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("bbox", help="write the box around filtered fixations")
    model_args(p)
    trace_args(p)
    post_args(p)
    p.set_defaults(func=cmd_bbox)

    p = sub.add_parser("eval", help="score localization against annotation files")
    model_args(p, images=False)
    p.add_argument("--images", required=True, help="directory of images")
    p.add_argument("--annotations", required=True, help="directory of <image stem>.txt files")
    p.add_argument("--masks", default=None, help="directory of <image stem>.png masks")
    p.add_argument("--report", default=None, help="also write the report to this file")
    trace_args(p)
    post_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("make-fixture", help="write a synthetic model (and images)")
    p.add_argument("kind", choices=FIXTURE_KINDS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=20, help="images for the blob fixture")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_fixture)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"cnnfix: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelError, fio.DataError, ShapeError, BacktrackError, ValueError,
            IndexError, OSError) as exc:
        print(f"cnnfix: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
