"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 scorer/protocol error.
"""

import argparse
import json
import sys
import time
from pathlib import Path

from PIL import Image

from .degradations import (
    FixtureConfig,
    apply_postproc,
    launder_proxy,
    parse_postproc,
    write_fixture_tree,
)
from .errors import DataError, LaunderKitError, ScorerProtocolError
from .image import ClassLabel, load_image, load_manifest, save_image
from .pipeline import TwoStageDetector, calibrate_pipeline, load_models, run_eval, save_models
from .spectral import average_spectrum, detect_peaks, extract_residual, render_spectrum

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_SCORER = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; this tool reserves 2 for
    # data errors.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser():
    parser = _Parser(prog="launderkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-fixtures", help="generate the three-class fixture set")
    p.add_argument("--out", required=True)
    p.add_argument("--count", required=True, type=int)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("launder", help="apply the laundering proxy to one image")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--factor", type=int, default=8)

    p = sub.add_parser("postproc", help="apply one post-processing operation")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--op", required=True,
                   help="jpeg70|jpeg80|resize0.5|resize2|downup4 (pattern-based)")

    p = sub.add_parser("spectrum", help="average class spectrum render and stats")
    p.add_argument("--manifest", required=True)
    p.add_argument("--class", dest="class_label", required=True)
    p.add_argument("--out", dest="out_prefix", required=True)
    p.add_argument("--factor", type=int, default=8)

    p = sub.add_parser("calibrate", help="fit stage models from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", dest="model_dir", required=True)
    p.add_argument("--n-patches", type=int, default=128)
    p.add_argument("--exclude-laundered-stage1", action="store_true",
                   help="train stage 1 on real vs fully-synthetic only")

    p = sub.add_parser("score", help="classify one image")
    p.add_argument("--image", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--json", action="store_true")
    p.add_argument("--resample-stage2", action="store_true",
                   help="draw a fresh patch sample for stage 2")

    p = sub.add_parser("eval", help="batch evaluation with report JSON")
    p.add_argument("--manifest", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--postproc", default="",
                   help="comma-separated ops, e.g. jpeg70,resize0.5")
    p.add_argument("--n-patches", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--skip-errors", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--resample-stage2", action="store_true",
                   help="draw a fresh patch sample for stage 2")

    return parser


def _cmd_gen_fixtures(args):
    cfg = FixtureConfig(count_per_class=args.count, size=args.size, seed=args.seed)
    manifest = write_fixture_tree(cfg, args.out)
    print(manifest)
    return EXIT_OK


def _cmd_launder(args):
    img = load_image(args.in_path)
    save_image(launder_proxy(img, factor=args.factor), args.out)
    return EXIT_OK


def _cmd_postproc(args):
    img = load_image(args.in_path)
    save_image(apply_postproc(img, parse_postproc(args.op)), args.out)
    return EXIT_OK


def _cmd_spectrum(args):
    manifest = load_manifest(args.manifest)
    label = ClassLabel.parse(args.class_label)
    entries = manifest.by_label(label)
    if not entries:
        raise DataError(f"no entries with label {label.value!r}")
    residuals = (
        extract_residual(load_image(manifest.resolve(e))) for e in entries
    )
    spec = average_spectrum(residuals)
    report = detect_peaks(spec, factor=args.factor)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    png_path = Path(str(prefix) + ".png")
    Image.fromarray(render_spectrum(spec), mode="L").save(png_path, format="PNG")
    sidecar = {
        "width": spec.width,
        "height": spec.height,
        "count": spec.count,
        "factor": report.factor,
        "peak_strength": report.peak_strength,
    }
    Path(str(prefix) + ".json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(png_path)
    return EXIT_OK


def _cmd_calibrate(args):
    manifest = load_manifest(args.manifest)
    detector = TwoStageDetector(
        n_patches=args.n_patches,
        stage1_exclude_laundered=args.exclude_laundered_stage1,
    )
    calibrate_pipeline(manifest, detector)
    save_models(detector, args.model_dir)
    print(args.model_dir)
    return EXIT_OK


def _cmd_score(args):
    detector = load_models(args.models)
    if args.resample_stage2:
        detector.resample_stage2 = True
    result = detector.classify(load_image(args.image))
    if args.json:
        print(json.dumps(result.to_dict(), sort_keys=True))
    else:
        print(f"label: {result.label.value}")
        print(f"s1: {result.s1:.6f}")
        if result.s2 is not None:
            print(f"s2: {result.s2:.6f}")
    return EXIT_OK


def _cmd_eval(args):
    manifest = load_manifest(args.manifest)
    detector = load_models(args.models)
    if args.n_patches is not None:
        detector.n_patches = args.n_patches
    if args.seed is not None:
        detector.seed = args.seed
    if args.resample_stage2:
        detector.resample_stage2 = True
    ops = [parse_postproc(tok) for tok in args.postproc.split(",") if tok.strip()]
    started = time.monotonic()
    report = run_eval(
        manifest,
        detector,
        postproc_ops=ops,
        skip_errors=args.skip_errors,
        workers=args.workers,
        config_extra={"manifest": args.manifest, "models": args.models},
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json(), encoding="utf-8")
    elapsed = time.monotonic() - started
    print(f"report written to {out} ({elapsed:.1f}s)", file=sys.stderr)
    return EXIT_OK


_COMMANDS = {
    "gen-fixtures": _cmd_gen_fixtures,
    "launder": _cmd_launder,
    "postproc": _cmd_postproc,
    "spectrum": _cmd_spectrum,
    "calibrate": _cmd_calibrate,
    "score": _cmd_score,
    "eval": _cmd_eval,
}


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ScorerProtocolError as exc:
        print(f"launderkit: scorer error: {exc}", file=sys.stderr)
        return EXIT_SCORER
    except (DataError, ValueError) as exc:
        print(f"launderkit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except LaunderKitError as exc:
        print(f"launderkit: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
