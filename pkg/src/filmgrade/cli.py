"""Command-line front end.

Subcommands: decompose, reconstruct, apply-lut, fit-lut, stylize,
init-weights, metrics, gradcheck. Exit codes: 0 success, 1 usage error,
2 data or format error.
"""

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .errors import FilmgradeError
from .fit import FitConfig, fit_lut, grad_check, write_trace_csv
from .image_core import ImagePlane, load_png, save_png
from .lut import apply_lut, read_cube, write_cube
from .metrics import compute_metrics
from .pipeline import (
    FilmPipelineConfig,
    identity_weights,
    init_weights,
    load_weights,
    save_weights,
    stylize,
)
from .pyramid import PyramidDecomposition, decompose, reconstruct

METRIC_COLUMNS = ("psnr", "ssim_global", "ssim_windowed", "delta_e_mean", "delta_e_p95")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; this tool reserves 2 for
    # data errors, so route usage problems through our own exception
    def error(self, message):
        raise UsageError(message)


def _thread_cap() -> int:
    """Validate FILMGRADE_THREADS. The engine is sequential, so the cap is
    acknowledged but never changes results."""
    raw = os.environ.get("FILMGRADE_THREADS")
    if raw is None:
        return 1
    try:
        cap = int(raw)
    except ValueError:
        raise UsageError(f"FILMGRADE_THREADS must be an integer, got {raw!r}")
    if cap < 1:
        raise UsageError(f"FILMGRADE_THREADS must be >= 1, got {cap}")
    return cap


def _encode_band(band: ImagePlane) -> ImagePlane:
    return ImagePlane.from_array((band.data + 1.0) / 2.0)


def _decode_band(encoded: ImagePlane) -> ImagePlane:
    return ImagePlane.from_array(encoded.data * 2.0 - 1.0)


def cmd_decompose(args) -> int:
    img = load_png(args.image)
    factor = 1 << args.depth
    if args.crop:
        h = img.height - img.height % factor
        w = img.width - img.width % factor
        if h == 0 or w == 0:
            raise FilmgradeError(
                f"image {img.height}x{img.width} too small for depth {args.depth}"
            )
        if (h, w) != (img.height, img.width):
            img = ImagePlane.from_array(img.data[:h, :w])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    pyr = decompose(img, args.depth)
    for i, level in enumerate(pyr.levels):
        save_png(_encode_band(level), out_dir / f"level_{i}.png")
    save_png(pyr.base, out_dir / "base.png")
    return 0


def cmd_reconstruct(args) -> int:
    src = Path(args.directory)
    base_path = src / "base.png"
    if not base_path.exists():
        raise FilmgradeError(f"no base.png in {src}")
    level_paths = sorted(src.glob("level_*.png"))
    indices = sorted(int(p.stem.split("_")[1]) for p in level_paths)
    if not level_paths or indices != list(range(len(level_paths))):
        raise FilmgradeError(f"expected consecutive level_<i>.png files in {src}")
    levels = tuple(
        _decode_band(load_png(src / f"level_{i}.png")) for i in range(len(level_paths))
    )
    img = reconstruct(PyramidDecomposition(levels, load_png(base_path)))
    save_png(img, args.out)
    return 0


def cmd_apply_lut(args) -> int:
    lut = read_cube(args.lut)
    out = apply_lut(lut, load_png(args.image))
    save_png(
        ImagePlane.from_array(np.clip(out.data, 0.0, 1.0)),
        args.out_image,
        bitdepth=args.bitdepth,
    )
    return 0


def _collect_pairs(directory):
    src = Path(directory)
    if not src.is_dir():
        raise FilmgradeError(f"pairs directory {src} does not exist")
    pairs = []
    for input_path in sorted(src.glob("*.input.png")):
        target_path = input_path.with_name(
            input_path.name.replace(".input.png", ".target.png")
        )
        if not target_path.exists():
            raise FilmgradeError(f"{input_path.name} has no matching target")
        pairs.append((load_png(input_path), load_png(target_path)))
    if not pairs:
        raise FilmgradeError(f"no *.input.png files in {src}")
    return pairs


def cmd_fit_lut(args) -> int:
    try:
        cfg = FitConfig(
            iterations=args.iters,
            step_size=args.lr,
            bins=args.bins,
            smoothness_weight=args.smoothness,
            seed=args.seed,
            holdout_fraction=args.holdout,
            optimizer=args.optimizer,
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    pairs = _collect_pairs(args.pairs)
    lut, trace = fit_lut(pairs, cfg)
    write_cube(lut, args.out, title="filmgrade fitted LUT")
    if args.trace:
        write_trace_csv(trace, args.trace)
        from .report import render_trace_figure

        render_trace_figure(trace, Path(args.trace).with_suffix(".png"))
    last = trace[-1]
    print(
        f"iterations={last.iteration} total={last.total:.6g} "
        f"mse={last.mse:.6g} ssim={last.ssim:.6g} holdout_psnr={last.holdout_psnr:.6g}"
    )
    return 0


def cmd_stylize(args) -> int:
    weights = load_weights(args.weights)
    header = weights.header
    if not header:
        raise FilmgradeError("weight container carries no architecture header")
    cfg = FilmPipelineConfig(
        depth=args.depth if args.depth is not None else header.get("depth", 2),
        nsr_input_size=header.get("nsr_input_size", 128),
        lut_bins=header.get("lut_bins", 33),
        basis_count=header.get("basis_count", 3),
        weights_path=str(args.weights),
    )
    out = stylize(load_png(args.image), cfg, weights)
    save_png(out, args.out_image, bitdepth=args.bitdepth)
    return 0


def cmd_init_weights(args) -> int:
    cfg = FilmPipelineConfig(
        depth=args.depth,
        nsr_input_size=args.nsr_size,
        lut_bins=args.bins,
        basis_count=args.basis,
    )
    if args.identity:
        container = identity_weights(cfg, nsr_width=args.width)
    else:
        container = init_weights(cfg, args.seed, nsr_width=args.width)
    save_weights(container, args.out)
    return 0


def _metric_values(report) -> dict:
    values = {}
    for key in METRIC_COLUMNS:
        v = getattr(report, key)
        values[key] = "inf" if math.isinf(v) else v
    return values


def _quantize_codes(img: ImagePlane) -> ImagePlane:
    codes = np.floor(np.clip(img.data, 0.0, 1.0) * 255.0 + 0.5)
    return ImagePlane.from_array(codes)


def cmd_metrics(args) -> int:
    a = load_png(args.image_a)
    b = load_png(args.image_b)
    if args.peak_255:
        report = compute_metrics(_quantize_codes(a), _quantize_codes(b), peak=255.0)
    else:
        report = compute_metrics(a, b)
    values = _metric_values(report)
    if args.csv:
        print(",".join(METRIC_COLUMNS))
        print(",".join(str(values[k]) for k in METRIC_COLUMNS))
    else:
        print(json.dumps(values, indent=2))
    return 0


def cmd_gradcheck(args) -> int:
    report = grad_check(args.target, args.seed, bins=args.bins)
    status = "pass" if report.passed else "FAIL"
    print(
        f"target={report.target} seed={args.seed} bins={args.bins} "
        f"max_rel_error={report.max_rel_error:.3e} {status}"
    )
    return 0 if report.passed else 2


def build_parser() -> _Parser:
    parser = _Parser(prog="filmgrade", description="Film-look grading toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "decompose",
        help="split an image into detail bands plus a base plane",
        description="Writes level_<i>.png detail bands and base.png into --out. "
        "Band values lie in [-1,1] and are stored offset-encoded as (v+1)/2 "
        "in 16-bit PNGs; reconstruct reverses the encoding.",
    )
    p.add_argument("image")
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--crop",
        action="store_true",
        help="crop to the largest size divisible by 2^depth instead of failing",
    )
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("reconstruct", help="rebuild an image from a decompose directory")
    p.add_argument("directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("apply-lut", help="grade an image through a .cube 3D LUT")
    p.add_argument("image")
    p.add_argument("out_image")
    p.add_argument("--lut", required=True)
    p.add_argument("--bitdepth", type=int, choices=(8, 16), default=16)
    p.set_defaults(func=cmd_apply_lut)

    p = sub.add_parser(
        "fit-lut",
        help="fit a 3D LUT to image pairs",
        description="Pairs directory convention: name.input.png / name.target.png. "
        "With --trace, a CSV is written and a figure is rendered next to it "
        "(same name, .png suffix).",
    )
    p.add_argument("--pairs", required=True)
    p.add_argument("--bins", type=int, default=33)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--smoothness", type=float, default=1e-4)
    p.add_argument("--holdout", type=float, default=0.0)
    p.add_argument("--optimizer", choices=("adam", "gd"), default="adam")
    p.add_argument("--out", required=True)
    p.add_argument("--trace")
    p.set_defaults(func=cmd_fit_lut)

    p = sub.add_parser("stylize", help="run the full stylization pipeline")
    p.add_argument("image")
    p.add_argument("out_image")
    p.add_argument("--weights", required=True)
    p.add_argument(
        "--depth",
        type=int,
        default=None,
        help="pyramid depth; must match the weight container header",
    )
    p.add_argument("--bitdepth", type=int, choices=(8, 16), default=16)
    p.set_defaults(func=cmd_stylize)

    p = sub.add_parser("init-weights", help="write a seeded weight container")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--nsr-size", type=int, default=128)
    p.add_argument("--bins", type=int, default=33)
    p.add_argument("--basis", type=int, default=3)
    p.add_argument("--width", type=int, default=16)
    p.add_argument(
        "--identity",
        action="store_true",
        help="write the identity configuration instead of a seeded one",
    )
    p.set_defaults(func=cmd_init_weights)

    p = sub.add_parser("metrics", help="compare two images")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.add_argument("--csv", action="store_true", help="one CSV line instead of JSON")
    p.add_argument(
        "--peak-255",
        action="store_true",
        help="quantize to 8-bit codes and report with the 255 peak convention",
    )
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("gradcheck", help="verify analytic gradients")
    p.add_argument("--target", choices=("lut_lattice", "combine_weights"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bins", type=int, default=5)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        _thread_cap()
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (FilmgradeError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
