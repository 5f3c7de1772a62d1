"""Command-line interface.

Subcommands::

    gravicell run        --input DIR --output DIR [--config PATH]
                         [--threads N] [--overlay]
    gravicell synth      --output DIR [--seed N] [--frames N] [--size N]
                         [--blobs N] [--noise SIGMA] [--mitosis-frame N]
                         [--mitosis-parent L]
    gravicell eval       --input PRED_DIR --gt GT_DIR
    gravicell dump-field --input DIR --output DIR [--config PATH]
    gravicell version

Exit codes: 0 success, 1 usage or configuration error, 2 unusable input
data, 3 internal failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import PipelineConfig, load_config
from .errors import ConfigError, DataError, GravicellError, ParameterError
from .evaluate import evaluate_sequences, read_track_file
from .imaging import load_labels
from .pipeline import dump_field, run_pipeline
from .synth import SynthSpec, generate, write_sequence

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

log = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gravicell",
        description="Force-field cell detection, segmentation and tracking.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="process a frame directory end to end")
    p_run.add_argument("--config", help="pipeline config file (defaults if omitted)")
    p_run.add_argument("--input", required=True, help="directory of frames")
    p_run.add_argument("--output", required=True, help="output directory")
    p_run.add_argument("--threads", type=int, default=1, help="frame-level workers")
    p_run.add_argument(
        "--overlay", action="store_true", help="also write contour overlay PNGs"
    )

    p_synth = sub.add_parser("synth", help="generate a synthetic test sequence")
    p_synth.add_argument("--output", required=True, help="output directory")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--frames", type=int, default=20)
    p_synth.add_argument("--size", type=int, default=256, help="frame side length")
    p_synth.add_argument("--blobs", type=int, default=10)
    p_synth.add_argument("--noise", type=float, default=0.05, help="noise sigma")
    p_synth.add_argument(
        "--mitosis-frame", type=int, default=-1, help="-1 disables the division event"
    )
    p_synth.add_argument("--mitosis-parent", type=int, default=1)

    p_eval = sub.add_parser("eval", help="score predictions against ground truth")
    p_eval.add_argument(
        "--input", required=True, help="predictions: maskNNN.tif + res_track.txt"
    )
    p_eval.add_argument(
        "--gt", required=True, help="ground truth: gt_maskNNN.tif + gt_track.txt"
    )

    p_dump = sub.add_parser(
        "dump-field", help="write potential/force/basin debug TIFFs"
    )
    p_dump.add_argument("--config", help="pipeline config file (defaults if omitted)")
    p_dump.add_argument("--input", required=True, help="directory of frames")
    p_dump.add_argument("--output", required=True, help="output directory")

    sub.add_parser("version", help="print the package version")
    return parser


def _load_cfg(path: str | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig().validate()
    return load_config(path)


def _load_result_dir(directory: str, mask_glob: str, track_name: str):
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"not a directory: {directory}")
    mask_paths = sorted(d.glob(mask_glob))
    if not mask_paths:
        raise DataError(f"no {mask_glob} files in {directory}")
    track_path = d / track_name
    if not track_path.is_file():
        raise DataError(f"missing {track_name} in {directory}")
    masks = [load_labels(p) for p in mask_paths]
    return masks, read_track_file(str(track_path))


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args.config)
    if args.threads < 1:
        raise ConfigError(f"--threads must be >= 1, got {args.threads}")
    report = run_pipeline(
        args.input, args.output, cfg, threads=args.threads, overlay=args.overlay
    )
    print(f"processed {args.input} -> {args.output}")
    print(f"instances: {report.n_pred}")
    for stage, seconds in sorted(report.timings.items()):
        print(f"  {stage:<24s} {seconds:8.2f} s")
    return EXIT_OK


def _cmd_synth(args: argparse.Namespace) -> int:
    spec = SynthSpec(
        frame_count=args.frames,
        height=args.size,
        width=args.size,
        blob_count=args.blobs,
        noise_sigma=args.noise,
        mitosis_frame=args.mitosis_frame,
        mitosis_parent=args.mitosis_parent,
        seed=args.seed,
    )
    result = generate(spec)
    write_sequence(result, args.output)
    n_tracks = len(result.tracks)
    print(f"wrote {len(result.frames)} frames, {n_tracks} tracks -> {args.output}")
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    pred_masks, pred_tracks = _load_result_dir(args.input, "mask[0-9]*.tif", "res_track.txt")
    gt_masks, gt_tracks = _load_result_dir(args.gt, "gt_mask[0-9]*.tif", "gt_track.txt")
    report = evaluate_sequences(pred_masks, pred_tracks, gt_masks, gt_tracks)
    print(f"precision {report.precision:.4f}")
    print(f"recall    {report.recall:.4f}")
    print(f"f1        {report.f1:.4f}")
    print(f"purity    {report.purity:.4f}")
    print(f"switches  {report.switches}")
    print(f"mitosis   {report.mitosis_detected}/{report.mitosis_expected}")
    if report.degenerate_precision:
        print("note: no predictions; precision is 1.0 by convention")
    return EXIT_OK


def _cmd_dump_field(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args.config)
    dump_field(args.input, args.output, cfg)
    print(f"wrote field dumps -> {args.output}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help, 2 for usage errors; fold the
        # latter into this tool's usage-error code.
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "dump-field":
            return _cmd_dump_field(args)
        if args.command == "version":
            from . import __version__

            print(f"gravicell {__version__}")
            return EXIT_OK
        parser.error(f"unknown command {args.command!r}")
        return EXIT_USAGE
    except (ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except GravicellError as exc:
        print(f"internal failure: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # pragma: no cover - last-resort guard
        log.exception("unhandled failure")
        print(f"internal failure: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
