"""``viz`` entry point: render all figures for one exported run."""

from __future__ import annotations

import argparse
import sys

from .artifacts import ArtifactError, load_run
from .plots import render_field_frames, render_layers, render_timeseries_and_safety

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_VALIDATION = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viz",
        description="Render figures from an iupf run directory "
                    "(steps.jsonl, fields_t<k>.csv, safety.json).",
    )
    parser.add_argument("run_dir", help="directory written by `iupf run`")
    parser.add_argument("--out", required=True, help="output directory for PNGs")
    parser.add_argument("--times", type=float, nargs="+", default=[0.0, 7.5],
                        metavar="T", help="times (s) for field frames; each picks "
                                          "the nearest snapshot (default: 0.0 7.5)")
    parser.add_argument("--window", type=int, default=10,
                        help="rolling window (steps) for the safety band (default: 10)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code not in (0, None) else EXIT_OK
    if args.window < 1:
        print("error: --window must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        run = load_run(args.run_dir)
        written = []
        written += render_field_frames(run, args.out, times=args.times)
        written += render_layers(run, args.out)
        written += render_timeseries_and_safety(run, args.out, window=args.window)
    except ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
