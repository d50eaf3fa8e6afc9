"""Standalone extraction tool: video file in, screening-toolkit inputs out."""

from __future__ import annotations

import argparse
import json
import sys

from .clip import make_clip
from .jobs import ExtractionJob, JobError, cross_check, run_all
from .models import ModelUnavailableError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tvs-extract", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="extract candidates, embeddings, and captions")
    p.add_argument("--video", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--embed-model", default="builtin:colorhist")
    p.add_argument("--caption-model", default="builtin:heuristic")
    p.add_argument("--device", default="cpu")

    p = sub.add_parser("crosscheck", help="validate manifest/embedding/caption alignment")
    p.add_argument("--out", required=True, help="extraction output directory")

    p = sub.add_parser("make-clip", help="write a synthetic test clip")
    p.add_argument("--path", required=True)
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--keyframe-interval", type=float, default=2.0)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "run":
            job = ExtractionJob(
                video_path=args.video,
                out_dir=args.out,
                embed_model=args.embed_model,
                caption_model=args.caption_model,
                device=args.device,
            )
            summary = run_all(job)
            print(json.dumps(summary, indent=2))
            if summary["caption_failures"] or not summary["aligned"]:
                return 2  # partial output
            return 0
        if args.command == "crosscheck":
            job = ExtractionJob(video_path="", out_dir=args.out)
            result = cross_check(job)
            print(json.dumps(result, indent=2))
            return 0 if result["aligned"] else 2
        if args.command == "make-clip":
            print(json.dumps(make_clip(
                args.path, duration=args.duration,
                keyframe_interval=args.keyframe_interval,
            ), indent=2))
            return 0
    except (JobError, ModelUnavailableError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
