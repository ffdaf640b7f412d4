"""One command per export kind; flags: --images, --model, --out, --resize."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import export, models


def _parser(kind: str, out_help: str) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=f"underloc-export-{kind}",
        description=f"Export {kind} into the engine interchange format",
    )
    parser.add_argument("--images", required=True, help="directory of input images")
    parser.add_argument("--model", default=models.DEFAULTS[kind],
                        help=f"backend (available: {', '.join(models.available(kind))})")
    parser.add_argument("--out", required=True, help=out_help)
    parser.add_argument("--resize", action="store_true",
                        help="fit images within 640x480 before inference")
    return parser


def _run(kind: str, runner, args, pairs=None) -> int:
    try:
        job = export.ExportJob(
            image_dir=Path(args.images),
            model=args.model,
            output=Path(args.out),
            resize=args.resize,
            pairs=pairs,
        )
        output = runner(job)
    except (OSError, ValueError, KeyError, models.ModelUnavailableError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"{kind} export -> {output}")
    return 0


def main_global(argv=None) -> int:
    args = _parser("global-descriptor", "output descriptor file (ULD1)").parse_args(argv)
    return _run("global-descriptor", export.export_global, args)


def main_local(argv=None) -> int:
    args = _parser("local-features", "output keypoint file (ULK1)").parse_args(argv)
    return _run("local-features", export.export_local, args)


def main_correspondences(argv=None) -> int:
    parser = _parser("correspondences", "output correspondence file (ULC1)")
    parser.add_argument("--pairs", default=None,
                        help="file of 'query_id,database_id' lines; default: consecutive images")
    args = parser.parse_args(argv)
    pairs = None
    if args.pairs is not None:
        try:
            pairs = []
            for line in Path(args.pairs).read_text(encoding="utf-8").splitlines():
                if line.strip():
                    query_id, database_id = (part.strip() for part in line.split(",", 1))
                    pairs.append((query_id, database_id))
        except (OSError, ValueError) as exc:
            print(f"error: bad --pairs file: {exc}", file=sys.stderr)
            return 1
    return _run("correspondences", export.export_correspondences, args, pairs=pairs)


def main_masks(argv=None) -> int:
    args = _parser("masks", "output directory for per-image PGMs").parse_args(argv)
    return _run("masks", export.export_masks, args)
