"""embexport: encode prompts and image folders into BCAE files."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .encoders import EncoderError
from .jobs import ExportJob, export_text_bank, export_visual_stream


def _read_lines(path: str) -> tuple[str, ...]:
    lines = [line.strip() for line in Path(path).read_text().splitlines()]
    return tuple(line for line in lines if line and not line.startswith("#"))


def cmd_text(args) -> int:
    if args.classes:
        class_names = tuple(name for name in args.classes.split(",") if name)
    elif args.classes_file:
        class_names = _read_lines(args.classes_file)
    else:
        print("error: --classes or --classes-file required", file=sys.stderr)
        return 2
    if args.templates:
        templates = tuple(args.templates)
    elif args.templates_file:
        templates = _read_lines(args.templates_file)
    else:
        templates = ("a photo of a {}",)
    job = ExportJob(
        model=args.model,
        out_path=args.out,
        class_names=class_names,
        templates=templates,
        device=args.device,
        ensemble=args.ensemble,
    )
    out = export_text_bank(job)
    print(f"text_bank={out}")
    print(f"manifest={out}.manifest.json")
    return 0


def cmd_images(args) -> int:
    class_names = (
        tuple(name for name in args.classes.split(",") if name)
        if args.classes
        else ()
    )
    job = ExportJob(
        model=args.model,
        out_path=args.out,
        class_names=class_names,
        dataset_path=args.dataset,
        device=args.device,
        shuffle_seed=args.shuffle_seed,
    )
    out = export_visual_stream(job)
    print(f"stream={out}")
    print(f"manifest={out}.manifest.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embexport",
        description="Encode prompt templates and labeled image folders into BCAE files.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("text", help="encode class prompts into a text bank")
    p.add_argument("--classes", help="comma-separated class names")
    p.add_argument("--classes-file", help="file with one class name per line")
    p.add_argument(
        "--templates",
        action="append",
        help="prompt template with {} placeholder (repeatable)",
    )
    p.add_argument("--templates-file", help="file with one template per line")
    p.add_argument("--model", default="hash:64",
                   help="hash:<dim> | pixels:<dim> | clip:<model-id>")
    p.add_argument("--device", default="cpu")
    p.add_argument("--ensemble", action="store_true",
                   help="average templates per class (M = K) instead of M = c*K")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_text)

    p = sub.add_parser("images", help="encode a labeled image folder into a stream")
    p.add_argument("dataset", help="root directory with one subdirectory per class")
    p.add_argument("--classes", help="explicit class order (default: sorted subdirs)")
    p.add_argument("--model", default="pixels:64")
    p.add_argument("--device", default="cpu")
    p.add_argument("--shuffle-seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_images)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (EncoderError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
