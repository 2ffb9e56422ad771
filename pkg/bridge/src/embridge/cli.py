"""Command line entry point for batch embedding extraction."""

from __future__ import annotations

import argparse
import logging
import sys

from .backends import resolve_backend
from .extract import SidecarError, extract


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="embridge",
        description="Embed a directory of audio files into manifest + embedding files.",
    )
    parser.add_argument("--audio-dir", required=True)
    parser.add_argument("--sidecar", required=True, help="CSV: filename,speaker_id,task")
    parser.add_argument("--out", required=True)
    parser.add_argument("--backend", choices=("auto", "ecapa", "spectral"), default="auto")
    parser.add_argument("--model-source", default=None,
                        help="local directory (or hub id) of the pretrained network")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        backend = resolve_backend(args.backend, args.model_source)
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        report = extract(args.audio_dir, args.sidecar, args.out, backend)
    except (SidecarError, FileNotFoundError, NotADirectoryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(
        f"{len(report.items)} recordings embedded (dim {report.dim}, "
        f"backend {backend.name}); {len(report.skipped)} skipped; "
        f"outputs in {report.manifest_path.parent}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
