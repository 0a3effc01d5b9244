"""Adapter command line: export embeddings or scores for a manifest."""

from __future__ import annotations

import argparse
import json
import sys

from . import AdapterError
from .jobs import AdapterJob, export_embeddings, export_scores


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxanon-adapter", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    emb = sub.add_parser("export-embeddings", help="write a SAEB embedding file")
    emb.add_argument("--manifest", required=True)
    emb.add_argument("--root", default=None)
    emb.add_argument("--extractor", default="spectral-stats")
    emb.add_argument("--out", required=True)
    emb.add_argument("--batch-size", type=int, default=16)

    sc = sub.add_parser("export-scores", help="write a per-utterance scores CSV")
    sc.add_argument("--manifest", required=True)
    sc.add_argument("--root", default=None)
    sc.add_argument("--scorer", default="spectral-flatness")
    sc.add_argument("--metric", required=True, help="metric column label, e.g. utmos or wer")
    sc.add_argument("--system", default=None, help="system column label (default: scorer id)")
    sc.add_argument("--out", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export-embeddings":
            job = AdapterJob(args.manifest, args.extractor, args.out, args.batch_size, args.root)
            report = export_embeddings(job)
        else:
            job = AdapterJob(args.manifest, args.scorer, args.out, root=args.root)
            report = export_scores(job, metric=args.metric, system=args.system)
    except (AdapterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(report, sort_keys=True, indent=2))
    return 3 if report["failures"] else 0


if __name__ == "__main__":
    sys.exit(main())
