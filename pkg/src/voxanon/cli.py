"""Command-line front end.

Exit codes: 0 success, 2 validation error, 3 partial failure (some
utterances failed, batch completed), 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .anonymizers import METHODS, AnonymizerConfig, config_from_values, load_config_file
from .errors import ValidationError, VoxanonError
from .metrics import correlate_table, load_system_metrics
from .pipeline import run_anonymize, run_embed, run_evaluate
from .report import base_report, write_report

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PARTIAL = 3
EXIT_IO = 4

SA_METRICS = ["EER", "WER", "GVD", "UTMOS", "SA-NAT", "SA-SIM"]
TTS_METRICS = ["TTS-NAT", "TTS-SIM"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxanon", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    anon = sub.add_parser("anonymize", help="anonymize a dataset manifest")
    anon.add_argument("--manifest", required=True)
    anon.add_argument("--root", default=None, help="audio root (default: manifest directory)")
    anon.add_argument("--out", required=True, help="output directory")
    anon.add_argument("--method", choices=METHODS, default=None)
    anon.add_argument("--seed", type=int, default=None)
    anon.add_argument("--workers", type=int, default=1)
    anon.add_argument("--pool", default=None, help="speaker pool (SAEB or CSV) for embedding methods")
    anon.add_argument("--emb", default=None, help="source utterance embeddings (SAEB) for embedding methods")
    anon.add_argument("--config", default=None, help="key = value config file; explicit flags win")
    anon.add_argument("--report", default=None, help="report path (default <out>/report.json)")

    embed = sub.add_parser("embed", help="extract baseline embeddings to a SAEB file")
    embed.add_argument("--manifest", required=True)
    embed.add_argument("--root", default=None)
    embed.add_argument("--out", required=True, help="output SAEB path")
    embed.add_argument("--report", default=None)

    ev = sub.add_parser("evaluate", help="EER/GVD evaluation of an original/anonymized pair")
    ev.add_argument("--manifest", required=True, help="original manifest")
    ev.add_argument("--root", default=None)
    ev.add_argument("--anon-manifest", required=True)
    ev.add_argument("--anon-root", default=None)
    ev.add_argument("--out", required=True, help="report JSON path")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--trials", default=None, help="trials CSV (default: auto-generated)")
    ev.add_argument(
        "--scores",
        action="append",
        default=[],
        metavar="PATH:SCHEMA",
        help="external scores CSV with schema per_system or per_utterance (repeatable)",
    )
    ev.add_argument("--emb-original", default=None, help="SAEB embeddings for the original side")
    ev.add_argument("--emb-anon", default=None, help="SAEB embeddings for the anonymized side")

    corr = sub.add_parser("correlate", help="cross-metric correlation analysis")
    corr.add_argument("--scores", required=True, help="per-system metrics CSV")
    corr.add_argument("--out", required=True, help="output directory")
    corr.add_argument(
        "--pairs",
        default=None,
        help="comma-separated X:Y column pairs (default: all SA x TTS pairs)",
    )
    corr.add_argument("--emit-scatter", action="store_true")
    return parser


def _anonymizer_config(args) -> AnonymizerConfig:
    values = load_config_file(args.config) if args.config else {}
    if args.method is not None:
        values["method"] = args.method
    if args.seed is not None:
        values["seed"] = args.seed
    if "method" not in values:
        raise ValidationError("no method given (use --method or a config file)")
    return config_from_values(values)


def _cmd_anonymize(args) -> int:
    cfg = _anonymizer_config(args)
    report, code = run_anonymize(
        args.manifest,
        args.root,
        args.out,
        cfg,
        workers=args.workers,
        pool_path=args.pool,
        emb_path=args.emb,
    )
    write_report(report, args.report or (Path(args.out) / "report.json"))
    return code


def _cmd_embed(args) -> int:
    report, code = run_embed(args.manifest, args.root, args.out)
    if args.report:
        write_report(report, args.report)
    return code


def _parse_score_files(specs: list[str]) -> list[tuple[str, str]]:
    out = []
    for spec in specs:
        path, sep, schema = spec.rpartition(":")
        if not sep or schema not in ("per_system", "per_utterance"):
            raise ValidationError(f"--scores expects PATH:per_system or PATH:per_utterance, got '{spec}'")
        out.append((path, schema))
    return out


def _cmd_evaluate(args) -> int:
    _report, code = run_evaluate(
        args.manifest,
        args.root,
        args.anon_manifest,
        args.anon_root,
        args.out,
        seed=args.seed,
        trials_path=args.trials,
        score_files=_parse_score_files(args.scores),
        emb_original=args.emb_original,
        emb_anon=args.emb_anon,
    )
    return code


def _parse_pairs(spec: str | None) -> list[tuple[str, str]]:
    if spec is None:
        return [(sa, tts) for sa in SA_METRICS for tts in TTS_METRICS]
    pairs = []
    for chunk in spec.split(","):
        x, sep, y = chunk.partition(":")
        if not sep:
            raise ValidationError(f"--pairs expects X:Y entries, got '{chunk}'")
        pairs.append((x.strip(), y.strip()))
    return pairs


def _scatter_filename(x_col: str, y_col: str) -> str:
    safe = lambda s: "".join(c if c.isalnum() else "_" for c in s)
    return f"scatter_{safe(x_col)}__{safe(y_col)}.csv"


def _cmd_correlate(args) -> int:
    table = load_system_metrics(args.scores)
    pairs = _parse_pairs(args.pairs)
    coefficients, scatter = correlate_table(table, pairs)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = base_report("correlate", 0, {"scores": str(args.scores)})
    report["correlations"] = {f"{x}:{y}": v for (x, y), v in coefficients.items()}
    report["n_systems"] = len(table.rows)
    write_report(report, out_dir / "correlations.json")

    if args.emit_scatter:
        for (x_col, y_col), rows in scatter.items():
            with open(out_dir / _scatter_filename(x_col, y_col), "w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f)
                writer.writerow(["system", x_col, y_col])
                writer.writerows(rows)
    return EXIT_OK


_HANDLERS = {
    "anonymize": _cmd_anonymize,
    "embed": _cmd_embed,
    "evaluate": _cmd_evaluate,
    "correlate": _cmd_correlate,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except VoxanonError as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
