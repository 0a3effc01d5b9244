"""Export jobs: manifest in, SAEB or scores CSV out.

A job fails outright only if the backend cannot be loaded; per-utterance
problems are recorded and the job continues with the rest.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backends import resolve_extractor, resolve_scorer
from .formats import read_manifest, write_saeb, write_scores_csv


@dataclass
class AdapterJob:
    manifest_path: str
    extractor_id: str
    output_path: str
    batch_size: int = 16
    root: str | None = None


def export_embeddings(job: AdapterJob) -> dict:
    """One embedding per utterance into a SAEB file; returns a job report."""
    records = read_manifest(job.manifest_path, job.root)
    extractor = resolve_extractor(job.extractor_id)

    entries: list[tuple[str, np.ndarray]] = []
    failures: list[dict] = []
    dimension: int | None = None
    for start in range(0, len(records), max(1, job.batch_size)):
        for record in records[start : start + max(1, job.batch_size)]:
            try:
                vec = np.asarray(extractor(record.audio_path), dtype=np.float32).reshape(-1)
                if dimension is None:
                    dimension = len(vec)
                elif len(vec) != dimension:
                    raise ValueError(f"dimension {len(vec)} != job dimension {dimension}")
                entries.append((record.utt_id, vec))
            except Exception as exc:  # noqa: BLE001 - backend failures are data, not crashes
                failures.append({"utt_id": record.utt_id, "error": str(exc)})

    write_saeb(entries, job.output_path)
    return {
        "extractor": job.extractor_id,
        "n_exported": len(entries),
        "dimension": dimension or 0,
        "failures": failures,
        "output": str(Path(job.output_path)),
    }


def export_scores(job: AdapterJob, metric: str, system: str | None = None) -> dict:
    """Per-utterance scores CSV in the harness schema; returns a job report."""
    records = read_manifest(job.manifest_path, job.root)
    scorer = resolve_scorer(job.extractor_id)
    system = system or job.extractor_id

    rows: list[tuple[str, str, str, float]] = []
    failures: list[dict] = []
    for record in records:
        try:
            rows.append((system, record.utt_id, metric, float(scorer(record.audio_path))))
        except Exception as exc:  # noqa: BLE001
            failures.append({"utt_id": record.utt_id, "error": str(exc)})

    write_scores_csv(rows, job.output_path)
    return {
        "scorer": job.extractor_id,
        "metric": metric,
        "system": system,
        "n_scored": len(rows),
        "failures": failures,
        "output": str(Path(job.output_path)),
    }
