"""Privacy, distinctiveness and correlation metrics.

EER here is scored with plain cosine over embeddings, not a trained
verification model, so absolute values are not comparable to published
system evaluations; the harness asserts metric behavior (directions,
properties), and ingests externally computed scores for everything that
needs a neural model.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .embeddings import UtteranceEmbeddingSet, cosine_similarity
from .errors import (
    SchemaError,
    UndefinedBaselineError,
    UndefinedCorrelationError,
    ValidationError,
)

log = logging.getLogger(__name__)

NEG_INF = float("-inf")


@dataclass
class TrialList:
    trials: list[tuple[str, str, bool]]  # (enroll_utt, test_utt, is_mated)

    def __post_init__(self):
        if not any(m for _, _, m in self.trials) or not any(not m for _, _, m in self.trials):
            raise ValidationError("need at least one mated and one non-mated trial")

    def __len__(self) -> int:
        return len(self.trials)


@dataclass
class ScoreSet:
    mated: np.ndarray
    nonmated: np.ndarray

    def __post_init__(self):
        self.mated = np.asarray(self.mated, dtype=np.float64).reshape(-1)
        self.nonmated = np.asarray(self.nonmated, dtype=np.float64).reshape(-1)
        if len(self.mated) == 0 or len(self.nonmated) == 0:
            raise ValidationError("both score buckets must be non-empty")


@dataclass
class SimilarityMatrix:
    speaker_ids: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        n = len(self.speaker_ids)
        if self.values.shape != (n, n):
            raise ValidationError("similarity matrix shape must match the speaker list")


@dataclass
class SystemMetricsTable:
    rows: list[tuple[str, dict[str, float]]]  # (system, {metric: value})

    def columns(self) -> list[str]:
        seen: dict[str, None] = {}
        for _, metrics in self.rows:
            for col in metrics:
                seen.setdefault(col, None)
        return list(seen)

    def column_pairs(self, x_col: str, y_col: str) -> list[tuple[str, float, float]]:
        """(system, x, y) for rows where both cells exist and are finite."""
        out = []
        for system, metrics in self.rows:
            if x_col not in metrics or y_col not in metrics:
                continue
            x, y = metrics[x_col], metrics[y_col]
            if not (math.isfinite(x) and math.isfinite(y)):
                log.warning("skipping non-finite cell for system '%s' in (%s, %s)", system, x_col, y_col)
                continue
            out.append((system, x, y))
        return out


# ---------------------------------------------------------------------------
# trial scoring and EER


def score_trials(
    trials: TrialList,
    embeddings: UtteranceEmbeddingSet,
    test_embeddings: UtteranceEmbeddingSet | None = None,
) -> ScoreSet:
    """Cosine score per trial, split into mated / non-mated buckets.

    Enrollment utterances are looked up in ``embeddings``; test
    utterances in ``test_embeddings`` when given (the anonymized side of
    a privacy evaluation), else in the same set.
    """
    enroll_map = embeddings.by_utt()
    test_map = (test_embeddings or embeddings).by_utt()
    mated, nonmated = [], []
    for enroll_utt, test_utt, is_mated in trials.trials:
        if enroll_utt not in enroll_map:
            raise ValidationError(f"trial references unknown enrollment utterance '{enroll_utt}'")
        if test_utt not in test_map:
            raise ValidationError(f"trial references unknown test utterance '{test_utt}'")
        score = cosine_similarity(enroll_map[enroll_utt], test_map[test_utt])
        (mated if is_mated else nonmated).append(score)
    return ScoreSet(mated=np.array(mated), nonmated=np.array(nonmated))


def compute_eer(scores: ScoreSet) -> float:
    """Equal error rate as a fraction.

    Threshold sweep over the distinct scores with FRR(t) = P(mated < t)
    and FAR(t) = P(nonmated >= t); the crossing is linearly interpolated
    between the two bracketing operating points.
    """
    mated = np.sort(scores.mated)
    nonmated = np.sort(scores.nonmated)
    thresholds = np.unique(np.concatenate([mated, nonmated]))

    frr = np.searchsorted(mated, thresholds, side="left") / len(mated)
    far = (len(nonmated) - np.searchsorted(nonmated, thresholds, side="left")) / len(nonmated)
    # sentinel above every score: FRR 1, FAR 0 (guarantees a crossing)
    frr = np.append(frr, 1.0)
    far = np.append(far, 0.0)

    diff = frr - far
    i = int(np.argmax(diff >= 0))
    if diff[i] == 0:
        return float(frr[i])
    j = i - 1  # diff[0] is always <= 0, and 0 was handled above
    denom = (frr[i] - frr[j]) - (far[i] - far[j])
    lam = (far[j] - frr[j]) / denom
    return float(frr[j] + lam * (frr[i] - frr[j]))


# ---------------------------------------------------------------------------
# voice distinctiveness


def build_similarity_matrix(embeddings: UtteranceEmbeddingSet) -> SimilarityMatrix:
    """Mean pairwise cosine between speakers' utterance embeddings.

    Diagonal entries exclude an utterance paired with itself; every
    speaker therefore needs at least two utterances.
    """
    speakers = embeddings.speakers()
    if len(speakers) < 2:
        raise ValidationError("similarity matrix needs at least 2 speakers")
    grouped: dict[str, list[np.ndarray]] = {s: [] for s in speakers}
    for _, spk, e in embeddings.items:
        grouped[spk].append(e.unit())
    for spk, vecs in grouped.items():
        if len(vecs) < 2:
            raise ValidationError(f"speaker '{spk}' has a single utterance; diagonal is undefined")

    units = {s: np.stack(v) for s, v in grouped.items()}
    n = len(speakers)
    values = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            block = units[speakers[i]] @ units[speakers[j]].T
            if i == j:
                k = block.shape[0]
                mean = (block.sum() - np.trace(block)) / (k * (k - 1))
            else:
                mean = block.mean()
            values[i, j] = values[j, i] = mean
    return SimilarityMatrix(speaker_ids=list(speakers), values=values)


def diagonal_dominance(matrix: SimilarityMatrix) -> float:
    """|mean(diagonal) - mean(off-diagonal)|; zero when voices collapse."""
    n = len(matrix.speaker_ids)
    if n < 2:
        raise ValidationError("diagonal dominance needs at least 2 speakers")
    diag = np.trace(matrix.values) / n
    off = (matrix.values.sum() - np.trace(matrix.values)) / (n * (n - 1))
    return float(abs(diag - off))


def compute_gvd(original: SimilarityMatrix, anonymized: SimilarityMatrix) -> float:
    """Distinctiveness gain in dB; -inf when the anonymized voices collapse."""
    if original.speaker_ids != anonymized.speaker_ids:
        raise ValidationError("speaker sets (and order) must match to compare matrices")
    base = diagonal_dominance(original)
    if base == 0.0:
        raise UndefinedBaselineError("original similarity matrix has zero diagonal dominance")
    anon = diagonal_dominance(anonymized)
    if anon == 0.0:
        return NEG_INF
    return float(10.0 * np.log10(anon / base))


# ---------------------------------------------------------------------------
# correlation analysis


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y):
        raise ValidationError("sequences must have equal length")
    if len(x) < 2:
        raise ValidationError("need at least 2 points for a correlation")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(np.sqrt(xc @ xc))
    sy = float(np.sqrt(yc @ yc))
    if sx == 0.0 or sy == 0.0:
        raise UndefinedCorrelationError("correlation of a constant sequence is undefined")
    return float((xc @ yc) / (sx * sy))


def correlate_table(
    table: SystemMetricsTable, pairs: list[tuple[str, str]]
) -> tuple[dict[tuple[str, str], float], dict[tuple[str, str], list[tuple[str, float, float]]]]:
    """Pearson per column pair over pairwise-complete rows.

    Returns (coefficients, scatter data); scatter rows are the
    (system, x, y) triples that fed each coefficient.
    """
    columns = set(table.columns())
    coefficients: dict[tuple[str, str], float] = {}
    scatter: dict[tuple[str, str], list[tuple[str, float, float]]] = {}
    for x_col, y_col in pairs:
        for col in (x_col, y_col):
            if col not in columns:
                raise ValidationError(f"unknown metric column '{col}'")
        rows = table.column_pairs(x_col, y_col)
        if len(rows) < 2:
            raise ValidationError(
                f"pair ({x_col}, {y_col}) has {len(rows)} complete rows; need at least 2"
            )
        coefficients[(x_col, y_col)] = pearson([r[1] for r in rows], [r[2] for r in rows])
        scatter[(x_col, y_col)] = rows
    return coefficients, scatter


# ---------------------------------------------------------------------------
# external score ingestion


def _parse_float(cell: str, path, lineno: int, column: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise ValidationError(f"{path}:{lineno}: non-numeric value '{cell}' in column '{column}'") from None


def load_system_metrics(path) -> SystemMetricsTable:
    """Per-system CSV: header `system,<metric>,...`; empty cell = missing."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = [c.strip() for c in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty metrics file") from None
        if not header or header[0] != "system" or len(header) < 2:
            raise SchemaError(f"{path}: header must be 'system,<metric>,...'")
        metric_cols = header[1:]
        if len(set(metric_cols)) != len(metric_cols):
            raise SchemaError(f"{path}: duplicate metric columns")

        rows: list[tuple[str, dict[str, float]]] = []
        seen: set[str] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}:{lineno}: expected {len(header)} cells")
            system = row[0].strip()
            if system in seen:
                raise ValidationError(f"{path}:{lineno}: duplicate system '{system}'")
            seen.add(system)
            metrics = {}
            for col, cell in zip(metric_cols, row[1:]):
                cell = cell.strip()
                if cell == "":
                    continue
                metrics[col] = _parse_float(cell, path, lineno, col)
            rows.append((system, metrics))
    return SystemMetricsTable(rows=rows)


def load_utterance_scores(path, known_utts: set[str] | None = None) -> dict:
    """Per-utterance CSV `system,utt_id,metric,value` -> nested score map."""
    scores: dict[str, dict[str, dict[str, float]]] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = [c.strip() for c in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty score file") from None
        if header != ["system", "utt_id", "metric", "value"]:
            raise SchemaError(f"{path}: header must be 'system,utt_id,metric,value'")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise ValidationError(f"{path}:{lineno}: expected 4 cells")
            system, utt_id, metric, cell = (c.strip() for c in row)
            if known_utts is not None and utt_id not in known_utts:
                raise ValidationError(f"{path}:{lineno}: unknown utt_id '{utt_id}'")
            value = _parse_float(cell, path, lineno, "value")
            scores.setdefault(system, {}).setdefault(metric, {})[utt_id] = value
    return scores


def aggregate_utterance_scores(scores: dict) -> SystemMetricsTable:
    """Collapse per-utterance scores to per-system means."""
    rows = []
    for system, metrics in scores.items():
        rows.append((system, {m: float(np.mean(list(v.values()))) for m, v in metrics.items()}))
    return SystemMetricsTable(rows=rows)


def ingest_external_scores(path, schema: str, known_utts: set[str] | None = None):
    """Load externally computed scores in either documented CSV schema."""
    if schema == "per_system":
        return load_system_metrics(path)
    if schema == "per_utterance":
        return load_utterance_scores(path, known_utts)
    raise ValidationError(f"unknown score schema '{schema}'")
