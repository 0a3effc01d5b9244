"""Batch orchestration: manifest-driven anonymization and evaluation.

Per-utterance failures never abort a batch; they become failure entries
in the report and a nonzero exit at the command layer. Utterances are
independent, so worker count affects nothing but wall time.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .anonymizers import (
    AnonymizerConfig,
    WAVEFORM_METHODS,
    anonymize_embedding_pool,
    anonymize_embedding_sampled,
    anonymize_mcadams,
    anonymize_pitch_shift,
    fit_gaussian_sampler,
)
from .audio_io import (
    AudioBuffer,
    DatasetManifest,
    WORKING_RATE_HZ,
    load_manifest,
    read_wav,
    resample,
    save_manifest,
    write_wav,
)
from .embeddings import (
    EmbeddingPool,
    SpeakerEmbedding,
    UtteranceEmbeddingSet,
    extract_baseline_embedding,
    load_pool,
    save_pool,
    utterance_set_from_pool,
)
from .errors import ValidationError, VoxanonError
from .metrics import (
    TrialList,
    aggregate_utterance_scores,
    build_similarity_matrix,
    compute_eer,
    compute_gvd,
    diagonal_dominance,
    ingest_external_scores,
    score_trials,
)
from .report import base_report
from .seeding import rng_for

log = logging.getLogger(__name__)


def _load_working_audio(path: Path) -> AudioBuffer:
    buf = read_wav(path)
    if buf.sample_rate_hz != WORKING_RATE_HZ:
        buf = resample(buf, WORKING_RATE_HZ)
    return buf


def _anonymize_one(args: tuple) -> dict:
    """Worker body for waveform methods; returns a report entry."""
    utt_id, speaker_id, in_path, out_path, cfg = args
    try:
        buf = _load_working_audio(Path(in_path))
        if cfg.method == "pitch_shift":
            result = anonymize_pitch_shift(buf, cfg, (speaker_id, utt_id))
        else:
            result = anonymize_mcadams(buf, cfg, (speaker_id, utt_id))
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        clipped = write_wav(result.output, out_path)
        diagnostics = dict(result.diagnostics, clipped_samples=clipped)
        return {
            "utt_id": utt_id,
            "speaker_id": speaker_id,
            "ok": True,
            "drawn_params": result.drawn_params,
            "diagnostics": diagnostics,
        }
    except (VoxanonError, OSError) as exc:
        return {"utt_id": utt_id, "speaker_id": speaker_id, "ok": False, "error": str(exc)}


def _check_out_dir(out_dir: Path, root: Path) -> None:
    if out_dir.resolve() == root.resolve():
        raise ValidationError("output directory must differ from the input root")


def run_anonymize(
    manifest_path: str | Path,
    root: str | Path | None,
    out_dir: str | Path,
    cfg: AnonymizerConfig,
    workers: int = 1,
    pool_path: str | Path | None = None,
    emb_path: str | Path | None = None,
) -> tuple[dict, int]:
    """Anonymize every manifest utterance; returns (report, exit_code)."""
    manifest = load_manifest(manifest_path, root)
    out_dir = Path(out_dir)
    _check_out_dir(out_dir, Path(manifest.root_dir))
    out_dir.mkdir(parents=True, exist_ok=True)

    report = base_report("anonymize", cfg.seed, cfg.as_dict())
    if len(manifest) == 0:
        log.warning("manifest is empty; nothing to do")
        report.update({"entries": [], "failures": [], "n_processed": 0})
        return report, 0

    if cfg.method in WAVEFORM_METHODS:
        entries = _run_waveform(manifest, out_dir, cfg, workers)
        anon_records = [
            r for r in manifest.records if any(e["utt_id"] == r.utt_id and e["ok"] for e in entries)
        ]
        save_manifest(DatasetManifest(records=anon_records, root_dir=out_dir), out_dir / "manifest.csv")
    else:
        entries = _run_embedding_method(manifest, out_dir, cfg, pool_path, emb_path)

    entries.sort(key=lambda e: e["utt_id"])
    ok = [e for e in entries if e["ok"]]
    failures = [{k: e[k] for k in ("utt_id", "speaker_id", "error")} for e in entries if not e["ok"]]
    report.update(
        {
            "entries": [
                {k: e[k] for k in ("utt_id", "speaker_id", "drawn_params", "diagnostics")} for e in ok
            ],
            "failures": failures,
            "n_processed": len(ok),
        }
    )
    return report, (3 if failures else 0)


def _run_waveform(manifest: DatasetManifest, out_dir: Path, cfg: AnonymizerConfig, workers: int) -> list[dict]:
    jobs = [
        (r.utt_id, r.speaker_id, str(manifest.resolve(r)), str(out_dir / r.audio_path), cfg)
        for r in manifest.records
    ]
    if workers <= 1:
        return [_anonymize_one(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_anonymize_one, jobs))


def _run_embedding_method(
    manifest: DatasetManifest,
    out_dir: Path,
    cfg: AnonymizerConfig,
    pool_path: str | Path | None,
    emb_path: str | Path | None,
) -> list[dict]:
    if pool_path is None:
        raise ValidationError(f"method '{cfg.method}' requires a speaker pool file (--pool)")
    pool = load_pool(pool_path)
    sampler = fit_gaussian_sampler(pool) if cfg.method == "constrained_sample" else None

    sources: dict[str, SpeakerEmbedding] = {}
    failures: dict[str, str] = {}
    if emb_path is not None:
        provided = dict(load_pool(emb_path).entries)
        for r in manifest.records:
            if r.utt_id in provided:
                sources[r.utt_id] = provided[r.utt_id]
            else:
                failures[r.utt_id] = "no embedding supplied for this utterance"
    else:
        for r in manifest.records:
            try:
                sources[r.utt_id] = extract_baseline_embedding(_load_working_audio(manifest.resolve(r)))
            except (VoxanonError, OSError) as exc:
                failures[r.utt_id] = str(exc)

    entries: list[dict] = []
    out_entries: list[tuple[str, SpeakerEmbedding]] = []
    for r in manifest.records:
        if r.utt_id in failures:
            entries.append(
                {"utt_id": r.utt_id, "speaker_id": r.speaker_id, "ok": False, "error": failures[r.utt_id]}
            )
            continue
        try:
            if cfg.method == "pool_average":
                result = anonymize_embedding_pool(sources[r.utt_id], pool, cfg, (r.speaker_id, r.utt_id))
            else:
                result = anonymize_embedding_sampled(sources[r.utt_id], sampler, cfg, (r.speaker_id, r.utt_id))
            out_entries.append((r.utt_id, result.output))
            entries.append(
                {
                    "utt_id": r.utt_id,
                    "speaker_id": r.speaker_id,
                    "ok": True,
                    "drawn_params": result.drawn_params,
                    "diagnostics": result.diagnostics,
                }
            )
        except VoxanonError as exc:
            entries.append(
                {"utt_id": r.utt_id, "speaker_id": r.speaker_id, "ok": False, "error": str(exc)}
            )
    save_pool(EmbeddingPool(entries=out_entries), out_dir / "embeddings_anon.saeb")
    return entries


def run_embed(manifest_path: str | Path, root: str | Path | None, out_path: str | Path) -> tuple[dict, int]:
    """Extract baseline embeddings for a manifest into a SAEB file."""
    manifest = load_manifest(manifest_path, root)
    entries: list[tuple[str, SpeakerEmbedding]] = []
    failures = []
    for r in manifest.records:
        try:
            entries.append((r.utt_id, extract_baseline_embedding(_load_working_audio(manifest.resolve(r)))))
        except (VoxanonError, OSError) as exc:
            failures.append({"utt_id": r.utt_id, "speaker_id": r.speaker_id, "error": str(exc)})
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_pool(EmbeddingPool(entries=entries), out_path)
    report = base_report("embed", 0, {"manifest": str(manifest_path)})
    report.update({"n_embedded": len(entries), "failures": failures, "dimension": len(entries[0][1].vector) if entries else 0})
    return report, (3 if failures else 0)


def generate_trials(embeddings: UtteranceEmbeddingSet, seed: int) -> TrialList:
    """All same-speaker cross-utterance pairs as mated trials plus an
    equal count of seeded random cross-speaker pairs."""
    by_speaker: dict[str, list[str]] = {}
    for utt, spk, _ in embeddings.items:
        by_speaker.setdefault(spk, []).append(utt)

    mated = []
    for utts in by_speaker.values():
        for i in range(len(utts)):
            for j in range(i + 1, len(utts)):
                mated.append((utts[i], utts[j], True))
    if not mated:
        raise ValidationError("no speaker has two utterances; cannot build mated trials")

    speakers = list(by_speaker)
    if len(speakers) < 2:
        raise ValidationError("need at least two speakers for non-mated trials")
    rng = rng_for(seed, "__trials__", "", "evaluate")
    nonmated = []
    for _ in range(len(mated)):
        a, b = rng.choice(len(speakers), size=2, replace=False)
        utt_a = by_speaker[speakers[a]][rng.integers(len(by_speaker[speakers[a]]))]
        utt_b = by_speaker[speakers[b]][rng.integers(len(by_speaker[speakers[b]]))]
        nonmated.append((utt_a, utt_b, False))
    return TrialList(trials=mated + nonmated)


def load_trials(path: str | Path) -> TrialList:
    import csv

    from .errors import SchemaError

    trials = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = [c.strip() for c in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty trials file") from None
        if header != ["enroll_utt", "test_utt", "label"]:
            raise SchemaError(f"{path}: header must be 'enroll_utt,test_utt,label'")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ValidationError(f"{path}:{lineno}: expected 3 cells")
            enroll, test, label = (c.strip() for c in row)
            if label not in ("mated", "nonmated"):
                raise ValidationError(f"{path}:{lineno}: label must be mated or nonmated")
            trials.append((enroll, test, label == "mated"))
    return TrialList(trials=trials)


def _embedding_set(
    manifest: DatasetManifest, emb_path: str | Path | None
) -> UtteranceEmbeddingSet:
    speaker_of = {r.utt_id: r.speaker_id for r in manifest.records}
    if emb_path is not None:
        return utterance_set_from_pool(load_pool(emb_path), speaker_of)
    items = []
    for r in manifest.records:
        emb = extract_baseline_embedding(_load_working_audio(manifest.resolve(r)))
        items.append((r.utt_id, r.speaker_id, emb))
    return UtteranceEmbeddingSet(items=items)


def run_evaluate(
    manifest_path: str | Path,
    root: str | Path | None,
    anon_manifest_path: str | Path,
    anon_root: str | Path | None,
    out_path: str | Path,
    seed: int = 0,
    trials_path: str | Path | None = None,
    score_files: list[tuple[str, str]] | None = None,
    emb_original: str | Path | None = None,
    emb_anon: str | Path | None = None,
) -> tuple[dict, int]:
    """Privacy (EER) and distinctiveness (GVD) evaluation of a dataset pair.

    Enrollment embeddings always come from the original audio; the
    anonymized side supplies only the test embeddings (the attacker does
    not know the anonymization).
    """
    original = load_manifest(manifest_path, root)
    anonymized = load_manifest(anon_manifest_path, anon_root)

    orig_utts = {r.utt_id for r in original.records}
    anon_utts = {r.utt_id for r in anonymized.records}
    missing = sorted(orig_utts - anon_utts)
    if missing:
        raise ValidationError(f"anonymized manifest is missing counterparts: {missing[:5]}")

    orig_set = _embedding_set(original, emb_original)
    anon_set = _embedding_set(anonymized, emb_anon)

    if trials_path is not None:
        trials = load_trials(trials_path)
    else:
        trials = generate_trials(orig_set, seed)

    eer_original = compute_eer(score_trials(trials, orig_set))
    eer_anonymized = compute_eer(score_trials(trials, orig_set, test_embeddings=anon_set))

    sim_orig = build_similarity_matrix(orig_set)
    sim_anon = build_similarity_matrix(anon_set)
    gvd = compute_gvd(sim_orig, sim_anon)

    report = base_report("evaluate", seed, {"trials": "file" if trials_path else "auto"})
    report.update(
        {
            "n_trials": len(trials),
            "eer_original": eer_original,
            "eer_anonymized": eer_anonymized,
            "gvd_db": gvd,
            "dominance_original": diagonal_dominance(sim_orig),
            "dominance_anonymized": diagonal_dominance(sim_anon),
            "speakers": sim_orig.speaker_ids,
        }
    )

    external = {}
    for path, schema in score_files or []:
        loaded = ingest_external_scores(path, schema, known_utts=orig_utts if schema == "per_utterance" else None)
        if schema == "per_utterance":
            loaded = aggregate_utterance_scores(loaded)
        for system, metrics in loaded.rows:
            external.setdefault(system, {}).update(metrics)
    if external:
        report["external_metrics"] = external

    from .report import write_report

    write_report(report, out_path)
    return report, 0
