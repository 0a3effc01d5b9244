"""Speaker embeddings: data model, pool storage, cosine scoring.

The native baseline extractor (mel-cepstral statistics plus log-f0
statistics, 42 dimensions) exists so the whole pipeline runs without any
neural model. It understates the discrimination of a trained speaker
encoder; externally extracted embeddings can be dropped in through the
same SAEB file format.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct

from .audio_io import AudioBuffer, WORKING_RATE_HZ
from .dsp import frame_matrix, make_window
from .errors import FormatError, UnsupportedFormatError, ValidationError
from .vocoder import estimate_f0

log = logging.getLogger(__name__)

SAEB_MAGIC = b"SAEB"
SAEB_VERSION = 1

N_MEL_FILTERS = 26
N_CEPSTRA = 20
BASELINE_DIM = 2 * N_CEPSTRA + 2
MIN_DURATION_S = 0.5


@dataclass
class SpeakerEmbedding:
    vector: np.ndarray

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if len(self.vector) == 0:
            raise ValidationError("embedding vector must be non-empty")
        self.norm = float(np.linalg.norm(self.vector))
        if self.norm == 0.0:
            raise ValidationError("embedding vector must be nonzero")

    @property
    def dimension(self) -> int:
        return len(self.vector)

    def unit(self) -> np.ndarray:
        return self.vector / self.norm


@dataclass
class EmbeddingPool:
    entries: list[tuple[str, SpeakerEmbedding]]

    def __post_init__(self):
        ids = [pid for pid, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ValidationError("pool ids must be unique")
        dims = {e.dimension for _, e in self.entries}
        if len(dims) > 1:
            raise ValidationError(f"pool mixes embedding dimensions: {sorted(dims)}")

    @property
    def dimension(self) -> int:
        return self.entries[0][1].dimension if self.entries else 0

    def ids(self) -> list[str]:
        return [pid for pid, _ in self.entries]

    def matrix(self) -> np.ndarray:
        return np.stack([e.vector for _, e in self.entries])

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class UtteranceEmbeddingSet:
    items: list[tuple[str, str, SpeakerEmbedding]]  # (utt_id, speaker_id, embedding)

    def __post_init__(self):
        ids = [u for u, _, _ in self.items]
        if len(set(ids)) != len(ids):
            raise ValidationError("utterance ids must be unique")
        dims = {e.dimension for _, _, e in self.items}
        if len(dims) > 1:
            raise ValidationError("utterance embeddings mix dimensions")

    def by_utt(self) -> dict[str, SpeakerEmbedding]:
        return {u: e for u, _, e in self.items}

    def speakers(self) -> list[str]:
        seen: dict[str, None] = {}
        for _, s, _ in self.items:
            seen.setdefault(s, None)
        return list(seen)

    def __len__(self) -> int:
        return len(self.items)


def cosine_similarity(a: SpeakerEmbedding, b: SpeakerEmbedding) -> float:
    if a.dimension != b.dimension:
        raise ValidationError(f"dimension mismatch: {a.dimension} vs {b.dimension}")
    return float(np.dot(a.vector, b.vector) / (a.norm * b.norm))


# ---------------------------------------------------------------------------
# native baseline extractor


def _mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_inv(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _mel_filterbank(n_filters: int, nfft: int, fs: int) -> np.ndarray:
    edges = _mel_inv(np.linspace(_mel(0.0), _mel(fs / 2.0), n_filters + 2))
    bins = np.floor((nfft + 1) * edges / fs).astype(int)
    bank = np.zeros((n_filters, nfft // 2 + 1))
    for i in range(n_filters):
        lo, mid, hi = bins[i], bins[i + 1], bins[i + 2]
        if mid > lo:
            bank[i, lo:mid] = (np.arange(lo, mid) - lo) / (mid - lo)
        if hi > mid:
            bank[i, mid:hi] = (hi - np.arange(mid, hi)) / (hi - mid)
    return bank


def _mel_cepstra(x: np.ndarray, fs: int) -> np.ndarray:
    frame_len = int(round(0.025 * fs))
    hop = int(round(0.010 * fs))
    frames = frame_matrix(x, frame_len, hop)
    frames *= make_window("hann", frame_len)
    nfft = 512
    power = np.abs(np.fft.rfft(frames, nfft, axis=1)) ** 2
    bank = _mel_filterbank(N_MEL_FILTERS, nfft, fs)
    energies = np.log(np.maximum(power @ bank.T, 1e-10))
    # c1..c20: the zeroth (frame energy) coefficient carries loudness, not
    # identity, and swamps the cosine geometry if kept
    return dct(energies, type=2, norm="ortho", axis=1)[:, 1 : N_CEPSTRA + 1]


def extract_baseline_embedding(buffer: AudioBuffer) -> SpeakerEmbedding:
    """Deterministic 42-dim embedding: cepstral and log-f0 statistics.

    Mean and standard deviation of 20 mel-cepstral coefficients over
    25 ms / 10 ms frames, then mean and standard deviation of log f0 over
    voiced frames (zeros when nothing is voiced).
    """
    if buffer.sample_rate_hz != WORKING_RATE_HZ:
        raise ValidationError(f"baseline embeddings require {WORKING_RATE_HZ} Hz input")
    if buffer.duration_s < MIN_DURATION_S:
        raise ValidationError(f"need at least {MIN_DURATION_S}s of audio")

    ceps = _mel_cepstra(buffer.samples, buffer.sample_rate_hz)
    stats = np.concatenate([ceps.mean(axis=0), ceps.std(axis=0)])

    track = estimate_f0(buffer)
    voiced_f0 = track.f0_hz[track.voiced]
    if voiced_f0.size:
        logf0 = np.log(voiced_f0)
        pitch = np.array([logf0.mean(), logf0.std()])
    else:
        pitch = np.zeros(2)
    return SpeakerEmbedding(vector=np.concatenate([stats, pitch]))


# ---------------------------------------------------------------------------
# pool persistence (SAEB binary, CSV import)


def save_pool(pool: EmbeddingPool, path: str | Path) -> None:
    """Write the binary pool format (bit-exact round trip on vectors)."""
    with open(path, "wb") as f:
        f.write(SAEB_MAGIC)
        f.write(struct.pack("<HII", SAEB_VERSION, pool.dimension, len(pool)))
        for pid, emb in pool.entries:
            raw = pid.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValidationError(f"pool id too long: {pid[:32]}...")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(emb.vector.astype("<f4").tobytes())


def _load_pool_binary(path: Path) -> EmbeddingPool:
    with open(path, "rb") as f:
        header = f.read(4 + 10)
        if len(header) < 14:
            raise FormatError(f"{path}: truncated header")
        version, dim, count = struct.unpack("<HII", header[4:])
        if version != SAEB_VERSION:
            raise UnsupportedFormatError(f"{path}: unsupported version {version}")
        entries = []
        for _ in range(count):
            lraw = f.read(2)
            if len(lraw) < 2:
                raise FormatError(f"{path}: truncated entry header")
            (id_len,) = struct.unpack("<H", lraw)
            pid = f.read(id_len).decode("utf-8")
            vec = f.read(4 * dim)
            if len(vec) < 4 * dim:
                raise FormatError(f"{path}: truncated vector for '{pid}'")
            entries.append((pid, SpeakerEmbedding(vector=np.frombuffer(vec, dtype="<f4"))))
    if not entries:
        log.warning("%s: empty embedding pool", path)
    return EmbeddingPool(entries=entries)


def _load_pool_csv(path: Path) -> EmbeddingPool:
    entries = []
    width = None
    with open(path, newline="", encoding="utf-8") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise ValidationError(f"{path}:{lineno}: need id plus at least one value")
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ValidationError(f"{path}:{lineno}: inconsistent dimension")
            try:
                vec = np.array([float(c) for c in row[1:]])
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: non-numeric value") from exc
            entries.append((row[0].strip(), SpeakerEmbedding(vector=vec)))
    if not entries:
        log.warning("%s: empty embedding pool", path)
    return EmbeddingPool(entries=entries)


def load_pool(path: str | Path) -> EmbeddingPool:
    """Load a pool from SAEB binary or `id,v0,v1,...` CSV (sniffed)."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == SAEB_MAGIC:
        return _load_pool_binary(path)
    return _load_pool_csv(path)


def utterance_set_from_pool(
    pool: EmbeddingPool, speaker_of: dict[str, str]
) -> UtteranceEmbeddingSet:
    """Pair per-utterance embeddings with speaker labels from a manifest."""
    items = []
    for utt_id, emb in pool.entries:
        if utt_id not in speaker_of:
            raise ValidationError(f"embedding '{utt_id}' has no manifest entry")
        items.append((utt_id, speaker_of[utt_id], emb))
    return UtteranceEmbeddingSet(items=items)
