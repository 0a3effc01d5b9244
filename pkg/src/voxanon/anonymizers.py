"""The anonymization functions: two waveform-domain, two embedding-domain.

Every function draws its randomness from a seed derived from
(global seed, speaker, scope key, method), so outputs are reproducible
per utterance regardless of batch order or worker count, and a run can
be replayed bit-exactly from the recorded drawn parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np
from scipy.signal import lfilter

from .audio_io import AudioBuffer, WORKING_RATE_HZ
from .dsp import (
    IMAG_EPS,
    aberth_roots_batch,
    autocorr_batch,
    frame_signal,
    lag_window,
    levinson_batch,
    overlap_add,
    poly_from_roots_batch,
)
from .embeddings import EmbeddingPool, SpeakerEmbedding, cosine_similarity
from .errors import SamplingExhaustedError, ValidationError
from .seeding import rng_for
from .vocoder import VocoderParams, analyze, shift_f0, synthesize_with_diagnostics

METHODS = ("pitch_shift", "mcadams", "pool_average", "constrained_sample")
WAVEFORM_METHODS = ("pitch_shift", "mcadams")

# per-utterance alpha mirrors common envelope-modification practice;
# per-speaker pitch offsets keep a speaker's utterances mutually consistent
_DEFAULT_SCOPE = {
    "pitch_shift": "per_speaker",
    "mcadams": "per_utterance",
    "pool_average": "per_speaker",
    "constrained_sample": "per_speaker",
}

MCADAMS_LPC_ORDER = 20
_MCADAMS_FRAME_MS = 20.0
_MCADAMS_HOP_MS = 10.0

MAX_SAMPLING_ATTEMPTS = 1000

Sampler = Callable[[np.random.Generator], np.ndarray]


@dataclass
class AnonymizerConfig:
    method: str = "mcadams"
    semitone_range: tuple[float, float] = (3.0, 5.0)
    mcadams_alpha_range: tuple[float, float] = (0.5, 0.9)
    pool_farthest_k: int = 200
    pool_average_m: int = 100
    cosine_threshold: float = 0.7
    randomization_scope: str | None = None  # None = method default
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown method '{self.method}' (choose from {METHODS})")
        lo, hi = self.semitone_range
        if not (0 < lo <= hi):
            raise ValidationError("semitone range must satisfy 0 < lo <= hi")
        alo, ahi = self.mcadams_alpha_range
        if not (0 < alo <= ahi <= 1.0):
            raise ValidationError("alpha range must lie within (0, 1]")
        if not (1 <= self.pool_average_m <= self.pool_farthest_k):
            raise ValidationError("need 1 <= m <= k for the pool anonymizer")
        if not (-1.0 < self.cosine_threshold < 1.0):
            raise ValidationError("cosine threshold must be inside (-1, 1)")
        if self.randomization_scope not in (None, "per_speaker", "per_utterance"):
            raise ValidationError("randomization_scope is per_speaker or per_utterance")

    @property
    def scope(self) -> str:
        return self.randomization_scope or _DEFAULT_SCOPE[self.method]

    def scope_key(self, utt_id: str) -> str:
        return utt_id if self.scope == "per_utterance" else ""

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "semitone_range": list(self.semitone_range),
            "mcadams_alpha_range": list(self.mcadams_alpha_range),
            "pool_farthest_k": self.pool_farthest_k,
            "pool_average_m": self.pool_average_m,
            "cosine_threshold": self.cosine_threshold,
            "randomization_scope": self.scope,
            "seed": self.seed,
        }


@dataclass
class AnonymizationResult:
    output: Union[AudioBuffer, SpeakerEmbedding]
    drawn_params: dict
    diagnostics: dict = field(default_factory=dict)


def _require_rate(buffer: AudioBuffer) -> None:
    if buffer.sample_rate_hz != WORKING_RATE_HZ:
        raise ValidationError(f"anonymizers require {WORKING_RATE_HZ} Hz input")


# ---------------------------------------------------------------------------
# waveform domain


def anonymize_pitch_shift(
    buffer: AudioBuffer,
    cfg: AnonymizerConfig,
    key: tuple[str, str],
    semitones: float | None = None,
) -> AnonymizationResult:
    """Shift the f0 track by a random offset and resynthesize.

    The offset is sign * u with an equiprobable sign and u uniform over
    the configured semitone range. Pass ``semitones`` to replay a
    previous draw bit-exactly.
    """
    _require_rate(buffer)
    speaker_id, utt_id = key
    if semitones is None:
        rng = rng_for(cfg.seed, speaker_id, cfg.scope_key(utt_id), "pitch_shift")
        sign = 1.0 if rng.random() < 0.5 else -1.0
        semitones = sign * rng.uniform(*cfg.semitone_range)

    params = analyze(buffer)
    track = shift_f0(params.f0, semitones)
    shifted = VocoderParams(
        f0=track,
        envelopes=params.envelopes,
        frame_ms=params.frame_ms,
        hop_ms=params.hop_ms,
        sample_rate_hz=params.sample_rate_hz,
        degenerate_frames=params.degenerate_frames,
    )
    out, diag = synthesize_with_diagnostics(shifted)
    return AnonymizationResult(
        output=out,
        drawn_params={"semitones": float(semitones)},
        diagnostics={
            "degenerate_frames": params.degenerate_frames,
            "bypassed_frames": diag["bypassed_frames"],
            "f0_clamp_events": track.clamp_events,
        },
    )


def warp_pole_phases(poles: np.ndarray, alpha: float) -> np.ndarray:
    """|phase| -> |phase|^alpha with sign kept; real poles untouched.

    Magnitudes are preserved exactly, so a stable filter stays stable and
    conjugate pairs stay conjugate.
    """
    complex_mask = np.abs(poles.imag) > IMAG_EPS
    phase = np.angle(poles)
    warped = np.sign(phase) * np.abs(phase) ** alpha
    moved = np.abs(poles) * np.exp(1j * warped)
    return np.where(complex_mask, moved, poles)


def anonymize_mcadams(
    buffer: AudioBuffer,
    cfg: AnonymizerConfig,
    key: tuple[str, str],
    alpha: float | None = None,
) -> AnonymizationResult:
    """Warp each frame's spectral envelope through its LPC pole phases.

    Per frame: order-20 LPC -> poles -> phase warp by alpha -> rebuilt
    coefficients; the original residual is refiltered through the warped
    model and the frames are overlap-added. Frames that are silent or
    defeat the root finder pass through unmodified and are counted.
    """
    _require_rate(buffer)
    speaker_id, utt_id = key
    if alpha is None:
        rng = rng_for(cfg.seed, speaker_id, cfg.scope_key(utt_id), "mcadams")
        alpha = rng.uniform(*cfg.mcadams_alpha_range)

    seq = frame_signal(buffer, _MCADAMS_FRAME_MS, _MCADAMS_HOP_MS, window="hann")
    frames = seq.frames
    n_frames = frames.shape[0]

    r = autocorr_batch(frames, MCADAMS_LPC_ORDER)
    r = r * lag_window(MCADAMS_LPC_ORDER, buffer.sample_rate_hz)
    coeffs, _err, valid = levinson_batch(r)

    poly_orig = np.concatenate([np.ones((n_frames, 1)), -coeffs], axis=1)
    roots = np.zeros((n_frames, MCADAMS_LPC_ORDER), dtype=np.complex128)
    converged = np.zeros(n_frames, dtype=bool)
    if valid.any():
        roots_v, conv_v = aberth_roots_batch(poly_orig[valid])
        roots[valid] = roots_v
        converged[valid] = conv_v

    process = valid & converged
    warped = roots.copy()
    warped[process] = warp_pole_phases(roots[process], alpha)
    poly_new = poly_from_roots_batch(warped).real

    out_frames = frames.copy()
    for i in np.flatnonzero(process):
        residual = lfilter(poly_orig[i], [1.0], frames[i])
        out_frames[i] = lfilter([1.0], poly_new[i], residual)

    seq.frames = out_frames
    out = overlap_add(seq)
    return AnonymizationResult(
        output=out,
        drawn_params={"alpha": float(alpha)},
        diagnostics={
            "degenerate_frames": int(np.count_nonzero(~valid)),
            "rootfind_failures": int(np.count_nonzero(valid & ~converged)),
        },
    )


# ---------------------------------------------------------------------------
# embedding domain


def anonymize_embedding_pool(
    source: SpeakerEmbedding,
    pool: EmbeddingPool,
    cfg: AnonymizerConfig,
    key: tuple[str, str],
    chosen_ids: list[str] | None = None,
) -> AnonymizationResult:
    """Average a random subset of the pool entries farthest from source.

    Ranks the pool by cosine distance (descending, ties broken by pool
    order), keeps the top k, draws m of them without replacement, and
    returns the renormalized mean. ``chosen_ids`` replays a prior draw.
    """
    k, m = cfg.pool_farthest_k, cfg.pool_average_m
    if len(pool) < k:
        raise ValidationError(f"pool has {len(pool)} entries, need at least k={k}")
    if pool.dimension != source.dimension:
        raise ValidationError("pool and source dimensions differ")

    ids = pool.ids()
    mat = pool.matrix()
    if chosen_ids is None:
        unit = mat / np.linalg.norm(mat, axis=1, keepdims=True)
        distance = 1.0 - unit @ source.unit()
        order = np.argsort(-distance, kind="stable")
        top_k = order[:k]

        speaker_id, utt_id = key
        rng = rng_for(cfg.seed, speaker_id, cfg.scope_key(utt_id), "pool_average")
        picked = top_k[rng.choice(k, size=m, replace=False)]
        picked = np.sort(picked)  # fixed accumulation order for bitwise stability
        chosen_ids = [ids[i] for i in picked]
    else:
        index_of = {pid: i for i, pid in enumerate(ids)}
        missing = [pid for pid in chosen_ids if pid not in index_of]
        if missing:
            raise ValidationError(f"replay ids not in pool: {missing[:5]}")
        picked = np.array(sorted(index_of[pid] for pid in chosen_ids))
        chosen_ids = [ids[i] for i in picked]

    mean = mat[picked].mean(axis=0)
    out = SpeakerEmbedding(vector=mean / np.linalg.norm(mean))
    return AnonymizationResult(output=out, drawn_params={"chosen_ids": chosen_ids})


def fit_gaussian_sampler(pool: EmbeddingPool) -> Sampler:
    """Diagonal Gaussian over a pool; the stand-in embedding generator."""
    if len(pool) == 0:
        raise ValidationError("cannot fit a sampler to an empty pool")
    mat = pool.matrix()
    mean = mat.mean(axis=0)
    std = mat.std(axis=0)

    def sample(rng: np.random.Generator) -> np.ndarray:
        return mean + std * rng.standard_normal(len(mean))

    return sample


def anonymize_embedding_sampled(
    source: SpeakerEmbedding,
    sampler: Sampler,
    cfg: AnonymizerConfig,
    key: tuple[str, str],
) -> AnonymizationResult:
    """Rejection-sample until cosine(candidate, source) < threshold."""
    speaker_id, utt_id = key
    rng = rng_for(cfg.seed, speaker_id, cfg.scope_key(utt_id), "constrained_sample")
    for attempt in range(1, MAX_SAMPLING_ATTEMPTS + 1):
        candidate = np.asarray(sampler(rng), dtype=np.float64)
        if candidate.shape != (source.dimension,):
            raise ValidationError("sampler emitted a vector of the wrong dimension")
        emb = SpeakerEmbedding(vector=candidate)
        if cosine_similarity(emb, source) < cfg.cosine_threshold:
            return AnonymizationResult(output=emb, drawn_params={"attempts": attempt})
    raise SamplingExhaustedError(
        f"no candidate below cosine {cfg.cosine_threshold} in {MAX_SAMPLING_ATTEMPTS} attempts"
    )


# ---------------------------------------------------------------------------
# config file


_CONFIG_KEYS = {
    "method": str,
    "semitone_lo": float,
    "semitone_hi": float,
    "alpha_lo": float,
    "alpha_hi": float,
    "pool_farthest_k": int,
    "pool_average_m": int,
    "cosine_threshold": float,
    "randomization_scope": str,
    "seed": int,
}


def load_config_file(path: str | Path) -> dict:
    """Parse the `key = value` config format (# starts a comment)."""
    values: dict = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key = value")
        k, v = (part.strip() for part in line.split("=", 1))
        if k not in _CONFIG_KEYS:
            raise ValidationError(f"{path}:{lineno}: unknown key '{k}'")
        try:
            values[k] = _CONFIG_KEYS[k](v)
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: bad value for '{k}'") from exc
    return values


def config_from_values(values: dict) -> AnonymizerConfig:
    kwargs: dict = {}
    if "method" in values:
        kwargs["method"] = values["method"]
    if "semitone_lo" in values or "semitone_hi" in values:
        kwargs["semitone_range"] = (
            values.get("semitone_lo", 3.0),
            values.get("semitone_hi", 5.0),
        )
    if "alpha_lo" in values or "alpha_hi" in values:
        kwargs["mcadams_alpha_range"] = (values.get("alpha_lo", 0.5), values.get("alpha_hi", 0.9))
    for k in ("pool_farthest_k", "pool_average_m", "cosine_threshold", "randomization_scope", "seed"):
        if k in values:
            kwargs[k] = values[k]
    return AnonymizerConfig(**kwargs)
