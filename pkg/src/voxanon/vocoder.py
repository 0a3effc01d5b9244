"""Source-filter vocoder: f0 estimation, envelope capture, resynthesis.

The synthesis model is deliberately plain: pitch-synchronous pulses for
voiced frames, white noise for unvoiced ones, shaped by per-frame
all-pole envelopes. That is enough to make f0 independently modifiable;
it does not chase perceptual parity with production vocoders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .audio_io import AudioBuffer, WORKING_RATE_HZ
from .dsp import (
    LpcModel,
    FrameSequence,
    autocorr_batch,
    frame_matrix,
    is_minimum_phase,
    lag_window,
    levinson_batch,
    make_window,
    overlap_add,
)
from .errors import ValidationError

F0_MIN_HZ = 60.0
F0_MAX_HZ = 500.0

_F0_HOP_MS = 5.0
_F0_WIN_MS = 40.0
_CLARITY_THRESHOLD = 0.3  # cumulative-mean normalized difference cutoff
_MEDIAN_WIN = 5

ENVELOPE_ORDER = 24
_ENV_FRAME_MS = 25.0


@dataclass
class F0Track:
    """Per-frame fundamental frequency with voicing flags.

    Voiced frames carry f0 in [60, 500] Hz; unvoiced frames carry 0.
    """

    hop_ms: float
    f0_hz: np.ndarray
    voiced: np.ndarray
    clamp_events: int = 0

    def __post_init__(self):
        self.f0_hz = np.asarray(self.f0_hz, dtype=np.float64).reshape(-1)
        self.voiced = np.asarray(self.voiced, dtype=bool).reshape(-1)
        if len(self.f0_hz) != len(self.voiced):
            raise ValidationError("f0 and voicing arrays must align")

    def __len__(self) -> int:
        return len(self.f0_hz)


@dataclass
class VocoderParams:
    f0: F0Track
    envelopes: list[LpcModel]
    frame_ms: float
    hop_ms: float
    sample_rate_hz: int
    degenerate_frames: int = 0

    def __post_init__(self):
        if len(self.envelopes) != len(self.f0):
            raise ValidationError("need one envelope per f0 frame")


def _require_working_rate(buffer: AudioBuffer) -> None:
    if buffer.sample_rate_hz != WORKING_RATE_HZ:
        raise ValidationError(
            f"vocoder operates at {WORKING_RATE_HZ} Hz, got {buffer.sample_rate_hz}"
        )


def estimate_f0(buffer: AudioBuffer) -> F0Track:
    """Track f0 with a cumulative-mean normalized difference function.

    One estimate per 5 ms hop over a 40 ms rectangular window; a frame is
    voiced when the normalized difference dips below 0.3 within the
    60-500 Hz lag range. The track is median-filtered (length 5) across
    voiced neighbors.
    """
    _require_working_rate(buffer)
    x = buffer.samples
    if len(x) == 0:
        raise ValidationError("cannot track f0 of an empty buffer")
    fs = buffer.sample_rate_hz
    hop = int(round(_F0_HOP_MS * fs / 1000.0))
    win = int(round(_F0_WIN_MS * fs / 1000.0))
    tau_min = int(np.floor(fs / F0_MAX_HZ))
    tau_hi = int(np.ceil(fs / F0_MIN_HZ)) + 1  # one lag of headroom for local-min tests

    n_frames = max(1, -(-len(x) // hop))
    seg_len = win + tau_hi + 1
    segments = frame_matrix(x, seg_len, hop)

    # difference function d(tau) over all frames at once, via FFT correlation
    nfft = 1 << int(seg_len + win).bit_length()
    spec_full = np.fft.rfft(segments, nfft, axis=1)
    spec_head = np.fft.rfft(segments[:, :win], nfft, axis=1)
    corr = np.fft.irfft(np.conj(spec_head) * spec_full, nfft, axis=1)[:, : tau_hi + 1]

    sq = np.cumsum(segments**2, axis=1)
    e_head = sq[:, win - 1]
    hi_idx = np.arange(tau_hi + 1) + win - 1
    e_shift = sq[:, hi_idx] - np.concatenate([np.zeros((n_frames, 1)), sq[:, :tau_hi]], axis=1)
    d = np.maximum(e_head[:, None] + e_shift - 2.0 * corr, 0.0)

    # cumulative-mean normalization; flat/silent frames stay at 1
    csum = np.cumsum(d[:, 1:], axis=1)
    taus = np.arange(1, tau_hi + 1, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        dn = np.where(csum > 0, d[:, 1:] * taus / csum, 1.0)
    dn = np.concatenate([np.ones((n_frames, 1)), dn], axis=1)

    search = dn[:, tau_min : tau_hi - 1]
    left = dn[:, tau_min - 1 : tau_hi - 2]
    right = dn[:, tau_min + 1 : tau_hi]
    local_min = (search <= left) & (search < right)
    candidate = local_min & (search < _CLARITY_THRESHOLD)
    has_candidate = candidate.any(axis=1)
    first_idx = np.argmax(candidate, axis=1)
    fallback_idx = np.argmin(search, axis=1)
    rel = np.where(has_candidate, first_idx, fallback_idx)
    tau = rel + tau_min

    rows = np.arange(n_frames)
    voiced = (dn[rows, tau] < _CLARITY_THRESHOLD) & (e_head > 1e-10)

    # parabolic refinement on the raw difference function
    dm1, d0, dp1 = d[rows, tau - 1], d[rows, tau], d[rows, tau + 1]
    curv = dm1 - 2.0 * d0 + dp1
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.where(np.abs(curv) > 1e-30, 0.5 * (dm1 - dp1) / curv, 0.0)
    tau_ref = tau + np.clip(delta, -0.5, 0.5)
    f0 = np.where(voiced, np.clip(fs / tau_ref, F0_MIN_HZ, F0_MAX_HZ), 0.0)

    f0 = _median_filter_voiced(f0, voiced, _MEDIAN_WIN)
    return F0Track(hop_ms=_F0_HOP_MS, f0_hz=f0, voiced=voiced)


def _median_filter_voiced(f0: np.ndarray, voiced: np.ndarray, width: int) -> np.ndarray:
    half = width // 2
    out = f0.copy()
    for i in np.flatnonzero(voiced):
        lo, hi = max(0, i - half), min(len(f0), i + half + 1)
        vals = f0[lo:hi][voiced[lo:hi]]
        out[i] = np.median(vals)
    return out


def shift_f0(track: F0Track, semitones: float) -> F0Track:
    """Scale voiced f0 by 2^(semitones/12); voicing flags are untouched.

    Shifted values falling outside [60, 500] Hz are clamped and counted
    in the returned track's clamp_events.
    """
    if not np.isfinite(semitones):
        raise ValidationError("semitone shift must be finite")
    factor = 2.0 ** (semitones / 12.0)
    shifted = np.where(track.voiced, track.f0_hz * factor, 0.0)
    clamped = np.clip(shifted, F0_MIN_HZ, F0_MAX_HZ)
    clamps = int(np.count_nonzero(track.voiced & (clamped != shifted)))
    out = np.where(track.voiced, clamped, 0.0)
    return F0Track(hop_ms=track.hop_ms, f0_hz=out, voiced=track.voiced.copy(), clamp_events=clamps)


def analyze(buffer: AudioBuffer) -> VocoderParams:
    """f0 track plus order-24 spectral envelopes (25 ms frames, 5 ms hop)."""
    _require_working_rate(buffer)
    f0 = estimate_f0(buffer)
    fs = buffer.sample_rate_hz
    hop = int(round(_F0_HOP_MS * fs / 1000.0))
    frame_len = int(round(_ENV_FRAME_MS * fs / 1000.0))

    frames = frame_matrix(buffer.samples, frame_len, hop)
    frames *= make_window("hann", frame_len)
    if frames.shape[0] != len(f0):
        raise ValidationError("envelope and f0 frame counts diverged")

    r = autocorr_batch(frames, ENVELOPE_ORDER)
    r = r * lag_window(ENVELOPE_ORDER, fs)
    coeffs, err, valid = levinson_batch(r)

    envelopes: list[LpcModel] = []
    degenerate = 0
    for i in range(frames.shape[0]):
        if valid[i]:
            envelopes.append(
                LpcModel(order=ENVELOPE_ORDER, coefficients=coeffs[i], gain=float(np.sqrt(err[i])))
            )
        else:
            degenerate += 1
            envelopes.append(LpcModel(order=0, coefficients=np.zeros(0), gain=0.0))
    return VocoderParams(
        f0=f0,
        envelopes=envelopes,
        frame_ms=_ENV_FRAME_MS,
        hop_ms=_F0_HOP_MS,
        sample_rate_hz=fs,
        degenerate_frames=degenerate,
    )


def _excitation(params: VocoderParams, total: int, hop: int) -> np.ndarray:
    """Pulse train where voiced, unit white noise where unvoiced.

    The voiced/unvoiced mix is crossfaded over roughly one hop so
    transitions do not click. Noise is drawn from a fixed-seed generator:
    synthesis is deterministic by construction.
    """
    f0_frame = np.where(params.f0.voiced, params.f0.f0_hz, 0.0)
    f0_samp = np.repeat(f0_frame, hop)[:total]
    v_samp = np.repeat(params.f0.voiced.astype(np.float64), hop)[:total]

    fs = params.sample_rate_hz
    phase = np.cumsum(f0_samp / fs)
    crossings = np.diff(np.floor(phase), prepend=0.0) >= 1.0
    pulses = np.zeros(total)
    idx = np.flatnonzero(crossings)
    if idx.size:
        pulses[idx] = np.sqrt(fs / np.maximum(f0_samp[idx], 1.0))

    noise = np.random.default_rng(0x0E5C17A7).standard_normal(total)

    if hop > 1:
        kernel = np.ones(hop) / hop
        v_samp = np.convolve(v_samp, kernel, mode="same")
    return v_samp * pulses + (1.0 - v_samp) * noise


def synthesize(params: VocoderParams) -> AudioBuffer:
    """Excite each frame's envelope and overlap-add; length = frames * hop.

    Unstable envelopes are bypassed as silent frames; use
    synthesize_with_diagnostics when the bypass count matters.
    """
    out, _ = synthesize_with_diagnostics(params)
    return out


def synthesize_with_diagnostics(params: VocoderParams) -> tuple[AudioBuffer, dict]:
    fs = params.sample_rate_hz
    hop = int(round(params.hop_ms * fs / 1000.0))
    frame_len = int(round(params.frame_ms * fs / 1000.0))
    n_frames = len(params.envelopes)
    total = n_frames * hop
    if n_frames == 0:
        return AudioBuffer(samples=np.zeros(0), sample_rate_hz=fs), {"bypassed_frames": 0}

    exc = _excitation(params, total, hop)
    exc_frames = frame_matrix(exc, frame_len, hop)

    window = make_window("hann", frame_len)
    # analysis saw windowed frames; undo the window's RMS loss so levels match
    level_comp = 1.0 / np.sqrt(np.mean(window**2))

    out_frames = np.zeros((n_frames, frame_len))
    bypassed = 0
    for i, env in enumerate(params.envelopes):
        if env.gain == 0.0:
            continue
        if env.order > 0 and not is_minimum_phase(env):
            bypassed += 1
            continue
        frame = exc_frames[i]
        norm = np.sqrt(np.sum(frame**2))
        if norm == 0.0:
            continue
        driven = frame * (env.gain * level_comp / norm)
        if env.order == 0:
            out_frames[i] = driven
        else:
            out_frames[i] = lfilter([1.0], env.as_poly(), driven)

    out_frames *= window
    seq = FrameSequence(
        frames=out_frames,
        frame_len=frame_len,
        hop_len=hop,
        window="hann",
        sample_rate_hz=fs,
        source_len=total,
    )
    out = overlap_add(seq)
    if not np.all(np.isfinite(out.samples)):
        raise ValidationError("synthesis produced non-finite samples")
    return out, {"bypassed_frames": bypassed}
