"""Frame-based linear prediction machinery.

Single-frame operations (the public contract) delegate to batched
implementations that process a whole utterance's frames as one matrix;
the batch path is what keeps the waveform anonymizers inside their
realtime budget.

Conventions: an LPC model of order p predicts x[n] from Sum a[k] x[n-k],
so the analysis polynomial is A(z) = 1 - Sum_{k=1..p} a[k] z^-k and its
monic root form is z^p - a[1] z^(p-1) - ... - a[p].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .audio_io import AudioBuffer
from .errors import (
    ConfigurationError,
    DegenerateFrameError,
    NumericalError,
    StabilityError,
    ValidationError,
)

IMAG_EPS = 1e-8  # |Im| above this counts as a genuinely complex pole


# ---------------------------------------------------------------------------
# framing / overlap-add


@dataclass
class FrameSequence:
    """Windowed analysis frames as a (n_frames, frame_len) matrix."""

    frames: np.ndarray
    frame_len: int
    hop_len: int
    window: str
    sample_rate_hz: int
    source_len: int | None = None

    def __len__(self) -> int:
        return self.frames.shape[0]


def make_window(name: str, n: int) -> np.ndarray:
    # Half-sample-offset periodic Hann: exact COLA whenever the hop divides
    # the frame length, and nonzero at both ends so envelope division can
    # recover every sample of the first and last frames.
    if name == "hann":
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * (np.arange(n) + 0.5) / n)
    if name == "rect":
        return np.ones(n)
    raise ValidationError(f"unknown analysis window '{name}'")


def frame_matrix(x: np.ndarray, frame_len: int, hop_len: int) -> np.ndarray:
    """Zero-pad the tail and slice x into ceil(len/hop) frames."""
    n_frames = max(1, -(-len(x) // hop_len))
    padded = np.zeros((n_frames - 1) * hop_len + frame_len)
    padded[: len(x)] = x
    stride = padded.strides[0]
    view = np.lib.stride_tricks.as_strided(
        padded, shape=(n_frames, frame_len), strides=(hop_len * stride, stride)
    )
    return view.copy()


def frame_signal(buffer: AudioBuffer, frame_ms: float, hop_ms: float, window: str = "hann") -> FrameSequence:
    """Split a buffer into windowed frames (ceil(len/hop) of them)."""
    if not (0 < hop_ms <= frame_ms):
        raise ValidationError("need frame_ms >= hop_ms > 0")
    if len(buffer) == 0:
        raise ValidationError("cannot frame an empty buffer")
    fs = buffer.sample_rate_hz
    frame_len = int(round(frame_ms * fs / 1000.0))
    hop_len = int(round(hop_ms * fs / 1000.0))
    if hop_len < 1 or hop_len > frame_len:
        raise ValidationError("frame/hop lengths collapse to an invalid configuration")
    frames = frame_matrix(buffer.samples, frame_len, hop_len)
    frames *= make_window(window, frame_len)
    return FrameSequence(
        frames=frames,
        frame_len=frame_len,
        hop_len=hop_len,
        window=window,
        sample_rate_hz=fs,
        source_len=len(buffer),
    )


def _check_cola(window: str, frame_len: int, hop_len: int) -> None:
    if frame_len % hop_len != 0:
        raise ConfigurationError("hop must divide the frame length for exact overlap-add")
    if window == "hann" and frame_len // hop_len < 2:
        raise ConfigurationError("Hann windows need at least 2x overlap to satisfy COLA")


def overlap_add(frames: FrameSequence) -> AudioBuffer:
    """Reconstruct a signal from windowed frames.

    Division by the accumulated window envelope makes the round trip
    exact (up to float rounding) everywhere the envelope is nonzero,
    including the partially covered edges.
    """
    _check_cola(frames.window, frames.frame_len, frames.hop_len)
    mat = np.asarray(frames.frames, dtype=np.float64)
    n_frames, frame_len = mat.shape
    hop = frames.hop_len
    total = (n_frames - 1) * hop + frame_len

    out = np.zeros(total)
    wsum = np.zeros(total)
    w = make_window(frames.window, frame_len)
    for m in range(n_frames):
        out[m * hop : m * hop + frame_len] += mat[m]
        wsum[m * hop : m * hop + frame_len] += w

    nz = wsum > 1e-8
    out[nz] /= wsum[nz]
    out[~nz] = 0.0

    if frames.source_len is not None:
        out = out[: frames.source_len]
    return AudioBuffer(samples=out, sample_rate_hz=frames.sample_rate_hz)


# ---------------------------------------------------------------------------
# LPC models


@dataclass
class LpcModel:
    """All-pole model: predictor coefficients a[1..p] plus residual gain."""

    order: int
    coefficients: np.ndarray
    gain: float

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64).reshape(-1)
        if len(self.coefficients) != self.order:
            raise ValidationError("coefficient count must equal the model order")
        if self.gain < 0:
            raise ValidationError("gain must be non-negative")

    def as_poly(self) -> np.ndarray:
        """[1, -a1, ..., -ap]: A(z) coefficients in scipy filter order."""
        return np.concatenate(([1.0], -self.coefficients))


@dataclass
class PoleSet:
    """Poles of an all-pole filter; conjugate-closed for real filters."""

    poles: np.ndarray
    gain: float

    def __post_init__(self):
        self.poles = np.asarray(self.poles, dtype=np.complex128).reshape(-1)


@dataclass
class FilterState:
    """Direct-form transposed filter memory threaded across frames."""

    zi: np.ndarray

    @classmethod
    def zeros(cls, order: int) -> "FilterState":
        return cls(zi=np.zeros(order))


def lag_window(order: int, sample_rate_hz: int, bandwidth_hz: float = 60.0) -> np.ndarray:
    """Gaussian lag window; mild regularization against sustained vowels."""
    k = np.arange(order + 1)
    return np.exp(-0.5 * (2.0 * np.pi * bandwidth_hz * k / sample_rate_hz) ** 2)


def autocorr_batch(frames: np.ndarray, order: int) -> np.ndarray:
    mat = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    n = mat.shape[1]
    nfft = 1 << int(2 * n - 1).bit_length()
    spec = np.fft.rfft(mat, nfft, axis=1)
    power = spec.real**2 + spec.imag**2
    return np.fft.irfft(power, nfft, axis=1)[:, : order + 1]


def levinson_batch(r: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Levinson-Durbin over a batch of autocorrelation rows.

    Returns (a, residual_energy, valid); rows flagged invalid hit a
    non-positive prediction error and carry no usable model.
    """
    r = np.atleast_2d(np.asarray(r, dtype=np.float64))
    n_rows, p1 = r.shape
    p = p1 - 1
    a = np.zeros((n_rows, p))
    err = r[:, 0].copy()
    valid = err > 0

    safe = np.where(valid, err, 1.0)
    for i in range(1, p + 1):
        acc = r[:, i].copy()
        if i > 1:
            acc -= np.einsum("mj,mj->m", a[:, : i - 1], r[:, i - 1 : 0 : -1])
        k = np.where(valid, acc / safe, 0.0)
        if i > 1:
            a[:, : i - 1] = a[:, : i - 1] - k[:, None] * a[:, i - 2 :: -1]
        a[:, i - 1] = k
        err = err * (1.0 - k * k)
        valid &= err > 0
        safe = np.where(valid, err, 1.0)
    return a, err, valid


def lpc_from_autocorr(
    frame: np.ndarray,
    order: int,
    sample_rate_hz: int = 16_000,
    lag_bandwidth_hz: float = 60.0,
) -> LpcModel:
    """Fit an order-p all-pole model to one frame (autocorrelation method).

    Raises DegenerateFrameError on silent or pathologically conditioned
    frames; callers are expected to pass those frames through untouched.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if order < 0:
        raise ValidationError("order must be non-negative")
    if order >= len(frame):
        raise ValidationError("order must be smaller than the frame length")

    r = autocorr_batch(frame[None, :], order)[0]
    if not np.isfinite(r[0]) or r[0] <= 0.0:
        raise DegenerateFrameError("frame has no energy")
    if order == 0:
        return LpcModel(order=0, coefficients=np.zeros(0), gain=float(np.sqrt(r[0])))

    r = r * lag_window(order, sample_rate_hz, lag_bandwidth_hz)
    a, err, valid = levinson_batch(r[None, :])
    if not valid[0]:
        raise DegenerateFrameError("Levinson-Durbin collapsed (perfectly predictable frame)")
    return LpcModel(order=order, coefficients=a[0], gain=float(np.sqrt(err[0])))


# ---------------------------------------------------------------------------
# root finding and polynomial reconstruction


def aberth_roots_batch(
    coeffs: np.ndarray, max_iter: int = 100, tol: float = 1e-12
) -> tuple[np.ndarray, np.ndarray]:
    """Simultaneous (Aberth-Ehrlich) root iteration over monic polynomials.

    coeffs: (m, p+1), highest power first, coeffs[:, 0] == 1.
    Returns (roots (m, p), converged (m,)). Initialization is a
    deterministic circle of radius |c_p|^(1/p), rotated off the real axis
    so conjugate symmetry cannot stall the iteration.
    """
    c = np.atleast_2d(np.asarray(coeffs, dtype=np.complex128))
    m, p1 = c.shape
    p = p1 - 1
    if p == 0:
        return np.zeros((m, 0), dtype=np.complex128), np.ones(m, dtype=bool)

    radius = np.maximum(np.abs(c[:, -1]) ** (1.0 / p), 1e-3)
    angles = 2.0 * np.pi * (np.arange(p) + 0.5) / p + 0.4
    z = radius[:, None] * np.exp(1j * angles)[None, :]

    scale = np.sum(np.abs(c), axis=1)
    converged = np.zeros(m, dtype=bool)
    active = np.arange(m)
    eye = np.eye(p, dtype=bool)

    for _ in range(max_iter):
        za = z[active]
        ca = c[active]

        # Horner pass for P and P' simultaneously
        val = np.zeros_like(za)
        der = np.zeros_like(za)
        for k in range(p1):
            der = der * za + val
            val = val * za + ca[:, k : k + 1]

        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(der != 0, val / np.where(der != 0, der, 1.0), 0.1)
            diff = za[:, :, None] - za[:, None, :]
            inv = np.where(eye[None, :, :], 0.0, 1.0 / np.where(diff == 0, np.inf, diff))
        s = inv.sum(axis=2)
        denom = 1.0 - w * s
        dz = np.where(denom != 0, w / np.where(denom != 0, denom, 1.0), w)
        z[active] = za - dz

        # accept on small steps or a backward-stable residual
        small_step = np.abs(dz) <= tol * (1.0 + np.abs(za))
        small_resid = np.abs(val) <= 1e-13 * scale[active, None]
        done = np.all(small_step | small_resid, axis=1)
        if done.any():
            converged[active[done]] = True
            active = active[~done]
        if active.size == 0:
            break

    return z, converged


def poly_from_roots_batch(roots: np.ndarray) -> np.ndarray:
    """Expand (m, p) root sets into monic coefficient rows (m, p+1)."""
    roots = np.atleast_2d(np.asarray(roots, dtype=np.complex128))
    m, p = roots.shape
    c = np.zeros((m, p + 1), dtype=np.complex128)
    c[:, 0] = 1.0
    for k in range(p):
        c[:, 1 : k + 2] = c[:, 1 : k + 2] - roots[:, k : k + 1] * c[:, : k + 1]
    return c


def lpc_to_poles(model: LpcModel) -> PoleSet:
    """Roots of the analysis polynomial; conjugate-closed by construction."""
    if model.order == 0:
        return PoleSet(poles=np.zeros(0, dtype=np.complex128), gain=model.gain)
    coeffs = np.concatenate(([1.0], -model.coefficients)).astype(np.complex128)
    roots, converged = aberth_roots_batch(coeffs[None, :])
    if not converged[0]:
        raise NumericalError("root finder did not converge for this frame")
    return PoleSet(poles=roots[0], gain=model.gain)


def _check_conjugate_closed(poles: np.ndarray, tol: float = 1e-6) -> None:
    complex_mask = np.abs(poles.imag) > IMAG_EPS
    upper = [p for p in poles[complex_mask] if p.imag > 0]
    lower = [p for p in poles[complex_mask] if p.imag < 0]
    if len(upper) != len(lower):
        raise ValidationError("pole set is not closed under conjugation")
    remaining = list(lower)
    for u in upper:
        match = min(range(len(remaining)), key=lambda i: abs(remaining[i] - np.conj(u)), default=None)
        if match is None or abs(remaining[match] - np.conj(u)) > tol * (1.0 + abs(u)):
            raise ValidationError(f"pole {u} has no conjugate partner")
        remaining.pop(match)


def poles_to_lpc(poles: PoleSet) -> LpcModel:
    """Expand poles back into predictor coefficients.

    The input must be conjugate-closed so the expansion is real; any
    residual imaginary part beyond 1e-9 is treated as a numerical fault.
    """
    if len(poles.poles) == 0:
        return LpcModel(order=0, coefficients=np.zeros(0), gain=poles.gain)
    _check_conjugate_closed(poles.poles)
    c = poly_from_roots_batch(poles.poles[None, :])[0]
    resid = float(np.max(np.abs(c.imag)))
    if resid >= 1e-9:
        raise NumericalError(f"imaginary residue {resid:.3e} after polynomial expansion")
    coeffs = -c.real[1:]
    return LpcModel(order=len(poles.poles), coefficients=coeffs, gain=poles.gain)


# ---------------------------------------------------------------------------
# filtering


def reflection_coefficients(coefficients: np.ndarray) -> np.ndarray:
    """Step-down recursion; aborts early once |k| reaches 1."""
    c = -np.asarray(coefficients, dtype=np.float64)  # A(z) = 1 + c1 z^-1 + ...
    ks = []
    cur = c.copy()
    for order in range(len(c), 0, -1):
        k = cur[order - 1]
        ks.append(k)
        if abs(k) >= 1.0:
            break
        if order > 1:
            cur = (cur[: order - 1] - k * cur[order - 2 :: -1]) / (1.0 - k * k)
    return np.asarray(ks)


def is_minimum_phase(model: LpcModel) -> bool:
    """Exact Schur-Cohn stability test (no root finding needed)."""
    if model.order == 0:
        return True
    ks = reflection_coefficients(model.coefficients)
    return len(ks) == model.order and bool(np.all(np.abs(ks) < 1.0))


def inverse_filter(frame: np.ndarray, model: LpcModel, state: FilterState | None = None) -> np.ndarray:
    """Residual e[n] = x[n] - Sum a[k] x[n-k], state threaded if given."""
    frame = np.asarray(frame, dtype=np.float64)
    if model.order == 0:
        return frame.copy()
    poly = model.as_poly()
    if state is None:
        out = lfilter(poly, [1.0], frame)
    else:
        out, state.zi = lfilter(poly, [1.0], frame, zi=state.zi)
    return out


def synthesis_filter(excitation: np.ndarray, model: LpcModel, state: FilterState | None = None) -> np.ndarray:
    """All-pole filtering through 1/A(z); rejects unstable models."""
    excitation = np.asarray(excitation, dtype=np.float64)
    if model.order == 0:
        return excitation.copy()
    if not is_minimum_phase(model):
        raise StabilityError("model has a pole on or outside the unit circle")
    poly = model.as_poly()
    if state is None:
        out = lfilter([1.0], poly, excitation)
    else:
        out, state.zi = lfilter([1.0], poly, excitation, zi=state.zi)
    return out
