import numpy as np
import pytest

from voxanon.audio_io import AudioBuffer

FS = 16_000


def sine(freq_hz: float, duration_s: float = 1.0, fs: int = FS, amp: float = 0.4) -> AudioBuffer:
    t = np.arange(int(round(duration_s * fs))) / fs
    return AudioBuffer(samples=amp * np.sin(2 * np.pi * freq_hz * t), sample_rate_hz=fs)


def ar_signal(
    ar_coeffs,
    n: int,
    seed: int,
    fs: int = FS,
    noise_scale: float = 0.05,
) -> AudioBuffer:
    """Speech-like AR process driven by white noise (the synthesis oracle)."""
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(n) * noise_scale
    from scipy.signal import lfilter

    a = np.concatenate(([1.0], -np.asarray(ar_coeffs, dtype=float)))
    x = lfilter([1.0], a, e)
    peak = np.max(np.abs(x))
    if peak > 0.95:
        x = 0.95 * x / peak
    return AudioBuffer(samples=x, sample_rate_hz=fs)


def formant_poles(freqs_hz, bandwidths_hz, fs: int = FS) -> np.ndarray:
    """Conjugate pole pairs for resonances at the given frequencies."""
    poles = []
    for f, bw in zip(freqs_hz, bandwidths_hz):
        r = np.exp(-np.pi * bw / fs)
        th = 2 * np.pi * f / fs
        poles.append(r * np.exp(1j * th))
        poles.append(r * np.exp(-1j * th))
    return np.array(poles)


def ar_coeffs_from_poles(poles: np.ndarray) -> np.ndarray:
    c = np.poly(poles)
    assert np.max(np.abs(c.imag)) < 1e-9
    return -c.real[1:]


def snr_db(reference: np.ndarray, test: np.ndarray) -> float:
    n = min(len(reference), len(test))
    ref, tst = reference[:n], test[:n]
    noise = ref - tst
    denom = float(np.sum(noise**2))
    if denom == 0:
        return np.inf
    return 10.0 * np.log10(float(np.sum(ref**2)) / denom)


def dominant_frequency(x: np.ndarray, fs: int) -> float:
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    return float(np.argmax(spec) * fs / len(x))


# Eight synthetic "speakers": distinct formant layouts and pitch ranges.
# Enough separation that a cepstral-statistics embedding can tell them
# apart. Identity is carried by F2/F3 and f0 (F1 is nearly shared): with a
# statistics embedding, envelope-warp damage to distinctiveness shows up
# where the phase warp is contractive, i.e. above ~640 Hz at 16 kHz.
SPEAKER_TABLE = [
    # (f0_hz, (F1, F2, F3), (bw1, bw2, bw3))
    (96.0, (500.0, 1000.0, 2400.0), (60.0, 90.0, 140.0)),
    (118.0, (530.0, 1150.0, 2850.0), (70.0, 100.0, 150.0)),
    (134.0, (490.0, 1300.0, 2500.0), (80.0, 110.0, 160.0)),
    (152.0, (520.0, 1450.0, 3000.0), (90.0, 120.0, 170.0)),
    (172.0, (480.0, 1600.0, 2600.0), (65.0, 95.0, 145.0)),
    (194.0, (540.0, 1750.0, 3100.0), (75.0, 105.0, 155.0)),
    (215.0, (510.0, 1900.0, 2700.0), (85.0, 115.0, 165.0)),
    (238.0, (500.0, 2050.0, 3200.0), (95.0, 125.0, 175.0)),
]


def synthetic_utterance(speaker: int, utt: int, duration_s: float = 0.7, fs: int = FS) -> AudioBuffer:
    """Deterministic speech-like utterance: jittered pulse train through
    a per-speaker formant filter, with mild per-utterance variation."""
    from scipy.signal import lfilter

    f0_base, formants, bws = SPEAKER_TABLE[speaker % len(SPEAKER_TABLE)]
    rng = np.random.default_rng(900_000 + 1000 * speaker + utt)
    n = int(round(duration_s * fs))

    f0 = f0_base * (1.0 + 0.05 * (rng.random() - 0.5))
    t = np.arange(n) / fs
    vibrato = 1.0 + 0.015 * np.sin(2 * np.pi * 5.3 * t + rng.random() * 6.28)
    phase = np.cumsum(f0 * vibrato / fs)
    exc = np.zeros(n)
    exc[np.diff(np.floor(phase), prepend=0.0) >= 1.0] = 1.0
    exc += 0.02 * rng.standard_normal(n)

    fr = [f * (1.0 + 0.03 * (rng.random() - 0.5)) for f in formants]
    poles = formant_poles(fr, bws, fs)
    a = np.poly(poles).real
    x = lfilter([1.0], a, exc)
    x *= 0.3 / np.max(np.abs(x))
    return AudioBuffer(samples=x, sample_rate_hz=fs)


def write_dataset(
    root,
    n_speakers: int = 3,
    utts_per_speaker: int = 3,
    duration_s: float = 0.7,
    utt_seed_offset: int = 0,
):
    """Write synthetic speaker wavs plus a manifest; returns manifest path."""
    from voxanon.audio_io import write_wav

    root = __import__("pathlib").Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rows = ["utt_id,speaker_id,audio_path"]
    for spk in range(n_speakers):
        (root / f"s{spk}").mkdir(exist_ok=True)
        for u in range(utts_per_speaker):
            rel = f"s{spk}/u{u}.wav"
            buf = synthetic_utterance(spk, u + utt_seed_offset, duration_s=duration_s)
            write_wav(buf, root / rel)
            rows.append(f"s{spk}_u{u},s{spk},{rel}")
    manifest = root / "manifest.csv"
    manifest.write_text("\n".join(rows) + "\n")
    return manifest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = []
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            if "test_acceptance" in rep.nodeid and getattr(rep, "when", "call") == "call":
                name = rep.nodeid.split("::")[-1]
                lines.append((name, "PASS" if status == "passed" else "FAIL"))
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, status in lines:
            terminalreporter.write_line(f"[{status}] {name}")
