"""Waveform file I/O, resampling and dataset manifests.

WAV support is a deliberately small native parser: RIFF/WAVE containers
holding 16-bit PCM or 32-bit IEEE float, mono or multichannel. Anything
else is rejected with a typed error rather than half-read.
"""

from __future__ import annotations

import csv
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import firwin, resample_poly

from .errors import FormatError, SchemaError, UnsupportedFormatError, ValidationError

log = logging.getLogger(__name__)

WORKING_RATE_HZ = 16_000

_PCM_SCALE = 32768.0
_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass
class AudioBuffer:
    """Mono PCM signal; samples are float64 amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValidationError("AudioBuffer samples must be one-dimensional")
        if self.sample_rate_hz <= 0:
            raise ValidationError("sample rate must be positive")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class UtteranceRecord:
    utt_id: str
    speaker_id: str
    audio_path: str


@dataclass
class DatasetManifest:
    records: list[UtteranceRecord]
    root_dir: Path

    def resolve(self, record: UtteranceRecord) -> Path:
        return Path(self.root_dir) / Path(record.audio_path)

    def speakers(self) -> list[str]:
        seen: dict[str, None] = {}
        for r in self.records:
            seen.setdefault(r.speaker_id, None)
        return list(seen)

    def __len__(self) -> int:
        return len(self.records)


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated WAV file while reading {what}")
    return data


def read_wav(path: str | Path) -> AudioBuffer:
    """Read a RIFF/WAVE file as a mono AudioBuffer.

    Multichannel files are averaged down to mono. 16-bit PCM is scaled by
    1/32768; float data is clipped into [-1, 1].
    """
    path = Path(path)
    with open(path, "rb") as f:
        riff = f.read(12)
        if len(riff) < 12 or riff[:4] != b"RIFF" or riff[8:12] != b"WAVE":
            raise FormatError(f"{path}: not a RIFF/WAVE file")

        fmt = None
        data = None
        while True:
            header = f.read(8)
            if len(header) == 0:
                break
            if len(header) < 8:
                raise FormatError(f"{path}: truncated chunk header")
            chunk_id, size = struct.unpack("<4sI", header)
            if chunk_id == b"fmt ":
                if size < 16:
                    raise FormatError(f"{path}: fmt chunk too short")
                fmt = _read_exact(f, size, "fmt chunk")
            elif chunk_id == b"data":
                data = f.read(size)
                if len(data) < size:
                    log.warning("%s: data chunk shorter than declared (%d < %d)", path, len(data), size)
                    break
            else:
                f.seek(size, 1)
            if size & 1:  # chunks are word-aligned
                f.seek(1, 1)

        if fmt is None or data is None:
            raise FormatError(f"{path}: missing fmt or data chunk")

    tag, channels, rate, _byte_rate, _block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == _WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 26:
            raise FormatError(f"{path}: truncated WAVE_FORMAT_EXTENSIBLE fmt chunk")
        tag = struct.unpack("<H", fmt[24:26])[0]

    if channels < 1 or rate == 0:
        raise FormatError(f"{path}: nonsensical fmt fields")

    if tag == _WAVE_FORMAT_PCM and bits == 16:
        raw = np.frombuffer(data[: (len(data) // (2 * channels)) * 2 * channels], dtype="<i2")
        samples = raw.astype(np.float64) / _PCM_SCALE
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        raw = np.frombuffer(data[: (len(data) // (4 * channels)) * 4 * channels], dtype="<f4")
        samples = np.clip(raw.astype(np.float64), -1.0, 1.0)
    else:
        raise UnsupportedFormatError(f"{path}: unsupported encoding (format tag {tag}, {bits}-bit)")

    if channels > 1:
        samples = samples.reshape(-1, channels).mean(axis=1)

    return AudioBuffer(samples=samples, sample_rate_hz=int(rate))


def write_wav(buffer: AudioBuffer, path: str | Path) -> int:
    """Write a mono 16-bit PCM file; returns the number of clipped samples.

    Out-of-range samples are hard-clipped to [-1, 1] before quantization
    and counted so batch reports can surface them.
    """
    if len(buffer.samples) == 0:
        raise ValidationError("refusing to write an empty buffer")

    clipped = int(np.count_nonzero(np.abs(buffer.samples) > 1.0))
    if clipped:
        log.warning("write_wav %s: clipped %d out-of-range samples", path, clipped)
    x = np.clip(buffer.samples, -1.0, 1.0)
    pcm = np.clip(np.round(x * _PCM_SCALE), -32768, 32767).astype("<i2")

    payload = pcm.tobytes()
    fmt = struct.pack("<HHIIHH", _WAVE_FORMAT_PCM, 1, buffer.sample_rate_hz,
                      buffer.sample_rate_hz * 2, 2, 16)
    with open(path, "wb") as f:
        f.write(b"RIFF")
        f.write(struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(payload)))
        f.write(b"WAVE")
        f.write(struct.pack("<4sI", b"fmt ", len(fmt)))
        f.write(fmt)
        f.write(struct.pack("<4sI", b"data", len(payload)))
        f.write(payload)
    return clipped


def resample(buffer: AudioBuffer, target_rate_hz: int) -> AudioBuffer:
    """Band-limited polyphase resampling (Kaiser-windowed sinc).

    Identity when the rate already matches. Output length is
    round(n * target / source), so duration is preserved to within one
    sample period.
    """
    if buffer.sample_rate_hz < 8000 or target_rate_hz < 8000:
        raise ValidationError("resample supports rates >= 8000 Hz only")
    if target_rate_hz == buffer.sample_rate_hz:
        return buffer

    g = math.gcd(buffer.sample_rate_hz, target_rate_hz)
    up = target_rate_hz // g
    down = buffer.sample_rate_hz // g

    # 64 taps per polyphase branch; quality is ample for 16 kHz speech
    max_rate = max(up, down)
    half_len = 32 * max_rate
    h = firwin(2 * half_len + 1, 1.0 / max_rate, window=("kaiser", 8.6)) * up

    out = resample_poly(buffer.samples, up, down, window=h)
    target_len = (len(buffer.samples) * up + down // 2) // down
    out = out[:target_len]
    if len(out) < target_len:
        out = np.pad(out, (0, target_len - len(out)))
    return AudioBuffer(samples=out, sample_rate_hz=target_rate_hz)


MANIFEST_COLUMNS = ["utt_id", "speaker_id", "audio_path"]


def load_manifest(path: str | Path, root_dir: str | Path | None = None) -> DatasetManifest:
    """Load a `utt_id,speaker_id,audio_path` CSV manifest.

    Paths are interpreted relative to ``root_dir`` (defaults to the
    manifest's own directory).
    """
    path = Path(path)
    root = Path(root_dir) if root_dir is not None else path.parent

    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty manifest file (missing header)") from None
        if [c.strip() for c in header] != MANIFEST_COLUMNS:
            raise SchemaError(
                f"{path}: manifest header must be exactly {','.join(MANIFEST_COLUMNS)}"
            )

        records: list[UtteranceRecord] = []
        seen: set[str] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ValidationError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            utt_id, speaker_id, audio_path = (c.strip() for c in row)
            if not utt_id or not speaker_id or not audio_path:
                raise ValidationError(f"{path}:{lineno}: empty field")
            if utt_id in seen:
                raise ValidationError(f"{path}:{lineno}: duplicate utt_id '{utt_id}'")
            seen.add(utt_id)
            records.append(UtteranceRecord(utt_id=utt_id, speaker_id=speaker_id, audio_path=audio_path))

    if not records:
        log.warning("%s: manifest contains no records", path)
    return DatasetManifest(records=records, root_dir=root)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_COLUMNS)
        for r in manifest.records:
            writer.writerow([r.utt_id, r.speaker_id, r.audio_path])
