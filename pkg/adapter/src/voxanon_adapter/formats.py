"""The harness's wire formats, written independently.

The adapter talks to the harness only through files, so the SAEB binary
layout and the CSV schemas are re-implemented here from their
documentation: SAEB is magic `SAEB`, u16 version (=1), u32 dimension,
u32 count, little-endian, then per entry a u16 length-prefixed UTF-8 id
and `dimension` float32 values. All writes are atomic (temp + rename).
"""

from __future__ import annotations

import csv
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import AdapterError

SAEB_MAGIC = b"SAEB"
SAEB_VERSION = 1

MANIFEST_HEADER = ["utt_id", "speaker_id", "audio_path"]
SCORES_HEADER = ["system", "utt_id", "metric", "value"]


@dataclass
class ManifestRecord:
    utt_id: str
    speaker_id: str
    audio_path: str


def read_manifest(path: str | Path, root: str | Path | None = None) -> list[ManifestRecord]:
    path = Path(path)
    base = Path(root) if root is not None else path.parent
    records = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = [c.strip() for c in next(reader)]
        except StopIteration:
            raise AdapterError(f"{path}: empty manifest") from None
        if header != MANIFEST_HEADER:
            raise AdapterError(f"{path}: manifest header must be {','.join(MANIFEST_HEADER)}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise AdapterError(f"{path}: malformed manifest row {row}")
            utt_id, speaker_id, audio_path = (c.strip() for c in row)
            records.append(ManifestRecord(utt_id, speaker_id, str(base / audio_path)))
    return records


def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_saeb(entries: list[tuple[str, np.ndarray]], path: str | Path) -> None:
    """Write (id, vector) pairs; every vector must share one dimension."""
    dims = {len(v) for _, v in entries}
    if len(dims) > 1:
        raise AdapterError(f"embedding dimensions are not uniform: {sorted(dims)}")
    dim = dims.pop() if dims else 0

    blob = bytearray()
    blob += SAEB_MAGIC
    blob += struct.pack("<HII", SAEB_VERSION, dim, len(entries))
    for eid, vec in entries:
        raw = eid.encode("utf-8")
        blob += struct.pack("<H", len(raw))
        blob += raw
        blob += np.asarray(vec, dtype="<f4").tobytes()
    _atomic_write(Path(path), bytes(blob))


def write_scores_csv(rows: list[tuple[str, str, str, float]], path: str | Path) -> None:
    """Write `system,utt_id,metric,value` rows (header always present)."""
    for system, utt_id, metric, value in rows:
        if not np.isfinite(value):
            raise AdapterError(f"non-finite score for {utt_id}: {value}")
    out = [",".join(SCORES_HEADER)]
    for system, utt_id, metric, value in rows:
        out.append(f"{system},{utt_id},{metric},{value:.6f}")
    _atomic_write(Path(path), ("\n".join(out) + "\n").encode("utf-8"))
