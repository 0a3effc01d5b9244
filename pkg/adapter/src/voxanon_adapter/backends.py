"""Pluggable extraction backends.

An extractor id resolves to a factory returning `path -> vector`; a
scorer id to a factory returning `path -> float`. Resolution checks the
built-in registry first, then the `voxanon_adapter.extractors` /
`voxanon_adapter.scorers` entry-point groups, so model-specific
packages can register ids without this package pinning any model.

The built-in backends are deterministic signal statistics: they exist so
jobs run (and stay testable) with no pretrained model installed, and
they are NOT substitutes for neural speaker embeddings or perceptual
quality predictors.
"""

from __future__ import annotations

from importlib.metadata import entry_points
from typing import Callable

import numpy as np

from . import ExtractorUnavailableError

Extractor = Callable[[str], np.ndarray]
Scorer = Callable[[str], float]

_EXTRACTORS: dict[str, Callable[[], Extractor]] = {}
_SCORERS: dict[str, Callable[[], Scorer]] = {}


def _load_mono(path: str) -> tuple[np.ndarray, int]:
    from scipy.io import wavfile

    rate, data = wavfile.read(path)
    x = np.asarray(data, dtype=np.float64)
    if x.ndim > 1:
        x = x.mean(axis=1)
    if np.issubdtype(np.asarray(data).dtype, np.integer):
        x = x / float(np.iinfo(np.asarray(data).dtype).max + 1)
    return x, int(rate)


def extractor_factory(name: str):
    def wrap(fn):
        _EXTRACTORS[name] = fn
        return fn

    return wrap


def scorer_factory(name: str):
    def wrap(fn):
        _SCORERS[name] = fn
        return fn

    return wrap


@extractor_factory("spectral-stats")
def _spectral_stats() -> Extractor:
    """64-dim log-band-energy statistics; deterministic, model-free."""
    n_bands = 32

    def extract(path: str) -> np.ndarray:
        x, rate = _load_mono(path)
        if len(x) < rate // 10:
            raise ExtractorUnavailableError(f"{path}: audio too short to summarize")
        frame, hop = 1024, 512
        n_frames = max(1, (len(x) - frame) // hop + 1)
        idx = np.arange(frame)[None, :] + hop * np.arange(n_frames)[:, None]
        spec = np.abs(np.fft.rfft(x[np.minimum(idx, len(x) - 1)] * np.hanning(frame), axis=1)) ** 2
        edges = np.linspace(0, spec.shape[1], n_bands + 1, dtype=int)
        bands = np.stack(
            [spec[:, lo:hi].mean(axis=1) for lo, hi in zip(edges[:-1], edges[1:])], axis=1
        )
        logb = np.log(np.maximum(bands, 1e-12))
        return np.concatenate([logb.mean(axis=0), logb.std(axis=0)]).astype(np.float32)

    return extract


@extractor_factory("speechbrain-ecapa")
def _speechbrain_ecapa() -> Extractor:
    """ECAPA-TDNN speaker embeddings via speechbrain, when installed."""
    try:
        import torch
        from speechbrain.inference.speaker import EncoderClassifier
    except ImportError as exc:
        raise ExtractorUnavailableError(
            "extractor 'speechbrain-ecapa' needs the speechbrain package"
        ) from exc

    classifier = EncoderClassifier.from_hparams(source="speechbrain/spkrec-ecapa-voxceleb")

    def extract(path: str) -> np.ndarray:
        x, _rate = _load_mono(path)
        with torch.no_grad():
            emb = classifier.encode_batch(torch.tensor(x, dtype=torch.float32)[None, :])
        return emb.squeeze().cpu().numpy().astype(np.float32)

    return extract


@scorer_factory("spectral-flatness")
def _spectral_flatness() -> Scorer:
    """Mean spectral flatness in dB; a crude, honest signal statistic."""

    def score(path: str) -> float:
        x, _rate = _load_mono(path)
        frame, hop = 1024, 512
        n_frames = max(1, (len(x) - frame) // hop + 1)
        idx = np.arange(frame)[None, :] + hop * np.arange(n_frames)[:, None]
        spec = np.abs(np.fft.rfft(x[np.minimum(idx, len(x) - 1)] * np.hanning(frame), axis=1)) ** 2
        spec = np.maximum(spec, 1e-12)
        flatness = np.exp(np.mean(np.log(spec), axis=1)) / np.mean(spec, axis=1)
        return float(10.0 * np.log10(flatness).mean())

    return score


def _from_entry_points(group: str, name: str):
    for ep in entry_points(group=group):
        if ep.name == name:
            return ep.load()
    return None


def resolve_extractor(name: str) -> Extractor:
    factory = _EXTRACTORS.get(name) or _from_entry_points("voxanon_adapter.extractors", name)
    if factory is None:
        raise ExtractorUnavailableError(
            f"unknown extractor '{name}' (builtins: {sorted(_EXTRACTORS)})"
        )
    return factory()


def resolve_scorer(name: str) -> Scorer:
    factory = _SCORERS.get(name) or _from_entry_points("voxanon_adapter.scorers", name)
    if factory is None:
        raise ExtractorUnavailableError(f"unknown scorer '{name}' (builtins: {sorted(_SCORERS)})")
    return factory()
