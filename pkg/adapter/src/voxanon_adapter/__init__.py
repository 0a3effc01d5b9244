"""Bridge between external pretrained models and the voxanon harness.

Extracts speaker embeddings and per-utterance quality scores with
pluggable backends and writes them in the harness's SAEB / CSV wire
formats. Nothing here is required by the harness itself.
"""

__version__ = "0.1.0"


class AdapterError(Exception):
    """Base error for adapter jobs."""


class ExtractorUnavailableError(AdapterError):
    """The requested backend (or its model weights) cannot be loaded."""
