"""Audio-to-embedding bridge: turn directories of recordings into the
re-identification toolkit's manifest + embedding interchange files."""

from .backends import EcapaBackend, SpectralBackend, resolve_backend
from .extract import AudioItem, ExtractReport, SidecarError, extract, read_sidecar

__version__ = "0.1.0"
