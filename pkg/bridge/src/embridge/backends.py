"""Speaker-embedding backends.

``EcapaBackend`` wraps a pretrained speaker-identification network (via
speechbrain) and reads its embedding dimension from an actual forward pass,
so alternative networks remain usable. ``SpectralBackend`` is a
self-contained, fully deterministic DSP embedding (log-mel statistics under
a fixed projection) for environments without pretrained weights; it shares
the 192-dimension convention.
"""

from __future__ import annotations

import logging
from fractions import Fraction
from typing import Protocol

import numpy as np
import scipy.signal

log = logging.getLogger("embridge")

TARGET_SAMPLE_RATE = 16_000
SPECTRAL_DIM = 192


class EmbeddingBackend(Protocol):
    name: str
    dim: int

    def embed(self, waveform: np.ndarray, sample_rate: int) -> np.ndarray: ...


def resample_to_target(waveform: np.ndarray, sample_rate: int) -> np.ndarray:
    wav = np.asarray(waveform, dtype=np.float64)
    if wav.ndim == 2:  # average channels to mono
        wav = wav.mean(axis=1)
    if sample_rate != TARGET_SAMPLE_RATE:
        ratio = Fraction(TARGET_SAMPLE_RATE, int(sample_rate)).limit_denominator(1000)
        wav = scipy.signal.resample_poly(wav, ratio.numerator, ratio.denominator)
    return wav


class SpectralBackend:
    """Deterministic 192-dim embedding: log-mel statistics, fixed projection.

    Not a trained speaker model; it exists so the extraction pipeline and
    file formats are exercisable end to end without downloads. Identical
    input bytes produce identical vectors.
    """

    name = "spectral"

    _N_MELS = 40
    _FRAME = 400  # 25 ms at 16 kHz
    _HOP = 160  # 10 ms
    _PROJECTION_SEED = 0x5EED

    def __init__(self, dim: int = SPECTRAL_DIM):
        self.dim = dim
        stats_dim = 2 * self._N_MELS
        rng = np.random.Generator(np.random.PCG64(self._PROJECTION_SEED))
        raw = rng.standard_normal((stats_dim, dim))
        # orthonormal columns keep the projection well-conditioned
        q, _ = np.linalg.qr(raw.T)
        self._projection = q.T[:stats_dim, :dim]
        self._mel_filters = _mel_filterbank(self._N_MELS, self._FRAME, TARGET_SAMPLE_RATE)
        self._window = np.hanning(self._FRAME)

    def embed(self, waveform: np.ndarray, sample_rate: int) -> np.ndarray:
        wav = resample_to_target(waveform, sample_rate)
        if wav.size < self._FRAME:
            wav = np.pad(wav, (0, self._FRAME - wav.size))
        n_frames = 1 + (wav.size - self._FRAME) // self._HOP
        idx = np.arange(self._FRAME)[None, :] + self._HOP * np.arange(n_frames)[:, None]
        frames = wav[idx] * self._window
        power = np.abs(np.fft.rfft(frames, axis=1)) ** 2
        mel = np.log(power @ self._mel_filters.T + 1e-10)
        stats = np.concatenate([mel.mean(axis=0), mel.std(axis=0)])
        vec = stats @ self._projection
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec = vec / norm
        return vec.astype(np.float32)


class EcapaBackend:
    """Pretrained speaker-embedding network loaded through speechbrain.

    ``model_source`` is a local directory (or hub identifier) holding the
    pretrained model; the embedding dimension is read from a probe forward
    pass rather than hard-coded.
    """

    name = "ecapa"

    def __init__(self, model_source: str, savedir: str | None = None):
        try:
            import torch
            from speechbrain.inference import EncoderClassifier
        except ImportError as exc:  # pragma: no cover - environment dependent
            raise RuntimeError(
                "the ecapa backend needs the optional dependencies: "
                "pip install 'reidrisk-bridge[ecapa]'"
            ) from exc
        self._torch = torch
        self._encoder = EncoderClassifier.from_hparams(
            source=model_source, savedir=savedir or model_source, run_opts={"device": "cpu"}
        )
        self._encoder.eval()
        probe = torch.zeros(1, TARGET_SAMPLE_RATE // 2)
        with torch.no_grad():
            out = self._encoder.encode_batch(probe)
        self.dim = int(out.shape[-1])
        log.info("ecapa backend ready (dim=%d, source=%s)", self.dim, model_source)

    def embed(self, waveform: np.ndarray, sample_rate: int) -> np.ndarray:
        wav = resample_to_target(waveform, sample_rate)
        sig = self._torch.tensor(wav, dtype=self._torch.float32).unsqueeze(0)
        with self._torch.no_grad():
            out = self._encoder.encode_batch(sig)
        return out.squeeze().cpu().numpy().astype(np.float32)


def resolve_backend(name: str = "auto", model_source: str | None = None) -> EmbeddingBackend:
    """Pick the backend: the pretrained network when requested/available,
    otherwise the deterministic spectral fallback."""
    if name == "spectral":
        return SpectralBackend()
    if name == "ecapa":
        if not model_source:
            raise ValueError("the ecapa backend needs --model-source")
        return EcapaBackend(model_source)
    if name == "auto":
        if model_source:
            try:
                return EcapaBackend(model_source)
            except RuntimeError as exc:
                log.warning("falling back to spectral backend: %s", exc)
        return SpectralBackend()
    raise ValueError(f"unknown backend {name!r}; expected auto, ecapa, or spectral")


def _mel_filterbank(n_mels: int, frame: int, sample_rate: int) -> np.ndarray:
    n_bins = frame // 2 + 1
    freqs = np.linspace(0.0, sample_rate / 2, n_bins)

    def to_mel(hz):
        return 2595.0 * np.log10(1.0 + hz / 700.0)

    def to_hz(mel):
        return 700.0 * (10.0 ** (mel / 2595.0) - 1.0)

    edges = to_hz(np.linspace(to_mel(0.0), to_mel(sample_rate / 2), n_mels + 2))
    bank = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (freqs - lo) / max(mid - lo, 1e-12)
        down = (hi - freqs) / max(hi - mid, 1e-12)
        bank[m] = np.clip(np.minimum(up, down), 0.0, None)
    return bank
