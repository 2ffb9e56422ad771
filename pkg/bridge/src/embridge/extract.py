"""Batch extraction: a directory of audio files plus a sidecar CSV become a
manifest + embedding file pair in the toolkit's interchange formats."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io.wavfile

from .backends import EmbeddingBackend
from .formats import VALID_TASKS, write_embeddings, write_manifest

log = logging.getLogger("embridge")

SIDECAR_FIELDS = ("filename", "speaker_id", "task")
AUDIO_SUFFIXES = (".wav",)


class SidecarError(ValueError):
    """Malformed sidecar CSV or audio/sidecar mismatch."""


@dataclass(frozen=True)
class AudioItem:
    path: Path
    recording_id: str
    speaker_id: str
    task: str


@dataclass
class ExtractReport:
    items: list[AudioItem]
    skipped: list[tuple[Path, str]]
    manifest_path: Path
    embeddings_path: Path
    dim: int


def read_sidecar(path: str | Path) -> dict[str, tuple[str, str]]:
    """filename -> (speaker_id, task)."""
    path = Path(path)
    mapping: dict[str, tuple[str, str]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SidecarError(f"{path}: empty sidecar, expected header line") from None
        if tuple(h.strip() for h in header) != SIDECAR_FIELDS:
            raise SidecarError(
                f"{path}: line 1: expected header {','.join(SIDECAR_FIELDS)!r}, "
                f"got {','.join(header)!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise SidecarError(f"{path}: line {lineno}: expected 3 fields, got {len(row)}")
            filename, speaker_id, task = (f.strip() for f in row)
            if task not in VALID_TASKS:
                raise SidecarError(
                    f"{path}: line {lineno}: unknown task {task!r}; "
                    f"expected one of {sorted(VALID_TASKS)}"
                )
            if filename in mapping:
                raise SidecarError(f"{path}: line {lineno}: duplicate filename {filename!r}")
            mapping[filename] = (speaker_id, task)
    return mapping


def collect_items(audio_dir: str | Path, sidecar: dict[str, tuple[str, str]]) -> list[AudioItem]:
    """Pair audio files with sidecar rows; every file needs a row and vice
    versa. Output is sorted by recording_id for deterministic row order."""
    audio_dir = Path(audio_dir)
    files = sorted(
        p for p in audio_dir.iterdir() if p.is_file() and p.suffix.lower() in AUDIO_SUFFIXES
    )
    missing = [p.name for p in files if p.name not in sidecar]
    if missing:
        raise SidecarError(f"no sidecar row for audio files: {missing[:5]}")
    orphaned = sorted(set(sidecar) - {p.name for p in files})
    if orphaned:
        raise SidecarError(f"sidecar rows without audio files: {orphaned[:5]}")
    items = []
    seen_ids: set[str] = set()
    for path in files:
        recording_id = path.stem
        if recording_id in seen_ids:
            raise SidecarError(f"duplicate recording_id {recording_id!r} (filename stems collide)")
        seen_ids.add(recording_id)
        speaker_id, task = sidecar[path.name]
        items.append(AudioItem(path=path, recording_id=recording_id, speaker_id=speaker_id, task=task))
    return sorted(items, key=lambda item: item.recording_id)


def decode_wav(path: Path) -> tuple[np.ndarray, int]:
    sample_rate, data = scipy.io.wavfile.read(path)
    data = np.asarray(data)
    if data.dtype.kind == "i":
        data = data.astype(np.float64) / float(np.iinfo(data.dtype).max)
    elif data.dtype.kind == "u":  # 8-bit unsigned PCM
        data = (data.astype(np.float64) - 128.0) / 128.0
    else:
        data = data.astype(np.float64)
    if data.size == 0:
        raise ValueError("empty audio stream")
    return data, int(sample_rate)


def extract(
    audio_dir: str | Path,
    sidecar_csv: str | Path,
    out_dir: str | Path,
    backend: EmbeddingBackend,
) -> ExtractReport:
    """Embed every decodable audio file and write manifest + embeddings.

    Undecodable files are skipped with a logged reason and excluded from the
    manifest; the embedding dimension comes from the backend at runtime.
    """
    sidecar = read_sidecar(sidecar_csv)
    items = collect_items(audio_dir, sidecar)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    kept: list[AudioItem] = []
    skipped: list[tuple[Path, str]] = []
    vectors: list[np.ndarray] = []
    for item in items:
        try:
            waveform, sample_rate = decode_wav(item.path)
        except Exception as exc:
            log.warning("skipping %s: %s", item.path.name, exc)
            skipped.append((item.path, str(exc)))
            continue
        vectors.append(backend.embed(waveform, sample_rate))
        kept.append(item)

    matrix = (
        np.stack(vectors).astype(np.float32)
        if vectors
        else np.empty((0, backend.dim), dtype=np.float32)
    )
    manifest_path = out_dir / "manifest.csv"
    embeddings_path = out_dir / "embeddings.vemb"
    write_manifest(manifest_path, [(i.recording_id, i.speaker_id, i.task) for i in kept])
    write_embeddings(embeddings_path, matrix)
    log.info(
        "extracted %d/%d recordings (dim=%d, backend=%s) to %s",
        len(kept), len(items), backend.dim, backend.name, out_dir,
    )
    return ExtractReport(
        items=kept,
        skipped=skipped,
        manifest_path=manifest_path,
        embeddings_path=embeddings_path,
        dim=int(matrix.shape[1]),
    )
