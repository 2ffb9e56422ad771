"""Recording manifests and embedding matrices: validation, cross-checks, file I/O.

The on-disk formats here are the interchange contract with external tooling
(including the audio bridge): a CSV manifest and a small binary container for
32-bit float embedding rows.
"""

from __future__ import annotations

import csv
import os
import struct
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"VEMB"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIQ")  # magic, version u16, dim u32, rows u64

MANIFEST_FIELDS = ("recording_id", "speaker_id", "task", "row_index")


class Task(str, Enum):
    """Elicited speech task of a recording (``unstructured`` = free speech)."""

    SENTENCE = "sentence"
    READING = "reading"
    WORD = "word"
    SMR = "smr"
    AMR = "amr"
    VOWEL = "vowel"
    UNSTRUCTURED = "unstructured"


class ManifestError(ValueError):
    """Malformed or inconsistent manifest CSV; message carries the line number."""


class EmbeddingFormatError(ValueError):
    """Malformed embedding file (bad magic, truncation, non-finite payload)."""


class DatasetError(ValueError):
    """Manifest and matrix do not cross-reference cleanly."""


class OrphanRowsWarning(UserWarning):
    """Matrix rows not referenced by any manifest record."""


@dataclass(frozen=True)
class RecordingRecord:
    recording_id: str
    speaker_id: str
    task: Task
    row_index: int


@dataclass
class EmbeddingMatrix:
    """Row-major float32 matrix, one row per recording.

    float32 is the storage dtype of the interchange format; numerical
    consumers convert to float64 after load.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(np.asarray(self.data, dtype=np.float32))
        if arr.ndim != 2:
            raise ValueError(f"embedding matrix must be 2-D, got shape {arr.shape}")
        if arr.shape[1] < 1:
            raise ValueError("embedding dimension must be positive")
        if not np.isfinite(arr).all():
            raise ValueError("embedding matrix contains non-finite values")
        self.data = arr

    @classmethod
    def empty(cls, dim: int) -> "EmbeddingMatrix":
        return cls(np.empty((0, dim), dtype=np.float32))

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])

    @property
    def rows(self) -> int:
        return int(self.data.shape[0])


@dataclass
class EmbeddingDataset:
    """Validated manifest + matrix with a derived speaker -> recordings map."""

    manifest: list[RecordingRecord]
    matrix: EmbeddingMatrix
    speakers: dict[str, list[str]] = field(init=False)
    _by_id: dict[str, RecordingRecord] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._by_id = {rec.recording_id: rec for rec in self.manifest}
        speakers: dict[str, list[str]] = {}
        for rec in self.manifest:
            speakers.setdefault(rec.speaker_id, []).append(rec.recording_id)
        self.speakers = speakers

    @property
    def n_recordings(self) -> int:
        return len(self.manifest)

    @property
    def n_speakers(self) -> int:
        return len(self.speakers)

    @property
    def dim(self) -> int:
        return self.matrix.dim

    def record(self, recording_id: str) -> RecordingRecord:
        return self._by_id[recording_id]

    def vector(self, recording_id: str) -> np.ndarray:
        return self.matrix.data[self._by_id[recording_id].row_index]

    def rows_for(self, recording_ids: Iterable[str]) -> np.ndarray:
        idx = [self._by_id[r].row_index for r in recording_ids]
        return self.matrix.data[idx]


def load_manifest(path: str | Path) -> list[RecordingRecord]:
    """Parse a manifest CSV, reporting the offending line on any violation."""
    path = Path(path)
    records: list[RecordingRecord] = []
    seen_ids: dict[str, int] = {}
    seen_rows: dict[int, int] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty file, expected header line") from None
        if tuple(h.strip() for h in header) != MANIFEST_FIELDS:
            raise ManifestError(
                f"{path}: line 1: expected header {','.join(MANIFEST_FIELDS)!r}, "
                f"got {','.join(header)!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_FIELDS):
                raise ManifestError(
                    f"{path}: line {lineno}: expected {len(MANIFEST_FIELDS)} fields, "
                    f"got {len(row)}"
                )
            rec_id, spk_id, task_str, row_str = (f.strip() for f in row)
            if not rec_id:
                raise ManifestError(f"{path}: line {lineno}: empty recording_id")
            if not spk_id:
                raise ManifestError(f"{path}: line {lineno}: empty speaker_id")
            if rec_id in seen_ids:
                raise ManifestError(
                    f"{path}: line {lineno}: duplicate recording_id {rec_id!r} "
                    f"(first seen on line {seen_ids[rec_id]})"
                )
            try:
                task = Task(task_str)
            except ValueError:
                raise ManifestError(
                    f"{path}: line {lineno}: unknown task {task_str!r}; "
                    f"expected one of {sorted(t.value for t in Task)}"
                ) from None
            try:
                row_index = int(row_str)
            except ValueError:
                raise ManifestError(
                    f"{path}: line {lineno}: row_index {row_str!r} is not an integer"
                ) from None
            if row_index < 0:
                raise ManifestError(
                    f"{path}: line {lineno}: row_index {row_index} is negative"
                )
            if row_index in seen_rows:
                raise ManifestError(
                    f"{path}: line {lineno}: duplicate row_index {row_index} "
                    f"(first seen on line {seen_rows[row_index]})"
                )
            seen_ids[rec_id] = lineno
            seen_rows[row_index] = lineno
            records.append(RecordingRecord(rec_id, spk_id, task, row_index))
    return records


def write_manifest(path: str | Path, records: Sequence[RecordingRecord]) -> None:
    path = Path(path)
    lines = [",".join(MANIFEST_FIELDS)]
    for rec in records:
        lines.append(
            f"{rec.recording_id},{rec.speaker_id},{rec.task.value},{rec.row_index}"
        )
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    """Read an embedding file; round-trips bit-exactly with write_embeddings."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise EmbeddingFormatError(
            f"{path}: file too short for header ({len(blob)} < {_HEADER.size} bytes)"
        )
    magic, version, dim, rows = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise EmbeddingFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise EmbeddingFormatError(
            f"{path}: unsupported format version {version}, expected {FORMAT_VERSION}"
        )
    if dim < 1:
        raise EmbeddingFormatError(f"{path}: declared dim {dim} is not positive")
    expected = dim * rows * 4
    actual = len(blob) - _HEADER.size
    if actual != expected:
        raise EmbeddingFormatError(
            f"{path}: payload size mismatch: expected {expected} bytes "
            f"({rows} rows x {dim} dims x 4), got {actual}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(rows, dim)
    if not np.isfinite(data).all():
        raise EmbeddingFormatError(f"{path}: payload contains non-finite values")
    return EmbeddingMatrix(data.copy())


def write_embeddings(path: str | Path, matrix: EmbeddingMatrix) -> None:
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, matrix.dim, matrix.rows)
    payload = np.ascontiguousarray(matrix.data, dtype="<f4").tobytes()
    _atomic_write_bytes(Path(path), header + payload)


def assemble_dataset(
    records: Sequence[RecordingRecord], matrix: EmbeddingMatrix
) -> EmbeddingDataset:
    """Cross-validate manifest against matrix and build the dataset.

    Unreferenced matrix rows produce an OrphanRowsWarning (shared matrices
    with task-filtered manifests are legitimate); out-of-range references
    are errors.
    """
    seen_ids: set[str] = set()
    referenced: set[int] = set()
    for rec in records:
        if rec.recording_id in seen_ids:
            raise DatasetError(f"duplicate recording_id {rec.recording_id!r}")
        seen_ids.add(rec.recording_id)
        if rec.row_index < 0 or rec.row_index >= matrix.rows:
            raise DatasetError(
                f"recording {rec.recording_id!r}: row_index {rec.row_index} out of "
                f"range for a matrix of {matrix.rows} rows"
            )
        if rec.row_index in referenced:
            raise DatasetError(
                f"recording {rec.recording_id!r}: row_index {rec.row_index} "
                "referenced more than once"
            )
        referenced.add(rec.row_index)
    orphans = sorted(set(range(matrix.rows)) - referenced)
    if orphans:
        warnings.warn(
            f"{len(orphans)} matrix rows unreferenced by the manifest: "
            f"{orphans[:20]}{'...' if len(orphans) > 20 else ''}",
            OrphanRowsWarning,
            stacklevel=2,
        )
    return EmbeddingDataset(manifest=list(records), matrix=matrix)


def load_dataset(manifest_path: str | Path, embeddings_path: str | Path) -> EmbeddingDataset:
    return assemble_dataset(load_manifest(manifest_path), load_embeddings(embeddings_path))


def _atomic_write_bytes(path: Path, blob: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)
