"""Writers for the toolkit interchange formats.

Implemented against the documented contract (not by importing the consumer):
a CSV manifest `recording_id,speaker_id,task,row_index` and the `VEMB`
binary container (magic VEMB, version u16=1, dim u32, rows u64,
little-endian, then rows x dim float32 row-major).
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"VEMB"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIQ")

MANIFEST_HEADER = "recording_id,speaker_id,task,row_index"
VALID_TASKS = frozenset(
    {"sentence", "reading", "word", "smr", "amr", "vowel", "unstructured"}
)


def write_manifest(path: str | Path, rows: list[tuple[str, str, str]]) -> None:
    """Write manifest rows (recording_id, speaker_id, task); row_index follows
    list order."""
    lines = [MANIFEST_HEADER]
    for index, (recording_id, speaker_id, task) in enumerate(rows):
        if task not in VALID_TASKS:
            raise ValueError(f"invalid task {task!r}; expected one of {sorted(VALID_TASKS)}")
        lines.append(f"{recording_id},{speaker_id},{task},{index}")
    _atomic_write(Path(path), ("\n".join(lines) + "\n").encode("utf-8"))


def write_embeddings(path: str | Path, matrix: np.ndarray) -> None:
    arr = np.ascontiguousarray(np.asarray(matrix, dtype="<f4"))
    if arr.ndim != 2:
        raise ValueError(f"embedding matrix must be 2-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("embedding matrix contains non-finite values")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, arr.shape[1], arr.shape[0])
    _atomic_write(Path(path), header + arr.tobytes())


def _atomic_write(path: Path, blob: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)
