"""Synthetic embedding worlds sampled from the two-covariance generative model.

Worlds provide desk-scale stand-ins for real speaker datasets, optional
per-task offsets/extra variance to mimic elicited-task mismatch, and a
direct-density LLR oracle used as ground truth for the scoring backend.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import scipy.linalg

from .dataio import EmbeddingDataset, EmbeddingMatrix, RecordingRecord, Task, assemble_dataset
from .plda import PldaModel

_ORACLE_MAX_DIM = 16


@dataclass
class TaskEffect:
    """Additive offset plus extra within-task covariance for one task."""

    offset: np.ndarray
    extra_within: float | np.ndarray = 0.0

    def __post_init__(self) -> None:
        self.offset = np.asarray(self.offset, dtype=np.float64)


@dataclass
class WorldParams:
    dim: int
    n_speakers: int
    recordings_per_speaker: int | Mapping[str, int] = 2
    phi_b: float | np.ndarray = 1.0
    phi_w: float | np.ndarray = 1.0
    task_effects: dict[str, TaskEffect] | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.n_speakers < 1:
            raise ValueError("n_speakers must be positive")
        for task, count in self.task_plan():
            if count < 1:
                raise ValueError(f"task {task.value!r}: recording count must be >= 1")

    def task_plan(self) -> list[tuple[Task, int]]:
        """Tasks and per-speaker recording counts, in fixed (sorted) order."""
        if isinstance(self.recordings_per_speaker, int):
            return [(Task.UNSTRUCTURED, self.recordings_per_speaker)]
        plan = [(Task(t), int(n)) for t, n in self.recordings_per_speaker.items()]
        return sorted(plan, key=lambda item: item[0].value)

    def phi_b_matrix(self) -> np.ndarray:
        return _as_covariance(self.phi_b, self.dim, "phi_b", require_pd=False)

    def phi_w_matrix(self) -> np.ndarray:
        return _as_covariance(self.phi_w, self.dim, "phi_w", require_pd=True)

    def to_json(self) -> str:
        def cov(v):
            return v if np.isscalar(v) else np.asarray(v).tolist()

        payload = {
            "dim": self.dim,
            "n_speakers": self.n_speakers,
            "recordings_per_speaker": (
                self.recordings_per_speaker
                if isinstance(self.recordings_per_speaker, int)
                else {str(k): int(v) for k, v in self.recordings_per_speaker.items()}
            ),
            "phi_b": cov(self.phi_b),
            "phi_w": cov(self.phi_w),
            "task_effects": None
            if self.task_effects is None
            else {
                t: {"offset": eff.offset.tolist(), "extra_within": cov(eff.extra_within)}
                for t, eff in self.task_effects.items()
            },
            "seed": self.seed,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "WorldParams":
        raw = json.loads(text)
        effects = None
        if raw.get("task_effects"):
            effects = {
                t: TaskEffect(
                    offset=np.asarray(spec["offset"], dtype=np.float64),
                    extra_within=_maybe_array(spec.get("extra_within", 0.0)),
                )
                for t, spec in raw["task_effects"].items()
            }
        rps = raw.get("recordings_per_speaker", 2)
        if isinstance(rps, dict):
            rps = {str(k): int(v) for k, v in rps.items()}
        return cls(
            dim=int(raw["dim"]),
            n_speakers=int(raw["n_speakers"]),
            recordings_per_speaker=rps,
            phi_b=_maybe_array(raw.get("phi_b", 1.0)),
            phi_w=_maybe_array(raw.get("phi_w", 1.0)),
            task_effects=effects,
            seed=int(raw.get("seed", 0)),
        )

    @classmethod
    def from_json_file(cls, path: str | Path) -> "WorldParams":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass
class SampledWorld:
    """Dataset plus the hidden per-speaker latents that generated it.

    Latents are for white-box test assertions only; they never feed the
    attack pipeline.
    """

    dataset: EmbeddingDataset
    latents: dict[str, np.ndarray]
    params: WorldParams
    speaker_ids: list[str] = field(init=False)

    def __post_init__(self) -> None:
        self.speaker_ids = list(self.latents)


def sample_world(params: WorldParams) -> SampledWorld:
    """Draw a dataset from the generative model; bit-identical per seed."""
    d = params.dim
    phi_b = params.phi_b_matrix()
    phi_w = params.phi_w_matrix()
    b_factor = _psd_sqrt(phi_b)
    plan = params.task_plan()
    effects = params.task_effects or {}
    task_factors: dict[Task, tuple[np.ndarray, np.ndarray]] = {}
    for task, _ in plan:
        eff = effects.get(task.value)
        offset = np.zeros(d) if eff is None else eff.offset
        if offset.shape != (d,):
            raise ValueError(f"task {task.value!r}: offset shape {offset.shape} != ({d},)")
        extra = 0.0 if eff is None else eff.extra_within
        cov = phi_w + _as_covariance(extra, d, f"extra_within[{task.value}]", require_pd=False)
        task_factors[task] = (offset, np.linalg.cholesky(cov))

    rng = np.random.default_rng(params.seed)
    width = max(4, len(str(params.n_speakers - 1)))
    records: list[RecordingRecord] = []
    rows: list[np.ndarray] = []
    latents: dict[str, np.ndarray] = {}
    row_index = 0
    for i in range(params.n_speakers):
        spk = f"s{i:0{width}d}"
        y = b_factor @ rng.standard_normal(d)
        latents[spk] = y
        for task, count in plan:
            offset, w_factor = task_factors[task]
            for k in range(count):
                x = y + offset + w_factor @ rng.standard_normal(d)
                records.append(
                    RecordingRecord(f"{spk}_{task.value}_{k}", spk, task, row_index)
                )
                rows.append(x)
                row_index += 1
    matrix = EmbeddingMatrix(np.asarray(rows, dtype=np.float32))
    return SampledWorld(dataset=assemble_dataset(records, matrix), latents=latents, params=params)


def oracle_llr(source: PldaModel | WorldParams, a: np.ndarray, b: np.ndarray) -> float:
    """Brute-force LLR: two dense 2*dim Gaussian log-densities, subtracted.

    Deliberately avoids the scoring kernel's closed form: the stacked
    same-speaker and different-speaker covariances are built explicitly and
    evaluated with a generic Cholesky-based log-pdf.
    """
    if isinstance(source, PldaModel):
        mu, phi_b, phi_w = source.mu, source.phi_b, source.phi_w
    else:
        mu = np.zeros(source.dim)
        phi_b, phi_w = source.phi_b_matrix(), source.phi_w_matrix()
    d = mu.shape[0]
    if d > _ORACLE_MAX_DIM:
        raise ValueError(f"oracle supports dim <= {_ORACLE_MAX_DIM}, got {d}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != (d,) or b.shape != (d,):
        raise ValueError(f"expected two ({d},) vectors, got {a.shape} and {b.shape}")

    total = phi_b + phi_w
    same = np.block([[total, phi_b], [phi_b, total]])
    diff = np.block([[total, np.zeros((d, d))], [np.zeros((d, d)), total]])
    stacked = np.concatenate([a, b])
    mean = np.concatenate([mu, mu])
    return _mvn_logpdf(stacked, mean, same) - _mvn_logpdf(stacked, mean, diff)


def _mvn_logpdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    k = x.shape[0]
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValueError("singular joint covariance in oracle evaluation") from None
    sol = scipy.linalg.solve_triangular(chol, x - mean, lower=True)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return float(-0.5 * (k * np.log(2.0 * np.pi) + logdet + sol @ sol))


def _as_covariance(value, dim: int, name: str, require_pd: bool) -> np.ndarray:
    if np.isscalar(value):
        scalar = float(value)
        if scalar < 0 or (require_pd and scalar <= 0):
            raise ValueError(f"{name}: scalar covariance {scalar} invalid")
        return scalar * np.eye(dim)
    mat = np.asarray(value, dtype=np.float64)
    if mat.shape != (dim, dim):
        raise ValueError(f"{name}: shape {mat.shape} != ({dim}, {dim})")
    if np.abs(mat - mat.T).max() > 1e-10 * max(np.abs(mat).max(), 1.0):
        raise ValueError(f"{name}: not symmetric")
    eigs = np.linalg.eigvalsh(mat)
    floor = -1e-10 * max(abs(eigs).max(), 1.0)
    if require_pd and eigs.min() <= 0:
        raise ValueError(f"{name}: not positive definite (min eig {eigs.min():g})")
    if not require_pd and eigs.min() < floor:
        raise ValueError(f"{name}: not PSD (min eig {eigs.min():g})")
    return mat


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh(cov)
    return eigvecs @ np.diag(np.sqrt(np.clip(eigvals, 0.0, None)))


def _maybe_array(value):
    return value if np.isscalar(value) else np.asarray(value, dtype=np.float64)
