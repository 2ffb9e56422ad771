"""Experiment split construction and the marketer-attack simulation.

A split partitions speakers into a known (enrollable) set, unknown probes,
and the overlap between them; the attack enrolls every known speaker,
scores all known x unknown pairs, and accepts pairs at or above the
calibrated threshold, optionally restricted to rank-1 or global top-N
matches.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .dataio import EmbeddingDataset, Task
from .metrics import RunRow
from .plda import (
    LlrScorer,
    PldaModel,
    PreprocessParams,
    apply_preprocess_batch,
    enroll_speaker,
    fit_preprocess,
    train_plda,
)
from .thresholding import DcfConfig, ThresholdProtocol, averaged_threshold

VARIANTS = ("all", "rank1", "topn")


class SplitError(ValueError):
    """The requested split geometry is infeasible for the dataset."""


@dataclass(frozen=True)
class SplitSpec:
    """Geometry and sampling rules for one experiment split.

    ``fixed_unknown_pool`` pins the unknown-only speakers to an explicit
    list (only overlap members are resampled per run); in that mode
    ``n_unknown`` is derived as ``len(pool) + n_overlap``.
    """

    n_known: int
    n_unknown: int | None
    n_overlap: int
    known_task_filter: frozenset[Task] | None = None
    unknown_task_filter: frozenset[Task] | None = None
    pool_unknown_tasks: bool = False
    fixed_unknown_pool: tuple[str, ...] | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.n_known < 1:
            raise ValueError("n_known must be >= 1")
        if self.n_overlap < 0:
            raise ValueError("n_overlap must be >= 0")
        for name in ("known_task_filter", "unknown_task_filter"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, frozenset(Task(t) for t in value))
        if self.fixed_unknown_pool is not None:
            object.__setattr__(self, "fixed_unknown_pool", tuple(self.fixed_unknown_pool))
            derived = len(self.fixed_unknown_pool) + self.n_overlap
            if self.n_unknown is not None and self.n_unknown != derived:
                raise ValueError(
                    f"n_unknown={self.n_unknown} inconsistent with fixed pool of "
                    f"{len(self.fixed_unknown_pool)} + n_overlap={self.n_overlap}"
                )
            object.__setattr__(self, "n_unknown", derived)
        if self.n_unknown is None:
            raise ValueError("n_unknown is required unless fixed_unknown_pool is given")
        if self.n_unknown < 1:
            raise ValueError("n_unknown must be >= 1")
        if self.n_overlap > min(self.n_known, self.n_unknown):
            raise ValueError(
                f"n_overlap={self.n_overlap} exceeds min(n_known={self.n_known}, "
                f"n_unknown={self.n_unknown})"
            )


@dataclass
class ExperimentSplit:
    """Known enrollment lists, unknown probes, and the overlap speaker set.

    A probe is a tuple of recording ids: length 1 normally, all of the
    speaker's unknown-eligible recordings when task pooling is on.
    """

    known: dict[str, tuple[str, ...]]
    unknown: tuple[tuple[str, tuple[str, ...]], ...]
    overlap_ids: frozenset[str]

    @property
    def n_known(self) -> int:
        return len(self.known)

    @property
    def n_unknown(self) -> int:
        return len(self.unknown)

    @property
    def n_overlap(self) -> int:
        return len(self.overlap_ids)

    def validate(self) -> None:
        known_speakers = set(self.known)
        unknown_speakers = [spk for spk, _ in self.unknown]
        if len(set(unknown_speakers)) != len(unknown_speakers):
            raise ValueError("duplicate unknown speaker (must have exactly one probe each)")
        for spk, probe in self.unknown:
            if not probe:
                raise ValueError(f"unknown speaker {spk!r} has an empty probe")
            if spk in self.overlap_ids:
                withheld = set(probe) & set(self.known[spk])
                if withheld:
                    raise ValueError(
                        f"overlap speaker {spk!r}: probe recordings {sorted(withheld)} "
                        "not withheld from the known list"
                    )
            elif spk in known_speakers:
                raise ValueError(f"unknown-only speaker {spk!r} appears in the known set")
        if not self.overlap_ids <= known_speakers & set(unknown_speakers):
            raise ValueError("overlap_ids must be a subset of known and unknown speakers")
        for spk, recs in self.known.items():
            if not recs:
                raise ValueError(f"known speaker {spk!r} has no enrollment recordings")


@dataclass(frozen=True)
class MatchRecord:
    probe_speaker: str
    matched_known_speaker: str
    score: float
    is_true: bool


@dataclass
class AttackResult:
    matches: tuple[MatchRecord, ...]
    n_known: int
    n_unknown: int
    n_overlap: int
    threshold: float
    variant: str
    n_comparisons: int = field(init=False)

    def __post_init__(self) -> None:
        self.n_comparisons = self.n_known * self.n_unknown


@dataclass(frozen=True)
class TrialCounts:
    ta: int
    fa: int
    n_target_comparisons: int
    n_nontarget_comparisons: int


def sample_split(
    dataset: EmbeddingDataset, spec: SplitSpec, rng: np.random.Generator | None = None
) -> ExperimentSplit:
    """Draw a split under the withholding rules; deterministic for a fixed rng/seed."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    known_elig, unknown_elig = _eligibility(dataset, spec)
    overlap_cands = _overlap_candidates(spec, known_elig, unknown_elig)

    fixed_pool = spec.fixed_unknown_pool
    if fixed_pool is not None:
        missing = [s for s in fixed_pool if s not in unknown_elig]
        if missing:
            raise SplitError(
                f"fixed unknown pool has {len(missing)} speakers without "
                f"unknown-eligible recordings: {missing[:5]}"
            )
        overlap_cands = [s for s in overlap_cands if s not in set(fixed_pool)]

    if len(overlap_cands) < spec.n_overlap:
        raise SplitError(
            f"need {spec.n_overlap} overlap-eligible speakers, found {len(overlap_cands)} "
            f"(known filter {_fmt_filter(spec.known_task_filter)}, "
            f"unknown filter {_fmt_filter(spec.unknown_task_filter)})"
        )
    overlap = _choice(rng, overlap_cands, spec.n_overlap)
    overlap_set = set(overlap)

    n_unknown_only = spec.n_unknown - spec.n_overlap
    if fixed_pool is not None:
        unknown_only = sorted(fixed_pool)
    else:
        unknown_only_cands = [s for s in unknown_elig if s not in overlap_set]
        if len(unknown_only_cands) < n_unknown_only:
            raise SplitError(
                f"need {n_unknown_only} unknown-only speakers, found {len(unknown_only_cands)}"
            )
        unknown_only = _choice(rng, unknown_only_cands, n_unknown_only)
    unknown_only_set = set(unknown_only)

    known_rest_cands = [
        s for s in known_elig if s not in overlap_set and s not in unknown_only_set
    ]
    n_known_rest = spec.n_known - spec.n_overlap
    if len(known_rest_cands) < n_known_rest:
        raise SplitError(
            f"need {n_known_rest} known-only speakers, found {len(known_rest_cands)} "
            f"(known filter {_fmt_filter(spec.known_task_filter)})"
        )
    known_rest = _choice(rng, known_rest_cands, n_known_rest)

    known: dict[str, tuple[str, ...]] = {}
    unknown: list[tuple[str, tuple[str, ...]]] = []
    for spk in sorted(set(known_rest) | overlap_set):
        known[spk] = tuple(known_elig[spk])
    for spk in sorted(unknown_only_set | overlap_set):
        probe = _draw_probe(spec, rng, unknown_elig[spk], known.get(spk))
        if spk in overlap_set:
            remaining = tuple(r for r in known[spk] if r not in set(probe))
            known[spk] = remaining
        unknown.append((spk, probe))

    split = ExperimentSplit(
        known=known, unknown=tuple(unknown), overlap_ids=frozenset(overlap_set)
    )
    split.validate()
    return split


def _eligibility(
    dataset: EmbeddingDataset, spec: SplitSpec
) -> tuple[dict[str, list[str]], dict[str, list[str]]]:
    known_elig: dict[str, list[str]] = {}
    unknown_elig: dict[str, list[str]] = {}
    for spk in sorted(dataset.speakers):
        recs = dataset.speakers[spk]
        k = [r for r in recs if _passes(dataset, r, spec.known_task_filter)]
        u = [r for r in recs if _passes(dataset, r, spec.unknown_task_filter)]
        if k:
            known_elig[spk] = k
        if u:
            unknown_elig[spk] = u
    return known_elig, unknown_elig


def _overlap_candidates(
    spec: SplitSpec,
    known_elig: dict[str, list[str]],
    unknown_elig: dict[str, list[str]],
) -> list[str]:
    """Speakers who can appear on both sides with at least one known
    recording left after the probe is withheld."""
    cands = []
    for spk in known_elig:
        if spk not in unknown_elig:
            continue
        known_recs = set(known_elig[spk])
        unknown_recs = unknown_elig[spk]
        if spec.pool_unknown_tasks:
            if known_recs - set(unknown_recs):
                cands.append(spk)
        elif any(known_recs - {r} for r in unknown_recs):
            cands.append(spk)
    return cands


def _draw_probe(
    spec: SplitSpec,
    rng: np.random.Generator,
    unknown_recs: list[str],
    known_recs: tuple[str, ...] | None,
) -> tuple[str, ...]:
    if spec.pool_unknown_tasks:
        return tuple(unknown_recs)
    if known_recs is None:
        eligible = unknown_recs
    else:
        eligible = [r for r in unknown_recs if set(known_recs) - {r}]
    return (eligible[int(rng.integers(len(eligible)))],)


def _passes(dataset: EmbeddingDataset, recording_id: str, flt: frozenset[Task] | None) -> bool:
    return flt is None or dataset.record(recording_id).task in flt


def _choice(rng: np.random.Generator, candidates: Iterable[str], size: int) -> list[str]:
    pool = np.asarray(sorted(candidates))
    if size == 0:
        return []
    return [str(s) for s in rng.choice(pool, size=size, replace=False)]


def _fmt_filter(flt: frozenset[Task] | None) -> str:
    return "any" if flt is None else "{" + ",".join(sorted(t.value for t in flt)) + "}"


def parse_variant(text: str) -> tuple[str, int | None]:
    """Parse 'all' | 'rank1' | 'topn:N' into (kind, top_n)."""
    if text in ("all", "all_matches"):
        return "all", None
    if text == "rank1":
        return "rank1", None
    if text.startswith("topn"):
        _, _, n_str = text.partition(":")
        try:
            n = int(n_str)
        except ValueError:
            raise ValueError(f"invalid variant {text!r}: expected topn:N with integer N") from None
        if n < 1:
            raise ValueError(f"topn requires N >= 1, got {n}")
        return "topn", n
    raise ValueError(f"unknown variant {text!r}; expected one of all, rank1, topn:N")


def run_attack(
    dataset: EmbeddingDataset,
    model: PldaModel,
    params: PreprocessParams,
    threshold: float,
    split: ExperimentSplit,
    variant: str = "all",
) -> AttackResult:
    """Enroll known speakers, score every probe against every enrollment,
    and accept pairs with score >= threshold under the requested variant."""
    kind, top_n = parse_variant(variant)
    if split.n_known == 0 or split.n_unknown == 0:
        raise ValueError("split has no known speakers or no probes")

    known_ids = sorted(split.known)
    enroll_vectors = np.stack(
        [
            enroll_speaker(params, spk, dataset.rows_for(split.known[spk])).vector
            for spk in known_ids
        ]
    )
    probe_vectors = np.stack(
        [
            apply_preprocess_batch(params, dataset.rows_for(probe)).mean(axis=0)
            for _, probe in split.unknown
        ]
    )
    scores = LlrScorer(model).matrix(enroll_vectors, probe_vectors)
    accepted = scores >= threshold

    pairs: list[tuple[int, int]]
    if kind == "rank1":
        pairs = []
        for j in range(split.n_unknown):
            rows = np.flatnonzero(accepted[:, j])
            if rows.size:
                pairs.append((int(rows[np.argmax(scores[rows, j])]), j))
    elif kind == "topn":
        all_pairs = [(int(i), int(j)) for i, j in zip(*np.nonzero(accepted))]
        all_pairs.sort(key=lambda ij: (-scores[ij], ij[0], ij[1]))
        pairs = sorted(all_pairs[:top_n], key=lambda ij: (ij[1], ij[0]))
    else:
        pairs = sorted(((int(i), int(j)) for i, j in zip(*np.nonzero(accepted))), key=lambda ij: (ij[1], ij[0]))

    matches = tuple(
        MatchRecord(
            probe_speaker=split.unknown[j][0],
            matched_known_speaker=known_ids[i],
            score=float(scores[i, j]),
            is_true=split.unknown[j][0] == known_ids[i],
        )
        for i, j in pairs
    )
    return AttackResult(
        matches=matches,
        n_known=split.n_known,
        n_unknown=split.n_unknown,
        n_overlap=split.n_overlap,
        threshold=threshold,
        variant=kind if top_n is None else f"topn:{top_n}",
    )


def count_outcomes(result: AttackResult) -> TrialCounts:
    ta = sum(1 for m in result.matches if m.is_true)
    return TrialCounts(
        ta=ta,
        fa=len(result.matches) - ta,
        n_target_comparisons=result.n_overlap,
        n_nontarget_comparisons=result.n_comparisons - result.n_overlap,
    )


def run_sweep(
    dataset: EmbeddingDataset,
    template: SplitSpec,
    axis: str,
    points: Sequence[int] | Sequence[tuple[int, int]],
    n_splits_per_point: int,
    dcf_config: DcfConfig,
    protocol: ThresholdProtocol,
    variant: str = "all",
    master_seed: int = 0,
    max_iters: int = 20,
    min_speakers: int = 10,
    length_normalize: bool = True,
) -> list[RunRow]:
    """Full per-split pipeline over a grid of set sizes.

    Each run samples a split, fits preprocessing and the PLDA on that run's
    known set, calibrates the threshold with the subset protocol, executes
    the attack, and emits one row. Rows are deterministic given the master
    seed (each row records its own derived seed).
    """
    if axis not in ("known", "unknown", "both"):
        raise ValueError(f"unknown axis {axis!r}; expected known, unknown, or both")
    if n_splits_per_point < 1:
        raise ValueError("n_splits_per_point must be >= 1")
    geometries = [_point_geometry(template, axis, p) for p in points]
    for spec_p in geometries:
        _check_feasible(dataset, spec_p)

    seeds = np.random.SeedSequence(master_seed).generate_state(
        len(geometries) * n_splits_per_point, dtype=np.uint32
    )
    rows: list[RunRow] = []
    run_idx = 0
    for spec_p in geometries:
        for _ in range(n_splits_per_point):
            seed = int(seeds[run_idx])
            run_idx += 1
            rows.append(
                _run_one(
                    dataset,
                    replace(spec_p, seed=seed),
                    dcf_config,
                    protocol,
                    variant,
                    seed,
                    max_iters,
                    min_speakers,
                    length_normalize,
                )
            )
    return rows


def _point_geometry(template: SplitSpec, axis: str, point) -> SplitSpec:
    if axis == "known":
        return replace(template, n_known=int(point))
    if axis == "unknown":
        return replace(template, n_unknown=int(point))
    n_known, n_unknown = point
    return replace(template, n_known=int(n_known), n_unknown=int(n_unknown))


def _check_feasible(dataset: EmbeddingDataset, spec: SplitSpec) -> None:
    known_elig, unknown_elig = _eligibility(dataset, spec)
    overlap_cands = _overlap_candidates(spec, known_elig, unknown_elig)
    if spec.fixed_unknown_pool is not None:
        overlap_cands = [s for s in overlap_cands if s not in set(spec.fixed_unknown_pool)]
    problems = []
    if len(overlap_cands) < spec.n_overlap:
        problems.append(f"overlap-eligible speakers {len(overlap_cands)} < {spec.n_overlap}")
    if len(unknown_elig) < spec.n_unknown:
        problems.append(f"unknown-eligible speakers {len(unknown_elig)} < {spec.n_unknown}")
    if len(known_elig) < spec.n_known:
        problems.append(f"known-eligible speakers {len(known_elig)} < {spec.n_known}")
    total_needed = spec.n_known + spec.n_unknown - spec.n_overlap
    total = len(set(known_elig) | set(unknown_elig))
    if total < total_needed:
        problems.append(f"eligible speakers {total} < n_known + n_unknown - n_overlap = {total_needed}")
    if problems:
        raise SplitError(
            f"infeasible geometry n_known={spec.n_known}, n_unknown={spec.n_unknown}, "
            f"n_overlap={spec.n_overlap}: " + "; ".join(problems)
        )


def _run_one(
    dataset: EmbeddingDataset,
    spec: SplitSpec,
    dcf_config: DcfConfig,
    protocol: ThresholdProtocol,
    variant: str,
    seed: int,
    max_iters: int,
    min_speakers: int,
    length_normalize: bool,
) -> RunRow:
    rng = np.random.default_rng(seed)
    split = sample_split(dataset, spec, rng)
    known_rows = dataset.rows_for(r for recs in split.known.values() for r in recs)
    params = fit_preprocess(known_rows, length_normalize=length_normalize)
    groups = {
        spk: apply_preprocess_batch(params, dataset.rows_for(recs))
        for spk, recs in split.known.items()
    }
    model = train_plda(groups, max_iters=max_iters, min_speakers=min_speakers)
    estimate = averaged_threshold(
        dataset,
        model,
        params,
        dcf_config,
        protocol,
        rng=rng,
        speaker_recordings=split.known,
    )
    result = run_attack(dataset, model, params, estimate.threshold, split, variant)
    counts = count_outcomes(result)
    return RunRow(
        n_known=result.n_known,
        n_unknown=result.n_unknown,
        n_overlap=result.n_overlap,
        n_comparisons=result.n_comparisons,
        ta=counts.ta,
        fa=counts.fa,
        threshold=estimate.threshold,
        seed=seed,
        variant=result.variant,
    )
