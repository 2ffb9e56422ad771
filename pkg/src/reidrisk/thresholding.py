"""Accept/reject threshold calibration: EER, detection cost, minDCF search,
and the subset-averaged calibration protocol used on large known sets.

The accept rule everywhere is score >= threshold (ties accept).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .dataio import EmbeddingDataset
from .plda import LlrScorer, PldaModel, PreprocessParams, apply_preprocess_batch


class CalibrationError(RuntimeError):
    """The averaged protocol produced no usable run."""


@dataclass(frozen=True)
class DcfConfig:
    """Costs and target prior of the detection cost function."""

    c_fa: float = 1.0
    c_fr: float = 1.0
    prior_target: float = 0.01

    def __post_init__(self) -> None:
        if self.c_fa <= 0 or self.c_fr <= 0:
            raise ValueError(f"costs must be positive, got c_fa={self.c_fa}, c_fr={self.c_fr}")
        if not 0.0 < self.prior_target < 1.0:
            raise ValueError(f"prior_target must be in (0, 1), got {self.prior_target}")

    @classmethod
    def default(cls) -> "DcfConfig":
        """Equal-cost configuration: C_FA=1, C_FR=1, prior=0.01."""
        return cls(c_fa=1.0, c_fr=1.0, prior_target=0.01)

    @classmethod
    def strict(cls) -> "DcfConfig":
        """False-acceptance-averse configuration: C_FA=10, C_FR=0.1, prior=0.001."""
        return cls(c_fa=10.0, c_fr=0.1, prior_target=0.001)

    @classmethod
    def preset(cls, name: str) -> "DcfConfig":
        try:
            return {"default": cls.default, "strict": cls.strict}[name]()
        except KeyError:
            raise ValueError(f"unknown DCF preset {name!r}; expected 'default' or 'strict'") from None


@dataclass
class TrialScores:
    """Scores of same-speaker (target) and different-speaker (nontarget) trials."""

    target: np.ndarray
    nontarget: np.ndarray

    def __post_init__(self) -> None:
        self.target = np.asarray(self.target, dtype=np.float64).ravel()
        self.nontarget = np.asarray(self.nontarget, dtype=np.float64).ravel()
        for name, arr in (("target", self.target), ("nontarget", self.nontarget)):
            if arr.size and not np.isfinite(arr).all():
                raise ValueError(f"{name} scores contain non-finite values")


@dataclass(frozen=True)
class ThresholdEstimate:
    threshold: float
    criterion_value: float
    n_runs_used: int = 1

    def __post_init__(self) -> None:
        if not (np.isfinite(self.threshold) and np.isfinite(self.criterion_value)):
            raise ValueError("threshold estimate must be finite")


@dataclass
class ThresholdProtocol:
    """Parameters of the subset-averaged calibration protocol.

    Each run draws two independent speaker subsets, scores all cross-subset
    single-recording pairs, and records that run's minDCF threshold; runs
    whose subsets share no speaker are discarded. ``pool_a``/``pool_b``
    optionally restrict the speakers each subset may draw from.
    """

    subset_size: int = 100
    n_runs: int = 100
    max_attempts: int | None = None
    pool_a: Sequence[str] | None = None
    pool_b: Sequence[str] | None = None

    def __post_init__(self) -> None:
        if self.subset_size < 1:
            raise ValueError("subset_size must be >= 1")
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if self.max_attempts is None:
            self.max_attempts = 4 * self.n_runs
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


class Rates(NamedTuple):
    far: float
    frr: float


def rates_at(scores: TrialScores, threshold: float) -> Rates:
    """FAR = fraction of nontarget scores >= threshold; FRR = fraction of
    target scores < threshold. A class with no trials contributes rate 0."""
    if scores.target.size == 0 and scores.nontarget.size == 0:
        raise ValueError("cannot compute rates with no trials at all")
    far = (
        int(np.count_nonzero(scores.nontarget >= threshold)) / scores.nontarget.size
        if scores.nontarget.size
        else 0.0
    )
    frr = (
        int(np.count_nonzero(scores.target < threshold)) / scores.target.size
        if scores.target.size
        else 0.0
    )
    return Rates(far=far, frr=frr)


def dcf(far: float, frr: float, config: DcfConfig) -> float:
    """Detection cost: c_fr*frr*prior + c_fa*far*(1 - prior), unnormalized."""
    if not (0.0 <= far <= 1.0 and 0.0 <= frr <= 1.0):
        raise ValueError(f"rates must lie in [0, 1], got far={far}, frr={frr}")
    return config.c_fr * frr * config.prior_target + config.c_fa * far * (1.0 - config.prior_target)


def candidate_thresholds(scores: TrialScores) -> np.ndarray:
    """Midpoints of consecutive distinct pooled scores plus finite sentinels
    below the minimum (accept everything) and above the maximum (reject all)."""
    pooled = np.concatenate([scores.target, scores.nontarget])
    if pooled.size == 0:
        raise ValueError("no scores to derive candidate thresholds from")
    uniq = np.unique(pooled)
    mids = 0.5 * (uniq[:-1] + uniq[1:])
    return np.concatenate([[uniq[0] - 1.0], mids, [uniq[-1] + 1.0]])


def _rates_at_candidates(scores: TrialScores, cands: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    st = np.sort(scores.target)
    sn = np.sort(scores.nontarget)
    frr = np.searchsorted(st, cands, side="left") / max(st.size, 1)
    far = (sn.size - np.searchsorted(sn, cands, side="left")) / max(sn.size, 1)
    if st.size == 0:
        frr = np.zeros_like(cands)
    if sn.size == 0:
        far = np.zeros_like(cands)
    return far, frr


def min_dcf_threshold(scores: TrialScores, config: DcfConfig) -> ThresholdEstimate:
    """Global DCF minimum over the candidate set; ties broken toward the
    larger threshold (fewer acceptances)."""
    if scores.target.size == 0 or scores.nontarget.size == 0:
        raise ValueError("minDCF calibration needs both target and nontarget scores")
    cands = candidate_thresholds(scores)
    far, frr = _rates_at_candidates(scores, cands)
    values = config.c_fr * frr * config.prior_target + config.c_fa * far * (1.0 - config.prior_target)
    best = np.flatnonzero(values == values.min())[-1]
    return ThresholdEstimate(threshold=float(cands[best]), criterion_value=float(values[best]))


def eer_threshold(scores: TrialScores) -> ThresholdEstimate:
    """Candidate threshold minimizing |FAR - FRR|; reports (FAR+FRR)/2 there."""
    if scores.target.size == 0 or scores.nontarget.size == 0:
        raise ValueError("EER calibration needs both target and nontarget scores")
    cands = candidate_thresholds(scores)
    far, frr = _rates_at_candidates(scores, cands)
    gaps = np.abs(far - frr)
    best = np.flatnonzero(gaps == gaps.min())[-1]
    return ThresholdEstimate(
        threshold=float(cands[best]), criterion_value=float(0.5 * (far[best] + frr[best]))
    )


def averaged_threshold(
    dataset: EmbeddingDataset,
    model: PldaModel,
    params: PreprocessParams,
    config: DcfConfig,
    protocol: ThresholdProtocol,
    rng: np.random.Generator | None = None,
    speaker_recordings: Mapping[str, Sequence[str]] | None = None,
) -> ThresholdEstimate:
    """Mean of per-run minDCF thresholds over the subset protocol.

    ``speaker_recordings`` restricts the draw to a known-set view (speaker ->
    recording ids); by default the whole dataset is the known set. Runs whose
    two subsets share no speaker are discarded; sampling stops once ``n_runs``
    usable runs are recorded or ``max_attempts`` attempts are spent.
    """
    if rng is None:
        rng = np.random.default_rng()
    recordings = dict(speaker_recordings) if speaker_recordings is not None else dataset.speakers
    all_speakers = sorted(recordings)
    pool_a = _resolve_pool(protocol.pool_a, all_speakers, recordings, "pool_a")
    pool_b = _resolve_pool(protocol.pool_b, all_speakers, recordings, "pool_b")
    for name, pool in (("pool_a", pool_a), ("pool_b", pool_b)):
        if len(pool) < protocol.subset_size:
            raise ValueError(
                f"{name} has {len(pool)} speakers, fewer than subset_size={protocol.subset_size}"
            )

    scorer = LlrScorer(model)
    thresholds: list[float] = []
    criteria: list[float] = []
    attempts = 0
    while attempts < protocol.max_attempts and len(thresholds) < protocol.n_runs:
        attempts += 1
        subset_a = rng.choice(pool_a, size=protocol.subset_size, replace=False)
        subset_b = rng.choice(pool_b, size=protocol.subset_size, replace=False)
        if not (set(subset_a) & set(subset_b)):
            continue  # no target trials possible: discard the run
        vecs_a = _draw_trial_vectors(dataset, params, recordings, subset_a, rng)
        vecs_b = _draw_trial_vectors(dataset, params, recordings, subset_b, rng)
        score_mat = scorer.matrix(vecs_a, vecs_b)
        is_target = np.asarray(subset_a)[:, None] == np.asarray(subset_b)[None, :]
        trials = TrialScores(target=score_mat[is_target], nontarget=score_mat[~is_target])
        est = min_dcf_threshold(trials, config)
        thresholds.append(est.threshold)
        criteria.append(est.criterion_value)

    if not thresholds:
        raise CalibrationError(
            f"calibration failed: no usable run in {attempts} attempts "
            "(subsets never shared a speaker)"
        )
    return ThresholdEstimate(
        threshold=float(np.mean(thresholds)),
        criterion_value=float(np.mean(criteria)),
        n_runs_used=len(thresholds),
    )


def _resolve_pool(
    pool: Sequence[str] | None,
    all_speakers: list[str],
    recordings: Mapping[str, Sequence[str]],
    name: str,
) -> np.ndarray:
    if pool is None:
        return np.asarray(all_speakers)
    missing = [s for s in pool if s not in recordings]
    if missing:
        raise ValueError(f"{name} references unknown speakers: {missing[:5]}")
    return np.asarray(sorted(pool))


def _draw_trial_vectors(
    dataset: EmbeddingDataset,
    params: PreprocessParams,
    recordings: Mapping[str, Sequence[str]],
    subset: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    chosen = []
    for spk in subset:
        recs = recordings[spk]
        chosen.append(recs[int(rng.integers(len(recs)))])
    return apply_preprocess_batch(params, dataset.rows_for(chosen))
