"""Two-covariance PLDA backend: preprocessing, EM training, LLR scoring.

Generative model: a speaker latent y ~ N(mu, phi_b) and, given y, each
recording x ~ N(y, phi_w). Pairs are scored with the log-likelihood ratio
of the same-speaker joint Gaussian against the different-speaker one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

MODEL_FORMAT_VERSION = 1

# Ridge added to phi_w's diagonal each M-step, as a fraction of trace/dim.
_RIDGE = 1e-6


class PldaTrainingError(ValueError):
    """Training preconditions violated or EM failed to produce a valid model."""


class DegenerateCovarianceError(PldaTrainingError):
    """phi_w lost positive definiteness despite regularization."""

    def __init__(self, iteration: int, message: str):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass
class PreprocessParams:
    """Centering (and optional length normalization) fit on the training set."""

    global_mean: np.ndarray
    length_normalize: bool = True

    def __post_init__(self) -> None:
        mean = np.asarray(self.global_mean, dtype=np.float64)
        if mean.ndim != 1:
            raise ValueError(f"global_mean must be 1-D, got shape {mean.shape}")
        if not np.isfinite(mean).all():
            raise ValueError("global_mean contains non-finite values")
        self.global_mean = mean

    @property
    def dim(self) -> int:
        return int(self.global_mean.shape[0])


@dataclass
class PldaModel:
    """Fitted two-covariance model in preprocessed embedding space."""

    mu: np.ndarray
    phi_b: np.ndarray
    phi_w: np.ndarray
    loglik_history: list[float] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.phi_b = np.asarray(self.phi_b, dtype=np.float64)
        self.phi_w = np.asarray(self.phi_w, dtype=np.float64)

    @property
    def dim(self) -> int:
        return int(self.mu.shape[0])

    def validate(self) -> None:
        d = self.dim
        for name, mat in (("phi_b", self.phi_b), ("phi_w", self.phi_w)):
            if mat.shape != (d, d):
                raise ValueError(f"{name} has shape {mat.shape}, expected ({d}, {d})")
            scale = max(np.abs(mat).max(), 1.0)
            if np.abs(mat - mat.T).max() > 1e-12 * scale:
                raise ValueError(f"{name} is not symmetric")
        w_eigs = np.linalg.eigvalsh(self.phi_w)
        if w_eigs.min() <= 0:
            raise ValueError(f"phi_w is not positive definite (min eig {w_eigs.min():g})")
        b_eigs = np.linalg.eigvalsh(self.phi_b)
        b_scale = max(abs(b_eigs).max(), 1.0)
        if b_eigs.min() < -1e-10 * b_scale:
            raise ValueError(f"phi_b is not PSD (min eig {b_eigs.min():g})")


@dataclass
class EnrollmentVector:
    """Per-speaker reference: mean of the speaker's preprocessed recordings."""

    speaker_id: str
    vector: np.ndarray
    n_recordings: int

    def __post_init__(self) -> None:
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if not np.isfinite(self.vector).all():
            raise ValueError("enrollment vector contains non-finite values")
        if self.n_recordings < 1:
            raise ValueError("n_recordings must be >= 1")


def fit_preprocess(embeddings: np.ndarray, length_normalize: bool = True) -> PreprocessParams:
    """Fit the global mean on a (rows x dim) batch of raw embeddings."""
    arr = np.asarray(getattr(embeddings, "data", embeddings), dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ValueError(f"need a non-empty 2-D batch, got shape {arr.shape}")
    return PreprocessParams(global_mean=arr.mean(axis=0), length_normalize=length_normalize)


def apply_preprocess_batch(params: PreprocessParams, embeddings: np.ndarray) -> np.ndarray:
    """Center rows by the global mean, then scale nonzero rows to unit norm."""
    arr = np.asarray(embeddings, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected 2-D batch, got shape {arr.shape}")
    if arr.shape[1] != params.dim:
        raise ValueError(f"dim mismatch: batch has {arr.shape[1]}, params have {params.dim}")
    centered = arr - params.global_mean
    if not params.length_normalize:
        return centered
    norms = np.sqrt(np.einsum("ij,ij->i", centered, centered))
    # zero vectors are returned unnormalized rather than producing NaNs
    return centered / np.where(norms > 0.0, norms, 1.0)[:, None]


def apply_preprocess(params: PreprocessParams, embedding: np.ndarray) -> np.ndarray:
    arr = np.asarray(embedding, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a single vector, got shape {arr.shape}")
    return apply_preprocess_batch(params, arr[None, :])[0]


def enroll_speaker(
    params: PreprocessParams, speaker_id: str, recordings: np.ndarray | Sequence[np.ndarray]
) -> EnrollmentVector:
    """Average the preprocessed recordings of one speaker into a reference vector."""
    arr = np.atleast_2d(np.asarray(recordings, dtype=np.float64))
    if arr.shape[0] < 1 or arr.size == 0:
        raise ValueError(f"speaker {speaker_id!r}: no recordings to enroll")
    pre = apply_preprocess_batch(params, arr)
    return EnrollmentVector(
        speaker_id=speaker_id, vector=pre.mean(axis=0), n_recordings=arr.shape[0]
    )


def train_plda(
    grouped: Mapping[str, np.ndarray | Sequence[np.ndarray]],
    max_iters: int = 20,
    min_speakers: int = 10,
) -> PldaModel:
    """Fit the two-covariance model by EM on preprocessed, speaker-grouped vectors.

    Initialization is the empirical between-/within-class scatter (no RNG).
    Runs a fixed number of iterations; the marginal log-likelihood of the
    training data is recorded per iteration in ``loglik_history`` and is
    non-decreasing up to the regularization ridge.
    """
    if len(grouped) < min_speakers:
        raise PldaTrainingError(
            f"too few speakers: {len(grouped)} < min_speakers={min_speakers}"
        )
    ids = sorted(grouped)
    xs = []
    for s in ids:
        arr = np.atleast_2d(np.asarray(grouped[s], dtype=np.float64))
        if arr.shape[0] < 1:
            raise PldaTrainingError(f"speaker {s!r} has no recordings")
        if not np.isfinite(arr).all():
            raise PldaTrainingError(f"speaker {s!r} has non-finite vectors")
        xs.append(arr)
    d = xs[0].shape[1]
    if any(x.shape[1] != d for x in xs):
        raise PldaTrainingError("inconsistent embedding dimensions across speakers")
    if sum(1 for x in xs if x.shape[0] >= 2) < 2:
        raise PldaTrainingError(
            "need >= 2 speakers with >= 2 recordings to separate "
            "within- from between-speaker variance"
        )
    if max_iters < 1:
        raise PldaTrainingError(f"max_iters must be >= 1, got {max_iters}")

    n_spk = len(xs)
    counts = np.array([x.shape[0] for x in xs])
    n_total = int(counts.sum())
    means = np.stack([x.mean(axis=0) for x in xs])
    total_within = np.zeros((d, d))
    for x, m in zip(xs, means):
        c = x - m
        total_within += c.T @ c

    # method-of-moments start
    mu = means.mean(axis=0)
    dev0 = means - mu
    phi_b = (dev0.T @ dev0) / n_spk
    phi_w = _ridge(total_within / n_total)
    _check_pd(phi_w, iteration=0)

    history: list[float] = []
    for it in range(1, max_iters + 1):
        history.append(_marginal_loglik(means, counts, total_within, mu, phi_b, phi_w))

        # E-step: posterior moments of each speaker latent, grouped by count
        post_means = np.empty_like(means)
        post_cov_sum = np.zeros((d, d))
        post_cov_w_acc = np.zeros((d, d))
        for n in np.unique(counts):
            idx = np.flatnonzero(counts == n)
            m_n = phi_b + phi_w / n
            gain = phi_b @ np.linalg.inv(m_n)
            cov = phi_b - gain @ phi_b
            cov = 0.5 * (cov + cov.T)
            post_means[idx] = mu + (means[idx] - mu) @ gain.T
            post_cov_sum += cov * len(idx)
            post_cov_w_acc += cov * (n * len(idx))

        # M-step
        mu = post_means.mean(axis=0)
        dev = post_means - mu
        phi_b = (dev.T @ dev + post_cov_sum) / n_spk
        resid = means - post_means
        phi_w = (total_within + (resid * counts[:, None]).T @ resid + post_cov_w_acc) / n_total
        phi_b = 0.5 * (phi_b + phi_b.T)
        phi_w = _ridge(0.5 * (phi_w + phi_w.T))
        _check_pd(phi_w, iteration=it)

    history.append(_marginal_loglik(means, counts, total_within, mu, phi_b, phi_w))
    model = PldaModel(mu=mu, phi_b=phi_b, phi_w=phi_w, loglik_history=history)
    model.validate()
    return model


def _ridge(phi_w: np.ndarray) -> np.ndarray:
    d = phi_w.shape[0]
    return phi_w + np.eye(d) * (_RIDGE * np.trace(phi_w) / d)


def _check_pd(phi_w: np.ndarray, iteration: int) -> None:
    try:
        np.linalg.cholesky(phi_w)
    except np.linalg.LinAlgError:
        raise DegenerateCovarianceError(
            iteration, "phi_w is not positive definite after regularization"
        ) from None


def _marginal_loglik(
    means: np.ndarray,
    counts: np.ndarray,
    total_within: np.ndarray,
    mu: np.ndarray,
    phi_b: np.ndarray,
    phi_w: np.ndarray,
) -> float:
    """Exact marginal log-likelihood of the grouped training data.

    Uses the factorization of each speaker's joint density into the
    within-scatter term and the density of the speaker mean under
    N(mu, phi_b + phi_w/n).
    """
    d = phi_w.shape[0]
    w_chol = np.linalg.cholesky(phi_w)
    logdet_w = 2.0 * np.log(np.diag(w_chol)).sum()
    w_inv = scipy.linalg.cho_solve((w_chol, True), np.eye(d))
    n_total = int(counts.sum())
    n_spk = len(counts)

    ll = -0.5 * float(np.einsum("ij,ji->", w_inv, total_within))
    ll += -0.5 * d * np.log(2.0 * np.pi) * (n_total - n_spk)
    ll += -0.5 * logdet_w * (n_total - n_spk)
    for n in np.unique(counts):
        idx = np.flatnonzero(counts == n)
        m_n = phi_b + phi_w / n
        chol = np.linalg.cholesky(m_n)
        logdet = 2.0 * np.log(np.diag(chol)).sum()
        sol = scipy.linalg.solve_triangular(chol, (means[idx] - mu).T, lower=True)
        quad = np.einsum("ij,ij->j", sol, sol).sum()
        ll += -0.5 * d * np.log(n) * len(idx)
        ll += len(idx) * (-0.5 * d * np.log(2.0 * np.pi) - 0.5 * logdet) - 0.5 * quad
    return float(ll)


class LlrScorer:
    """Precomputed scoring kernel for a model.

    The LLR is quadratic in the centered inputs:
        llr(a, b) = q(a) + q(b) + (a-mu)' G (b-mu) + k
    with q(x) = 0.5 (x-mu)' L (x-mu). All products go through np.einsum so
    that batched and single-pair evaluation produce identical bits and the
    result is independent of internal parallelism.
    """

    def __init__(self, model: PldaModel):
        d = model.dim
        total = model.phi_b + model.phi_w  # per-side marginal covariance
        t_chol = np.linalg.cholesky(total)
        t_inv = scipy.linalg.cho_solve((t_chol, True), np.eye(d))
        t_inv = 0.5 * (t_inv + t_inv.T)
        cross = model.phi_b
        schur = total - cross @ t_inv @ cross
        schur = 0.5 * (schur + schur.T)
        s_chol = np.linalg.cholesky(schur)
        p = scipy.linalg.cho_solve((s_chol, True), np.eye(d))
        p = 0.5 * (p + p.T)
        gamma = t_inv @ cross @ p
        self._mu = model.mu
        self._lam = 0.5 * ((t_inv - p) + (t_inv - p).T)
        self._gamma = 0.5 * (gamma + gamma.T)
        logdet_t = 2.0 * np.log(np.diag(t_chol)).sum()
        logdet_s = 2.0 * np.log(np.diag(s_chol)).sum()
        self._offset = 0.5 * (logdet_t - logdet_s)
        self._dim = d

    @property
    def dim(self) -> int:
        return self._dim

    def _prepare(self, vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        arr = np.asarray(vectors, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != self._dim:
            raise ValueError(
                f"expected (n, {self._dim}) vectors in model space, got shape {arr.shape}"
            )
        if not np.isfinite(arr).all():
            raise ValueError("scoring input contains non-finite values")
        centered = arr - self._mu
        quad = 0.5 * np.einsum("ij,jk,ik->i", centered, self._lam, centered)
        return centered, quad

    def matrix(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        ac, aq = self._prepare(a)
        bc, bq = self._prepare(b)
        cross = np.einsum("ij,kj->ik", np.einsum("ij,jk->ik", ac, self._gamma), bc)
        return (aq[:, None] + bq[None, :]) + cross + self._offset

    def pair(self, a: np.ndarray, b: np.ndarray) -> float:
        ac, aq = self._prepare(np.asarray(a, dtype=np.float64)[None, :])
        bc, bq = self._prepare(np.asarray(b, dtype=np.float64)[None, :])
        cross = np.einsum("ij,kj->ik", np.einsum("ij,jk->ik", ac, self._gamma), bc)
        return float((aq[0] + bq[0]) + cross[0, 0] + self._offset)


def score_pair(model: PldaModel, a: np.ndarray, b: np.ndarray) -> float:
    """Same-speaker vs different-speaker LLR for one pair of vectors."""
    return LlrScorer(model).pair(a, b)


def score_matrix(
    model: PldaModel,
    enrollments: Sequence[EnrollmentVector] | np.ndarray,
    tests: Sequence[np.ndarray] | np.ndarray,
) -> np.ndarray:
    """All-pairs LLR scores, shape (len(enrollments), len(tests))."""
    a = _as_matrix(enrollments)
    b = _as_matrix(tests)
    if a.shape[0] < 1 or b.shape[0] < 1:
        raise ValueError("score_matrix needs non-empty enrollment and test lists")
    return LlrScorer(model).matrix(a, b)


def _as_matrix(vectors) -> np.ndarray:
    if isinstance(vectors, np.ndarray):
        return np.atleast_2d(vectors)
    rows = [v.vector if isinstance(v, EnrollmentVector) else np.asarray(v) for v in vectors]
    return np.atleast_2d(np.stack(rows)) if rows else np.empty((0, 0))


def save_model(path: str | Path, model: PldaModel, params: PreprocessParams) -> None:
    """Persist model + preprocessing losslessly (float64) in one file."""
    with open(path, "wb") as fh:
        np.savez(
            fh,
            format_version=np.int64(MODEL_FORMAT_VERSION),
            mu=model.mu,
            phi_b=model.phi_b,
            phi_w=model.phi_w,
            loglik_history=np.asarray(model.loglik_history, dtype=np.float64),
            global_mean=params.global_mean,
            length_normalize=np.bool_(params.length_normalize),
        )


def load_model(path: str | Path) -> tuple[PldaModel, PreprocessParams]:
    with np.load(path, allow_pickle=False) as npz:
        version = int(npz["format_version"])
        if version != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {version}")
        model = PldaModel(
            mu=npz["mu"],
            phi_b=npz["phi_b"],
            phi_w=npz["phi_w"],
            loglik_history=[float(v) for v in npz["loglik_history"]],
        )
        params = PreprocessParams(
            global_mean=npz["global_mean"],
            length_normalize=bool(npz["length_normalize"]),
        )
    model.validate()
    return model, params
