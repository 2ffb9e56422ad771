import numpy as np
import pytest

from reidrisk import WorldParams, sample_world


def pytest_runtest_logreport(report):
    # one visible pass/fail line per acceptance criterion
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        status = "PASS" if report.passed else ("FAIL" if report.failed else "SKIP")
        print(f"\n[acceptance] {name}: {status}")


@pytest.fixture(scope="session")
def small_world():
    """60 speakers x 4 recordings, dim 6, well-separated classes."""
    return sample_world(
        WorldParams(dim=6, n_speakers=60, recordings_per_speaker=4, phi_b=4.0, phi_w=1.0, seed=11)
    )


@pytest.fixture(scope="session")
def trained_small(small_world):
    from reidrisk import apply_preprocess_batch, fit_preprocess, train_plda

    ds = small_world.dataset
    params = fit_preprocess(ds.matrix.data, length_normalize=True)
    groups = {
        spk: apply_preprocess_batch(params, ds.rows_for(recs))
        for spk, recs in ds.speakers.items()
    }
    model = train_plda(groups, max_iters=8)
    return model, params


def random_psd(rng: np.random.Generator, dim: int, scale: float = 1.0) -> np.ndarray:
    a = rng.standard_normal((dim, dim))
    return scale * (a @ a.T) / dim


def random_pd(rng: np.random.Generator, dim: int, scale: float = 1.0) -> np.ndarray:
    return random_psd(rng, dim, scale) + 0.1 * scale * np.eye(dim)
