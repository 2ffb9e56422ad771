import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reidrisk import (
    CalibrationError,
    DcfConfig,
    ThresholdProtocol,
    TrialScores,
    WorldParams,
    apply_preprocess_batch,
    averaged_threshold,
    dcf,
    eer_threshold,
    fit_preprocess,
    min_dcf_threshold,
    rates_at,
    sample_world,
    train_plda,
)


# --- independent brute-force oracles -------------------------------------
#
# They recompute candidates and rates with explicit python loops; the only
# shared convention with the implementation is the candidate rule itself
# (midpoints + sentinels) and the accept-at-threshold rule, which are part
# of the contract.


def brute_candidates(target, nontarget):
    pooled = sorted(set(list(target) + list(nontarget)))
    cands = [pooled[0] - 1.0]
    for lo, hi in zip(pooled, pooled[1:]):
        cands.append(0.5 * (lo + hi))
    cands.append(pooled[-1] + 1.0)
    return cands


def brute_rates(target, nontarget, threshold):
    far = sum(1 for s in nontarget if s >= threshold) / len(nontarget) if nontarget else 0.0
    frr = sum(1 for s in target if s < threshold) / len(target) if target else 0.0
    return far, frr


def brute_min_dcf(target, nontarget, config):
    best_thr, best_val = None, None
    for cand in brute_candidates(target, nontarget):
        far, frr = brute_rates(target, nontarget, cand)
        val = config.c_fr * frr * config.prior_target + config.c_fa * far * (1.0 - config.prior_target)
        if best_val is None or val <= best_val:  # ties -> larger threshold
            best_thr, best_val = cand, val
    return best_thr, best_val


def brute_eer(target, nontarget):
    best_thr, best_gap, best_val = None, None, None
    for cand in brute_candidates(target, nontarget):
        far, frr = brute_rates(target, nontarget, cand)
        gap = abs(far - frr)
        if best_gap is None or gap <= best_gap:
            best_thr, best_gap, best_val = cand, gap, 0.5 * (far + frr)
    return best_thr, best_val


def random_scores(rng, max_each=100):
    n_t = int(rng.integers(1, max_each))
    n_n = int(rng.integers(1, max_each))
    target = rng.normal(loc=1.0, scale=1.0, size=n_t)
    nontarget = rng.normal(loc=-1.0, scale=1.0, size=n_n)
    if rng.random() < 0.3:  # inject exact ties across classes
        nontarget[: min(3, n_n)] = target[: min(3, n_t)][: min(3, n_n)]
    return target, nontarget


class TestRates:
    def test_threshold_below_everything(self):
        scores = TrialScores(target=[1.0, 2.0], nontarget=[0.0, 3.0])
        assert rates_at(scores, -10.0) == (1.0, 0.0)

    def test_threshold_above_everything(self):
        scores = TrialScores(target=[1.0, 2.0], nontarget=[0.0, 3.0])
        assert rates_at(scores, 10.0) == (0.0, 1.0)

    def test_separating_threshold(self):
        scores = TrialScores(target=[2.0, 3.0], nontarget=[0.0, 1.0])
        assert rates_at(scores, 1.5) == (0.0, 0.0)

    def test_tie_accepts(self):
        scores = TrialScores(target=[1.0], nontarget=[1.0])
        far, frr = rates_at(scores, 1.0)
        assert (far, frr) == (1.0, 0.0)

    def test_both_empty_rejected(self):
        with pytest.raises(ValueError):
            rates_at(TrialScores(target=[], nontarget=[]), 0.0)

    def test_far_monotone_frr_monotone(self):
        rng = np.random.default_rng(0)
        target, nontarget = random_scores(rng)
        scores = TrialScores(target=target, nontarget=nontarget)
        cands = brute_candidates(list(target), list(nontarget))
        rates = [rates_at(scores, c) for c in cands]
        for (far_a, frr_a), (far_b, frr_b) in zip(rates, rates[1:]):
            assert far_b <= far_a
            assert frr_b >= frr_a


class TestDcf:
    def test_zero_rates_zero_cost(self):
        assert dcf(0.0, 0.0, DcfConfig.default()) == 0.0

    def test_default_preset_far_one(self):
        # 1 * 1 * (1 - 0.01)
        assert dcf(1.0, 0.0, DcfConfig.default()) == pytest.approx(0.99, abs=0)

    def test_strict_preset_frr_one(self):
        # 0.1 * 1 * 0.001
        assert dcf(0.0, 1.0, DcfConfig.strict()) == pytest.approx(1e-4, abs=0)

    def test_preset_values(self):
        assert DcfConfig.preset("default") == DcfConfig(1.0, 1.0, 0.01)
        assert DcfConfig.preset("strict") == DcfConfig(10.0, 0.1, 0.001)
        with pytest.raises(ValueError, match="unknown DCF preset"):
            DcfConfig.preset("lenient")

    def test_invalid_rates_rejected(self):
        with pytest.raises(ValueError):
            dcf(1.5, 0.0, DcfConfig.default())

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            DcfConfig(c_fa=0.0)
        with pytest.raises(ValueError):
            DcfConfig(prior_target=1.0)

    @given(
        far1=st.floats(0, 1), far2=st.floats(0, 1), frr=st.floats(0, 1),
        scale=st.floats(0.1, 0.9),
    )
    @settings(max_examples=50, deadline=None)
    def test_linear_in_far_at_fixed_frr(self, far1, far2, frr, scale):
        config = DcfConfig.default()
        mixed = dcf(scale * far1 + (1 - scale) * far2, frr, config)
        combo = scale * dcf(far1, frr, config) + (1 - scale) * dcf(far2, frr, config)
        assert mixed == pytest.approx(combo, abs=1e-12)


class TestMinDcf:
    def test_separable_scores_reach_zero(self):
        scores = TrialScores(target=[5.0, 6.0], nontarget=[0.0, 1.0])
        est = min_dcf_threshold(scores, DcfConfig.default())
        assert est.criterion_value == 0.0
        assert 1.0 < est.threshold < 5.0

    def test_matches_brute_force_on_random_sets(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            target, nontarget = random_scores(rng)
            scores = TrialScores(target=target, nontarget=nontarget)
            for config in (DcfConfig.default(), DcfConfig.strict()):
                est = min_dcf_threshold(scores, config)
                thr, val = brute_min_dcf(list(target), list(nontarget), config)
                assert est.threshold == thr
                assert est.criterion_value == val

    def test_criterion_is_global_minimum(self):
        rng = np.random.default_rng(2)
        target, nontarget = random_scores(rng)
        scores = TrialScores(target=target, nontarget=nontarget)
        config = DcfConfig.default()
        est = min_dcf_threshold(scores, config)
        for cand in brute_candidates(list(target), list(nontarget)):
            far, frr = brute_rates(list(target), list(nontarget), cand)
            assert est.criterion_value <= dcf(far, frr, config)

    def test_strict_threshold_at_least_default(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            target, nontarget = random_scores(rng)
            scores = TrialScores(target=target, nontarget=nontarget)
            default = min_dcf_threshold(scores, DcfConfig.default())
            strict = min_dcf_threshold(scores, DcfConfig.strict())
            assert strict.threshold >= default.threshold

    def test_empty_side_rejected(self):
        with pytest.raises(ValueError):
            min_dcf_threshold(TrialScores(target=[], nontarget=[1.0]), DcfConfig.default())


class TestEer:
    def test_separable_scores(self):
        est = eer_threshold(TrialScores(target=[5.0, 6.0], nontarget=[0.0, 1.0]))
        assert est.criterion_value == 0.0

    def test_two_point_case(self):
        est = eer_threshold(TrialScores(target=[1.0], nontarget=[0.0]))
        assert est.criterion_value == 0.0
        assert 0.0 < est.threshold < 1.0

    def test_interleaved_matches_brute_force(self):
        scores = TrialScores(target=[0.0, 2.0], nontarget=[1.0, 3.0])
        est = eer_threshold(scores)
        thr, val = brute_eer([0.0, 2.0], [1.0, 3.0])
        assert est.threshold == thr
        assert est.criterion_value == val

    def test_matches_brute_force_on_random_sets(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            target, nontarget = random_scores(rng)
            est = eer_threshold(TrialScores(target=target, nontarget=nontarget))
            thr, val = brute_eer(list(target), list(nontarget))
            assert est.threshold == thr
            assert est.criterion_value == val


@pytest.fixture(scope="module")
def calibration_setup():
    world = sample_world(
        WorldParams(dim=6, n_speakers=80, recordings_per_speaker=3, phi_b=4.0, phi_w=1.0, seed=21)
    )
    ds = world.dataset
    params = fit_preprocess(ds.matrix.data)
    groups = {
        spk: apply_preprocess_batch(params, ds.rows_for(recs))
        for spk, recs in ds.speakers.items()
    }
    model = train_plda(groups, max_iters=8)
    return ds, model, params


class TestAveragedThreshold:
    def test_single_forced_overlap_run_equals_min_dcf(self, calibration_setup):
        ds, model, params = calibration_setup
        speakers = sorted(ds.speakers)[:20]
        # both subsets draw from the same 20 speakers at subset_size 20:
        # the subsets are forced to coincide, guaranteeing overlap
        protocol = ThresholdProtocol(
            subset_size=20, n_runs=1, max_attempts=5, pool_a=speakers, pool_b=speakers
        )
        config = DcfConfig.default()
        est = averaged_threshold(
            ds, model, params, config, protocol, rng=np.random.default_rng(5)
        )
        assert est.n_runs_used == 1
        # reproduce that single run with the same rng stream
        rng = np.random.default_rng(5)
        pool = np.asarray(sorted(speakers))
        subset_a = rng.choice(pool, size=20, replace=False)
        subset_b = rng.choice(pool, size=20, replace=False)
        from reidrisk.plda import LlrScorer
        from reidrisk.thresholding import TrialScores as TS, min_dcf_threshold as mdt

        def draw(subset):
            chosen = []
            for spk in subset:
                recs = ds.speakers[spk]
                chosen.append(recs[int(rng.integers(len(recs)))])
            return apply_preprocess_batch(params, ds.rows_for(chosen))

        vecs_a, vecs_b = draw(subset_a), draw(subset_b)
        mat = LlrScorer(model).matrix(vecs_a, vecs_b)
        is_target = subset_a[:, None] == subset_b[None, :]
        expected = mdt(TS(target=mat[is_target], nontarget=mat[~is_target]), config)
        assert est.threshold == expected.threshold

    def test_disjoint_pools_fail_calibration(self, calibration_setup):
        ds, model, params = calibration_setup
        speakers = sorted(ds.speakers)
        protocol = ThresholdProtocol(
            subset_size=10,
            n_runs=5,
            max_attempts=20,
            pool_a=speakers[:40],
            pool_b=speakers[40:],
        )
        with pytest.raises(CalibrationError, match="no usable run in 20 attempts"):
            averaged_threshold(
                ds, model, params, DcfConfig.default(), protocol, rng=np.random.default_rng(6)
            )

    def test_deterministic_per_seed(self, calibration_setup):
        ds, model, params = calibration_setup
        protocol = ThresholdProtocol(subset_size=40, n_runs=5)
        config = DcfConfig.strict()
        a = averaged_threshold(ds, model, params, config, protocol, rng=np.random.default_rng(7))
        b = averaged_threshold(ds, model, params, config, protocol, rng=np.random.default_rng(7))
        assert a == b

    def test_subset_size_larger_than_pool_rejected(self, calibration_setup):
        ds, model, params = calibration_setup
        protocol = ThresholdProtocol(subset_size=1000, n_runs=2)
        with pytest.raises(ValueError, match="fewer than subset_size"):
            averaged_threshold(
                ds, model, params, DcfConfig.default(), protocol, rng=np.random.default_rng(8)
            )

    def test_threshold_variance_shrinks_with_more_runs(self):
        # the averaged estimate tightens as runs accumulate: its seed-to-seed
        # standard deviation at 40 runs is below the 5-run one
        world = sample_world(
            WorldParams(dim=4, n_speakers=1100, recordings_per_speaker=2,
                        phi_b=4.0, phi_w=1.0, seed=23)
        )
        ds = world.dataset
        params = fit_preprocess(ds.matrix.data)
        groups = {
            spk: apply_preprocess_batch(params, ds.rows_for(recs))
            for spk, recs in list(ds.speakers.items())[:200]
        }
        model = train_plda(groups, max_iters=3)
        config = DcfConfig.default()

        def spread(n_runs):
            estimates = [
                averaged_threshold(
                    ds, model, params, config,
                    ThresholdProtocol(subset_size=100, n_runs=n_runs),
                    rng=np.random.default_rng(1000 + seed),
                ).threshold
                for seed in range(8)
            ]
            return float(np.std(estimates))

        assert spread(40) < spread(5)
