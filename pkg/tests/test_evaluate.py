import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from lexdiff.detect import SoftmaxClassifier
from lexdiff.evaluate import (
    EIG_CLAMP,
    GaussianStats,
    StopDecision,
    early_stop_monitor,
    feature_space,
    fit_gaussian,
    frechet_distance,
    inception_score,
    score_from_posteriors,
)


def _two_pass_oracle(x):
    """Textbook two-pass moment estimate with explicit outer-product sums."""
    n, d = x.shape
    mean = np.zeros(d)
    for row in x:
        mean += row
    mean /= n
    cov = np.zeros((d, d))
    for row in x:
        c = row - mean
        cov += np.outer(c, c)
    cov /= n - 1
    return mean, cov


def _random_spd(rng, d):
    a = rng.normal(size=(d, d))
    return a @ a.T + d * np.eye(d)


class TestFitGaussian:
    def test_two_point_case_by_hand(self):
        stats = fit_gaussian(np.array([[0.0, 0.0], [2.0, 0.0]]))
        np.testing.assert_allclose(stats.mean, [1.0, 0.0])
        np.testing.assert_allclose(stats.cov, [[2.0, 0.0], [0.0, 0.0]])
        assert stats.n == 2

    def test_identical_points_zero_cov(self):
        stats = fit_gaussian(np.tile([3.0, -1.0], (5, 1)))
        np.testing.assert_allclose(stats.cov, np.zeros((2, 2)), atol=1e-15)

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(1000, 4)) * rng.uniform(0.5, 2.0, size=4) + rng.normal(size=4)
        stats = fit_gaussian(x)
        mean, cov = _two_pass_oracle(x)
        np.testing.assert_allclose(stats.mean, mean, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(stats.cov, cov, rtol=1e-10, atol=1e-12)

    def test_too_few_samples(self):
        with pytest.raises(ValueError, match="2 samples"):
            fit_gaussian(np.array([[1.0, 2.0]]))

    def test_asymmetric_cov_rejected(self):
        with pytest.raises(ValueError, match="symmetric"):
            GaussianStats(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]), n=10)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            GaussianStats(np.zeros(3), np.eye(2), n=10)


class TestFrechet:
    def test_identical_stats_zero(self):
        rng = np.random.default_rng(1)
        stats = fit_gaussian(rng.normal(size=(50, 3)))
        assert abs(frechet_distance(stats, stats)) <= 1e-9

    def test_unit_mean_shift_is_exactly_one(self):
        a = GaussianStats(np.array([0.0]), np.array([[1.0]]), n=1000)
        b = GaussianStats(np.array([1.0]), np.array([[1.0]]), n=1000)
        assert abs(frechet_distance(a, b) - 1.0) <= 1e-9

    def test_matches_scipy_sqrtm_oracle(self):
        # Independent route: scipy's general matrix square root instead of the
        # library's clamped symmetric eigendecomposition.
        rng = np.random.default_rng(2)
        for _ in range(5):
            a = GaussianStats(rng.normal(size=3), _random_spd(rng, 3), n=100)
            b = GaussianStats(rng.normal(size=3), _random_spd(rng, 3), n=100)
            sa = scipy.linalg.sqrtm(a.cov)
            inner = scipy.linalg.sqrtm(sa @ b.cov @ sa)
            expect = float(
                np.sum((a.mean - b.mean) ** 2)
                + np.trace(a.cov)
                + np.trace(b.cov)
                - 2.0 * np.real(np.trace(inner))
            )
            got = frechet_distance(a, b)
            assert abs(got - expect) <= 1e-8 * max(abs(expect), 1.0)

    def test_symmetry_and_nonnegativity(self):
        rng = np.random.default_rng(3)
        a = fit_gaussian(rng.normal(size=(60, 4)))
        b = fit_gaussian(rng.normal(size=(60, 4)) + 0.5)
        d_ab = frechet_distance(a, b)
        d_ba = frechet_distance(b, a)
        assert d_ab >= 0.0
        np.testing.assert_allclose(d_ab, d_ba, rtol=1e-8)

    def test_dimension_mismatch(self):
        a = GaussianStats(np.zeros(2), np.eye(2), n=10)
        b = GaussianStats(np.zeros(3), np.eye(3), n=10)
        with pytest.raises(ValueError, match="dimension"):
            frechet_distance(a, b)

    def test_eigenvalue_below_clamp_rejected(self):
        a = GaussianStats(np.zeros(2), np.diag([-0.5, 1.0]), n=10)
        b = GaussianStats(np.zeros(2), np.eye(2), n=10)
        assert EIG_CLAMP == -1e-9
        with pytest.raises(ValueError, match="clamp"):
            frechet_distance(a, b)


class TestPosteriorScore:
    def test_uniform_posteriors_score_one(self):
        p = np.full((50, 4), 0.25)
        assert score_from_posteriors(p) == pytest.approx(1.0, abs=1e-12)

    def test_balanced_one_hot_scores_class_count(self):
        c = 4
        p = np.tile(np.eye(c), (25, 1))
        assert score_from_posteriors(p) == pytest.approx(c, abs=1e-9)

    def test_matches_direct_kl_summation(self):
        rng = np.random.default_rng(4)
        raw = rng.uniform(size=(10, 3))
        p = raw / raw.sum(axis=1, keepdims=True)
        marginal = p.mean(axis=0)
        total = 0.0
        for row in p:
            for j in range(3):
                total += row[j] * np.log(row[j] / marginal[j])
        expect = np.exp(total / 10)
        assert score_from_posteriors(p) == pytest.approx(expect, rel=1e-10)

    def test_bad_shapes_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            score_from_posteriors(np.empty((0, 3)))
        with pytest.raises(ValueError, match="nonempty"):
            score_from_posteriors(np.ones(3))

    @settings(max_examples=200, deadline=None)
    @given(
        n=st.integers(min_value=1, max_value=40),
        c=st.integers(min_value=2, max_value=6),
        seed=st.integers(min_value=0, max_value=2**31),
    )
    def test_score_bounded_by_class_count(self, n, c, seed):
        rng = np.random.default_rng(seed)
        raw = rng.uniform(0.01, 1.0, size=(n, c))
        p = raw / raw.sum(axis=1, keepdims=True)
        s = score_from_posteriors(p)
        assert 1.0 - 1e-9 <= s <= c + 1e-9

    def test_inception_score_uses_classifier_posteriors(self):
        clf = SoftmaxClassifier(
            weights=np.array([[8.0, 0.0], [-8.0, 0.0]]), bias=np.zeros(2), classes=("a", "b")
        )
        x = np.array([[3.0, 0.0], [-3.0, 0.0], [3.0, 0.0], [-3.0, 0.0]])
        s = inception_score(x, clf)
        assert s == pytest.approx(score_from_posteriors(clf.predict_proba(x)), rel=1e-12)
        assert s > 1.9
        with pytest.raises(ValueError, match="empty"):
            inception_score(np.empty((0, 2)), clf)


class TestFeatureSpace:
    def test_narrow_vectors_pass_through(self):
        x = np.random.default_rng(5).normal(size=(10, 8))
        clf = SoftmaxClassifier(np.zeros((2, 8)), np.zeros(2), ("a", "b"))
        assert np.array_equal(feature_space(x, clf), x)
        assert np.array_equal(feature_space(x, None), x)

    def test_wide_vectors_use_classifier_logits(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(10, 9))
        clf = SoftmaxClassifier(rng.normal(size=(3, 9)), rng.normal(size=3), ("a", "b", "c"))
        np.testing.assert_allclose(feature_space(x, clf), clf.logits(x), rtol=1e-15)
        assert np.array_equal(feature_space(x, None), x)


class TestEarlyStop:
    def test_worked_sequence_rebound_after_plateau(self):
        assert early_stop_monitor([10.0, 8.0, 7.0, 7.5]) == StopDecision(True, 2, 3)

    def test_worked_sequence_patience_two(self):
        assert early_stop_monitor([5.0, 6.0, 6.0, 4.0], patience=2) == StopDecision(True, 0, 2)

    def test_strictly_decreasing_never_stops(self):
        decision = early_stop_monitor([9.0, 7.0, 5.0, 3.0])
        assert decision == StopDecision(False, 3, None)

    def test_tie_with_best_resets_patience(self):
        # 5,6,5,6: each rebound is a fresh single miss, never two in a row.
        decision = early_stop_monitor([5.0, 6.0, 5.0, 6.0], patience=2)
        assert decision == StopDecision(False, 0, None)

    def test_empty_history(self):
        assert early_stop_monitor([]) == StopDecision(False, None, None)

    def test_patience_validation(self):
        with pytest.raises(ValueError, match="patience"):
            early_stop_monitor([1.0], patience=0)

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.floats(min_value=0, max_value=100, allow_nan=False), min_size=1, max_size=20),
        st.integers(min_value=1, max_value=3),
    )
    def test_best_index_is_first_minimum(self, history, patience):
        decision = early_stop_monitor(history, patience=patience)
        considered = history if not decision.should_stop else history[: decision.stop_index + 1]
        assert decision.best_index == considered.index(min(considered))
        if decision.should_stop:
            tail = considered[decision.stop_index - patience + 1 :]
            assert len(tail) == patience
            assert all(v > min(considered) for v in tail)
