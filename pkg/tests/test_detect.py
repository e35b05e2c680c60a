import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lexdiff.corpus import DATASET, WEB, Corpus, EmbeddingRecord, SynthConfig, generate_synthetic
from lexdiff.detect import (
    FilterReport,
    _plusplus_init,
    ce_loss_and_grad,
    classifier_filter,
    cluster_filter,
    kmeans_fit,
    train_classifier,
)


def _lloyd_oracle(points, k, seed):
    """Independent Lloyd iteration from the same seeded kmeans++ start.

    Mirrors the recording convention (objective of current centroids under the
    fresh assignment, once per iteration) but shares no code with kmeans_fit
    beyond the init helper.
    """
    rng = np.random.default_rng(seed)
    centroids = _plusplus_init(points, k, rng)
    prev = None
    history = []
    for _ in range(200):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        history.append(float(d2[np.arange(len(points)), assign].sum()))
        if prev is not None and np.array_equal(assign, prev):
            break
        prev = assign
        assert all((assign == j).any() for j in range(k)), "oracle assumes no empty clusters"
        centroids = np.stack([points[assign == j].mean(axis=0) for j in range(k)])
    return history, centroids, prev


class TestKMeans:
    def test_symmetric_two_cluster_case(self):
        points = np.array([[0.0, 0.0], [0.1, 0.0], [10.0, 10.0], [10.1, 10.0]])
        model = kmeans_fit(points, 2, seed=0)
        got = sorted(map(tuple, np.round(model.centroids, 10)))
        assert got == [(0.05, 0.0), (10.05, 10.0)]

    def test_k_equals_n_gives_zero_objective(self):
        points = np.random.default_rng(1).normal(size=(6, 3))
        model = kmeans_fit(points, 6, seed=0)
        assert model.objective == pytest.approx(0.0, abs=1e-24)
        assert sorted(model.assignments) == list(range(6))

    def test_matches_lloyd_oracle_per_iteration(self):
        points = np.random.default_rng(7).normal(size=(200, 2)) + np.repeat(
            np.array([[0.0, 0.0], [8.0, 0.0], [0.0, 8.0], [8.0, 8.0]]), 50, axis=0
        )
        model = kmeans_fit(points, 4, seed=3)
        oracle_history, oracle_centroids, oracle_assign = _lloyd_oracle(points, 4, seed=3)
        assert len(model.objective_history) == len(oracle_history)
        np.testing.assert_allclose(model.objective_history, oracle_history, rtol=1e-12)
        order = np.argsort(oracle_centroids[:, 0] + 1e3 * oracle_centroids[:, 1])
        order_got = np.argsort(model.centroids[:, 0] + 1e3 * model.centroids[:, 1])
        np.testing.assert_allclose(
            model.centroids[order_got], oracle_centroids[order], rtol=1e-12
        )

    def test_objective_history_never_increases(self):
        points = np.random.default_rng(2).normal(size=(120, 3))
        model = kmeans_fit(points, 5, seed=5)
        diffs = np.diff(model.objective_history)
        assert np.all(diffs <= 1e-9)

    def test_k_bounds(self):
        points = np.zeros((3, 2))
        with pytest.raises(ValueError):
            kmeans_fit(points, 0, seed=0)
        with pytest.raises(ValueError):
            kmeans_fit(points, 4, seed=0)


def _corpus_from(points, labels, split, dim, text=None):
    recs = []
    for i, (p, lab) in enumerate(zip(points, labels)):
        recs.append(
            EmbeddingRecord(
                id=f"{split}-{i:03d}",
                label=lab,
                split=split,
                image_vec=np.asarray(p, dtype=np.float64),
                text_vecs=(np.zeros(2),) if split == DATASET else (),
            )
        )
    return Corpus(dim, 2, tuple(recs))


class TestClusterFilter:
    def _dataset(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(40, 2))
        return _corpus_from(pts, ["x"] * 40, DATASET, 2)

    def test_cluster_on_class_centroid_kept(self):
        dataset = self._dataset()
        mu = dataset.image_matrix().mean(axis=0)
        web = _corpus_from([mu + 1e-3, mu - 1e-3, mu], ["x"] * 3, WEB, 2)
        report = cluster_filter(web, dataset, k=1, tau_sigma=3.0, seed=0)
        assert report.removed_ids == () and len(report.kept_ids) == 3

    def test_far_cluster_removed(self):
        dataset = self._dataset()
        mu = dataset.image_matrix().mean(axis=0)
        s_c = float(np.mean(np.linalg.norm(dataset.image_matrix() - mu, axis=1)))
        far = mu + np.array([10.0 * s_c, 0.0])
        web = _corpus_from([far, far + 1e-3], ["x"] * 2, WEB, 2)
        report = cluster_filter(web, dataset, k=1, tau_sigma=3.0, seed=0)
        assert report.kept_ids == () and len(report.removed_ids) == 2

    def test_unknown_keyword_passes_with_warning(self):
        dataset = self._dataset()
        web = _corpus_from([[0.0, 0.0]], ["mystery"], WEB, 2)
        report = cluster_filter(web, dataset, seed=0)
        assert report.kept_ids == ("web-000",)
        assert any("mystery" in w for w in report.warnings)

    def test_matches_distance_threshold_oracle(self):
        tau = 3.0
        dataset, web = generate_synthetic(
            SynthConfig(
                n_classes=3,
                dataset_per_class=60,
                web_per_class=200,
                outlier_fraction=0.2,
                separation=6.0,
                seed=2,
            )
        )
        report = cluster_filter(web, dataset, k=5, tau_sigma=tau, seed=0)
        removed_oracle = set()
        groups = dataset.by_label()
        for rec in web.records:
            ds = np.stack([d.image_vec for d in groups[rec.label]])
            mu = ds.mean(axis=0)
            s_c = float(np.mean(np.linalg.norm(ds - mu, axis=1)))
            if np.linalg.norm(rec.image_vec - mu) > tau * s_c:
                removed_oracle.add(rec.id)
        assert set(report.removed_ids) == removed_oracle
        truth = {r.id for r in web.records if r.outlier_truth}
        recall = len(set(report.removed_ids) & truth) / len(truth)
        false_removed = len(set(report.removed_ids) - truth) / (len(web) - len(truth))
        assert recall >= 0.99 and false_removed <= 0.05

    def test_report_partitions_input(self):
        dataset, web = generate_synthetic(
            SynthConfig(
                n_classes=2,
                dataset_per_class=20,
                web_per_class=30,
                outlier_fraction=0.3,
                seed=8,
            )
        )
        report = cluster_filter(web, dataset, seed=0)
        assert report.check_partition(web.ids())


class TestClassifier:
    def _separable(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(30, 2)) + [6.0, 0.0]
        b = rng.normal(size=(30, 2)) - [6.0, 0.0]
        pts = np.concatenate([a, b])
        labels = ["left"] * 30 + ["right"] * 30
        labels, pts = labels[::-1], pts[::-1]
        return _corpus_from(pts, labels, DATASET, 2)

    def test_separable_data_trains_to_full_accuracy(self):
        corpus = self._separable()
        clf = train_classifier(corpus)
        preds = clf.predict(corpus.image_matrix())
        assert all(p == r.label for p, r in zip(preds, corpus.records))

    def test_ce_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        weights = rng.normal(size=(3, 4))
        bias = rng.normal(size=3)
        x = rng.normal(size=(20, 4))
        y = rng.integers(0, 3, size=20)
        _, grad_w, grad_b = ce_loss_and_grad(weights, bias, x, y)
        h = 1e-6
        for grad, arr in ((grad_w, weights), (grad_b, bias)):
            flat_grad = grad.ravel()
            for i in range(arr.size):
                probe = arr.copy().ravel()
                probe[i] += h
                up, _, _ = ce_loss_and_grad(
                    *(probe.reshape(arr.shape), bias, x, y)
                    if arr is weights
                    else (weights, probe, x, y)
                )
                probe[i] -= 2 * h
                down, _, _ = ce_loss_and_grad(
                    *(probe.reshape(arr.shape), bias, x, y)
                    if arr is weights
                    else (weights, probe, x, y)
                )
                fd = (up - down) / (2 * h)
                rel = abs(flat_grad[i] - fd) / max(abs(flat_grad[i]), abs(fd), 1e-8)
                assert rel < 1e-4

    def test_record_order_does_not_change_weights(self):
        corpus = self._separable()
        shuffled = corpus.with_records(corpus.records[::-1])
        a = train_classifier(corpus, epochs=50)
        b = train_classifier(shuffled, epochs=50)
        assert np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)

    def test_single_class_rejected(self):
        corpus = _corpus_from(np.zeros((3, 2)), ["x"] * 3, DATASET, 2)
        with pytest.raises(ValueError, match="labels"):
            train_classifier(corpus)


class TestClassifierFilter:
    def test_agreeing_record_kept_and_swapped_removed(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(30, 2)) + [6.0, 0.0]
        b = rng.normal(size=(30, 2)) - [6.0, 0.0]
        dataset = _corpus_from(
            np.concatenate([a, b]), ["left"] * 30 + ["right"] * 30, DATASET, 2
        )
        clf = train_classifier(dataset)
        web = _corpus_from([[6.0, 0.0], [-6.0, 0.0]], ["left", "left"], WEB, 2)
        report = classifier_filter(web, clf)
        assert report.kept_ids == ("web-000",)
        assert report.removed_ids == ("web-001",)

    def test_unknown_label_raises(self):
        rng = np.random.default_rng(3)
        dataset = _corpus_from(
            np.concatenate([rng.normal(size=(5, 2)) + 4, rng.normal(size=(5, 2)) - 4]),
            ["a"] * 5 + ["b"] * 5,
            DATASET,
            2,
        )
        clf = train_classifier(dataset, epochs=10)
        web = _corpus_from([[0.0, 0.0]], ["zzz"], WEB, 2)
        with pytest.raises(ValueError, match="zzz"):
            classifier_filter(web, clf)

    def test_similar_outlier_recall(self):
        dataset, web = generate_synthetic(
            SynthConfig(
                n_classes=3,
                dataset_per_class=60,
                web_per_class=100,
                swap_fraction=0.2,
                separation=6.0,
                seed=4,
            )
        )
        clf = train_classifier(dataset)
        report = classifier_filter(web, clf)
        truth = {r.id for r in web.records if r.outlier_truth}
        recall = len(set(report.removed_ids) & truth) / len(truth)
        assert recall >= 0.95
        assert report.check_partition(web.ids())


class TestFilterReport:
    def test_overlap_rejected(self):
        with pytest.raises(ValueError, match="overlap"):
            FilterReport(kept_ids=("a",), removed_ids=("a",))

    @settings(max_examples=100, deadline=None)
    @given(
        ids=st.lists(st.text(alphabet="abcdef", min_size=1, max_size=4), unique=True),
        data=st.data(),
    )
    def test_partition_detects_exact_cover(self, ids, data):
        keep_flags = [data.draw(st.booleans()) for _ in ids]
        kept = tuple(i for i, f in zip(ids, keep_flags) if f)
        removed = tuple(i for i, f in zip(ids, keep_flags) if not f)
        report = FilterReport(kept, removed)
        assert report.check_partition(tuple(ids))
        assert not report.check_partition(tuple(ids) + ("extra",))
