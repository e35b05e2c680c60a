"""Outlier detectors for web-retrieved records.

Two purifiers: a per-keyword K-means cluster filter that drops whole clusters
whose centroid sits too far from the keyword's dataset class, and a softmax
classifier filter that drops records whose predicted label disagrees with
their search keyword.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import Corpus


@dataclass(eq=False)
class KMeansModel:
    k: int
    centroids: np.ndarray  # (k, D)
    assignments: np.ndarray  # (n,) cluster index per input point
    objective: float  # sum of squared distances to assigned centroids
    objective_history: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.centroids.shape[0] != self.k:
            raise ValueError("centroid count disagrees with k")


def _sq_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.sum(diff * diff, axis=2)


def _plusplus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    closest = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total == 0.0:
            centroids[j] = points[rng.integers(n)]
            continue
        idx = rng.choice(n, p=closest / total)
        centroids[j] = points[idx]
        closest = np.minimum(closest, np.sum((points - centroids[j]) ** 2, axis=1))
    return centroids


def kmeans_fit(points: np.ndarray, k: int, seed: int, max_iter: int = 200) -> KMeansModel:
    """Lloyd's algorithm with seeded k-means++ initialization.

    Runs until the assignment reaches a fixpoint or max_iter. Empty clusters
    are reseeded to the point farthest from its current centroid, which never
    increases the objective.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n == 0:
        raise ValueError("cannot cluster an empty point set")
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in [1, {n}]")

    rng = np.random.default_rng(seed)
    centroids = _plusplus_init(points, k, rng)
    assignments = np.full(n, -1)
    history: list[float] = []
    for _ in range(max_iter):
        dists = _sq_distances(points, centroids)
        new_assignments = np.argmin(dists, axis=1)
        history.append(float(dists[np.arange(n), new_assignments].sum()))
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        for j in range(k):
            members = points[assignments == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
            else:
                worst = int(np.argmax(dists[np.arange(n), assignments]))
                centroids[j] = points[worst]
                assignments[worst] = j

    dists = _sq_distances(points, centroids)
    objective = float(dists[np.arange(n), assignments].sum())
    return KMeansModel(
        k=k,
        centroids=centroids,
        assignments=assignments,
        objective=objective,
        objective_history=tuple(history),
    )


@dataclass(eq=False)
class SoftmaxClassifier:
    """Multinomial logistic regression over embedding vectors."""

    weights: np.ndarray  # (C, D)
    bias: np.ndarray  # (C,)
    classes: tuple[str, ...]

    def logits(self, x: np.ndarray) -> np.ndarray:
        return np.atleast_2d(x) @ self.weights.T + self.bias

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        z = self.logits(x)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, x: np.ndarray) -> list[str]:
        idx = np.argmax(self.predict_proba(x), axis=1)
        return [self.classes[i] for i in idx]


def ce_loss_and_grad(
    weights: np.ndarray, bias: np.ndarray, x: np.ndarray, y_index: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy of softmax regression and its exact gradient."""
    z = x @ weights.T + bias
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    n = x.shape[0]
    loss = float(np.mean(log_norm - z[np.arange(n), y_index]))
    probs = np.exp(z - log_norm[:, None])
    probs[np.arange(n), y_index] -= 1.0
    grad_w = probs.T @ x / n
    grad_b = probs.sum(axis=0) / n
    return loss, grad_w, grad_b


def train_classifier(
    dataset: Corpus, lr: float = 0.5, epochs: int = 500, seed: int = 0
) -> SoftmaxClassifier:
    """Fit softmax regression on image features by full-batch gradient descent.

    Records are processed in ascending-id order, so the result is independent
    of the corpus's record ordering.
    """
    records = sorted(dataset.records, key=lambda r: r.id)
    classes = tuple(sorted({r.label for r in records}))
    if len(classes) < 2:
        raise ValueError("classifier training needs >=2 distinct labels")
    class_index = {c: i for i, c in enumerate(classes)}
    x = np.stack([r.image_vec for r in records])
    y = np.array([class_index[r.label] for r in records])

    rng = np.random.default_rng(seed)
    weights = 0.01 * rng.normal(size=(len(classes), dataset.dim_image))
    bias = np.zeros(len(classes))
    for _ in range(epochs):
        _, grad_w, grad_b = ce_loss_and_grad(weights, bias, x, y)
        weights = weights - lr * grad_w
        bias = bias - lr * grad_b
    return SoftmaxClassifier(weights=weights, bias=bias, classes=classes)


@dataclass(eq=False)
class FilterReport:
    """Partition of an input id set into kept and removed, with per-decision stats."""

    kept_ids: tuple[str, ...]
    removed_ids: tuple[str, ...]
    stats: dict[str, float | str] = field(default_factory=dict)
    warnings: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if set(self.kept_ids) & set(self.removed_ids):
            raise ValueError("kept and removed ids overlap")

    def check_partition(self, input_ids: tuple[str, ...]) -> bool:
        return set(self.kept_ids) | set(self.removed_ids) == set(input_ids)


def _merge_reports(parts: list[FilterReport]) -> FilterReport:
    kept = sorted(i for p in parts for i in p.kept_ids)
    removed = sorted(i for p in parts for i in p.removed_ids)
    stats: dict[str, float | str] = {}
    warnings: list[str] = []
    for p in parts:
        stats.update(p.stats)
        warnings.extend(p.warnings)
    return FilterReport(tuple(kept), tuple(removed), stats, tuple(sorted(warnings)))


def cluster_filter(
    web: Corpus, dataset: Corpus, k: int = 5, tau_sigma: float = 3.0, seed: int = 0
) -> FilterReport:
    """Remove whole web clusters whose centroid strays from the dataset class.

    Per keyword: cluster that keyword's web records with K-means, then drop
    every cluster whose centroid lies farther than tau_sigma times the
    within-class spread s_c (mean member distance) from the dataset class
    centroid. Keywords with no dataset counterpart pass through with a warning.
    """
    dataset_groups = dataset.by_label()
    parts: list[FilterReport] = []
    for label in sorted(web.labels()):
        group = sorted((r for r in web.records if r.label == label), key=lambda r: r.id)
        ids = [r.id for r in group]
        if label not in dataset_groups:
            parts.append(
                FilterReport(tuple(ids), (), warnings=(f"no dataset counterpart for keyword {label!r}",))
            )
            continue
        ds_vecs = np.stack([r.image_vec for r in dataset_groups[label]])
        mu = ds_vecs.mean(axis=0)
        s_c = float(np.mean(np.linalg.norm(ds_vecs - mu, axis=1)))

        points = np.stack([r.image_vec for r in group])
        model = kmeans_fit(points, min(k, len(group)), seed=seed)
        centroid_dist = np.linalg.norm(model.centroids - mu, axis=1)
        removed_cluster = centroid_dist > tau_sigma * s_c

        kept, removed, stats = [], [], {}
        for rec_id, cluster in zip(ids, model.assignments):
            stats[rec_id] = float(centroid_dist[cluster])
            (removed if removed_cluster[cluster] else kept).append(rec_id)
        parts.append(FilterReport(tuple(kept), tuple(removed), stats))
    return _merge_reports(parts)


def classifier_filter(web: Corpus, clf: SoftmaxClassifier) -> FilterReport:
    """Keep a web record iff the classifier agrees with its search keyword."""
    known = set(clf.classes)
    unknown = sorted({r.label for r in web.records} - known)
    if unknown:
        raise ValueError(f"labels unknown to the classifier: {unknown}")
    if not len(web):
        return FilterReport((), ())
    predictions = clf.predict(web.image_matrix())
    kept, removed, stats = [], [], {}
    for rec, predicted in zip(web.records, predictions):
        stats[rec.id] = predicted
        (kept if predicted == rec.label else removed).append(rec.id)
    return FilterReport(tuple(sorted(kept)), tuple(sorted(removed)), stats)
