"""Text-feature synthesis for caption-less web images.

A web image feature is reconstructed as a linear combination of its nearest
dataset image features; the same weights applied to those neighbors' text
features yield the synthetic text feature. Weights come from the ridge-damped
normal equations of the least-squares reconstruction, with no sum or sign
constraint.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .corpus import Corpus, EmbeddingRecord, canonical_text


class RankDeficiencyError(np.linalg.LinAlgError):
    """Neighbor Gram matrix is singular and no ridge damping was requested."""


@dataclass(eq=False)
class NeighborSet:
    """Nearest dataset neighbors of one query image feature.

    Columns of image_features and text_features are index-aligned: column j
    is neighbor j's image feature and canonical text feature.
    """

    indices: tuple[int, ...]
    ids: tuple[str, ...]
    image_features: np.ndarray  # (D, k)
    text_features: np.ndarray  # (D_s, k)


@dataclass(eq=False)
class ReconWeights:
    w: np.ndarray  # (k,)
    residual_norm: float  # |f - F w|
    ridge_lambda: float


def nearest_neighbors(query: np.ndarray, dataset: Corpus, k: int) -> NeighborSet:
    """The k dataset records closest to the query in image space.

    Distances are computed between L2-normalized copies, so the ordering is
    invariant to rescaling of either side. Ties break by ascending id.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > len(dataset):
        raise ValueError(f"k={k} exceeds dataset size {len(dataset)}")
    mat = dataset.image_matrix()
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    unit = np.divide(mat, norms, out=mat.copy(), where=norms > 0)
    q_norm = float(np.linalg.norm(query))
    q = query / q_norm if q_norm > 0 else query
    dists = np.linalg.norm(unit - q, axis=1)

    ids = dataset.ids()
    order = sorted(range(len(dataset)), key=lambda i: (dists[i], ids[i]))[:k]
    chosen = [dataset.records[i] for i in order]
    return NeighborSet(
        indices=tuple(order),
        ids=tuple(r.id for r in chosen),
        image_features=np.stack([r.image_vec for r in chosen], axis=1),
        text_features=np.stack([canonical_text(r) for r in chosen], axis=1),
    )


def solve_weights(
    neighbors: NeighborSet, query: np.ndarray, ridge_lambda: float = 1e-6
) -> ReconWeights:
    """Reconstruction weights minimizing |query - F w|^2 + lambda |w|^2.

    Solves the k x k normal system (F^T F + lambda I) w = F^T query. With
    lambda = 0 a singular Gram matrix raises RankDeficiencyError instead of
    returning garbage.
    """
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be >= 0")
    f = neighbors.image_features
    gram = f.T @ f + ridge_lambda * np.eye(f.shape[1])
    try:
        np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError(
            "neighbor Gram matrix is singular; duplicate or linearly dependent "
            "neighbors need ridge_lambda > 0"
        ) from exc
    w = np.linalg.solve(gram, f.T @ query)
    residual = float(np.linalg.norm(query - f @ w))
    return ReconWeights(w=w, residual_norm=residual, ridge_lambda=ridge_lambda)


def synthesize_text(neighbors: NeighborSet, weights: ReconWeights | np.ndarray) -> np.ndarray:
    """Carry reconstruction weights from image space to text space: S w."""
    w = weights.w if isinstance(weights, ReconWeights) else np.asarray(weights)
    return neighbors.text_features @ w


def extrapolate_corpus(
    web_kept: Corpus, dataset: Corpus, k: int = 8, ridge_lambda: float = 1e-6
) -> Corpus:
    """Attach synthetic text features to filtered web records.

    Returns dataset plus the augmented web records (flagged extrapolated), the
    combined training corpus. Web records keep their original order after the
    dataset block.
    """
    if dataset.dim_image != web_kept.dim_image:
        raise ValueError("image dimensions of dataset and web corpora differ")
    augmented: list[EmbeddingRecord] = []
    for rec in web_kept.records:
        nbrs = nearest_neighbors(rec.image_vec, dataset, k)
        weights = solve_weights(nbrs, rec.image_vec, ridge_lambda)
        synth = synthesize_text(nbrs, weights)
        augmented.append(replace(rec, text_vecs=(synth,), extrapolated=True))
    return Corpus(
        dim_image=dataset.dim_image,
        dim_text=dataset.dim_text,
        records=dataset.records + tuple(augmented),
        normalized=dataset.normalized and web_kept.normalized,
    )
