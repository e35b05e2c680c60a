"""Desk-scale generation metrics and the early-stopping rule.

Fréchet distance between moment-matched Gaussians stands in for FID; an
exp-mean-KL score over the softmax classifier's posteriors stands in for the
inception score. Both operate on embedding vectors, not pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detect import SoftmaxClassifier

EIG_CLAMP = -1e-9


@dataclass(eq=False)
class GaussianStats:
    mean: np.ndarray  # (D,)
    cov: np.ndarray  # (D, D), symmetric PSD
    n: int

    def __post_init__(self) -> None:
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ValueError("covariance shape disagrees with mean")
        if np.max(np.abs(self.cov - self.cov.T)) > 1e-12:
            raise ValueError("covariance must be symmetric within 1e-12")


def fit_gaussian(features: np.ndarray) -> GaussianStats:
    """Sample mean and unbiased sample covariance of row vectors."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.shape[0] < 2:
        raise ValueError("need at least 2 samples to fit a Gaussian")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    cov = 0.5 * (cov + cov.T)
    return GaussianStats(mean=mean, cov=cov, n=x.shape[0])


def _clamped_eigh(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sym = 0.5 * (mat + mat.T)
    vals, vecs = np.linalg.eigh(sym)
    if np.any(vals < EIG_CLAMP):
        raise ValueError(f"matrix has eigenvalue {vals.min():.3e} below clamp {EIG_CLAMP}")
    return np.clip(vals, 0.0, None), vecs


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = _clamped_eigh(mat)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2).

    Matrix square roots via symmetric eigendecomposition; tiny negative
    eigenvalues from round-off are clamped to zero, anything below the clamp
    is an error.
    """
    if a.mean.size != b.mean.size:
        raise ValueError("dimension mismatch")
    sqrt_a = _psd_sqrt(a.cov)
    inner_vals, _ = _clamped_eigh(sqrt_a @ b.cov @ sqrt_a)
    mean_term = float(np.sum((a.mean - b.mean) ** 2))
    trace_term = float(np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.sum(np.sqrt(inner_vals)))
    return max(mean_term + trace_term, 0.0)


def score_from_posteriors(posteriors: np.ndarray) -> float:
    """exp(mean KL(p(y|x) || p(y))) for rows of class posteriors."""
    p = np.asarray(posteriors, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise ValueError("need a nonempty (n, C) posterior matrix")
    marginal = p.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(marginal)), 0.0)
    # Round-off can push the mean KL a hair below zero; the score is >= 1.
    mean_kl = max(float(terms.sum(axis=1).mean()), 0.0)
    return float(np.exp(mean_kl))


def inception_score(samples: np.ndarray, clf: SoftmaxClassifier) -> float:
    """Sharpness-diversity score of generated features under a classifier."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[0] == 0:
        raise ValueError("empty sample set")
    return score_from_posteriors(clf.predict_proba(samples))


def feature_space(x: np.ndarray, clf: SoftmaxClassifier | None = None) -> np.ndarray:
    """Metric feature map: raw vectors when narrow, classifier logits when wide.

    Low-dimensional latents are compared directly; for wider embeddings the
    classifier's logits act as the fine-tuned feature extractor.
    """
    x = np.atleast_2d(x)
    if clf is None or x.shape[1] <= 8:
        return x
    return clf.logits(x)


@dataclass(frozen=True)
class StopDecision:
    should_stop: bool
    best_index: int | None
    stop_index: int | None


def early_stop_monitor(history: list[float] | tuple[float, ...], patience: int = 1) -> StopDecision:
    """Stop once `patience` consecutive evals sit strictly above the running best.

    Lower is better. Returns the index of the running-best entry and, when
    stopping, the index of the eval that completed the patience run. Ties with
    the best neither improve it nor count toward patience.
    """
    if patience < 1:
        raise ValueError("patience must be >= 1")
    if len(history) == 0:
        return StopDecision(False, None, None)
    best = history[0]
    best_index = 0
    worse_run = 0
    for i, value in enumerate(history[1:], start=1):
        if value < best:
            best = value
            best_index = i
            worse_run = 0
        elif value > best:
            worse_run += 1
            if worse_run >= patience:
                return StopDecision(True, best_index, i)
        else:
            worse_run = 0
    return StopDecision(False, best_index, None)
