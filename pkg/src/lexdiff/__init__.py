"""Embedding-space data augmentation by local linear extrapolation, with a
toy text-conditioned denoising diffusion model for end-to-end runs."""

from .corpus import (
    Corpus,
    CorpusFormatError,
    EmbeddingRecord,
    SynthConfig,
    canonical_text,
    generate_synthetic,
    load_corpus,
    normalize_corpus,
    save_corpus,
)
from .denoiser import (
    DenoiserConfig,
    DenoiserParams,
    denoise,
    denoiser_grad,
    init_denoiser,
    load_checkpoint,
    save_checkpoint,
    time_embedding,
)
from .detect import (
    FilterReport,
    KMeansModel,
    SoftmaxClassifier,
    classifier_filter,
    cluster_filter,
    kmeans_fit,
    train_classifier,
)
from .diffusion import NoiseSchedule, build_schedule, ddpm_loss, draw_t_eps, forward_noise
from .evaluate import (
    GaussianStats,
    StopDecision,
    early_stop_monitor,
    fit_gaussian,
    frechet_distance,
    inception_score,
    score_from_posteriors,
)
from .extrapolate import (
    NeighborSet,
    RankDeficiencyError,
    ReconWeights,
    extrapolate_corpus,
    nearest_neighbors,
    solve_weights,
    synthesize_text,
)
from .sample import GuidanceConfig, guided_epsilon, make_null_condition, reverse_step, sample
from .training import TrainConfig, TrainHistory, fine_tune, train

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "CorpusFormatError",
    "DenoiserConfig",
    "DenoiserParams",
    "EmbeddingRecord",
    "FilterReport",
    "GaussianStats",
    "GuidanceConfig",
    "KMeansModel",
    "NeighborSet",
    "NoiseSchedule",
    "RankDeficiencyError",
    "ReconWeights",
    "SoftmaxClassifier",
    "StopDecision",
    "SynthConfig",
    "TrainConfig",
    "TrainHistory",
    "build_schedule",
    "canonical_text",
    "classifier_filter",
    "cluster_filter",
    "ddpm_loss",
    "denoise",
    "denoiser_grad",
    "draw_t_eps",
    "early_stop_monitor",
    "extrapolate_corpus",
    "fine_tune",
    "fit_gaussian",
    "forward_noise",
    "frechet_distance",
    "generate_synthetic",
    "guided_epsilon",
    "inception_score",
    "init_denoiser",
    "kmeans_fit",
    "load_checkpoint",
    "load_corpus",
    "make_null_condition",
    "nearest_neighbors",
    "normalize_corpus",
    "reverse_step",
    "sample",
    "save_checkpoint",
    "save_corpus",
    "score_from_posteriors",
    "solve_weights",
    "synthesize_text",
    "time_embedding",
    "train",
    "train_classifier",
]
