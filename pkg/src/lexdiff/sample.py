"""Ancestral reverse diffusion with null-condition guidance.

Guidance needs no separately trained unconditional model: the same network is
queried twice per step, once with the text condition and once with a null
condition, and the two noise estimates are mixed by the guidance ratio. At
ratio 1 the mix collapses to the plain conditional estimate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .corpus import Corpus, canonical_text
from .denoiser import DenoiserParams, denoise
from .diffusion import NoiseSchedule

NULL_MODES = ("mean_text", "zero", "explicit")

EpsModel = Callable[[np.ndarray, np.ndarray, np.ndarray | None], np.ndarray]


@dataclass(frozen=True)
class GuidanceConfig:
    eta: float = 1.5
    null_mode: str = "mean_text"
    steps: int | None = None  # default: full schedule length

    def __post_init__(self) -> None:
        if self.null_mode not in NULL_MODES:
            raise ValueError(f"null_mode must be one of {NULL_MODES}")
        if self.steps is not None and self.steps < 1:
            raise ValueError("steps must be >= 1")


def make_null_condition(
    corpus: Corpus, null_mode: str, explicit: np.ndarray | None = None
) -> np.ndarray:
    """The condition vector standing for "no prompt".

    mean_text averages every record's canonical text feature, the embedding
    analogue of a prompt describing the dataset's average content.
    """
    if null_mode == "zero":
        return np.zeros(corpus.dim_text)
    if null_mode == "explicit":
        if explicit is None:
            raise ValueError("explicit null_mode needs a vector")
        explicit = np.asarray(explicit, dtype=np.float64)
        if explicit.shape != (corpus.dim_text,):
            raise ValueError(f"explicit null vector must have shape ({corpus.dim_text},)")
        return explicit
    if null_mode == "mean_text":
        texted = [r for r in corpus.records if r.text_vecs]
        if not texted:
            raise ValueError("mean_text null needs a corpus with text features")
        return np.mean([canonical_text(r) for r in texted], axis=0)
    raise ValueError(f"null_mode must be one of {NULL_MODES}")


def guided_epsilon(eps_text: np.ndarray, eps_null: np.ndarray, eta: float) -> np.ndarray:
    """Affine mix of the conditional and null noise estimates.

    Written as eps_text*eta + eps_null*(1-eta), which is algebraically the
    (eps_text - eps_null)*eta + eps_null form and returns eps_text exactly at
    eta=1.
    """
    if eps_text.shape != eps_null.shape:
        raise ValueError("estimate shapes differ")
    return eps_text * eta + eps_null * (1.0 - eta)


def reverse_step(
    x_t: np.ndarray, t: int, eps_hat: np.ndarray, sched: NoiseSchedule, z: np.ndarray | float
) -> np.ndarray:
    """One ancestral step:
    x_{t-1} = (x_t - ((1-alpha_t)/sqrt(1-alpha_bar_t)) * eps_hat) / sqrt(alpha_t)
              + sigma_t * z
    The caller supplies z (standard normal, or 0 at the final step)."""
    alpha_t = sched.alpha_at(t)
    alpha_bar_t = sched.alpha_bar_at(t)
    sigma_t = sched.sigma_at(t)
    mean = (x_t - ((1.0 - alpha_t) / np.sqrt(1.0 - alpha_bar_t)) * eps_hat) / np.sqrt(alpha_t)
    return mean + sigma_t * z


def _as_eps_model(model: DenoiserParams | EpsModel) -> EpsModel:
    if isinstance(model, DenoiserParams):
        return lambda x, t, cond: denoise(model, x, t, cond)
    return model


def sample(
    model: DenoiserParams | EpsModel,
    cond: np.ndarray | None,
    guidance: GuidanceConfig,
    sched: NoiseSchedule,
    n: int,
    seed: int,
    null_cond: np.ndarray | None = None,
    latent_shape: tuple[int, int] | None = None,
) -> np.ndarray:
    """Draw n latent vectors, flattened to (n, n_tokens*d_latent).

    Each sample consumes its own random stream derived from (seed, index), so
    results are independent of batching and safely parallelizable. null_cond
    None runs unguided (one network query per step); otherwise estimates are
    mixed via guided_epsilon. z is forced to 0 at the final step.

    `model` is DenoiserParams or any eps(x_t, t, cond) callable with the same
    batched signature; callables (closed-form test stubs) must pass
    latent_shape explicitly.
    """
    eps_model = _as_eps_model(model)
    if isinstance(model, DenoiserParams):
        shape: tuple[int, ...] = (model.config.n_tokens, model.config.d_latent)
    elif latent_shape is not None:
        shape = tuple(latent_shape)
    else:
        raise ValueError("callable models need latent_shape")
    steps = guidance.steps if guidance.steps is not None else sched.T
    if steps > sched.T:
        raise ValueError(f"steps={steps} exceeds schedule length {sched.T}")
    if n < 1:
        raise ValueError("n must be >= 1")

    streams = [np.random.default_rng(np.random.SeedSequence([seed, i])) for i in range(n)]
    x = np.stack([rng.normal(size=shape) for rng in streams])

    cond_b = None
    if cond is not None:
        cond_b = np.broadcast_to(np.asarray(cond, dtype=np.float64), (n,) + np.shape(cond))
    null_b = None
    if null_cond is not None:
        null_b = np.broadcast_to(np.asarray(null_cond, dtype=np.float64), (n,) + np.shape(null_cond))

    for t in range(steps, 0, -1):
        t_arr = np.full(n, t)
        eps_text = eps_model(x, t_arr, cond_b)
        if null_b is not None:
            eps_null = eps_model(x, t_arr, null_b)
            eps_hat = guided_epsilon(eps_text, eps_null, guidance.eta)
        else:
            eps_hat = eps_text
        if t > 1:
            z = np.stack([rng.normal(size=shape) for rng in streams])
        else:
            z = 0.0
        x = reverse_step(x, t, eps_hat, sched, z)
    return x.reshape(n, -1)
