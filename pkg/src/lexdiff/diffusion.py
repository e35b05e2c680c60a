"""Noise schedule, forward noising, and the denoising training objective.

Timesteps are 1-based throughout: t ranges over {1, .., T}, with schedule
arrays stored 0-indexed internally. alpha_bar_at(1) is the first (least noisy)
level.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

SIGMA_MODES = ("beta", "posterior")


@dataclass(eq=False)
class NoiseSchedule:
    """Per-timestep diffusion rates. All arrays have length T, index t-1."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray
    sigma_mode: str = "beta"

    def __post_init__(self) -> None:
        for name in ("beta", "alpha", "alpha_bar", "sigma"):
            if getattr(self, name).shape != (self.T,):
                raise ValueError(f"{name} must have length T={self.T}")
        if not (np.all(self.beta > 0) and np.all(self.beta < 1)):
            raise ValueError("beta values must lie in (0,1)")
        if self.T > 1 and not np.all(np.diff(self.alpha_bar) < 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if not (0.0 < self.alpha_bar[-1] < 1.0):
            raise ValueError("alpha_bar must stay inside (0,1)")

    def _check_t(self, t: int | np.ndarray) -> np.ndarray:
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"timestep out of range [1, {self.T}]")
        return t

    def beta_at(self, t: int | np.ndarray) -> np.ndarray:
        return self.beta[self._check_t(t) - 1]

    def alpha_at(self, t: int | np.ndarray) -> np.ndarray:
        return self.alpha[self._check_t(t) - 1]

    def alpha_bar_at(self, t: int | np.ndarray) -> np.ndarray:
        return self.alpha_bar[self._check_t(t) - 1]

    def sigma_at(self, t: int | np.ndarray) -> np.ndarray:
        return self.sigma[self._check_t(t) - 1]


def build_schedule(
    T: int, beta_min: float = 1e-4, beta_max: float = 0.02, sigma_mode: str = "beta"
) -> NoiseSchedule:
    """Linear beta schedule.

    sigma_mode "beta" sets the reverse-step noise scale to sqrt(beta_t);
    "posterior" uses the forward-posterior variance
    beta_t * (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t), which is 0 at t=1.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ValueError("need 0 < beta_min <= beta_max < 1")
    if sigma_mode not in SIGMA_MODES:
        raise ValueError(f"sigma_mode must be one of {SIGMA_MODES}")
    beta = np.linspace(beta_min, beta_max, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    if sigma_mode == "beta":
        sigma = np.sqrt(beta)
    else:
        alpha_bar_prev = np.concatenate(([1.0], alpha_bar[:-1]))
        sigma = np.sqrt(beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar))
    return NoiseSchedule(
        T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar, sigma=sigma, sigma_mode=sigma_mode
    )


def forward_noise(
    x0: np.ndarray, t: int | np.ndarray, eps: np.ndarray, sched: NoiseSchedule
) -> np.ndarray:
    """x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.

    Accepts a scalar t or a per-sample t array whose entries pair with the
    leading axis of x0.
    """
    a_bar = sched.alpha_bar_at(t)
    if np.ndim(a_bar) > 0:
        a_bar = a_bar.reshape((-1,) + (1,) * (x0.ndim - 1))
    return np.sqrt(a_bar) * x0 + np.sqrt(1.0 - a_bar) * eps


def draw_t_eps(
    sched: NoiseSchedule, shape: tuple[int, ...], rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Shared (t, eps) draws: t uniform over {1..T} per sample, eps standard normal.

    Factored out so the training loss and its gradient can consume identical
    draws from identical generator states.
    """
    t = rng.integers(1, sched.T + 1, size=shape[0])
    eps = rng.normal(size=shape)
    return t, eps


def ddpm_loss(
    x0: np.ndarray,
    cond: np.ndarray,
    eps_model: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
    sched: NoiseSchedule,
    rng: np.random.Generator | None = None,
    t: np.ndarray | None = None,
    eps: np.ndarray | None = None,
) -> float:
    """Mean over the batch of |eps - eps_model(x_t, t, cond)|^2.

    Either pass rng (t and eps are drawn here) or pass both t and eps
    explicitly; explicit draws make the loss a plain deterministic function,
    which finite-difference checks rely on.
    """
    if x0.shape[0] == 0:
        raise ValueError("empty batch")
    if t is None or eps is None:
        if rng is None:
            raise ValueError("need rng when t/eps are not supplied")
        t, eps = draw_t_eps(sched, x0.shape, rng)
    x_t = forward_noise(x0, t, eps, sched)
    diff = eps - eps_model(x_t, t, cond)
    return float(np.mean(np.sum(diff * diff, axis=tuple(range(1, diff.ndim)))))
