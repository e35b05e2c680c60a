"""Optimization loops: Adam over the denoising objective, plus fine-tuning
with metric-based early stopping.

The training loss is known to keep wandering long after sample quality peaks,
so fine-tuning watches the Fréchet metric through an injectable monitor
callable and keeps the checkpoint preceding the first sustained increase.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .corpus import Corpus, canonical_text
from .denoiser import DenoiserParams, denoiser_grad
from .diffusion import NoiseSchedule
from .evaluate import early_stop_monitor


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 0.0
    batch_size: int = 24
    max_epochs: int = 50
    max_steps: int | None = None
    eval_every: int = 1
    patience: int = 1
    p_drop: float = 0.0  # probability of swapping cond for the corpus-mean text
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if not 0.0 <= self.p_drop <= 1.0:
            raise ValueError("p_drop must lie in [0,1]")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("moment coefficients must lie in [0,1)")


@dataclass(eq=False)
class TrainHistory:
    epoch_losses: tuple[float, ...] = ()
    steps: int = 0
    eval_epochs: tuple[int, ...] = ()
    metrics: tuple[float, ...] = ()
    checkpoint_hashes: tuple[str, ...] = ()
    wall_clock_seconds: float = 0.0  # informational only; never written to artifacts


@dataclass(eq=False)
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: DenoiserParams) -> "AdamState":
        return cls(
            m={k: np.zeros_like(a) for k, a in params.values.items()},
            v={k: np.zeros_like(a) for k, a in params.values.items()},
        )


def adam_step(
    params: DenoiserParams, grads: dict[str, np.ndarray], state: AdamState, cfg: TrainConfig
) -> None:
    """One in-place Adam update with classic L2 decay folded into the gradient."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, p in params.values.items():
        g = grads[name]
        if cfg.weight_decay != 0.0:
            g = g + cfg.weight_decay * p
        state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        p -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


@dataclass(eq=False)
class _Task:
    """Training arrays materialized once from a corpus."""

    x0: np.ndarray  # (n, n_tokens, d_latent)
    text_sets: list[np.ndarray]  # per record, (n_captions, d_text)
    mean_text: np.ndarray


def _prepare(corpus: Corpus, params: DenoiserParams) -> _Task:
    cfg = params.config
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    missing = [r.id for r in corpus.records if not r.text_vecs]
    if missing:
        raise ValueError(f"records lack text features (extrapolate first): {missing[:5]}")
    if cfg.n_tokens * cfg.d_latent != corpus.dim_image:
        raise ValueError(
            f"latent layout {cfg.n_tokens}x{cfg.d_latent} does not tile "
            f"dim_image={corpus.dim_image}"
        )
    if corpus.dim_text != cfg.d_text:
        raise ValueError(f"corpus dim_text={corpus.dim_text} != model d_text={cfg.d_text}")
    x0 = corpus.image_matrix().reshape(len(corpus), cfg.n_tokens, cfg.d_latent)
    text_sets = [np.stack(r.text_vecs) for r in corpus.records]
    mean_text = np.mean([canonical_text(r) for r in corpus.records], axis=0)
    return _Task(x0=x0, text_sets=text_sets, mean_text=mean_text)


def _run_epochs(
    corpus: Corpus,
    params: DenoiserParams,
    sched: NoiseSchedule,
    cfg: TrainConfig,
    on_epoch_end: Callable[[int, DenoiserParams], bool] | None = None,
    metrics_path: str | Path | None = None,
) -> tuple[DenoiserParams, TrainHistory]:
    task = _prepare(corpus, params)
    n = len(corpus)
    params = params.copy()
    state = AdamState.for_params(params)
    rng = np.random.default_rng(cfg.seed)
    started = time.monotonic()

    csv_rows: list[tuple] = []
    epoch_losses: list[float] = []
    total_steps = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        caption_picks = np.array([rng.integers(len(task.text_sets[i])) for i in order])
        drop_mask = rng.random(n) < cfg.p_drop if cfg.p_drop > 0 else np.zeros(n, dtype=bool)
        step_losses = []
        for start in range(0, n, cfg.batch_size):
            if cfg.max_steps is not None and total_steps >= cfg.max_steps:
                break
            idx = order[start : start + cfg.batch_size]
            x0 = task.x0[idx]
            cond = np.stack(
                [task.text_sets[i][caption_picks[j]] for j, i in zip(range(start, start + len(idx)), idx)]
            )
            dropped = drop_mask[start : start + len(idx)]
            if dropped.any():
                cond = np.where(dropped[:, None], task.mean_text, cond)
            loss, grads = denoiser_grad(params, x0, cond, sched, rng=rng)
            adam_step(params, grads, state, cfg)
            if not params.all_finite():
                raise FloatingPointError(f"non-finite parameter after step {state.step}")
            step_losses.append(loss)
            total_steps += 1
        if not step_losses:
            break
        epoch_loss = float(np.mean(step_losses))
        epoch_losses.append(epoch_loss)
        stop = False
        if on_epoch_end is not None:
            stop = on_epoch_end(epoch, params)
        csv_rows.append((epoch, total_steps, epoch_loss, ""))
        if stop or (cfg.max_steps is not None and total_steps >= cfg.max_steps):
            break

    history = TrainHistory(
        epoch_losses=tuple(epoch_losses),
        steps=total_steps,
        wall_clock_seconds=time.monotonic() - started,
    )
    if metrics_path is not None:
        _write_metrics_csv(metrics_path, csv_rows)
    return params, history


def _write_metrics_csv(path: str | Path, rows: list[tuple]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "step", "loss", "frechet"])
        writer.writerows(rows)


def train(
    corpus: Corpus,
    params: DenoiserParams,
    sched: NoiseSchedule,
    cfg: TrainConfig,
    metrics_path: str | Path | None = None,
) -> tuple[DenoiserParams, TrainHistory]:
    """Adam over shuffled mini-batches; one caption per record per epoch is
    picked by seeded draw. Deterministic given cfg.seed."""
    return _run_epochs(corpus, params, sched, cfg, metrics_path=metrics_path)


def fine_tune(
    params: DenoiserParams,
    corpus: Corpus,
    sched: NoiseSchedule,
    cfg: TrainConfig,
    monitor: Callable[[DenoiserParams, int], float],
    metrics_path: str | Path | None = None,
) -> tuple[DenoiserParams, TrainHistory]:
    """Continue training, stopping when the monitored metric starts rising.

    `monitor(params, epoch)` returns the metric (lower better) and runs every
    cfg.eval_every epochs plus at the final epoch. Returns the checkpoint with
    the best recorded metric, never a later one.
    """
    metrics: list[float] = []
    eval_epochs: list[int] = []
    hashes: list[str] = []
    best_params: list[DenoiserParams] = []

    def on_epoch_end(epoch: int, current: DenoiserParams) -> bool:
        if epoch % cfg.eval_every != 0 and epoch != cfg.max_epochs:
            return False
        metrics.append(float(monitor(current, epoch)))
        eval_epochs.append(epoch)
        hashes.append(current.content_hash())
        decision = early_stop_monitor(metrics, cfg.patience)
        if decision.best_index == len(metrics) - 1:
            best_params.clear()
            best_params.append(current.copy())
        return decision.should_stop

    trained, history = _run_epochs(corpus, params, sched, cfg, on_epoch_end=on_epoch_end)
    final = best_params[0] if best_params else trained
    history = TrainHistory(
        epoch_losses=history.epoch_losses,
        steps=history.steps,
        eval_epochs=tuple(eval_epochs),
        metrics=tuple(metrics),
        checkpoint_hashes=tuple(hashes),
        wall_clock_seconds=history.wall_clock_seconds,
    )
    if metrics_path is not None:
        metric_by_epoch = dict(zip(eval_epochs, metrics))
        rows = [
            (e, "", loss, metric_by_epoch.get(e, ""))
            for e, loss in enumerate(history.epoch_losses, start=1)
        ]
        _write_metrics_csv(metrics_path, rows)
    return final, history
