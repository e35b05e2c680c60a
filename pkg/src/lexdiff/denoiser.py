"""The noise predictor: a stack of modulated transformer blocks.

Blocks are grouped into recurrent-conditioning groups. A gated recurrent cell
advances a hidden state from the text condition once per group, and a
one-hidden-layer MLP of that state produces a channel-wise shift added to
every token: conditioning is shift-only on this path, never a scale (scaling
here is known to collapse training). Inside each block, two one-hidden-layer
MLPs of the sinusoidal time embedding produce a scale/shift pair and a gate;
each sublayer (attention, feed-forward) is wrapped as
c + gate * Sublayer((1+scale) * c + shift) so zero-initialized gates make
every block start as the identity on the residual path.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, sigmoid, silu, softmax_last, swap_last, tanh, total_sum
from .diffusion import NoiseSchedule, draw_t_eps, forward_noise

CHECKPOINT_FORMAT = "lexdiff-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class DenoiserConfig:
    n_tokens: int = 16
    d_latent: int = 4  # channels per token at input/output
    d_model: int = 32
    n_layers: int = 12
    layers_per_rat: int = 4
    d_text: int = 8
    d_time: int = 16
    d_hidden: int = 32
    rat_enabled: bool = True  # ablation: False severs the text-conditioning path
    seed: int = 0

    def __post_init__(self) -> None:
        widths = (
            self.n_tokens,
            self.d_latent,
            self.d_model,
            self.n_layers,
            self.layers_per_rat,
            self.d_text,
            self.d_time,
            self.d_hidden,
        )
        if any(w < 1 for w in widths):
            raise ValueError("all sizes must be >= 1")
        if self.n_layers % self.layers_per_rat != 0:
            raise ValueError("n_layers must be divisible by layers_per_rat")
        if self.d_time % 2 != 0:
            raise ValueError("d_time must be even")

    @property
    def n_rat(self) -> int:
        return self.n_layers // self.layers_per_rat

    @property
    def d_ff(self) -> int:
        return 2 * self.d_model


@dataclass(eq=False)
class DenoiserParams:
    """Named parameter arrays plus the config they were built for.

    Dict order is the canonical flattening order used by checkpoints and
    optimizer state.
    """

    config: DenoiserConfig
    values: dict[str, np.ndarray]

    def names(self) -> tuple[str, ...]:
        return tuple(self.values.keys())

    def param_count(self) -> int:
        return sum(v.size for v in self.values.values())

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(self.config, {k: v.copy() for k, v in self.values.items()})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.values.values())

    def content_hash(self) -> str:
        digest = hashlib.sha256()
        for name, arr in self.values.items():
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return digest.hexdigest()


def param_count_formula(cfg: DenoiserConfig) -> int:
    """Closed-form parameter count, kept independent of the init code."""
    dl, dm, dt, de, dh, df = (
        cfg.d_latent,
        cfg.d_model,
        cfg.d_text,
        cfg.d_time,
        cfg.d_hidden,
        cfg.d_ff,
    )
    proj = dl * dm + dm + dm * dl + dl
    h0 = dt * dh + dh
    gru = 3 * (dt * dh + dh * dh + dh)
    per_rat = dh * dh + dh + dh * dm + dm
    attn = 4 * (dm * dm + dm)
    ff = dm * df + df + df * dm + dm
    time_mlp = de * dh + dh + 2 * (dh * dm + dm)
    gate_mlp = de * dh + dh + dh * dm + dm
    per_block = attn + ff + time_mlp + gate_mlp
    return proj + h0 + gru + cfg.n_rat * per_rat + cfg.n_layers * per_block


def init_denoiser(config: DenoiserConfig) -> DenoiserParams:
    """Seeded scaled-normal init.

    Gate-MLP final layers start at zero so every block begins as the identity
    on its residual path, and the per-group shift-MLP final layers start at
    zero so a fresh network's output is independent of the condition: the
    whole net reduces to out_proj(in_proj(x)).
    """
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    v: dict[str, np.ndarray] = {}

    def w(name: str, fan_in: int, *shape: int) -> None:
        v[name] = rng.normal(size=shape) / math.sqrt(fan_in)

    def b(name: str, size: int) -> None:
        v[name] = np.zeros(size)

    def zero(name: str, *shape: int) -> None:
        v[name] = np.zeros(shape)

    w("in_proj.w", cfg.d_latent, cfg.d_latent, cfg.d_model)
    b("in_proj.b", cfg.d_model)
    w("out_proj.w", cfg.d_model, cfg.d_model, cfg.d_latent)
    b("out_proj.b", cfg.d_latent)

    w("cond.h0.w", cfg.d_text, cfg.d_text, cfg.d_hidden)
    b("cond.h0.b", cfg.d_hidden)
    for gate in ("z", "r", "n"):
        w(f"cond.gru.w{gate}", cfg.d_text, cfg.d_text, cfg.d_hidden)
        w(f"cond.gru.u{gate}", cfg.d_hidden, cfg.d_hidden, cfg.d_hidden)
        b(f"cond.gru.b{gate}", cfg.d_hidden)

    for r in range(cfg.n_rat):
        w(f"rat{r}.shift.w1", cfg.d_hidden, cfg.d_hidden, cfg.d_hidden)
        b(f"rat{r}.shift.b1", cfg.d_hidden)
        zero(f"rat{r}.shift.w2", cfg.d_hidden, cfg.d_model)
        b(f"rat{r}.shift.b2", cfg.d_model)

    for l in range(cfg.n_layers):
        for part in ("wq", "wk", "wv", "wo"):
            w(f"block{l}.attn.{part}", cfg.d_model, cfg.d_model, cfg.d_model)
        for part in ("bq", "bk", "bv", "bo"):
            b(f"block{l}.attn.{part}", cfg.d_model)
        w(f"block{l}.ff.w1", cfg.d_model, cfg.d_model, cfg.d_ff)
        b(f"block{l}.ff.b1", cfg.d_ff)
        w(f"block{l}.ff.w2", cfg.d_ff, cfg.d_ff, cfg.d_model)
        b(f"block{l}.ff.b2", cfg.d_model)
        w(f"block{l}.time.w1", cfg.d_time, cfg.d_time, cfg.d_hidden)
        b(f"block{l}.time.b1", cfg.d_hidden)
        w(f"block{l}.time.wg", cfg.d_hidden, cfg.d_hidden, cfg.d_model)
        b(f"block{l}.time.bg", cfg.d_model)
        w(f"block{l}.time.wb", cfg.d_hidden, cfg.d_hidden, cfg.d_model)
        b(f"block{l}.time.bb", cfg.d_model)
        w(f"block{l}.gate.w1", cfg.d_time, cfg.d_time, cfg.d_hidden)
        b(f"block{l}.gate.b1", cfg.d_hidden)
        zero(f"block{l}.gate.w2", cfg.d_hidden, cfg.d_model)
        b(f"block{l}.gate.b2", cfg.d_model)

    return DenoiserParams(cfg, v)


def time_embedding(t: int | np.ndarray, d_time: int) -> np.ndarray:
    """Sinusoidal embedding at geometric frequencies, components in [-1, 1].

    Scalar t gives a (d_time,) vector, an array of timesteps a stacked batch.
    """
    if d_time < 2 or d_time % 2 != 0:
        raise ValueError("d_time must be an even integer >= 2")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 1):
        raise ValueError("timesteps are 1-based")
    half = d_time // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    angles = t_arr[..., None] * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


def _mlp(v: dict, prefix: str, x: Tensor) -> Tensor:
    h = silu(x @ v[f"{prefix}.w1"] + v[f"{prefix}.b1"])
    return h @ v[f"{prefix}.w2"] + v[f"{prefix}.b2"]


def _gru_step(v: dict, x: Tensor, h: Tensor) -> Tensor:
    z = sigmoid(x @ v["cond.gru.wz"] + h @ v["cond.gru.uz"] + v["cond.gru.bz"])
    r = sigmoid(x @ v["cond.gru.wr"] + h @ v["cond.gru.ur"] + v["cond.gru.br"])
    n = tanh(x @ v["cond.gru.wn"] + (r * h) @ v["cond.gru.un"] + v["cond.gru.bn"])
    return (1.0 - z) * n + z * h


def _attention(v: dict, l: int, x: Tensor, d_model: int) -> Tensor:
    q = x @ v[f"block{l}.attn.wq"] + v[f"block{l}.attn.bq"]
    k = x @ v[f"block{l}.attn.wk"] + v[f"block{l}.attn.bk"]
    val = x @ v[f"block{l}.attn.wv"] + v[f"block{l}.attn.bv"]
    scores = (q @ swap_last(k)) * (1.0 / math.sqrt(d_model))
    mixed = softmax_last(scores) @ val
    return mixed @ v[f"block{l}.attn.wo"] + v[f"block{l}.attn.bo"]


def _feed_forward(v: dict, l: int, x: Tensor) -> Tensor:
    return _mlp(v, f"block{l}.ff", x)


def _forward(
    v: dict[str, Tensor], cfg: DenoiserConfig, x_t: np.ndarray, t: np.ndarray, cond: np.ndarray
) -> Tensor:
    """Batched forward pass. x_t (B, n_tokens, d_latent), t (B,), cond (B, d_text)."""
    temb = Tensor(time_embedding(t, cfg.d_time)[:, None, :])  # (B, 1, d_time)
    cond3 = Tensor(cond[:, None, :])  # (B, 1, d_text)

    c = Tensor(x_t) @ v["in_proj.w"] + v["in_proj.b"]
    h = cond3 @ v["cond.h0.w"] + v["cond.h0.b"]
    for r in range(cfg.n_rat):
        if cfg.rat_enabled:
            h = _gru_step(v, cond3, h)
            c = c + _mlp(v, f"rat{r}.shift", h)  # channel-wise, same shift for every token
        for l in range(r * cfg.layers_per_rat, (r + 1) * cfg.layers_per_rat):
            hid = silu(temb @ v[f"block{l}.time.w1"] + v[f"block{l}.time.b1"])
            scale = hid @ v[f"block{l}.time.wg"] + v[f"block{l}.time.bg"]
            shift = hid @ v[f"block{l}.time.wb"] + v[f"block{l}.time.bb"]
            gate = _mlp(v, f"block{l}.gate", temb)
            c = c + gate * _attention(v, l, (1.0 + scale) * c + shift, cfg.d_model)
            c = c + gate * _feed_forward(v, l, (1.0 + scale) * c + shift)
    return c @ v["out_proj.w"] + v["out_proj.b"]


def _check_shapes(cfg: DenoiserConfig, x_t: np.ndarray, cond: np.ndarray) -> None:
    if x_t.shape[-2:] != (cfg.n_tokens, cfg.d_latent):
        raise ValueError(
            f"latent shape {x_t.shape[-2:]} does not match "
            f"(n_tokens={cfg.n_tokens}, d_latent={cfg.d_latent})"
        )
    if cond.shape[-1] != cfg.d_text:
        raise ValueError(f"condition width {cond.shape[-1]} != d_text={cfg.d_text}")


def denoise(
    params: DenoiserParams, x_t: np.ndarray, t: int | np.ndarray, cond: np.ndarray
) -> np.ndarray:
    """Predict the noise in x_t. Accepts one sample or a leading batch axis."""
    cfg = params.config
    x_t = np.asarray(x_t, dtype=np.float64)
    cond = np.asarray(cond, dtype=np.float64)
    _check_shapes(cfg, x_t, cond)
    single = x_t.ndim == 2
    if single:
        x_t = x_t[None]
    n = x_t.shape[0]
    t_arr = np.broadcast_to(np.asarray(t), (n,))
    if cond.ndim == 1:
        cond = np.broadcast_to(cond, (n, cfg.d_text))
    v = {k: Tensor(a) for k, a in params.values.items()}
    out = _forward(v, cfg, x_t, t_arr, cond).data
    return out[0] if single else out


def denoiser_grad(
    params: DenoiserParams,
    x0: np.ndarray,
    cond: np.ndarray,
    sched: NoiseSchedule,
    rng: np.random.Generator | None = None,
    t: np.ndarray | None = None,
    eps: np.ndarray | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and exact reverse-mode gradient of the denoising objective.

    Same (t, eps) convention as ddpm_loss: pass rng for fresh draws or pin
    both explicitly (finite-difference checks need the pinned form).
    """
    cfg = params.config
    if x0.shape[0] == 0:
        raise ValueError("empty batch")
    _check_shapes(cfg, x0, cond)
    if t is None or eps is None:
        if rng is None:
            raise ValueError("need rng when t/eps are not supplied")
        t, eps = draw_t_eps(sched, x0.shape, rng)
    x_t = forward_noise(x0, t, eps, sched)

    v = {k: Tensor(a, requires_grad=True) for k, a in params.values.items()}
    diff = _forward(v, cfg, x_t, t, cond) - eps
    loss = total_sum(diff * diff) * (1.0 / x0.shape[0])
    loss.backward()
    grads = {
        k: (tens.grad if tens.grad is not None else np.zeros_like(tens.data))
        for k, tens in v.items()
    }
    return float(loss.data), grads


def save_checkpoint(path: str | Path, params: DenoiserParams) -> None:
    """Write a checkpoint: one JSON header line, then the raw parameter payload.

    The header records the config, the ordered (name, shape) list, and a
    sha256 of the payload. The payload is the little-endian float64 bytes of
    every array concatenated in header order.
    """
    payload = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.values.values()
    )
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "params": [{"name": k, "shape": list(a.shape)} for k, a in params.values.items()],
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    with Path(path).open("wb") as fh:
        fh.write(json.dumps(header, separators=(",", ":")).encode("utf-8") + b"\n")
        fh.write(payload)


def load_checkpoint(path: str | Path) -> DenoiserParams:
    with Path(path).open("rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: checkpoint header is not valid JSON") from exc
    if header.get("format") != CHECKPOINT_FORMAT or header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise ValueError(f"{path}: payload hash mismatch (truncated or corrupted)")
    cfg = DenoiserConfig(**header["config"])
    values: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=size, offset=offset)
        values[entry["name"]] = arr.reshape(shape).astype(np.float64)
        offset += size * 8
    if offset != len(payload):
        raise ValueError(f"{path}: payload length disagrees with header shapes")
    return DenoiserParams(cfg, values)
