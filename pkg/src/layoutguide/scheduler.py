"""Noise schedule, deterministic sampler, classifier-free guidance and training."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .model import DenoiserParams, encode_tokens, forward, image_to_latent
from .shapes import DatasetSpec
from .tensor import Tape, Tensor
from .vocab import empty_prompt

log = logging.getLogger(__name__)


class ScheduleError(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2

    @property
    def betas(self) -> np.ndarray:
        return np.linspace(self.beta_start, self.beta_end, self.timesteps)

    @property
    def alphas_cumprod(self) -> np.ndarray:
        return np.cumprod(1.0 - self.betas)

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal fraction; ``t = -1`` denotes the clean end point (1.0)."""
        if t == -1:
            return 1.0
        if not 0 <= t < self.timesteps:
            raise ScheduleError(f"timestep {t} outside [0, {self.timesteps})")
        return float(self.alphas_cumprod[t])

    def sampling_timesteps(self, steps: int) -> list[int]:
        """Descending sub-sampled timesteps, e.g. 980, 960, ..., 0 for 50 steps."""
        if steps <= 0 or self.timesteps % steps:
            raise ScheduleError(f"{steps} steps do not divide {self.timesteps} timesteps")
        stride = self.timesteps // steps
        return list(range(self.timesteps - stride, -1, -stride))


@dataclass(frozen=True)
class SampleConfig:
    steps: int = 50
    guidance_scale: float = 7.5
    seed: int = 0

    def __post_init__(self):
        if self.steps <= 0:
            raise ValueError("steps must be positive")
        if self.guidance_scale < 0:
            raise ValueError("guidance scale must be >= 0")


def add_noise(z0, eps, t: int, schedule: NoiseSchedule) -> np.ndarray:
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise ValueError(f"z0 {z0.shape} and noise {eps.shape} differ in shape")
    ab = schedule.alpha_bar(t)
    return math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * eps


def cfg_combine(eps_uncond, eps_cond, scale: float):
    return eps_uncond + scale * (eps_cond - eps_uncond)


def sample_step(z_t, eps, t: int, t_next: int, schedule: NoiseSchedule) -> np.ndarray:
    """Deterministic (eta = 0) update from ``t`` to ``t_next`` (< t, or -1 for the end)."""
    if not (t_next < t):
        raise ScheduleError(f"sampler must move backwards in time, got {t} -> {t_next}")
    ab, ab_next = schedule.alpha_bar(t), schedule.alpha_bar(t_next)
    z_t = np.asarray(z_t, dtype=np.float64)
    x0 = (z_t - math.sqrt(1.0 - ab) * eps) / math.sqrt(ab)
    return math.sqrt(ab_next) * x0 + math.sqrt(1.0 - ab_next) * eps


def initial_latent(seed: int, shape) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(shape)


def sample(params: DenoiserParams, prompt, schedule: NoiseSchedule, cfg: SampleConfig) -> np.ndarray:
    """Plain guided-by-text sampling; returns the final latent (L, c)."""
    from .model import denoise

    mcfg = params.config
    cond = encode_tokens(params, prompt)
    uncond = encode_tokens(params, empty_prompt(len(prompt)))
    z = initial_latent(cfg.seed, (mcfg.L, mcfg.latent_dim))
    ts = schedule.sampling_timesteps(cfg.steps)
    for i, t in enumerate(ts):
        t_next = ts[i + 1] if i + 1 < len(ts) else -1
        eps_c, _ = denoise(params, z, t, cond, record=False)
        eps_u, _ = denoise(params, z, t, uncond, record=False)
        z = sample_step(z, cfg_combine(eps_u.data, eps_c.data, cfg.guidance_scale), t, t_next, schedule)
    return z


# training

@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 16
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    cond_drop: float = 0.1
    dataset: DatasetSpec = field(default_factory=DatasetSpec)

    def __post_init__(self):
        if self.steps <= 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise ValueError("training extents must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class Batch:
    latents: np.ndarray  # (B, L, c)
    tokens: np.ndarray  # (B, n_ctx)


def make_batch(samples, params: DenoiserParams, rng: np.random.Generator, cond_drop: float) -> Batch:
    cfg = params.config
    lat = np.stack([image_to_latent(s.image, cfg) for s in samples])
    toks = np.array([
        empty_prompt(cfg.n_ctx) if rng.random() < cond_drop else s.tokens for s in samples
    ])
    return Batch(lat, toks)


def noise_mse(pred, eps) -> Tensor:
    """Mean squared error between a noise prediction and the drawn noise."""
    diff = tn.as_tensor(pred) - eps
    return (diff * diff).mean()


def diffusion_loss(w, cfg, batch: Batch, t, eps, schedule: NoiseSchedule) -> Tensor:
    """Noise-prediction loss of the batch at timesteps ``t`` with noise ``eps``."""
    ctx = tn.stack([encode_tokens(w, row, cfg) for row in batch.tokens])
    ab = schedule.alphas_cumprod[np.asarray(t)]
    zt = np.sqrt(ab)[:, None, None] * batch.latents + np.sqrt(1 - ab)[:, None, None] * eps
    pred, _ = forward(w, cfg, Tensor(zt), t, ctx)
    return noise_mse(pred, eps)


class Optimizer:
    """Plain SGD, or Adam when ``kind == 'adam'``."""

    def __init__(self, kind: str = "sgd", lr: float = 0.05, betas=(0.9, 0.999), eps=1e-8):
        self.kind, self.lr, self.betas, self.eps = kind, lr, betas, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.k = 0

    def apply(self, weights: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        if self.kind == "sgd":
            return {n: weights[n] - self.lr * grads[n] for n in weights}
        self.k += 1
        b1, b2 = self.betas
        out = {}
        for n, w in weights.items():
            g = grads[n]
            self.m[n] = b1 * self.m.get(n, 0.0) + (1 - b1) * g
            self.v[n] = b2 * self.v.get(n, 0.0) + (1 - b2) * g * g
            mh = self.m[n] / (1 - b1**self.k)
            vh = self.v[n] / (1 - b2**self.k)
            out[n] = w - self.lr * mh / (np.sqrt(vh) + self.eps)
        return out


def train_step(
    params: DenoiserParams,
    batch: Batch,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    optimizer: Optimizer | None = None,
) -> tuple[DenoiserParams, float]:
    """One gradient step of the noise-prediction loss; returns (new params, loss)."""
    opt = optimizer or Optimizer()
    cfg = params.config
    B = batch.latents.shape[0]
    t = rng.integers(0, schedule.timesteps, size=B)
    eps = rng.standard_normal(batch.latents.shape)
    tape = Tape()
    w = params.tensors(tape)
    loss = diffusion_loss(w, cfg, batch, t, eps, schedule)
    value = loss.item()
    if not math.isfinite(value):
        raise NonFiniteLossError(f"non-finite training loss {value} (t={t.tolist()})")
    names = list(w)
    grads = dict(zip(names, tape.gradients(loss, [w[n] for n in names])))
    return DenoiserParams(cfg, opt.apply(params.weights, grads)), value


def diffusion_loss_at(params: DenoiserParams, batch: Batch, t, eps, schedule: NoiseSchedule) -> float:
    """Loss value for fixed timesteps and noise (no gradient)."""
    return diffusion_loss(params.tensors(), params.config, batch, t, eps, schedule).item()


def train(cfg: TrainConfig, model_cfg=None, params: DenoiserParams | None = None,
          schedule: NoiseSchedule | None = None, callback=None) -> tuple[DenoiserParams, list[float]]:
    """Train from scratch (or from ``params``) on the shapes stream; returns params and loss history."""
    from .model import ModelConfig, init_params
    from .shapes import generate_dataset

    schedule = schedule or NoiseSchedule()
    params = params or init_params(cfg.seed, model_cfg or ModelConfig())
    if params.config.image_size != cfg.dataset.image_size:
        raise ValueError("model grid * patch must equal the dataset image size")
    data = generate_dataset(cfg.dataset, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    opt = Optimizer(cfg.optimizer, cfg.learning_rate)
    history = []
    for step in range(cfg.steps):
        batch = make_batch([next(data) for _ in range(cfg.batch_size)], params, rng, cfg.cond_drop)
        params, loss = train_step(params, batch, schedule, rng, opt)
        history.append(loss)
        if callback is not None:
            callback(step, loss, params)
    return params, history
