"""Toy text embedder and attention denoiser with attention record/override taps.

The latent is the image itself cut into ``patch x patch`` pixel patches, so a
32x32 RGB image becomes an (L=256, c=12) array and decoding is the inverse
rearrangement.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tn
from .tensor import DimensionError, Tape, Tensor


@dataclass(frozen=True)
class ModelConfig:
    grid: int = 16
    patch: int = 2
    channels: int = 3
    d: int = 32
    heads: int = 4
    blocks: int = 2
    d_text: int = 16
    vocab: int = 64
    n_ctx: int = 16
    d_time: int = 32
    ff_mult: int = 4
    timesteps: int = 1000

    @property
    def L(self) -> int:
        return self.grid * self.grid

    @property
    def latent_dim(self) -> int:
        return self.patch * self.patch * self.channels

    @property
    def image_size(self) -> int:
        return self.grid * self.patch


@dataclass
class DenoiserParams:
    config: ModelConfig
    weights: dict[str, np.ndarray] = field(default_factory=dict)

    def tensors(self, tape: Tape | None = None) -> dict[str, Tensor]:
        if tape is None:
            return {k: Tensor(v) for k, v in self.weights.items()}
        return {k: tape.watch(v) for k, v in self.weights.items()}

    def checksum(self) -> int:
        crc = 0
        for name in sorted(self.weights):
            crc = zlib.crc32(name.encode(), crc)
            crc = zlib.crc32(np.ascontiguousarray(self.weights[name], dtype="<f8").tobytes(), crc)
        return crc

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(self.config, {k: v.copy() for k, v in self.weights.items()})


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, c, dt = cfg.d, cfg.latent_dim, cfg.d_text
    shapes = {
        "tok_emb": (cfg.vocab, dt),
        "tok_pos": (cfg.n_ctx, dt),
        "in_w": (c, d),
        "in_b": (d,),
        "pos": (cfg.L, d),
        "time_w1": (cfg.d_time, d),
        "time_b1": (d,),
        "time_w2": (d, d),
        "out_w": (d, c),
        "out_b": (c,),
    }
    for b in range(cfg.blocks):
        p = f"b{b}."
        shapes.update({
            p + "self_q": (d, d), p + "self_k": (d, d), p + "self_v": (d, d), p + "self_o": (d, d),
            p + "cross_q": (d, d), p + "cross_k": (dt, d), p + "cross_v": (dt, d),
            p + "cross_o": (d, d),
            p + "ff_w1": (d, cfg.ff_mult * d), p + "ff_b1": (cfg.ff_mult * d,),
            p + "ff_w2": (cfg.ff_mult * d, d), p + "ff_b2": (d,),
        })
    return shapes


def init_params(seed: int, config: ModelConfig | None = None) -> DenoiserParams:
    """Gaussian init with std 1/sqrt(fan_in); biases zero, embedding tables unit std."""
    cfg = config or ModelConfig()
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in param_shapes(cfg).items():
        if len(shape) == 1:
            weights[name] = np.zeros(shape)
        elif name in ("tok_emb", "tok_pos", "pos"):
            weights[name] = rng.standard_normal(shape)
        else:
            weights[name] = rng.standard_normal(shape) / np.sqrt(shape[0])
    return DenoiserParams(cfg, weights)


def encode_tokens(params: DenoiserParams | dict, prompt, config: ModelConfig | None = None) -> Tensor:
    """Text features (n_tokens, d_text): embedding lookup plus positional offset."""
    if isinstance(params, DenoiserParams):
        config, w = params.config, params.tensors()
    else:
        w = params
    ids = np.asarray(prompt, dtype=np.int64)
    if ids.ndim != 1 or len(ids) > config.n_ctx:
        raise DimensionError(f"prompt must be 1-D with at most {config.n_ctx} ids, got {ids.shape}")
    if (ids < 0).any() or (ids >= config.vocab).any():
        raise ValueError(f"token id outside vocabulary of size {config.vocab}: {ids.tolist()}")
    return w["tok_emb"][ids] + w["tok_pos"][: len(ids)]


def timestep_features(t, dim: int) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.cos(args), np.sin(args)], axis=-1)


@dataclass
class AttentionRecord:
    """Head- and block-averaged attention of the first batch item.

    ``cross`` is (L, n_ctx); column ``j`` is the map of text token ``j``.
    ``self_attn`` is (L, L) with rows indexed by query pixel.
    """

    cross: Tensor
    self_attn: Tensor
    t: int
    per_head_cross: list[np.ndarray] | None = None
    per_head_self: list[np.ndarray] | None = None

    def token_maps(self, indices) -> Tensor:
        """(N, L) cross-attention maps of the given prompt positions."""
        return self.cross.T[list(indices)]


@dataclass
class AttentionOverride:
    """Replacement cross-attention columns, one length-L map per prompt index."""

    token_indices: list[int]
    maps: np.ndarray  # (N, L)

    def __post_init__(self):
        self.maps = np.asarray(self.maps, dtype=np.float64)
        if self.maps.ndim != 2 or self.maps.shape[0] != len(self.token_indices):
            raise DimensionError(f"override maps {self.maps.shape} vs {len(self.token_indices)} tokens")
        if (self.maps < 0).any() or (self.maps > 1).any():
            raise ValueError("override values must lie in [0, 1]")


def _heads(x: Tensor, h: int) -> Tensor:
    b, n, d = x.shape
    return x.reshape(b, n, h, d // h).transpose(0, 2, 1, 3)


def _merge(x: Tensor) -> Tensor:
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def forward(
    w: dict[str, Tensor],
    cfg: ModelConfig,
    z: Tensor,
    t,
    context: Tensor,
    override: AttentionOverride | None = None,
    record: bool = False,
    debug: bool = False,
):
    """Batched noise prediction.

    ``z`` is (B, L, c), ``t`` holds B integer timesteps, ``context`` is
    (B, n_ctx, d_text). Returns (eps, record-or-None).
    """
    z = tn.as_tensor(z)
    context = tn.as_tensor(context)
    if z.ndim != 3 or z.shape[1:] != (cfg.L, cfg.latent_dim):
        raise DimensionError(f"latent shape {z.shape} incompatible with (B, {cfg.L}, {cfg.latent_dim})")
    if context.ndim != 3 or context.shape[0] != z.shape[0] or context.shape[2] != cfg.d_text:
        raise DimensionError(f"context shape {context.shape} incompatible with latent {z.shape}")
    B, h = z.shape[0], cfg.heads
    scale = 1.0 / np.sqrt(cfg.d // h)

    tf = Tensor(timestep_features(np.broadcast_to(t, (B,)), cfg.d_time))
    temb = tn.gelu(tf @ w["time_w1"] + w["time_b1"]) @ w["time_w2"]
    x = z @ w["in_w"] + w["in_b"] + w["pos"] + temb.reshape(B, 1, cfg.d)

    if override is not None:
        col = np.zeros(context.shape[1])
        col[override.token_indices] = 1.0
        repl = np.zeros((cfg.L, context.shape[1]))
        repl[:, override.token_indices] = override.maps.T
        if repl.shape[0] != cfg.L:
            raise DimensionError("override map length does not match L")
        keep = 1.0 - col

    cross_sum = self_sum = None
    ph_cross, ph_self = [], []
    for b in range(cfg.blocks):
        p = f"b{b}."
        y = tn.layer_norm(x)
        q, k, v = (_heads(y @ w[p + n], h) for n in ("self_q", "self_k", "self_v"))
        P = tn.softmax((q @ k.swapaxes(-1, -2)) * scale, axis=-1)
        x = x + _merge(P @ v) @ w[p + "self_o"]
        if record:
            s = P[0].sum(axis=0)
            self_sum = s if self_sum is None else self_sum + s
            if debug:
                ph_self.append(np.array(P.data[0]))

        y = tn.layer_norm(x)
        q = _heads(y @ w[p + "cross_q"], h)
        k = _heads(context @ w[p + "cross_k"], h)
        v = _heads(context @ w[p + "cross_v"], h)
        P = tn.softmax((q @ k.swapaxes(-1, -2)) * scale, axis=-1)
        if record:
            s = P[0].sum(axis=0)
            cross_sum = s if cross_sum is None else cross_sum + s
            if debug:
                ph_cross.append(np.array(P.data[0]))
        if override is not None:
            P = P * keep + repl
        x = x + _merge(P @ v) @ w[p + "cross_o"]

        y = tn.layer_norm(x)
        x = x + tn.relu(y @ w[p + "ff_w1"] + w[p + "ff_b1"]) @ w[p + "ff_w2"] + w[p + "ff_b2"]

    eps = tn.layer_norm(x) @ w["out_w"] + w["out_b"]
    rec = None
    if record:
        n = 1.0 / (cfg.blocks * h)
        tt = int(np.atleast_1d(t)[0])
        rec = AttentionRecord(cross_sum * n, self_sum * n, tt,
                              ph_cross if debug else None, ph_self if debug else None)
    return eps, rec


def denoise(
    params: DenoiserParams,
    z_t,
    t: int,
    context,
    override: AttentionOverride | None = None,
    *,
    tape: Tape | None = None,
    weights: dict[str, Tensor] | None = None,
    record: bool = True,
    debug: bool = False,
):
    """Single-latent noise prediction: ``z_t`` (L, c) -> (eps (L, c), record).

    Pass a recorded ``z_t`` to differentiate through the denoiser. Parameters
    are constants unless ``weights`` are supplied from a tape.
    """
    cfg = params.config
    w = weights if weights is not None else params.tensors()
    z = tn.as_tensor(z_t)
    if z.shape != (cfg.L, cfg.latent_dim):
        raise DimensionError(f"latent shape {z.shape} != ({cfg.L}, {cfg.latent_dim})")
    context = tn.as_tensor(context)
    eps, rec = forward(w, cfg, z.reshape(1, cfg.L, cfg.latent_dim), np.array([t]),
                       context.reshape(1, *context.shape), override, record, debug)
    return eps.reshape(cfg.L, cfg.latent_dim), rec


# latent <-> image

def image_to_latent(img: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """(H, W, C) image in [0, 1] -> (L, patch*patch*C) latent in [-1, 1]."""
    g, p, c = cfg.grid, cfg.patch, cfg.channels
    x = np.asarray(img, dtype=np.float64) * 2.0 - 1.0
    if x.shape != (g * p, g * p, c):
        raise DimensionError(f"image shape {x.shape} != {(g * p, g * p, c)}")
    return x.reshape(g, p, g, p, c).transpose(0, 2, 1, 3, 4).reshape(g * g, p * p * c)


def latent_to_image(z: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    g, p, c = cfg.grid, cfg.patch, cfg.channels
    x = np.asarray(z).reshape(g, g, p, p, c).transpose(0, 2, 1, 3, 4).reshape(g * p, g * p, c)
    return np.clip((x + 1.0) / 2.0, 0.0, 1.0)


# checkpoint file
#
#   magic   b"LGCKPT\0\0"  (8 bytes)
#   version u32 little-endian (currently 1)
#   cfg_len u32, cfg JSON (utf-8, ModelConfig fields)
#   count   u32
#   per tensor: name_len u16, name utf-8, ndim u8, ndim x u32 dims, raw <f8 data

MAGIC = b"LGCKPT\0\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(params: DenoiserParams, path) -> None:
    cfg_bytes = json.dumps(asdict(params.config), sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(cfg_bytes)), cfg_bytes,
             struct.pack("<I", len(params.weights))]
    for name in sorted(params.weights):
        arr = np.ascontiguousarray(params.weights[name], dtype="<f8")
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> DenoiserParams:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, n = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    cfg = ModelConfig(**json.loads(buf[off:off + n]))
    off += n
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    weights = {}
    for _ in range(count):
        (nl,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + nl].decode()
        off += nl
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        size = int(np.prod(shape)) * 8
        weights[name] = np.frombuffer(buf, dtype="<f8", count=size // 8, offset=off).reshape(shape).astype(np.float64)
        off += size
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes")
    expected = param_shapes(cfg)
    if {k: v.shape for k, v in weights.items()} != expected:
        raise CheckpointError(f"{path}: parameter table does not match config")
    return DenoiserParams(cfg, weights)
