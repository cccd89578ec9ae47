"""Tiny vision transformer over sensed tokens, GRU saccade predictor and a dense baseline.

All forwards are batched: the ViT takes ``(B, T, P*P*C)`` token pixels plus
``(B, T)`` grid indices, the GRU takes ``(B, N*(C+1))`` patch features, and the
dense baseline takes zero-filled frames ``(B, H, W, C)``.  Single-sample
wrappers are provided where the callers think in frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .params import ParamStore
from .sensor import Frame, PatchGrid, PatchMask, Tokens


@dataclass(frozen=True)
class ViTConfig:
    patch_size: int = 8
    channels: int = 1
    embed_dim: int = 64
    heads: int = 4
    blocks: int = 4
    classes: int = 4
    n_patches: int = 16
    mlp_dim: int = 128
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")
        if self.classes < 2:
            raise ValueError("need at least two classes")

    @property
    def token_dim(self) -> int:
        return self.patch_size ** 2 * self.channels


@dataclass(frozen=True)
class GRUConfig:
    d_in: int = 2
    d_h: int = 128
    n_patches: int = 64

    @property
    def input_dim(self) -> int:
        return self.d_in * self.n_patches


@dataclass(frozen=True)
class DenseConfig:
    input_dim: int = 1024
    hidden: tuple[int, ...] = (128, 64)
    classes: int = 4

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))


def xavier_bound(shape: tuple[int, ...]) -> float:
    fan_in, fan_out = (1, shape[0]) if len(shape) == 1 else (shape[0], shape[1])
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


class _Init:
    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.store = ParamStore()

    def uniform(self, name, shape):
        b = xavier_bound(shape)
        self.store.add(name, self.rng.uniform(-b, b, size=shape))

    def const(self, name, shape, value=0.0):
        self.store.add(name, np.full(shape, value))


def init_params(config, seed: int) -> ParamStore:
    """Scaled-uniform weights, zero biases, unit LayerNorm gains, zero GRU ``h0``."""
    init = _Init(seed)
    if isinstance(config, ViTConfig):
        d, m = config.embed_dim, config.mlp_dim
        init.uniform("vit.embed.w", (config.token_dim, d))
        init.const("vit.embed.b", (d,))
        init.uniform("vit.pos", (config.n_patches + 1, d))
        init.uniform("vit.cls", (d,))
        for i in range(config.blocks):
            p = f"vit.blk{i}"
            init.const(f"{p}.ln1.g", (d,), 1.0)
            init.const(f"{p}.ln1.b", (d,))
            init.uniform(f"{p}.qkv.w", (d, 3 * d))
            init.uniform(f"{p}.proj.w", (d, d))
            init.const(f"{p}.proj.b", (d,))
            init.const(f"{p}.ln2.g", (d,), 1.0)
            init.const(f"{p}.ln2.b", (d,))
            init.uniform(f"{p}.fc1.w", (d, m))
            init.const(f"{p}.fc1.b", (m,))
            init.uniform(f"{p}.fc2.w", (m, d))
            init.const(f"{p}.fc2.b", (d,))
        init.const("vit.lnf.g", (d,), 1.0)
        init.const("vit.lnf.b", (d,))
        init.uniform("vit.head.w", (d, config.classes))
        init.const("vit.head.b", (config.classes,))
    elif isinstance(config, GRUConfig):
        di, dh = config.input_dim, config.d_h
        for gate in ("z", "r", "h"):
            init.uniform(f"gru.W{gate}", (di, dh))
            init.uniform(f"gru.U{gate}", (dh, dh))
            init.const(f"gru.b{gate}", (dh,))
        init.uniform("gru.V", (dh, config.n_patches))
        init.const("gru.c", (config.n_patches,))
        init.const("gru.h0", (dh,))
    elif isinstance(config, DenseConfig):
        sizes = (config.input_dim,) + config.hidden + (config.classes,)
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            init.uniform(f"dense.fc{i}.w", (a, b))
            init.const(f"dense.fc{i}.b", (b,))
    else:
        raise TypeError(f"unknown model config {type(config).__name__}")
    return init.store


# -- vision transformer ----------------------------------------------------------


def _attention(x: T.Tensor, store: ParamStore, p: str, heads: int) -> T.Tensor:
    b, t, d = x.shape
    dh = d // heads
    # no qkv bias: the key bias has an identically zero gradient under softmax
    qkv = T.linear(x, store[f"{p}.qkv.w"])
    qkv = T.transpose(T.reshape(qkv, (b, t, 3, heads, dh)), (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
    out = T.matmul(T.softmax(scores, axis=-1), v)
    out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (b, t, d))
    return T.linear(out, store[f"{p}.proj.w"], store[f"{p}.proj.b"])


def vit_forward_batch(pixels: np.ndarray, indices: np.ndarray, store: ParamStore,
                      config: ViTConfig) -> T.Tensor:
    """Logits ``(B, classes)`` from ``B`` equally sized token sets."""
    pixels = np.asarray(pixels, dtype=np.float64)
    indices = np.asarray(indices, dtype=np.int64)
    b, t = indices.shape
    if pixels.shape != (b, t, config.token_dim):
        raise ValueError(f"token pixels {pixels.shape} do not match indices {indices.shape}")
    eps = config.ln_eps
    x = T.linear(T.Tensor(pixels), store["vit.embed.w"], store["vit.embed.b"])
    x = x + T.gather_rows(store["vit.pos"], indices + 1)
    cls = T.reshape(store["vit.cls"] + store["vit.pos"][0], (1, config.embed_dim))
    x = T.concat([T.repeat(cls, b), x], axis=1)
    for i in range(config.blocks):
        p = f"vit.blk{i}"
        x = x + _attention(T.layernorm(x, store[f"{p}.ln1.g"], store[f"{p}.ln1.b"], eps), store, p, config.heads)
        h = T.layernorm(x, store[f"{p}.ln2.g"], store[f"{p}.ln2.b"], eps)
        h = T.relu(T.linear(h, store[f"{p}.fc1.w"], store[f"{p}.fc1.b"]))
        x = x + T.linear(h, store[f"{p}.fc2.w"], store[f"{p}.fc2.b"])
    x = T.layernorm(x, store["vit.lnf.g"], store["vit.lnf.b"], eps)
    return T.linear(x[:, 0, :], store["vit.head.w"], store["vit.head.b"])


def vit_forward(tokens, store: ParamStore, config: ViTConfig) -> T.Tensor:
    """Logits ``(classes,)`` for one token sequence of ``(patch_index, pixels)`` pairs."""
    if isinstance(tokens, Tokens):
        idx, px = np.asarray(tokens.indices, dtype=np.int64), np.asarray(tokens.pixels)
    else:
        pairs = list(tokens)
        idx = np.array([i for i, _ in pairs], dtype=np.int64)
        px = np.array([v for _, v in pairs], dtype=np.float64).reshape(len(pairs), config.token_dim)
    if len(set(idx.tolist())) != len(idx):
        raise ValueError("duplicate patch indices in token sequence")
    if idx.size and (idx.min() < 0 or idx.max() >= config.n_patches):
        raise ValueError(f"patch index outside [0, {config.n_patches})")
    return vit_forward_batch(px[None], idx[None], store, config)[0]


def vit_logits_masked(patches: np.ndarray, sensed: np.ndarray, store: ParamStore,
                      config: ViTConfig) -> T.Tensor:
    """Logits for a batch whose masks may sense different numbers of patches.

    ``patches`` is ``(B, N, P*P*C)`` and ``sensed`` a ``(B, N)`` boolean mask.
    Samples are grouped by sensed count; only sensed rows reach the model.
    """
    sensed = np.asarray(sensed, dtype=bool)
    counts = sensed.sum(axis=1)
    parts, order = [], []
    for k in np.unique(counts):
        members = np.flatnonzero(counts == k)
        idx = np.stack([np.flatnonzero(sensed[m]) for m in members]).reshape(len(members), int(k))
        px = patches[members[:, None], idx]
        parts.append(vit_forward_batch(px, idx, store, config))
        order.append(members)
    logits = parts[0] if len(parts) == 1 else T.concat(parts, axis=0)
    order = np.concatenate(order)
    if np.array_equal(order, np.arange(len(order))):
        return logits
    return logits[np.argsort(order)]


# -- GRU saccade predictor --------------------------------------------------------------


def gru_step(x: T.Tensor, h: T.Tensor, store: ParamStore) -> tuple[T.Tensor, T.Tensor]:
    """One GRU update; returns the new state and per-patch heatmap logits."""
    if x.shape[-1] != store["gru.Wz"].shape[0] or h.shape[-1] != store["gru.Uz"].shape[0]:
        raise ValueError(f"gru_step: input {x.shape} / state {h.shape} do not match parameters")
    z = T.sigmoid(T.linear(x, store["gru.Wz"], store["gru.bz"]) + T.linear(h, store["gru.Uz"]))
    r = T.sigmoid(T.linear(x, store["gru.Wr"], store["gru.br"]) + T.linear(h, store["gru.Ur"]))
    cand = T.tanh(T.linear(x, store["gru.Wh"], store["gru.bh"]) + T.linear(r * h, store["gru.Uh"]))
    h_new = (1.0 - z) * h + z * cand
    return h_new, T.linear(h_new, store["gru.V"], store["gru.c"])


def initial_state(store: ParamStore, batch: int | None = None) -> T.Tensor:
    h0 = store["gru.h0"]
    return h0 if batch is None else T.repeat(h0, batch)


def patch_features(patches: np.ndarray, sensed: np.ndarray, channels: int) -> np.ndarray:
    """Batched features: per patch the channel means if sensed (else 0) and a sensed flag.

    ``patches`` ``(B, N, P*P*C)``, ``sensed`` ``(B, N)`` -> ``(B, N*(C+1))``.
    """
    b, n, dim = patches.shape
    means = patches.reshape(b, n, dim // channels, channels).mean(axis=2)
    flag = np.asarray(sensed, dtype=bool)
    means = np.where(flag[..., None], means, 0.0)
    return np.concatenate([means, flag[..., None].astype(np.float64)], axis=2).reshape(b, -1)


def frame_features(frame: Frame, grid: PatchGrid, mask: PatchMask) -> np.ndarray:
    grid.check_frame(frame.height, frame.width)
    if mask.grid != grid:
        raise ValueError("mask was built for a different grid")
    c = frame.channels
    out = np.zeros((grid.n_patches, c + 1))
    for i in mask.indices:
        out[i, :c] = frame.data[grid.pixel_slices(int(i))].reshape(-1, c).mean(axis=0)
        out[i, c] = 1.0
    return out.reshape(-1)


# -- dense baseline ----------------------------------------------------------------------


def dense_forward(frames, store: ParamStore, config: DenseConfig) -> T.Tensor:
    """Flatten -> relu hidden layers -> logits, on zero-filled frames."""
    if isinstance(frames, Frame):
        return dense_forward(frames.data[None], store, config)[0]
    x = np.asarray(frames, dtype=np.float64).reshape(len(frames), -1)
    if x.shape[1] != config.input_dim:
        raise ValueError(f"dense baseline expects {config.input_dim} inputs, got {x.shape[1]}")
    h = T.Tensor(x)
    n_layers = len(config.hidden) + 1
    for i in range(n_layers):
        h = T.linear(h, store[f"dense.fc{i}.w"], store[f"dense.fc{i}.b"])
        if i < n_layers - 1:
            h = T.relu(h)
    return h
