"""Vision Transformer encoder: patch embedding, sin-cos positions, pre-norm blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Module, ShapeError, Tensor, ops, trunc_normal, xavier_uniform


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 64
    patch_size: int = 4
    embed_dim: int = 192
    depth: int = 6
    num_heads: int = 3
    ffn_ratio: int = 4
    with_cls_token: bool = False
    ln_eps: float = 1e-6

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError(
                f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}"
            )
        if self.embed_dim % self.num_heads:
            raise ValueError(
                f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}"
            )
        if self.embed_dim % 4:
            raise ValueError("embed_dim must be a multiple of 4 for 2-D sin-cos positions")

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_size**2

    @property
    def patch_dim(self) -> int:
        return self.patch_size**2


@dataclass
class TokenSequence:
    """Latent tokens plus the grid index of every patch token.

    ``tokens`` is ``[batch, n (+1 if has_cls), d]`` with the CLS token first;
    ``position_ids`` is ``[batch, n]`` and never includes the CLS slot.
    """

    tokens: Tensor
    position_ids: np.ndarray
    has_cls: bool = False

    @property
    def cls(self) -> Tensor:
        if not self.has_cls:
            raise ValueError("sequence has no CLS token")
        return ops.reshape(ops.slice_axis(self.tokens, 1, 0, 1), (self.tokens.shape[0], -1))

    @property
    def patch_tokens(self) -> Tensor:
        if not self.has_cls:
            return self.tokens
        return ops.slice_axis(self.tokens, 1, 1, self.tokens.shape[1])


def patchify(images: np.ndarray, patch_size: int) -> np.ndarray:
    """``[..., H, W] -> [..., N, P²]``; row ``k`` is grid cell ``(k // (W/P), k % (W/P))``."""
    images = np.asarray(images)
    *lead, h, w = images.shape
    p = patch_size
    if h % p or w % p:
        raise ShapeError(f"image {h}x{w} is not divisible into {p}x{p} patches")
    gh, gw = h // p, w // p
    x = images.reshape(*lead, gh, p, gw, p)
    nl = len(lead)
    x = x.transpose(*range(nl), nl, nl + 2, nl + 1, nl + 3)
    return x.reshape(*lead, gh * gw, p * p)


def unpatchify(patches: np.ndarray, patch_size: int, image_size: int) -> np.ndarray:
    patches = np.asarray(patches)
    *lead, n, pp = patches.shape
    p = patch_size
    g = image_size // p
    if n != g * g or pp != p * p:
        raise ShapeError(f"cannot fold {patches.shape} into a {image_size}x{image_size} image")
    nl = len(lead)
    x = patches.reshape(*lead, g, g, p, p)
    x = x.transpose(*range(nl), nl, nl + 2, nl + 1, nl + 3)
    return x.reshape(*lead, image_size, image_size)


def _sincos_1d(dim: int, pos: np.ndarray) -> np.ndarray:
    omega = 1.0 / 10000 ** (np.arange(dim // 2, dtype=np.float64) / (dim / 2.0))
    angles = np.outer(pos.astype(np.float64), omega)
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def position_encoding(embed_dim: int, grid_size: int, with_cls: bool = False) -> np.ndarray:
    """Fixed 2-D sin-cos table ``[N(+1), d]``.

    The first half of each row encodes the grid row, the second half the grid
    column.  With ``with_cls`` an all-zero row for the CLS slot is prepended.
    """
    if embed_dim % 4:
        raise ValueError("embed_dim must be a multiple of 4")
    k = np.arange(grid_size * grid_size)
    rows, cols = k // grid_size, k % grid_size
    half = embed_dim // 2
    table = np.concatenate([_sincos_1d(half, rows), _sincos_1d(half, cols)], axis=1)
    if with_cls:
        table = np.concatenate([np.zeros((1, embed_dim)), table], axis=0)
    return table


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6, dtype=np.float32):
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self._eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self._eps)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32,
                 init: str = "xavier"):
        if init == "trunc_normal":
            w = trunc_normal(rng, (d_in, d_out), dtype=dtype)
        elif init == "xavier":
            w = xavier_uniform(rng, (d_in, d_out), dtype=dtype)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Attention(Module):
    def __init__(self, dim: int, num_heads: int, rng: np.random.Generator, dtype=np.float32):
        self.q = Linear(dim, dim, rng, dtype)
        self.k = Linear(dim, dim, rng, dtype)
        self.v = Linear(dim, dim, rng, dtype)
        self.o = Linear(dim, dim, rng, dtype)
        self._heads = num_heads

    def __call__(self, x: Tensor) -> Tensor:
        return mhsa(x, self)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.fc1 = Linear(dim, hidden, rng, dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))


class Block(Module):
    def __init__(self, dim: int, num_heads: int, ffn_ratio: int, rng, eps=1e-6, dtype=np.float32):
        self.norm1 = LayerNorm(dim, eps, dtype)
        self.attn = Attention(dim, num_heads, rng, dtype)
        self.norm2 = LayerNorm(dim, eps, dtype)
        self.ffn = FeedForward(dim, ffn_ratio * dim, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return transformer_block(x, self)


def mhsa(x: Tensor, attn: Attention, return_weights: bool = False):
    """Multi-head scaled dot-product self-attention over ``x[batch, n, d]``."""
    squeeze = x.ndim == 2
    if squeeze:
        x = ops.reshape(x, (1,) + x.shape)
    b, n, d = x.shape
    h = attn._heads
    if d % h:
        raise ShapeError(f"embed dim {d} not divisible by {h} heads")
    dh = d // h

    def split(t: Tensor) -> Tensor:
        return ops.transpose(ops.reshape(t, (b, n, h, dh)), (0, 2, 1, 3))

    q, k, v = split(attn.q(x)), split(attn.k(x)), split(attn.v(x))
    scores = ops.mul(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    weights = ops.softmax(scores, axis=-1)
    ctx = ops.reshape(ops.transpose(ops.matmul(weights, v), (0, 2, 1, 3)), (b, n, d))
    out = attn.o(ctx)
    if squeeze:
        out = ops.reshape(out, (n, d))
    if return_weights:
        return out, weights.data
    return out


def transformer_block(x: Tensor, block: Block) -> Tensor:
    """Pre-norm residual block: ``x + MHSA(LN(x))`` then ``+ FFN(LN(.))``."""
    x = ops.add(x, mhsa(block.norm1(x), block.attn))
    return ops.add(x, block.ffn(block.norm2(x)))


class Encoder(Module):
    """ViT encoder on full or visible-only patch sequences."""

    def __init__(self, config: ViTConfig, rng: np.random.Generator, dtype=np.float32):
        self._config = config
        d = config.embed_dim
        # xavier, not std 0.02: pixel content must not be swamped by the unit-amplitude position table
        self.patch_embed = Linear(config.patch_dim, d, rng, dtype, init="xavier")
        # slot reserved so parameter order is the same with or without CLS
        self.cls_token: Tensor | None = None
        if config.with_cls_token:
            self.cls_token = Tensor(trunc_normal(rng, (d,), dtype=dtype), requires_grad=True)
        self.blocks = [
            Block(d, config.num_heads, config.ffn_ratio, rng, config.ln_eps, dtype)
            for _ in range(config.depth)
        ]
        self.norm = LayerNorm(d, config.ln_eps, dtype)
        self._pos = position_encoding(d, config.grid_size, with_cls=True)

    @property
    def config(self) -> ViTConfig:
        return self._config

    def add_cls_token(self, rng: np.random.Generator) -> None:
        """Attach a freshly initialised CLS token (pretraining runs without one)."""
        if self._config.with_cls_token:
            return
        from dataclasses import replace

        d = self._config.embed_dim
        self.cls_token = Tensor(trunc_normal(rng, (d,), dtype=self.dtype), requires_grad=True)
        self._config = replace(self._config, with_cls_token=True)

    def encode(self, patches, position_ids: np.ndarray | None = None) -> TokenSequence:
        """Encode ``patches[batch, n, P²]`` located at grid cells ``position_ids[batch, n]``.

        Without ``position_ids`` the input must be the full ``N``-patch sequence
        in grid order.  The CLS token, when configured, is prepended.
        """
        cfg = self._config
        x = patches if isinstance(patches, Tensor) else Tensor(np.asarray(patches, dtype=self.dtype))
        if x.ndim == 2:
            x = ops.reshape(x, (1,) + x.shape)
        b, n, pd = x.shape
        if pd != cfg.patch_dim:
            raise ShapeError(f"patch dim {pd} does not match config patch_dim {cfg.patch_dim}")
        if position_ids is None:
            if n != cfg.num_patches:
                raise ShapeError(f"full-sequence encode needs {cfg.num_patches} patches, got {n}")
            position_ids = np.broadcast_to(np.arange(n), (b, n))
        position_ids = np.asarray(position_ids)
        if position_ids.ndim == 1:
            position_ids = np.broadcast_to(position_ids, (b, n))
        if position_ids.shape != (b, n):
            raise ShapeError(f"position_ids {position_ids.shape} do not match tokens {(b, n)}")
        if position_ids.size and (position_ids.min() < 0 or position_ids.max() >= cfg.num_patches):
            raise IndexError(f"position ids must lie in [0, {cfg.num_patches})")
        srt = np.sort(position_ids, axis=1)
        if n > 1 and (srt[:, 1:] == srt[:, :-1]).any():
            raise ValueError("position ids must be unique within each sequence")

        tok = self.patch_embed(x)
        pos = self._pos[1:][position_ids].astype(tok.dtype)
        tok = ops.add(tok, pos)
        if cfg.with_cls_token:
            cls = ops.add(self.cls_token, self._pos[0].astype(tok.dtype))
            cls = ops.broadcast_to(ops.reshape(cls, (1, 1, -1)), (b, 1, cfg.embed_dim))
            tok = ops.concat([cls, tok], axis=1)
        for blk in self.blocks:
            tok = transformer_block(tok, blk)
        tok = self.norm(tok)
        return TokenSequence(tok, np.array(position_ids), cfg.with_cls_token)

    def encode_images(self, images: np.ndarray) -> TokenSequence:
        return self.encode(patchify(images, self._config.patch_size))

    @property
    def dtype(self):
        return self.patch_embed.weight.dtype


def encoder_param_count(config: ViTConfig) -> int:
    d, f = config.embed_dim, config.ffn_ratio * config.embed_dim
    per_block = 2 * d + 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d)
    total = config.patch_dim * d + d + config.depth * per_block + 2 * d
    if config.with_cls_token:
        total += d
    return total
