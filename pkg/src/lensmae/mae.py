"""Masked-autoencoder pretraining: mask sampling, decoder, reconstruction loss."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Module, ShapeError, Tensor, ops, trunc_normal
from .vit import Block, Encoder, LayerNorm, Linear, patchify, position_encoding, transformer_block

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MAEConfig:
    mask_ratio: float = 0.75
    decoder_depth: int = 2
    decoder_dim: int = 192
    decoder_heads: int = 3
    normalize_targets: bool = True

    def __post_init__(self):
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError(f"mask_ratio must lie in (0, 1), got {self.mask_ratio}")

    def num_masked(self, num_patches: int) -> int:
        return num_masked(num_patches, self.mask_ratio)


def num_masked(num_patches: int, mask_ratio: float) -> int:
    # python round() is half-to-even
    return int(round(mask_ratio * num_patches))


@dataclass(frozen=True)
class MaskPlan:
    visible_ids: np.ndarray
    masked_ids: np.ndarray
    num_patches: int

    @property
    def ratio_realized(self) -> float:
        return len(self.masked_ids) / self.num_patches


def sample_mask(num_patches: int, mask_ratio: float, rng: np.random.Generator) -> MaskPlan:
    """Uniformly choose exactly ``round(M·N)`` masked patches without replacement."""
    if not 0.0 < mask_ratio < 1.0:
        raise ValueError(f"mask_ratio must lie in (0, 1), got {mask_ratio}")
    n_mask = num_masked(num_patches, mask_ratio)
    if n_mask < 1 or n_mask > num_patches - 1:
        raise ValueError(
            f"mask ratio {mask_ratio} on {num_patches} patches masks {n_mask}; "
            "at least one patch must be masked and one visible"
        )
    perm = rng.permutation(num_patches)
    return MaskPlan(
        visible_ids=np.sort(perm[n_mask:]),
        masked_ids=np.sort(perm[:n_mask]),
        num_patches=num_patches,
    )


def normalize_target(patches: np.ndarray, enabled: bool = True, eps: float = 1e-6) -> np.ndarray:
    """Per-patch standardisation over the last axis: ``(x - mean) / (std + eps)``."""
    patches = np.asarray(patches)
    if not enabled:
        return patches
    mu = patches.mean(axis=-1, keepdims=True)
    sd = patches.std(axis=-1, keepdims=True)
    return (patches - mu) / (sd + eps)


class MAEDecoder(Module):
    """Lightweight transformer that fills mask tokens back in and predicts pixels."""

    def __init__(self, enc_dim: int, patch_dim: int, grid_size: int, config: MAEConfig,
                 rng: np.random.Generator, dtype=np.float32):
        d = config.decoder_dim
        self._config = config
        self.bridge = Linear(enc_dim, d, rng, dtype) if enc_dim != d else None
        self.mask_token = Tensor(trunc_normal(rng, (d,), dtype=dtype), requires_grad=True)
        self.blocks = [Block(d, config.decoder_heads, 4, rng, dtype=dtype) for _ in range(config.decoder_depth)]
        self.norm = LayerNorm(d, dtype=dtype)
        self.head = Linear(d, patch_dim, rng, dtype)
        self._pos = position_encoding(d, grid_size)

    def zero_head(self) -> None:
        self.head.weight.data[...] = 0
        self.head.bias.data[...] = 0

    def __call__(self, latent: Tensor, visible_ids: np.ndarray, masked_ids: np.ndarray) -> Tensor:
        """Predict pixels for ``masked_ids[batch, m]`` from visible latents ``[batch, v, d_enc]``."""
        x = self.bridge(latent) if self.bridge is not None else latent
        b, v, d = x.shape
        m = masked_ids.shape[1]
        masks = ops.broadcast_to(ops.reshape(self.mask_token, (1, 1, d)), (b, m, d))
        seq = ops.concat([x, masks], axis=1)
        # restore[b, k] = index into seq of the token sitting at grid cell k
        order = np.concatenate([visible_ids, masked_ids], axis=1)
        restore = np.argsort(order, axis=1, kind="stable")
        seq = ops.take_rows(seq, restore)
        seq = ops.add(seq, self._pos.astype(seq.dtype))
        for blk in self.blocks:
            seq = transformer_block(seq, blk)
        seq = self.norm(seq)
        pred = self.head(ops.take_rows(seq, masked_ids))
        return pred


def _stack_plans(plans: Sequence[MaskPlan]) -> tuple[np.ndarray, np.ndarray]:
    vis = np.stack([p.visible_ids for p in plans])
    msk = np.stack([p.masked_ids for p in plans])
    return vis, msk


def mae_forward(images, plans: Sequence[MaskPlan], encoder: Encoder, decoder: MAEDecoder,
                normalize_targets: bool = True, targets=None) -> tuple[Tensor, Tensor]:
    """Encoder on visible patches, decoder over all positions, loss on masked patches.

    ``targets`` defaults to ``images``; passing them separately lets callers
    check that the loss only ever reads masked-patch targets and the encoder
    only ever reads visible-patch inputs.

    Returns ``(predictions[batch, m, P²], loss)`` where the loss is the mean
    over masked patches of the per-pixel mean squared error.
    """
    images = np.asarray(images)
    if images.ndim == 2:
        images = images[None]
    targets = images if targets is None else np.asarray(targets).reshape(images.shape)
    if len(plans) != images.shape[0]:
        raise ShapeError(f"{len(plans)} mask plans for {images.shape[0]} images")
    cfg = encoder.config
    if any(p.num_patches != cfg.num_patches for p in plans):
        raise ShapeError("mask plan does not match the encoder's patch count")
    vis, msk = _stack_plans(plans)
    if msk.shape[1] == 0:
        raise ValueError("mask plan has no masked patches")
    dtype = encoder.dtype
    p = cfg.patch_size
    patches = patchify(images, p).astype(dtype, copy=False)
    rows = np.arange(images.shape[0])[:, None]
    visible = patches[rows, vis]
    latent = encoder.encode(visible, position_ids=vis).patch_tokens
    pred = decoder(latent, vis, msk)
    tgt = normalize_target(patchify(targets, p)[rows, msk], normalize_targets).astype(dtype)
    loss = ops.mse(pred, tgt)
    return pred, loss


@dataclass
class EpochResult:
    mean_loss: float
    step_losses: list[float]


def pretrain_epoch(images: np.ndarray, encoder: Encoder, decoder: MAEDecoder, optimizer,
                   config: MAEConfig, rng: np.random.Generator, batches: Sequence[np.ndarray],
                   epoch: int = 0, seed: int = 0, log_rows: list | None = None) -> EpochResult:
    """One pass over ``images`` in the given batch order with fresh masks per image and step."""
    if len(images) == 0:
        raise ValueError("pretraining set is empty")
    n_patches = encoder.config.num_patches
    losses: list[float] = []
    for step, idx in enumerate(batches):
        batch = images[idx]
        plans = [sample_mask(n_patches, config.mask_ratio, rng) for _ in range(len(idx))]
        optimizer.zero_grad()
        _, loss = mae_forward(batch, plans, encoder, decoder, config.normalize_targets)
        loss.backward()
        optimizer.step()
        value = float(loss.data)
        losses.append(value)
        if log_rows is not None:
            log_rows.append((epoch, step, value, config.mask_ratio, seed))
    mean = float(np.mean(losses))
    log.info("epoch %d: mean MAE loss %.6f over %d steps", epoch, mean, len(losses))
    return EpochResult(mean, losses)
