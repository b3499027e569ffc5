"""Classification and super-resolution heads with their fine-tuning loops."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Module, ShapeError, Tensor, he_normal, no_grad, ops, trunc_normal
from .vit import Encoder, patchify

log = logging.getLogger(__name__)

CLASS_NAMES = ("no_sub", "cdm", "axion")
NUM_CLASSES = len(CLASS_NAMES)


@dataclass(frozen=True)
class FinetuneMode:
    encoder_trainable: bool = True

    @property
    def name(self) -> str:
        return "full" if self.encoder_trainable else "frozen"


class ClassifierHead(Module):
    def __init__(self, dim: int, rng: np.random.Generator, dropout_p: float = 0.1,
                 num_classes: int = NUM_CLASSES, dtype=np.float32):
        self.weight = Tensor(trunc_normal(rng, (dim, num_classes), dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(num_classes, dtype=dtype), requires_grad=True)
        self._p = dropout_p

    def __call__(self, features: Tensor, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        x = ops.dropout(features, self._p, training, rng)
        return ops.linear(x, self.weight, self.bias)


def classify(images, encoder: Encoder, head: ClassifierHead, training: bool = False,
             rng: np.random.Generator | None = None) -> Tensor:
    """Logits ``[batch, 3]`` from the CLS token of a full-sequence encode."""
    if not encoder.config.with_cls_token:
        raise ValueError("classification needs an encoder configured with a CLS token")
    images = np.asarray(images)
    if images.ndim == 2:
        images = images[None]
    seq = encoder.encode(patchify(images, encoder.config.patch_size).astype(encoder.dtype, copy=False))
    return head(seq.cls, training=training, rng=rng)


def cls_features(images, encoder: Encoder, batch_size: int = 64) -> np.ndarray:
    """Final CLS hidden states ``[n, d]`` (inputs to the linear head)."""
    images = np.asarray(images)
    if images.ndim == 2:
        images = images[None]
    out = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            chunk = patchify(images[start:start + batch_size], encoder.config.patch_size)
            out.append(encoder.encode(chunk.astype(encoder.dtype, copy=False)).cls.data)
    return np.concatenate(out, axis=0)


def cls_loss(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy of the true class."""
    return ops.cross_entropy(logits, labels)


class SRDecoder(Module):
    """Token grid ``[d, 16, 16]`` to a ``64×64`` image via two ×2 sub-pixel stages."""

    def __init__(self, enc_dim: int, rng: np.random.Generator, features: int = 64,
                 scale: int = 2, dtype=np.float32):
        up = features * scale * scale
        self.conv1_w = Tensor(he_normal(rng, (up, enc_dim, 3, 3), enc_dim * 9, dtype), requires_grad=True)
        self.conv1_b = Tensor(np.zeros(up, dtype=dtype), requires_grad=True)
        self.conv2_w = Tensor(he_normal(rng, (up, features, 3, 3), features * 9, dtype), requires_grad=True)
        self.conv2_b = Tensor(np.zeros(up, dtype=dtype), requires_grad=True)
        self.out_w = Tensor(he_normal(rng, (1, features, 3, 3), features * 9, dtype), requires_grad=True)
        self.out_b = Tensor(np.zeros(1, dtype=dtype), requires_grad=True)
        self._scale = scale

    def __call__(self, grid: Tensor) -> Tensor:
        r = self._scale
        x = ops.relu(ops.pixel_shuffle(ops.conv2d_3x3(grid, self.conv1_w, self.conv1_b), r))
        x = ops.relu(ops.pixel_shuffle(ops.conv2d_3x3(x, self.conv2_w, self.conv2_b), r))
        x = ops.conv2d_3x3(x, self.out_w, self.out_b)
        return ops.reshape(x, (x.shape[0], x.shape[2], x.shape[3]))


def tokens_to_grid(tokens: Tensor, grid_size: int) -> Tensor:
    """``[batch, N, d]`` in patch order -> ``[batch, d, g, g]``."""
    b, n, d = tokens.shape
    if n != grid_size * grid_size:
        raise ShapeError(f"{n} tokens do not form a {grid_size}x{grid_size} grid")
    return ops.transpose(ops.reshape(tokens, (b, grid_size, grid_size, d)), (0, 3, 1, 2))


def sr_tokens(lr, encoder: Encoder) -> Tensor:
    """Nearest-upsample LR to the encoder resolution, encode, return patch tokens."""
    cfg = encoder.config
    lr = np.asarray(lr)
    if lr.ndim == 2:
        lr = lr[None]
    h, w = lr.shape[-2:]
    factor = cfg.image_size // w
    if h != w or factor * w != cfg.image_size:
        raise ShapeError(f"LR input {h}x{w} cannot be upsampled to {cfg.image_size}")
    up = ops.nearest_upsample(Tensor(lr.astype(encoder.dtype, copy=False)), factor)
    seq = encoder.encode(patchify(up.data, cfg.patch_size))
    return seq.patch_tokens


def sr_forward(lr, encoder: Encoder, decoder: SRDecoder, lr_size: int | None = None) -> Tensor:
    """``[batch, 16, 16]`` LR images to ``[batch, 64, 64]`` predictions.

    The decoder upsamples the token grid by 4 in total, so LR images are a quarter of the
    encoder resolution unless ``lr_size`` says otherwise.
    """
    if lr_size is None:
        lr_size = encoder.config.image_size // 4
    lr = np.asarray(lr)
    if lr.ndim == 2:
        lr = lr[None]
    if lr.shape[-2:] != (lr_size, lr_size):
        raise ShapeError(f"expected {lr_size}x{lr_size} LR input, got {lr.shape[-2:]}")
    if encoder.config.with_cls_token:
        raise ValueError("super-resolution encodes without a CLS token")
    tokens = sr_tokens(lr, encoder)
    return decoder(tokens_to_grid(tokens, encoder.config.grid_size))


def sr_loss(pred: Tensor, target) -> Tensor:
    """Per-pixel mean squared error averaged over the batch."""
    return ops.mse(pred, target)


def parameter_checksum(module: Module) -> str:
    h = hashlib.sha256()
    for name, p in module.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def finetune_cls(images: np.ndarray, labels: np.ndarray, encoder: Encoder, head: ClassifierHead,
                 optimizer, epochs: int, batches_for_epoch, rng: np.random.Generator,
                 mode: FinetuneMode = FinetuneMode(), seed: int = 0) -> list[tuple]:
    """Cross-entropy fine-tuning; returns run-log rows ``(epoch, step, loss, lr, seed)``.

    ``batches_for_epoch(epoch)`` yields index arrays into ``images``.  In frozen
    mode encoder gradients are never computed and its parameters never move.
    """
    if len(images) == 0:
        raise ValueError("training split is empty")
    encoder.set_trainable(mode.encoder_trainable)
    head.set_trainable(True)
    lr = optimizer.groups[0].lr
    rows: list[tuple] = []
    for epoch in range(epochs):
        losses = []
        for step, idx in enumerate(batches_for_epoch(epoch)):
            optimizer.zero_grad()
            logits = classify(images[idx], encoder, head, training=True, rng=rng)
            loss = cls_loss(logits, labels[idx])
            loss.backward()
            optimizer.step()
            losses.append(float(loss.data))
            rows.append((epoch, step, float(loss.data), lr, seed))
        log.info("cls epoch %d: mean loss %.5f", epoch, float(np.mean(losses)))
    encoder.set_trainable(True)
    return rows


def predict_proba(images: np.ndarray, encoder: Encoder, head: ClassifierHead,
                  batch_size: int = 64) -> np.ndarray:
    out = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            logits = classify(images[start:start + batch_size], encoder, head, training=False)
            out.append(ops.softmax(logits, axis=-1).data.astype(np.float64))
    return np.concatenate(out, axis=0) if out else np.zeros((0, NUM_CLASSES))


def finetune_sr(lr_images: np.ndarray, hr_images: np.ndarray, encoder: Encoder,
                decoder: SRDecoder, optimizer, epochs: int, batches_for_epoch,
                seed: int = 0) -> list[tuple]:
    """MSE fine-tuning of encoder + SR decoder; returns run-log rows."""
    if len(lr_images) != len(hr_images):
        raise ValueError("LR and HR sets differ in length")
    if len(lr_images) == 0:
        raise ValueError("training split is empty")
    lr_rate = optimizer.groups[0].lr
    rows: list[tuple] = []
    for epoch in range(epochs):
        losses = []
        for step, idx in enumerate(batches_for_epoch(epoch)):
            optimizer.zero_grad()
            pred = sr_forward(lr_images[idx], encoder, decoder)
            loss = sr_loss(pred, hr_images[idx])
            loss.backward()
            optimizer.step()
            losses.append(float(loss.data))
            rows.append((epoch, step, float(loss.data), lr_rate, seed))
        log.info("sr epoch %d: mean loss %.6f", epoch, float(np.mean(losses)))
    return rows


def predict_sr(lr_images: np.ndarray, encoder: Encoder, decoder: SRDecoder,
               batch_size: int = 64) -> np.ndarray:
    out = []
    with no_grad():
        for start in range(0, len(lr_images), batch_size):
            out.append(sr_forward(lr_images[start:start + batch_size], encoder, decoder).data)
    return np.concatenate(out, axis=0)


def epoch_batches(n: int, batch_size: int, seed: int) -> "callable":
    from .data import batch_iter

    def batches(epoch: int) -> Sequence[np.ndarray]:
        return batch_iter(n, batch_size, seed, epoch)

    return batches
