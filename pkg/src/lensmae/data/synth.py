"""Toy strong-lensing images for desk-scale runs.

Not a physical simulation: a smooth Einstein-ring profile, optionally dressed
with compact blobs (``cdm``) or a plane-wave intensity modulation
(``axion``), plus Gaussian pixel noise.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .datasets import CLASS_NAMES, PairIndex, ensure_dir
from .npy import write_npy

NOISE_SIGMA = 0.002


def _ring(size: int, rng: np.random.Generator) -> tuple[np.ndarray, dict]:
    s = size / 64.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cx = size / 2 - 0.5 + rng.uniform(-3, 3) * s
    cy = size / 2 - 0.5 + rng.uniform(-3, 3) * s
    radius = rng.uniform(12, 20) * s
    width = rng.uniform(1.5, 3.0) * s
    q = rng.uniform(0.8, 1.0)
    phi = rng.uniform(0, np.pi)
    dx, dy = xx - cx, yy - cy
    u = dx * np.cos(phi) + dy * np.sin(phi)
    v = -dx * np.sin(phi) + dy * np.cos(phi)
    r = np.sqrt(u * u / q + v * v * q)
    theta = np.arctan2(dy, dx)
    # brighter arcs on one side, as for an off-axis source
    arc = 0.8 + 0.2 * np.cos(theta - rng.uniform(-np.pi, np.pi))
    ring = np.exp(-0.5 * ((r - radius) / width) ** 2) * arc
    lens = 0.35 * np.exp(-0.5 * (dx * dx + dy * dy) / (2.5 * s) ** 2)
    geom = dict(cx=cx, cy=cy, radius=radius, width=width, xx=xx, yy=yy, scale=s)
    return ring + lens, geom


def synth_lens(label, rng: np.random.Generator, size: int = 64,
               noise_sigma: float = NOISE_SIGMA) -> np.ndarray:
    """One ``size × size`` image in [0, 1] for class ``label`` (name or index).

    The smooth ring is scaled to a random peak in [0.6, 0.7] before any
    substructure is added, so substructure changes the total flux instead of
    being normalised away.
    """
    if isinstance(label, str):
        if label not in CLASS_NAMES:
            raise ValueError(f"unknown class {label!r}")
        label = CLASS_NAMES.index(label)
    if label not in (0, 1, 2):
        raise ValueError(f"unknown class index {label}")
    img, g = _ring(size, rng)
    img = img / img.max() * rng.uniform(0.6, 0.7)
    xx, yy, s = g["xx"], g["yy"], g["scale"]
    if label == 1:
        for _ in range(rng.integers(2, 7)):
            ang = rng.uniform(0, 2 * np.pi)
            # just inside or outside the ring so blobs stay distinct from the arcs
            rad = g["radius"] + rng.choice([-1.0, 1.0]) * rng.uniform(5.0, 8.0) * s
            bx = g["cx"] + rad * np.cos(ang)
            by = g["cy"] + rad * np.sin(ang)
            sig = rng.uniform(1.2, 1.8) * s
            amp = rng.uniform(0.6, 0.9)
            img = img + amp * np.exp(-0.5 * ((xx - bx) ** 2 + (yy - by) ** 2) / sig**2)
    elif label == 2:
        psi = rng.uniform(0, np.pi)
        k = 2 * np.pi / (rng.uniform(4.0, 7.0) * s)
        fringe = 0.5 + 0.5 * np.sin(k * (xx * np.cos(psi) + yy * np.sin(psi)) + rng.uniform(0, 2 * np.pi))
        # the wave pattern mildly modulates the arcs and fills the whole halo, out past the
        # ring, with faint fringes; blobs in cdm stay local, the fringes reach most patches
        r = np.hypot(xx - g["cx"], yy - g["cy"])
        halo = 1.0 / (1.0 + np.exp((r - 1.4 * g["radius"]) / (3.0 * s)))
        img = img * (0.8 + 0.4 * fringe) + rng.uniform(0.2, 0.3) * fringe * halo
    img = img + rng.normal(0.0, noise_sigma, img.shape)
    return np.clip(img, 0.0, 1.0)


def block_average(hr: np.ndarray, factor: int = 4) -> np.ndarray:
    h, w = hr.shape[-2:]
    if h % factor or w % factor:
        raise ValueError(f"{h}x{w} image is not divisible by {factor}")
    return hr.reshape(*hr.shape[:-2], h // factor, factor, w // factor, factor).mean(axis=(-3, -1))


def synth_dataset1(root, per_class: int, seed: int, size: int = 64) -> Path:
    """Write ``root/{no_sub,cdm,axion}/NNNNN.npy``."""
    root = ensure_dir(root)
    for c, name in enumerate(CLASS_NAMES):
        out = ensure_dir(root / name)
        rng = np.random.default_rng([seed, 101, c])
        for i in range(per_class):
            write_npy(synth_lens(c, rng, size).astype(np.float32), out / f"{name}_{i:05d}.npy")
    return root


def synth_sr_pairs(root, n: int, seed: int, size: int = 64, factor: int = 4) -> PairIndex:
    """Write ``n`` no_sub HR images and their block-averaged LR versions to ``root/{HR,LR}``."""
    root = Path(root)
    hr_dir, lr_dir = ensure_dir(root / "HR"), ensure_dir(root / "LR")
    rng = np.random.default_rng([seed, 202])
    pairs = []
    for i in range(n):
        hr = synth_lens(0, rng, size).astype(np.float32)
        lr = block_average(hr.astype(np.float64), factor).astype(np.float32)
        name = f"pair_{i:05d}.npy"
        write_npy(hr, hr_dir / name)
        write_npy(lr, lr_dir / name)
        pairs.append((lr_dir / name, hr_dir / name))
    return PairIndex(root, pairs)
