"""Directory indexing, stratified splits, LR/HR pairing, loading and batching."""

from __future__ import annotations

import logging
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .npy import read_npy, read_npy_header

log = logging.getLogger(__name__)

CLASS_NAMES = ("no_sub", "cdm", "axion")
HR_SIZE = 64
LR_SIZE = 16


class DatasetLayoutError(ValueError):
    """Directory tree does not follow the expected layout."""


class UnpairedFilesError(DatasetLayoutError):
    pass


class ImageShapeError(DatasetLayoutError):
    pass


@dataclass(frozen=True)
class Entry:
    path: Path
    label: int | None

    @property
    def id(self) -> str:
        return f"{self.path.parent.name}/{self.path.name}"


@dataclass
class DatasetIndex:
    root: Path
    entries: list[Entry]

    @property
    def counts(self) -> dict[str, int]:
        out = {name: 0 for name in CLASS_NAMES}
        for e in self.entries:
            if e.label is not None:
                out[CLASS_NAMES[e.label]] += 1
        return out

    @property
    def labels(self) -> np.ndarray:
        return np.array([-1 if e.label is None else e.label for e in self.entries])

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class SplitSpec:
    seed: int
    train_fraction: float
    train: np.ndarray  # boolean mask over index entries

    @property
    def train_ids(self) -> np.ndarray:
        return np.flatnonzero(self.train)

    @property
    def test_ids(self) -> np.ndarray:
        return np.flatnonzero(~self.train)


@dataclass
class PairIndex:
    root: Path
    pairs: list[tuple[Path, Path]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def names(self) -> list[str]:
        return [lr.name for lr, _ in self.pairs]


def _npy_files(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix == ".npy")


def index_dataset1(root) -> DatasetIndex:
    """Index ``root/{no_sub,cdm,axion}/*.npy``; labels come from the folder name only."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetLayoutError(f"{root} is not a directory")
    missing = [c for c in CLASS_NAMES if not (root / c).is_dir()]
    if missing:
        raise DatasetLayoutError(f"{root}: missing class subdirectories {missing}")
    for extra in sorted(p.name for p in root.iterdir() if p.is_dir() and p.name not in CLASS_NAMES):
        warnings.warn(f"{root}: ignoring unknown subdirectory {extra!r}", stacklevel=2)
    entries = [Entry(path, label) for label, name in enumerate(CLASS_NAMES) for path in _npy_files(root / name)]
    return DatasetIndex(root, entries)


def _train_count(n: int, fraction: float) -> int:
    # python round() is half-to-even; both sides keep at least one item
    return min(max(int(round(fraction * n)), 1), n - 1)


def stratified_split(index: DatasetIndex, seed: int, fraction: float = 0.9) -> SplitSpec:
    """Per class: seeded shuffle of the sorted file list, first ``round(f·n)`` go to train."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"train fraction must lie in (0, 1), got {fraction}")
    labels = index.labels
    if (labels < 0).any():
        raise ValueError("stratified split needs every entry labelled")
    train = np.zeros(len(labels), dtype=bool)
    for c, name in enumerate(CLASS_NAMES):
        members = np.flatnonzero(labels == c)
        if len(members) < 2:
            raise ValueError(f"class {name!r} has {len(members)} entries; need at least 2 to split")
        order = sorted(members, key=lambda i: str(index.entries[i].path))
        rng = np.random.default_rng([seed, c])
        shuffled = np.asarray(order)[rng.permutation(len(order))]
        train[shuffled[:_train_count(len(order), fraction)]] = True
    return SplitSpec(seed, fraction, train)


def split_pairs(pairs: PairIndex, seed: int, fraction: float = 0.9) -> SplitSpec:
    """Seeded train/test assignment over sorted pairs (single stratum)."""
    n = len(pairs)
    if n < 2:
        raise ValueError("need at least 2 pairs to split")
    rng = np.random.default_rng([seed, len(CLASS_NAMES)])
    train = np.zeros(n, dtype=bool)
    train[rng.permutation(n)[:_train_count(n, fraction)]] = True
    return SplitSpec(seed, fraction, train)


def pair_index(root, lr_size: int = LR_SIZE, hr_size: int = HR_SIZE) -> PairIndex:
    """Match ``root/LR/*.npy`` to ``root/HR/*.npy`` by filename and check image sizes."""
    root = Path(root)
    hr_dir, lr_dir = root / "HR", root / "LR"
    if not hr_dir.is_dir() or not lr_dir.is_dir():
        raise DatasetLayoutError(f"{root}: expected HR/ and LR/ subdirectories")
    hr = {p.name: p for p in _npy_files(hr_dir)}
    lr = {p.name: p for p in _npy_files(lr_dir)}
    only_hr, only_lr = sorted(set(hr) - set(lr)), sorted(set(lr) - set(hr))
    if only_hr or only_lr:
        raise UnpairedFilesError(f"{root}: unmatched files HR-only={only_hr} LR-only={only_lr}")
    pairs = []
    for name in sorted(hr):
        for path, size in ((lr[name], lr_size), (hr[name], hr_size)):
            shape = read_npy_header(path).shape
            if shape != (size, size):
                raise ImageShapeError(f"{path}: expected {size}x{size}, found {shape}")
        pairs.append((lr[name], hr[name]))
    return PairIndex(root, pairs)


def normalize_image(x, mode: str = "minmax") -> np.ndarray:
    """Per-image min-max scaling to [0, 1]; a constant image maps to zeros."""
    x = np.asarray(x)
    if mode == "none":
        return x
    if mode != "minmax":
        raise ValueError(f"unknown normalisation mode {mode!r}")
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def load_image(path, normalize: str = "minmax", dtype=np.float32) -> np.ndarray:
    arr = read_npy(path)
    if arr.descr == "<f8" and np.dtype(dtype) == np.float32:
        log.debug("%s: float64 payload converted to float32", path)
    data = arr.data
    if data.ndim == 3 and data.shape[0] == 1:
        data = data[0]
    if data.ndim != 2:
        raise ImageShapeError(f"{path}: expected a single-channel image, found shape {arr.shape}")
    return normalize_image(data.astype(np.float64), normalize).astype(dtype)


def load_images(paths: Sequence, normalize: str = "minmax", dtype=np.float32) -> np.ndarray:
    if not paths:
        return np.zeros((0, 0, 0), dtype=dtype)
    return np.stack([load_image(p, normalize, dtype) for p in paths])


def batch_iter(items, batch_size: int = 64, shuffle_seed: int = 0, epoch: int = 0) -> list[np.ndarray]:
    """Seeded per-epoch shuffle of ``range(n)`` cut into batches; last partial batch kept."""
    n = items if isinstance(items, (int, np.integer)) else len(items)
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    order = np.random.default_rng([shuffle_seed, epoch]).permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
