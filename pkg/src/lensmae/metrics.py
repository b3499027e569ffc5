"""Classification and image-reconstruction metrics."""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

CLS_COLUMNS = ("experiment", "auc_macro", "accuracy", "f1_macro")
SR_COLUMNS = ("experiment", "mse", "psnr_db", "ssim")

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _labels(y, k: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError("labels must be one-dimensional")
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), found range [{y.min()}, {y.max()}]")
    return y.astype(np.int64)


def confusion_matrix(y_true, y_pred, k: int = 3) -> np.ndarray:
    """Counts with rows = true class and columns = predicted class."""
    t, p = _labels(y_true, k), _labels(y_pred, k)
    if t.shape != p.shape:
        raise ValueError("y_true and y_pred differ in length")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def _check_cm(cm) -> np.ndarray:
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.sum() == 0:
        raise ValueError("confusion matrix must be square and non-empty")
    return cm


def accuracy(cm) -> float:
    cm = _check_cm(cm)
    return float(np.trace(cm) / cm.sum())


def per_class_f1(cm) -> np.ndarray:
    """F1 per class; a class with precision + recall = 0 (or undefined) scores 0."""
    cm = _check_cm(cm).astype(np.float64)
    tp = np.diag(cm)
    pred_pos, true_pos = cm.sum(axis=0), cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(pred_pos > 0, tp / pred_pos, 0.0)
        recall = np.where(true_pos > 0, tp / true_pos, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    return f1


def macro_f1(cm) -> float:
    return float(per_class_f1(cm).mean())


def roc_curve(scores, positives) -> tuple[np.ndarray, np.ndarray]:
    """(fpr, tpr) points from (0, 0) to (1, 1), one step per distinct score."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one positive and one negative")
    order = np.argsort(-s, kind="mergesort")
    s, pos = s[order], pos[order]
    # last index of each run of equal scores: ties move the curve in one step
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(pos)[ends]
    fp = (ends + 1) - tp
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    return fpr, tpr


def binary_auc(scores, positives) -> float:
    fpr, tpr = roc_curve(scores, positives)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


def auc_ovr_macro(probs, labels) -> tuple[np.ndarray, float]:
    """One-vs-rest AUC per class (NaN when undefined) and their mean over defined classes."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError("probs must be [n, k]")
    k = probs.shape[1]
    y = _labels(labels, k)
    if len(y) != len(probs):
        raise ValueError("probs and labels differ in length")
    per = np.full(k, np.nan)
    for c in range(k):
        pos = y == c
        if pos.any() and (~pos).any():
            per[c] = binary_auc(probs[:, c], pos)
    defined = ~np.isnan(per)
    if not defined.any():
        raise ValueError("AUC undefined for every class")
    if not defined.all():
        warnings.warn(f"AUC undefined for classes {np.flatnonzero(~defined).tolist()}; "
                      "macro averages the remaining classes", stacklevel=2)
    return per, float(per[defined].mean())


@dataclass
class ReliabilityBins:
    edges: np.ndarray
    confidence: np.ndarray  # mean confidence per bin (NaN when empty)
    accuracy: np.ndarray    # empirical accuracy per bin (NaN when empty)
    count: np.ndarray
    ece: float


def reliability_bins(probs, labels, n_bins: int = 10) -> ReliabilityBins:
    """Bin by max-probability confidence into equal-width bins over [0, 1].

    Bins are right-closed except the first, which also holds confidence 0.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be at least 1")
    probs = np.asarray(probs, dtype=np.float64)
    y = _labels(labels, probs.shape[1])
    conf = probs.max(axis=1)
    correct = (probs.argmax(axis=1) == y).astype(np.float64)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    which = np.clip(np.ceil(conf * n_bins).astype(np.int64) - 1, 0, n_bins - 1)
    count = np.bincount(which, minlength=n_bins)
    conf_sum = np.bincount(which, weights=conf, minlength=n_bins)
    acc_sum = np.bincount(which, weights=correct, minlength=n_bins)
    with np.errstate(invalid="ignore"):
        mean_conf = np.where(count > 0, conf_sum / np.maximum(count, 1), np.nan)
        mean_acc = np.where(count > 0, acc_sum / np.maximum(count, 1), np.nan)
    n = max(len(y), 1)
    ece = float(np.sum(np.abs(acc_sum - conf_sum)) / n)
    return ReliabilityBins(edges, mean_conf, mean_acc, count, ece)


def mse(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def psnr_from_mse(err: float, max_val: float = 1.0) -> float:
    """10·log10(max²/mse); returns ``math.inf`` for a perfect reconstruction."""
    if err == 0:
        return math.inf
    return float(10.0 * np.log10(max_val * max_val / err))


def psnr(pred, target, max_val: float = 1.0) -> float:
    return psnr_from_mse(mse(pred, target), max_val)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    k = w.shape[0]
    return np.einsum("...ijkl,kl->...ij", sliding_window_view(x, (k, k), axis=(-2, -1)), w)


def ssim(pred, target, data_range: float = 1.0) -> float:
    """Mean SSIM over valid 11×11 Gaussian-window positions (batched inputs averaged)."""
    a, b = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim < 2 or min(a.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    w = gaussian_window()
    c1, c2 = (SSIM_K1 * data_range) ** 2, (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, w), _filter_valid(b, w)
    var_a = _filter_valid(a * a, w) - mu_a**2
    var_b = _filter_valid(b * b, w) - mu_b**2
    cov = _filter_valid(a * b, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(v, np.integer):
        return int(v)
    return v


@dataclass
class MetricsReport:
    """Evaluation record for one run; ``task`` is ``"cls"`` or ``"sr"``."""

    task: str
    experiment: str
    fingerprint: str = ""
    # classification
    auc_per_class: list | None = None
    auc_macro: float | None = None
    accuracy: float | None = None
    f1_macro: float | None = None
    confusion: list | None = None
    reliability: dict | None = None
    roc: dict | None = None
    # super-resolution
    mse: float | None = None
    psnr_db: float | None = None
    psnr_infinite: bool = False
    ssim: float | None = None
    extra: dict = field(default_factory=dict)

    def row(self) -> dict:
        cols = CLS_COLUMNS if self.task == "cls" else SR_COLUMNS
        return {c: getattr(self, c) for c in cols}

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        data = json.loads(text)
        if data.get("psnr_db") == "inf":
            data["psnr_db"] = math.inf
        return cls(**data)


def classification_report(probs, labels, experiment: str, fingerprint: str = "",
                          n_bins: int = 10) -> MetricsReport:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    cm = confusion_matrix(labels, probs.argmax(axis=1), probs.shape[1])
    per, macro = auc_ovr_macro(probs, labels)
    rel = reliability_bins(probs, labels, n_bins)
    roc = {}
    for c in range(probs.shape[1]):
        if not np.isnan(per[c]):
            fpr, tpr = roc_curve(probs[:, c], labels == c)
            roc[str(c)] = {"fpr": fpr, "tpr": tpr}
    return MetricsReport(
        task="cls", experiment=experiment, fingerprint=fingerprint,
        auc_per_class=_jsonable(per), auc_macro=macro, accuracy=accuracy(cm),
        f1_macro=macro_f1(cm), confusion=cm.tolist(),
        reliability=_jsonable({"edges": rel.edges, "confidence": rel.confidence,
                               "accuracy": rel.accuracy, "count": rel.count, "ece": rel.ece}),
        roc=_jsonable(roc),
    )


def sr_report(pred, target, experiment: str, fingerprint: str = "") -> MetricsReport:
    err = mse(pred, target)
    value = psnr_from_mse(err)
    return MetricsReport(task="sr", experiment=experiment, fingerprint=fingerprint,
                         mse=err, psnr_db=value, psnr_infinite=math.isinf(value),
                         ssim=ssim(pred, target))


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return repr(v)
    return str(v)


def rows_to_csv(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()
