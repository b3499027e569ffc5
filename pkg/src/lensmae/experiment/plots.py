"""Self-contained SVG figures built only from report files on disk."""

from __future__ import annotations

import base64
import json
import math
import struct
import zlib
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from ..data import read_npy
from .runs import read_csv

CLASS_NAMES = ("no_sub", "cdm", "axion")
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")

W, H = 360, 320
MARGIN = 50


class PlotError(ValueError):
    pass


def _svg(width: int, height: int, body: list[str], title: str) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">\n'
        f"<title>{escape(title)}</title>\n"
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
        + "\n".join(body)
        + "\n</svg>\n"
    )


def _text(x, y, s, anchor="middle", size=11, extra="") -> str:
    return f'<text x="{x:.1f}" y="{y:.1f}" text-anchor="{anchor}" font-size="{size}"{extra}>{escape(str(s))}</text>'


def _need(report: dict, *keys):
    for k in keys:
        if report.get(k) is None:
            raise PlotError(f"report {report.get('experiment', '?')!r} lacks field {k!r}")
    return [report[k] for k in keys]


class _Axes:
    """Maps data coordinates in [x0, x1] × [y0, y1] onto the plot box."""

    def __init__(self, x0, x1, y0, y1, width=W, height=H):
        self.x0, self.x1, self.y0, self.y1 = x0, x1, y0, y1
        self.left, self.right = MARGIN, width - 20
        self.top, self.bottom = 30, height - MARGIN

    def px(self, x):
        return self.left + (x - self.x0) / (self.x1 - self.x0) * (self.right - self.left)

    def py(self, y):
        return self.bottom - (y - self.y0) / (self.y1 - self.y0) * (self.bottom - self.top)

    def path(self, xs, ys) -> str:
        pts = " ".join(f"{self.px(x):.2f},{self.py(y):.2f}" for x, y in zip(xs, ys))
        return "M" + pts.replace(" ", " L")

    def frame(self, xlabel, ylabel, ticks=5) -> list[str]:
        out = [f'<rect x="{self.left}" y="{self.top}" width="{self.right - self.left}" '
               f'height="{self.bottom - self.top}" fill="none" stroke="black"/>']
        for i in range(ticks + 1):
            xv = self.x0 + (self.x1 - self.x0) * i / ticks
            yv = self.y0 + (self.y1 - self.y0) * i / ticks
            out.append(_text(self.px(xv), self.bottom + 14, f"{xv:.2g}"))
            out.append(_text(self.left - 4, self.py(yv) + 4, f"{yv:.2g}", anchor="end"))
        out.append(_text((self.left + self.right) / 2, self.bottom + 32, xlabel))
        out.append(_text(14, (self.top + self.bottom) / 2, ylabel,
                         extra=f' transform="rotate(-90 14 {(self.top + self.bottom) / 2:.1f})"'))
        return out


def confusion_svg(report: dict) -> str:
    (cm,) = _need(report, "confusion")
    cm = np.asarray(cm, dtype=float)
    k = cm.shape[0]
    cell = 70
    x0, y0 = 90, 50
    peak = cm.max() if cm.max() > 0 else 1.0
    body = [_text(x0 + k * cell / 2, 25, f"Confusion matrix: {report.get('experiment', '')}", size=12)]
    for i in range(k):
        for j in range(k):
            shade = int(255 - 200 * cm[i, j] / peak)
            color = f"rgb({shade},{shade},255)"
            body.append(f'<rect class="cell" x="{x0 + j * cell}" y="{y0 + i * cell}" width="{cell}" '
                        f'height="{cell}" fill="{color}" stroke="black"/>')
            body.append(_text(x0 + j * cell + cell / 2, y0 + i * cell + cell / 2 + 4, int(cm[i, j])))
        name = CLASS_NAMES[i] if i < len(CLASS_NAMES) else str(i)
        body.append(_text(x0 - 6, y0 + i * cell + cell / 2 + 4, name, anchor="end"))
        body.append(_text(x0 + i * cell + cell / 2, y0 + k * cell + 16, name))
    body.append(_text(x0 + k * cell / 2, y0 + k * cell + 34, "predicted"))
    body.append(_text(20, y0 + k * cell / 2, "true", extra=f' transform="rotate(-90 20 {y0 + k * cell / 2})"'))
    return _svg(x0 + k * cell + 30, y0 + k * cell + 50, body, "confusion matrix")


def roc_svg(report: dict) -> str:
    roc, per = _need(report, "roc", "auc_per_class")
    ax = _Axes(0.0, 1.0, 0.0, 1.0)
    body = [_text(W / 2, 18, f"ROC (one-vs-rest): {report.get('experiment', '')}", size=12)]
    body += ax.frame("false positive rate", "true positive rate")
    body.append(f'<path class="chance" d="{ax.path([0, 1], [0, 1])}" stroke="gray" stroke-dasharray="4,3" fill="none"/>')
    for n, (c, curve) in enumerate(sorted(roc.items(), key=lambda kv: int(kv[0]))):
        ci = int(c)
        auc = per[ci]
        color = PALETTE[ci % len(PALETTE)]
        body.append(f'<path class="roc" d="{ax.path(curve["fpr"], curve["tpr"])}" stroke="{color}" '
                    f'stroke-width="1.5" fill="none"/>')
        label = f"{CLASS_NAMES[ci] if ci < len(CLASS_NAMES) else ci} (AUC {auc:.3f})"
        body.append(_text(ax.right - 8, ax.bottom - 12 - 14 * n, label, anchor="end", extra=f' fill="{color}"'))
    return _svg(W, H, body, "ROC curves")


def reliability_svg(report: dict) -> str:
    (rel,) = _need(report, "reliability")
    ax = _Axes(0.0, 1.0, 0.0, 1.0)
    body = [_text(W / 2, 18, f"Reliability: {report.get('experiment', '')} (ECE {rel['ece']:.3f})", size=12)]
    body += ax.frame("confidence", "accuracy")
    body.append(f'<path class="diagonal" d="{ax.path([0, 1], [0, 1])}" stroke="gray" '
                f'stroke-dasharray="5,4" fill="none"/>')
    edges = rel["edges"]
    for i, (acc, cnt) in enumerate(zip(rel["accuracy"], rel["count"])):
        if not cnt or acc is None:
            continue
        x, x2 = ax.px(edges[i]), ax.px(edges[i + 1])
        y = ax.py(acc)
        body.append(f'<rect class="bin" x="{x:.2f}" y="{y:.2f}" width="{x2 - x:.2f}" '
                    f'height="{ax.bottom - y:.2f}" fill="{PALETTE[0]}" fill-opacity="0.6" stroke="black"/>')
    return _svg(W, H, body, "reliability diagram")


def _png(gray: np.ndarray) -> bytes:
    """Minimal 8-bit grayscale PNG encoder."""
    img = np.clip(np.round(gray * 255), 0, 255).astype(np.uint8)
    h, w = img.shape
    raw = b"".join(b"\x00" + img[r].tobytes() for r in range(h))

    def chunk(tag: bytes, payload: bytes) -> bytes:
        return struct.pack(">I", len(payload)) + tag + payload + struct.pack(">I", zlib.crc32(tag + payload))

    return (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0))
            + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b""))


def triptych_svg(panels: np.ndarray, title: str = "") -> str:
    """Three grayscale rasters: upsampled LR, prediction, ground truth."""
    if panels.ndim != 3 or panels.shape[0] != 3:
        raise PlotError(f"triptych needs [3, h, w] panels, got {panels.shape}")
    size = 160
    lo, hi = float(panels.min()), float(panels.max())
    scale = (panels - lo) / (hi - lo) if hi > lo else np.zeros_like(panels)
    body = [_text(3 * (size + 10) / 2, 16, title, size=12)]
    for i, label in enumerate(("LR (nearest)", "prediction", "ground truth")):
        data = base64.b64encode(_png(scale[i])).decode()
        x = 5 + i * (size + 10)
        body.append(f'<image class="panel" x="{x}" y="26" width="{size}" height="{size}" '
                    f'style="image-rendering:pixelated" href="data:image/png;base64,{data}"/>')
        body.append(_text(x + size / 2, 26 + size + 16, label))
    return _svg(3 * (size + 10), size + 56, body, "super-resolution samples")


def ablation_svg(rows: list[dict]) -> str:
    if not rows:
        raise PlotError("ablation table is empty")
    ratios = [float(r["mask_ratio"]) for r in rows]
    series = [("cls_auc", "classification AUC"), ("sr_ssim", "SR SSIM"), ("cls_f1", "classification F1")]
    vals = [float(r[k]) for r in rows for k, _ in series if math.isfinite(float(r[k]))]
    lo, hi = min(vals + [0.0]), max(vals + [1.0])
    x0, x1 = (min(ratios) - 0.05, max(ratios) + 0.05)
    ax = _Axes(x0, x1, lo, hi)
    body = [_text(W / 2, 18, "Mask ratio ablation", size=12)]
    body += ax.frame("mask ratio", "metric")
    for n, (key, label) in enumerate(series):
        ys = [float(r[key]) for r in rows]
        color = PALETTE[n]
        body.append(f'<path class="series" d="{ax.path(ratios, ys)}" stroke="{color}" stroke-width="1.5" fill="none"/>')
        for x, y in zip(ratios, ys):
            body.append(f'<circle cx="{ax.px(x):.2f}" cy="{ax.py(y):.2f}" r="3" fill="{color}"/>')
        body.append(_text(ax.left + 8, ax.top + 14 + 14 * n, label, anchor="start", extra=f' fill="{color}"'))
    return _svg(W, H, body, "ablation")


def emit_plots(out) -> list[Path]:
    """Write SVGs next to every report found under ``out``; returns the written paths."""
    out = Path(out)
    written: list[Path] = []

    def save(path: Path, text: str):
        path.write_text(text)
        written.append(path)

    for report_path in sorted(out.rglob("report.json")):
        report = json.loads(report_path.read_text())
        run_dir = report_path.parent
        if report.get("task") == "cls":
            save(run_dir / "confusion.svg", confusion_svg(report))
            save(run_dir / "roc.svg", roc_svg(report))
            save(run_dir / "reliability.svg", reliability_svg(report))
        elif report.get("task") == "sr":
            for sample in sorted((run_dir / "samples").glob("triptych_*.npy")):
                panels = read_npy(sample).data
                save(run_dir / f"{sample.stem}.svg",
                     triptych_svg(panels, f"{report.get('experiment', '')} {sample.stem}"))
    table = out / "ablation.csv"
    if table.is_file():
        save(out / "ablation.svg", ablation_svg(read_csv(table)))
    return written


__all__ = [
    "PlotError",
    "ablation_svg",
    "confusion_svg",
    "emit_plots",
    "reliability_svg",
    "roc_svg",
    "triptych_svg",
]
