"""Run orchestration: pretraining, fine-tuning, evaluation, ablation, feature export.

Every run owns one directory below ``config.out`` holding ``config.ini``,
``loss.csv``, ``checkpoint/`` and ``report.json``.  Summary tables are rebuilt
from the report files on disk after each run.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import data as D
from ..heads import (
    ClassifierHead,
    FinetuneMode,
    SRDecoder,
    cls_features,
    epoch_batches,
    finetune_cls,
    finetune_sr,
    predict_proba,
    predict_sr,
)
from ..mae import MAEDecoder, pretrain_epoch
from ..metrics import (
    CLS_COLUMNS,
    SR_COLUMNS,
    MetricsReport,
    classification_report,
    rows_to_csv,
    sr_report,
)
from ..optim import Adam, ParamGroup, module_group, param_groups
from ..vit import Encoder
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ExperimentConfig

log = logging.getLogger(__name__)

ABLATION_COLUMNS = ("mask_ratio", "mae_loss", "cls_auc", "cls_acc", "cls_f1", "sr_psnr_db", "sr_ssim")
PRETRAIN_LOSS_COLUMNS = ("epoch", "step", "loss", "mask_ratio", "seed")
FINETUNE_LOSS_COLUMNS = ("epoch", "step", "loss", "lr", "seed")
SR_FACTOR = 4

# independent random streams per purpose, all derived from the run seed
_STREAM = {
    "encoder": 1, "decoder": 2, "masks": 3, "pretrain_batches": 4, "cls_token": 5,
    "head": 6, "dropout": 7, "cls_batches": 8, "sr_decoder": 9, "sr_batches": 10,
    "synth": 11,
}


def stream(seed: int, purpose: str) -> np.random.Generator:
    return np.random.default_rng([seed, _STREAM[purpose]])


# --- filesystem helpers ---------------------------------------------------------


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _write_csv(path: Path, columns, rows) -> None:
    _write_text(path, rows_to_csv(columns, [dict(zip(columns, r)) for r in rows]))


def _write_json(path: Path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _start_run(config: ExperimentConfig, name: str) -> Path:
    run_dir = Path(config.out) / name
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_text(run_dir / "config.ini", config.to_ini())
    return run_dir


def mask_tag(mask_ratio: float) -> str:
    return f"m{int(round(mask_ratio * 100)):03d}"


# --- data -----------------------------------------------------------------------


def synthesize(root, per_class: int, pairs: int, seed: int, size: int = 64) -> Path:
    """Write ``root/Dataset1`` (classification) and ``root/Dataset2`` (SR pairs)."""
    root = Path(root)
    D.synth_dataset1(root / "Dataset1", per_class, seed, size)
    if pairs:
        D.synth_sr_pairs(root / "Dataset2", pairs, seed, size)
    return root


def corpus_root(config: ExperimentConfig) -> Path:
    """Configured dataset root, or a synthetic corpus generated under ``out`` on first use."""
    if config.dataset_root:
        return Path(config.dataset_root)
    root = Path(config.out) / "synthetic"
    if not (root / "Dataset1").is_dir():
        log.info("no dataset root given; synthesising into %s", root)
        synthesize(root, config.synth_per_class, config.synth_pairs, config.seed, config.image_size)
    return root


def dataset_root(config: ExperimentConfig, kind: str) -> Path:
    """``kind`` is ``Dataset1`` or ``Dataset2``; a root holding that folder resolves into it."""
    root = corpus_root(config)
    return root / kind if (root / kind).is_dir() else root


@dataclass
class ClsData:
    index: D.DatasetIndex
    split: D.SplitSpec
    images: np.ndarray
    labels: np.ndarray

    @property
    def train(self) -> tuple[np.ndarray, np.ndarray]:
        ids = self.split.train_ids
        return self.images[ids], self.labels[ids]

    @property
    def test(self) -> tuple[np.ndarray, np.ndarray]:
        ids = self.split.test_ids
        return self.images[ids], self.labels[ids]

    @property
    def test_ids(self) -> list[str]:
        return [self.index.entries[i].id for i in self.split.test_ids]


def load_cls_data(config: ExperimentConfig) -> ClsData:
    index = D.index_dataset1(dataset_root(config, "Dataset1"))
    split = D.stratified_split(index, config.seed, config.train_fraction)
    images = D.load_images([e.path for e in index.entries], config.normalize)
    _check_size(images, config.image_size, index.root)
    return ClsData(index, split, images, index.labels)


@dataclass
class SRData:
    pairs: D.PairIndex
    split: D.SplitSpec
    lr: np.ndarray
    hr: np.ndarray


def load_sr_data(config: ExperimentConfig) -> SRData:
    pairs = D.pair_index(dataset_root(config, "Dataset2"), lr_size=config.image_size // SR_FACTOR,
                         hr_size=config.image_size)
    split = D.split_pairs(pairs, config.seed, config.train_fraction)
    lr = D.load_images([p[0] for p in pairs.pairs], config.normalize)
    hr = D.load_images([p[1] for p in pairs.pairs], config.normalize)
    return SRData(pairs, split, lr, hr)


def _check_size(images: np.ndarray, size: int, root) -> None:
    if images.shape[1:] != (size, size):
        raise D.ImageShapeError(f"{root}: images are {images.shape[1:]}, config expects {size}x{size}")


def pretrain_images(config: ExperimentConfig, cls_data: ClsData) -> np.ndarray:
    no_sub = cls_data.labels == 0
    if config.pretrain_images == "train":
        no_sub &= cls_data.split.train
    return cls_data.images[no_sub]


# --- model construction ---------------------------------------------------------


def build_encoder(config: ExperimentConfig, with_cls: bool = False) -> Encoder:
    return Encoder(config.vit(with_cls), stream(config.seed, "encoder"))


def _adam(config: ExperimentConfig, groups: list[ParamGroup]) -> Adam:
    return Adam(groups, betas=(config.beta1, config.beta2), eps=config.eps)


def _encoder_from_checkpoint(config: ExperimentConfig) -> tuple[Encoder, str]:
    """Fresh or pretrained encoder (no CLS token) according to ``config.init``."""
    encoder = build_encoder(config)
    if config.init == "scratch":
        return encoder, ""
    ckpt = load_checkpoint(config.checkpoint)
    ckpt.restore("encoder", encoder)
    return encoder, ckpt.manifest.get("fingerprint", "")


def _experiment_name(config: ExperimentConfig) -> str:
    if config.experiment:
        return config.experiment
    if config.init == "scratch":
        return "scratch" if config.encoder_trainable else "scratch_frozen"
    return "pretrained" if config.encoder_trainable else "frozen"


# --- pretraining ------------------------------------------------------------------


def run_pretrain(config: ExperimentConfig) -> Path:
    """MAE pretraining on no_sub images; returns the run directory."""
    run_dir = _start_run(config, f"pretrain_{mask_tag(config.mask_ratio)}")
    cls_data = load_cls_data(config)
    images = pretrain_images(config, cls_data)
    vit, mae = config.vit(), config.mae()
    encoder = build_encoder(config)
    decoder = MAEDecoder(vit.embed_dim, vit.patch_dim, vit.grid_size, mae, stream(config.seed, "decoder"))
    optimizer = _adam(config, [module_group("pretrain", [("encoder", encoder), ("decoder", decoder)],
                                            config.pretrain_lr, config.pretrain_weight_decay)])
    mask_rng = stream(config.seed, "masks")
    batch_seed = int(stream(config.seed, "pretrain_batches").integers(2**31))
    rows: list[tuple] = []
    epoch_losses = []
    for epoch in range(config.effective_pretrain_epochs):
        batches = D.batch_iter(len(images), config.batch_size, batch_seed, epoch)
        result = pretrain_epoch(images, encoder, decoder, optimizer, mae, mask_rng, batches,
                                epoch, config.seed, rows)
        epoch_losses.append(result.mean_loss)
    _write_csv(run_dir / "loss.csv", PRETRAIN_LOSS_COLUMNS, rows)
    fp = config.fingerprint()
    save_checkpoint(run_dir / "checkpoint", {"encoder": encoder, "decoder": decoder}, "mae", fp,
                    config.to_dict(), {"images": int(len(images))})
    report = {
        "task": "pretrain",
        "fingerprint": fp,
        "mask_ratio": config.mask_ratio,
        "epochs": config.effective_pretrain_epochs,
        "images": int(len(images)),
        "epoch_losses": epoch_losses,
        "mae_loss": epoch_losses[-1] if epoch_losses else None,
    }
    _write_json(run_dir / "report.json", report)
    return run_dir


# --- classification -------------------------------------------------------------


def _write_predictions(path: Path, ids, labels, probs) -> None:
    rows = [(i, int(y), *(repr(float(p)) for p in row)) for i, y, row in zip(ids, labels, probs)]
    _write_csv(path, ("id", "label", "p0", "p1", "p2"), rows)


def _classification_outputs(run_dir: Path, config: ExperimentConfig, encoder: Encoder,
                            head: ClassifierHead, cls_data: ClsData, name: str,
                            extra: dict) -> MetricsReport:
    x_test, y_test = cls_data.test
    probs = predict_proba(x_test, encoder, head, config.batch_size)
    _write_predictions(run_dir / "predictions.csv", cls_data.test_ids, y_test, probs)
    report = classification_report(probs, y_test, name, config.fingerprint())
    report.extra = extra
    _write_text(run_dir / "report.json", report.to_json())
    return report


def run_finetune_cls(config: ExperimentConfig) -> Path:
    name = _experiment_name(config)
    run_dir = _start_run(config, f"finetune_cls_{name}")
    cls_data = load_cls_data(config)
    encoder, source_fp = _encoder_from_checkpoint(config)
    encoder.add_cls_token(stream(config.seed, "cls_token"))
    head = ClassifierHead(config.embed_dim, stream(config.seed, "head"), config.dropout)
    mode = FinetuneMode(config.encoder_trainable)
    optimizer = _adam(config, param_groups(encoder, head, mode.encoder_trainable,
                                           config.finetune_lr, config.finetune_weight_decay))
    x_train, y_train = cls_data.train
    batch_seed = int(stream(config.seed, "cls_batches").integers(2**31))
    rows = finetune_cls(x_train, y_train, encoder, head, optimizer, config.epochs,
                        epoch_batches(len(x_train), config.batch_size, batch_seed),
                        stream(config.seed, "dropout"), mode, config.seed)
    _write_csv(run_dir / "loss.csv", FINETUNE_LOSS_COLUMNS, rows)
    fp = config.fingerprint()
    save_checkpoint(run_dir / "checkpoint", {"encoder": encoder, "head": head}, "cls", fp,
                    config.to_dict(), {"source_fingerprint": source_fp})
    extra = {
        "encoder_trainable": mode.encoder_trainable,
        "init": config.init,
        "source_fingerprint": source_fp,
        "train_size": int(len(x_train)),
        "test_size": int(len(cls_data.test[0])),
        "final_train_loss": rows[-1][2] if rows else None,
    }
    _classification_outputs(run_dir, config, encoder, head, cls_data, name, extra)
    write_tables(config.out)
    return run_dir


# --- super-resolution -----------------------------------------------------------


def nearest_baseline(lr: np.ndarray, factor: int) -> np.ndarray:
    return np.repeat(np.repeat(lr, factor, axis=-2), factor, axis=-1)


def _sr_outputs(run_dir: Path, config: ExperimentConfig, encoder: Encoder, decoder: SRDecoder,
                sr_data: SRData, name: str, extra: dict) -> MetricsReport:
    ids = sr_data.split.test_ids
    lr, hr = sr_data.lr[ids], sr_data.hr[ids]
    pred = predict_sr(lr, encoder, decoder, config.batch_size).astype(np.float64)
    report = sr_report(pred, hr, name, config.fingerprint())
    base = sr_report(nearest_baseline(lr, config.image_size // lr.shape[-1]), hr, "nearest")
    extra = dict(extra)
    extra["nearest_baseline"] = {"mse": base.mse, "psnr_db": base.psnr_db, "ssim": base.ssim}
    report.extra = extra
    up = nearest_baseline(lr, config.image_size // lr.shape[-1])
    samples = run_dir / "samples"
    samples.mkdir(exist_ok=True)
    for k in range(min(config.sr_samples, len(ids))):
        D.write_npy(np.stack([up[k], pred[k], hr[k]]).astype(np.float32),
                    samples / f"triptych_{k}.npy")
    _write_text(run_dir / "report.json", report.to_json())
    return report


def run_finetune_sr(config: ExperimentConfig) -> Path:
    name = _experiment_name(config)
    run_dir = _start_run(config, f"finetune_sr_{name}")
    sr_data = load_sr_data(config)
    encoder, source_fp = _encoder_from_checkpoint(config)
    decoder = SRDecoder(config.embed_dim, stream(config.seed, "sr_decoder"))
    groups = [("decoder", decoder)]
    if config.encoder_trainable:
        groups.insert(0, ("encoder", encoder))
    else:
        encoder.set_trainable(False)
    optimizer = _adam(config, [module_group("sr", groups, config.finetune_lr, config.finetune_weight_decay)])
    ids = sr_data.split.train_ids
    batch_seed = int(stream(config.seed, "sr_batches").integers(2**31))
    rows = finetune_sr(sr_data.lr[ids], sr_data.hr[ids], encoder, decoder, optimizer, config.epochs,
                       epoch_batches(len(ids), config.batch_size, batch_seed), config.seed)
    encoder.set_trainable(True)
    _write_csv(run_dir / "loss.csv", FINETUNE_LOSS_COLUMNS, rows)
    fp = config.fingerprint()
    save_checkpoint(run_dir / "checkpoint", {"encoder": encoder, "decoder": decoder}, "sr", fp,
                    config.to_dict(), {"source_fingerprint": source_fp})
    extra = {
        "encoder_trainable": config.encoder_trainable,
        "init": config.init,
        "source_fingerprint": source_fp,
        "train_size": int(len(ids)),
        "test_size": int(len(sr_data.split.test_ids)),
        "final_train_loss": rows[-1][2] if rows else None,
    }
    _sr_outputs(run_dir, config, encoder, decoder, sr_data, name, extra)
    write_tables(config.out)
    return run_dir


# --- evaluation / export --------------------------------------------------------


def _load_trained(config: ExperimentConfig):
    ckpt = load_checkpoint(config.checkpoint)
    if ckpt.kind == "cls":
        encoder = build_encoder(config, with_cls=True)
        head = ClassifierHead(config.embed_dim, stream(config.seed, "head"), config.dropout)
        ckpt.restore("encoder", encoder)
        ckpt.restore("head", head)
        return ckpt, encoder, head
    if ckpt.kind == "sr":
        encoder = build_encoder(config)
        decoder = SRDecoder(config.embed_dim, stream(config.seed, "sr_decoder"))
        ckpt.restore("encoder", encoder)
        ckpt.restore("decoder", decoder)
        return ckpt, encoder, decoder
    raise CheckpointError(f"{ckpt.path}: cannot evaluate a {ckpt.kind!r} checkpoint")


def run_eval(config: ExperimentConfig) -> Path:
    """Re-evaluate a fine-tuned checkpoint on the held-out split."""
    ckpt, encoder, head = _load_trained(config)
    name = config.experiment or Path(ckpt.path).parent.name
    run_dir = _start_run(config, f"eval_{ckpt.kind}_{name}")
    extra = {"checkpoint_fingerprint": ckpt.manifest.get("fingerprint", "")}
    if ckpt.kind == "cls":
        _classification_outputs(run_dir, config, encoder, head, load_cls_data(config), name, extra)
    else:
        _sr_outputs(run_dir, config, encoder, head, load_sr_data(config), name, extra)
    return run_dir


def export_features(config: ExperimentConfig) -> Path:
    """CSV of ``id,label,f0..f{d-1}``: final CLS states of the test images."""
    ckpt, encoder, _ = _load_trained(config)
    if ckpt.kind != "cls":
        raise CheckpointError(f"{ckpt.path}: feature export needs a classifier checkpoint")
    cls_data = load_cls_data(config)
    x_test, y_test = cls_data.test
    feats = cls_features(x_test, encoder, config.batch_size)
    columns = ("id", "label", *(f"f{j}" for j in range(feats.shape[1])))
    rows = [(i, int(y), *(repr(float(v)) for v in f)) for i, y, f in zip(cls_data.test_ids, y_test, feats)]
    path = Path(config.out) / "features.csv"
    _write_csv(path, columns, rows)
    return path


# --- ablation -------------------------------------------------------------------


def run_ablation(config: ExperimentConfig, ratios=None) -> Path:
    """Pretrain at each mask ratio, then fine-tune classifier and SR model from it."""
    ratios = tuple(config.mask_ratios if ratios is None else ratios)
    out = Path(config.out)
    epochs = config.ablation_epochs
    pre_epochs = config.ablation_pretrain_epochs or epochs
    for r in ratios:
        leg = config.replace(task="ablate", mask_ratio=r, epochs=epochs, pretrain_epochs=pre_epochs,
                             out=str(out / "ablation" / mask_tag(r)), experiment="")
        if not config.dataset_root:
            # every leg must see the identical corpus
            leg = leg.replace(dataset_root=str(corpus_root(config)))
        pre_dir = run_pretrain(leg.replace(task="pretrain"))
        ft = leg.replace(init="from_checkpoint", checkpoint=str(pre_dir / "checkpoint"),
                         finetune_mode="full", experiment=f"mae_{mask_tag(r)}")
        run_finetune_cls(ft.replace(task="finetune_cls"))
        run_finetune_sr(ft.replace(task="finetune_sr"))
    return write_ablation_table(out, ratios)


def _read_json(path: Path) -> dict:
    return json.loads(path.read_text())


def write_ablation_table(out, ratios=None) -> Path:
    """Rebuild ``ablation.csv`` from the leg report files."""
    out = Path(out)
    legs = sorted((out / "ablation").glob("m[0-9][0-9][0-9]"))
    rows = []
    for leg in legs:
        pre = _read_json(next(leg.glob("pretrain_m*/report.json")))
        if ratios is not None and not any(abs(pre["mask_ratio"] - r) < 1e-12 for r in ratios):
            continue
        cls = MetricsReport.from_json(next(leg.glob("finetune_cls_*/report.json")).read_text())
        sr = MetricsReport.from_json(next(leg.glob("finetune_sr_*/report.json")).read_text())
        rows.append((pre["mask_ratio"], pre["mae_loss"], cls.auc_macro, cls.accuracy, cls.f1_macro,
                     sr.psnr_db, sr.ssim))
    rows.sort(key=lambda r: r[0])
    path = out / "ablation.csv"
    _write_csv(path, ABLATION_COLUMNS, rows)
    return path


def write_tables(out) -> list[Path]:
    """Rebuild ``classification.csv`` / ``super_resolution.csv`` from every report under ``out``."""
    out = Path(out)
    written = []
    for pattern, columns, fname in (("finetune_cls_*", CLS_COLUMNS, "classification.csv"),
                                    ("finetune_sr_*", SR_COLUMNS, "super_resolution.csv")):
        rows = []
        for report_path in sorted(out.glob(f"{pattern}/report.json")):
            rep = MetricsReport.from_json(report_path.read_text())
            rows.append(tuple(rep.row()[c] for c in columns))
        if rows:
            _write_csv(out / fname, columns, rows)
            written.append(out / fname)
    return written


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def finite(value) -> bool:
    try:
        return math.isfinite(float(value))
    except (TypeError, ValueError):
        return False


__all__ = [
    "ABLATION_COLUMNS",
    "ClsData",
    "SRData",
    "dataset_root",
    "export_features",
    "load_cls_data",
    "load_sr_data",
    "mask_tag",
    "nearest_baseline",
    "read_csv",
    "run_ablation",
    "run_eval",
    "run_finetune_cls",
    "run_finetune_sr",
    "run_pretrain",
    "synthesize",
    "write_ablation_table",
    "write_tables",
]
