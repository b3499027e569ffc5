"""Run configuration: an INI file of ``key = value`` sections with full defaults."""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, fields, replace
from pathlib import Path

from ..mae import MAEConfig
from ..vit import ViTConfig

TASKS = ("pretrain", "finetune_cls", "finetune_sr", "eval", "ablate", "synth", "export_features")

# field -> INI section; order here is the serialisation order
_SECTIONS = {
    "run": ("task", "seed", "out", "init", "checkpoint", "finetune_mode", "experiment"),
    "data": ("dataset_root", "normalize", "train_fraction", "pretrain_images",
             "synth_per_class", "synth_pairs"),
    "vit": ("image_size", "patch_size", "embed_dim", "depth", "num_heads", "ffn_ratio"),
    "mae": ("mask_ratio", "decoder_depth", "decoder_dim", "decoder_heads", "normalize_targets"),
    "optim": ("pretrain_lr", "pretrain_weight_decay", "finetune_lr", "finetune_weight_decay",
              "beta1", "beta2", "eps"),
    "train": ("epochs", "pretrain_epochs", "batch_size", "dropout", "ablation_epochs",
              "ablation_pretrain_epochs", "mask_ratios", "sr_samples"),
}
# excluded from the fingerprint: where results go does not change them
_NOT_FINGERPRINTED = {"out"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    # run
    task: str = "pretrain"
    seed: int = 0
    out: str = "runs"
    init: str = "scratch"            # scratch | from_checkpoint
    checkpoint: str = ""
    finetune_mode: str = "full"      # full | frozen
    experiment: str = ""             # report row name; derived from init/mode when empty
    # data
    dataset_root: str = ""           # empty: synthesise a corpus under <out>/synthetic
    normalize: str = "minmax"        # minmax | none
    train_fraction: float = 0.9
    pretrain_images: str = "all"     # all | train  (no_sub images used for pretraining)
    synth_per_class: int = 400
    synth_pairs: int = 1000
    # vit
    image_size: int = 64
    patch_size: int = 4
    embed_dim: int = 192
    depth: int = 6
    num_heads: int = 3
    ffn_ratio: int = 4
    # mae
    mask_ratio: float = 0.75
    decoder_depth: int = 2
    decoder_dim: int = 192
    decoder_heads: int = 3
    normalize_targets: bool = True
    # optim
    pretrain_lr: float = 1e-4
    pretrain_weight_decay: float = 0.0
    finetune_lr: float = 5e-5
    finetune_weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # train
    epochs: int = 10
    pretrain_epochs: int = 0         # 0: use ``epochs``
    batch_size: int = 64
    dropout: float = 0.1
    ablation_epochs: int = 5
    ablation_pretrain_epochs: int = 0  # 0: use ``ablation_epochs``
    mask_ratios: tuple = (0.5, 0.75, 0.9)
    sr_samples: int = 3

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.init not in ("scratch", "from_checkpoint"):
            raise ConfigError(f"init must be scratch or from_checkpoint, got {self.init!r}")
        if self.finetune_mode not in ("full", "frozen"):
            raise ConfigError(f"finetune_mode must be full or frozen, got {self.finetune_mode!r}")
        if self.pretrain_images not in ("all", "train"):
            raise ConfigError(f"pretrain_images must be all or train, got {self.pretrain_images!r}")
        if self.normalize not in ("minmax", "none"):
            raise ConfigError(f"normalize must be minmax or none, got {self.normalize!r}")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigError(f"mask_ratio must lie in (0, 1), got {self.mask_ratio}")
        if min(self.epochs, self.pretrain_epochs, self.ablation_epochs, self.ablation_pretrain_epochs) < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.init == "from_checkpoint" and not self.checkpoint and self.task in ("finetune_cls", "finetune_sr"):
            raise ConfigError("init = from_checkpoint needs a checkpoint path")
        try:
            self.vit()
            self.mae()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def vit(self, with_cls_token: bool = False) -> ViTConfig:
        return ViTConfig(self.image_size, self.patch_size, self.embed_dim, self.depth,
                         self.num_heads, self.ffn_ratio, with_cls_token)

    def mae(self, mask_ratio: float | None = None) -> MAEConfig:
        return MAEConfig(self.mask_ratio if mask_ratio is None else mask_ratio,
                         self.decoder_depth, self.decoder_dim, self.decoder_heads,
                         self.normalize_targets)

    @property
    def encoder_trainable(self) -> bool:
        return self.finetune_mode == "full"

    @property
    def effective_pretrain_epochs(self) -> int:
        return self.pretrain_epochs or self.epochs

    def replace(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        for section, keys in _SECTIONS.items():
            parser[section] = {k: _format(getattr(self, k)) for k in keys}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def fingerprint(self) -> str:
        """Hash of every field that can influence results."""
        items = [(k, _format(v)) for k, v in sorted(self.to_dict().items()) if k not in _NOT_FINGERPRINTED]
        text = "\n".join(f"{k}={v}" for k, v in items)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @classmethod
    def from_ini(cls, text: str, source: str = "<config>") -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from None
        known = {k: s for s, keys in _SECTIONS.items() for k in keys}
        defaults = cls()
        values = {}
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"{source}: unknown section [{section}]")
            for key, raw in parser[section].items():
                if known.get(key) != section:
                    raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
                values[key] = _parse(raw, getattr(defaults, key), key, source)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        return cls.from_ini(path.read_text(), str(path))


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_ratio_list(raw: str) -> tuple:
    try:
        ratios = tuple(float(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"cannot parse mask ratios {raw!r}") from None
    if not ratios:
        raise ConfigError("empty mask ratio list")
    for r in ratios:
        if not 0.0 < r < 1.0:
            raise ConfigError(f"mask ratio {r} outside (0, 1)")
    return ratios


def _parse(raw: str, default, key: str, source: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return parse_ratio_list(raw)
    except ValueError:
        raise ConfigError(f"{source}: bad value {raw!r} for {key}") from None
    return raw
