"""Checkpoint directories: ``manifest.json`` plus one NPY file per parameter."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core import Module, ShapeError
from ..data import read_npy, write_npy
from ..data.datasets import ensure_dir

FORMAT_VERSION = 1
MANIFEST = "manifest.json"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    path: Path
    manifest: dict
    arrays: dict[str, dict[str, np.ndarray]]  # module -> parameter -> array

    @property
    def kind(self) -> str:
        return self.manifest.get("kind", "")

    @property
    def config(self) -> dict:
        return self.manifest.get("config", {})

    def has(self, module: str) -> bool:
        return module in self.arrays

    def restore(self, name: str, module: Module, strict: bool = True) -> None:
        """Copy the stored parameters of ``name`` into ``module`` (shapes validated)."""
        if name not in self.arrays:
            raise CheckpointError(f"{self.path}: no module {name!r} (has {sorted(self.arrays)})")
        try:
            module.load_state_dict(self.arrays[name], strict=strict)
        except (KeyError, ShapeError) as exc:
            raise CheckpointError(f"{self.path}: module {name!r} does not fit: {exc}") from None


def _file_name(module: str, param: str) -> str:
    return f"{module}.{param}.npy"


def save_checkpoint(path, modules: dict[str, Module], kind: str, fingerprint: str,
                    config: dict | None = None, meta: dict | None = None) -> Path:
    """Write every parameter of every module; the manifest carries no wall-clock data."""
    from .. import __version__

    path = ensure_dir(path)
    entries = {}
    for mod_name, module in modules.items():
        entries[mod_name] = {}
        for pname, tensor in module.named_parameters():
            fname = _file_name(mod_name, pname)
            write_npy(tensor.data, path / fname)
            entries[mod_name][pname] = {
                "file": fname,
                "shape": list(tensor.data.shape),
                "dtype": np.dtype(tensor.data.dtype).str,
            }
    manifest = {
        "format": FORMAT_VERSION,
        "kind": kind,
        "fingerprint": fingerprint,
        "versions": {"lensmae": __version__, "numpy": np.__version__},
        "config": config or {},
        "meta": meta or {},
        "modules": entries,
    }
    tmp = path / f"{MANIFEST}.tmp{os.getpid()}"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path / MANIFEST)
    return path


def resolve_checkpoint_dir(path) -> Path:
    """Accept either a checkpoint directory or a run directory holding ``checkpoint/``."""
    path = Path(path)
    if (path / MANIFEST).is_file():
        return path
    if (path / "checkpoint" / MANIFEST).is_file():
        return path / "checkpoint"
    raise CheckpointError(f"no checkpoint manifest under {path}")


def load_checkpoint(path) -> Checkpoint:
    path = resolve_checkpoint_dir(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path / MANIFEST}: {exc}") from None
    if manifest.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format {manifest.get('format')!r}")
    arrays: dict[str, dict[str, np.ndarray]] = {}
    for mod_name, params in manifest["modules"].items():
        arrays[mod_name] = {}
        for pname, entry in params.items():
            arr = read_npy(path / entry["file"]).data
            if list(arr.shape) != entry["shape"]:
                raise CheckpointError(
                    f"{path / entry['file']}: shape {list(arr.shape)} disagrees with manifest {entry['shape']}"
                )
            arrays[mod_name][pname] = arr
    return Checkpoint(path, manifest, arrays)
