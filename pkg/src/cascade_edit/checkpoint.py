"""Checkpoint container shared by every trainable stage.

A checkpoint is a zip archive (stored, no compression, fixed timestamps so
identical contents hash identically) holding::

    meta.json            kind, config snapshot, schedule, global step, extras,
                         and {"params": {name: shape}}
    params/<name>.f32    little-endian float32, row-major

Parameter names are the ``state_dict`` keys of the stage's network,
prefixed by the network role (``denoiser.``, ``encoder.``, ...).
"""

from __future__ import annotations

import io
import json
import os
import zipfile
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import DataIOError, InvalidArgument

_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass
class Checkpoint:
    kind: str
    params: dict[str, np.ndarray]
    config: dict = field(default_factory=dict)
    schedule: dict | None = None
    step: int = 0
    extra: dict = field(default_factory=dict)

    def state_dict(self, prefix: str) -> dict[str, torch.Tensor]:
        n = len(prefix)
        return {k[n:]: torch.from_numpy(v.copy()) for k, v in self.params.items() if k.startswith(prefix)}

    def load_into(self, module: torch.nn.Module, prefix: str) -> torch.nn.Module:
        module.load_state_dict(self.state_dict(prefix))
        return module


def params_from_modules(**modules: torch.nn.Module) -> dict[str, np.ndarray]:
    out = {}
    for role, mod in modules.items():
        for k, v in mod.state_dict().items():
            out[f"{role}.{k}"] = v.detach().cpu().numpy().astype("<f4")
    return out


def _write(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(ckpt: Checkpoint, path: str) -> str:
    meta = {
        "kind": ckpt.kind,
        "config": ckpt.config,
        "schedule": ckpt.schedule,
        "step": int(ckpt.step),
        "extra": ckpt.extra,
        "params": {k: list(v.shape) for k, v in sorted(ckpt.params.items())},
    }
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w") as zf:
            _write(zf, "meta.json", json.dumps(meta, indent=2, sort_keys=True).encode())
            for k in sorted(ckpt.params):
                _write(zf, f"params/{k}.f32", np.ascontiguousarray(ckpt.params[k], dtype="<f4").tobytes())
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())
    except OSError as exc:
        raise DataIOError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path: str, kind: str | None = None) -> Checkpoint:
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            params = {
                k: np.frombuffer(zf.read(f"params/{k}.f32"), dtype="<f4").reshape(shape).copy()
                for k, shape in meta["params"].items()
            }
    except (OSError, KeyError, zipfile.BadZipFile) as exc:
        raise DataIOError(f"cannot read checkpoint {path}: {exc}") from exc
    if kind is not None and meta["kind"] != kind:
        raise InvalidArgument(f"{path} holds a {meta['kind']!r} checkpoint, expected {kind!r}")
    return Checkpoint(meta["kind"], params, meta["config"], meta["schedule"], meta["step"], meta["extra"])
