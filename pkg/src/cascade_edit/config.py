"""Run configuration: one flat, JSON-serializable record of every knob."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields

from .errors import DataIOError, InvalidArgument

SPLIT_PRESETS = {
    "50": (0.45, 0.05, 0.5),
    "25": (0.225, 0.025, 0.75),
    "12.5": (0.1125, 0.0125, 0.875),
}
SEED_ENV = "CASCADE_EDIT_SEED"


@dataclass
class RunConfig:
    # data
    resolution: int = 64
    K: int = 32
    D: int = 16
    n_identities: int = 16
    clips_per_identity: int = 2
    frames_per_clip: int = 200
    split_ratios: tuple = SPLIT_PRESETS["50"]
    fps: float = 25.0
    # latent autoencoder
    f: int = 4
    ae_width: int = 32
    ae_steps: int = 6000
    ae_lr: float = 2e-3
    ae_batch: int = 32
    ae_crop: int = 32
    ae_color_jitter: bool = True
    # diffusion
    T: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02
    ddim_steps: int = 20
    base_width: int = 32
    levels: int = 2
    audio_context: int = 4
    audio_embed: bool = True
    # stage 1
    stage1_steps: int = 2000
    stage1_lr: float = 1e-3
    stage1_batch: int = 32
    bs_min: int = 4
    bs_max: int = 16
    # warp
    motion_dim: int = 128
    warp_width: int = 32
    warp_steps: int = 1500
    warp_lr: float = 1e-3
    warp_batch: int = 16
    tv_weight: float = 0.01
    max_pair_offset: int = 16
    # stage 2
    stage2_steps: int = 4000
    stage2_lr: float = 1e-3
    stage2_batch: int = 32
    stage2_bank_intervals: int = 240
    stage2_cond: str = "coarse"
    stage2_residual: bool = True
    stage2_mouth_jitter: float = 0.5
    # bookkeeping
    seed: int = 0
    log_every: int = 50
    data_dir: str = "runs/data"
    ckpt_dir: str = "runs/ckpt"
    out_dir: str = "runs/out"
    extra: dict = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        if self.ddim_steps > self.T:
            raise InvalidArgument(f"ddim_steps={self.ddim_steps} exceeds T={self.T}")
        if self.f < 1 or self.f & (self.f - 1):
            raise InvalidArgument(f"f={self.f} must be a power of two")
        if self.resolution % self.f:
            raise InvalidArgument(f"resolution {self.resolution} not divisible by f={self.f}")
        if not 1 <= self.bs_min <= self.bs_max:
            raise InvalidArgument("need 1 <= bs_min <= bs_max")
        if self.stage2_cond not in ("coarse", "landmark", "none"):
            raise InvalidArgument(f"stage2_cond must be coarse, landmark or none, got {self.stage2_cond!r}")
        return self

    @property
    def latent_res(self) -> int:
        return self.resolution // self.f

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_ratios"] = list(self.split_ratios)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidArgument(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "split_ratios" in d:
            d["split_ratios"] = tuple(d["split_ratios"])
        return cls(**d).validate()

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        if path is None:
            cfg = cls()
            if os.environ.get(SEED_ENV):
                cfg.seed = int(os.environ[SEED_ENV])
            return cfg.validate()
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except OSError as exc:
            raise DataIOError(f"cannot read config {path}: {exc}") from exc

    def override(self, assignments: list[str]) -> "RunConfig":
        """Apply ``key=value`` strings; values are parsed as JSON when possible."""
        d = self.to_dict()
        for item in assignments:
            if "=" not in item:
                raise InvalidArgument(f"--set expects key=value, got {item!r}")
            key, raw = item.split("=", 1)
            if key not in d:
                raise InvalidArgument(f"unknown config key {key!r}")
            try:
                d[key] = json.loads(raw)
            except json.JSONDecodeError:
                d[key] = raw
        return RunConfig.from_dict(d)
