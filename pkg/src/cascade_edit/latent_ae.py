"""Convolutional autoencoder mapping RGB frames to a 3-channel latent grid.

Both diffusion stages operate in this latent space. Latents are standardized
per channel with statistics measured on the training split after training,
so the diffusion models see roughly unit-variance data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import Checkpoint, params_from_modules
from .config import RunConfig
from .errors import InvalidArgument
from .landmarks import rasterize_sequence
from .synthdata import DatasetManifest, load_split
from .training import History, adam_cosine, check_loss, log, require_nonempty, seeded, to_nchw, to_nhwc

LATENT_CHANNELS = 3


@dataclass
class Latent:
    data: np.ndarray  # (h, w, 3)
    source_res: tuple[int, int]
    f: int


class _Res(nn.Module):
    # no normalization: every output pixel depends only on a local window, so
    # training on crops transfers exactly to full frames
    def __init__(self, ch):
        super().__init__()
        self.body = nn.Sequential(
            nn.SiLU(), nn.Conv2d(ch, ch, 3, padding=1), nn.SiLU(), nn.Conv2d(ch, ch, 3, padding=1),
        )

    def forward(self, x):
        return x + self.body(x)


def _widths(f: int, width: int) -> list[int]:
    return [min(width * 2 ** i, 2 * width) for i in range(int(math.log2(f)))]


class Encoder(nn.Module):
    def __init__(self, f: int = 4, width: int = 32):
        super().__init__()
        layers, ch = [], 3
        for w in _widths(f, width):
            layers += [nn.Conv2d(ch, w, 4, stride=2, padding=1), _Res(w)]
            ch = w
        layers += [nn.SiLU(), nn.Conv2d(ch, LATENT_CHANNELS, 3, padding=1)]
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class Decoder(nn.Module):
    """Mirror of the encoder with pixel-shuffle upsampling; sigmoid output."""

    def __init__(self, f: int = 4, width: int = 32):
        super().__init__()
        ws = _widths(f, width)[::-1]
        ch = ws[0] if ws else width
        layers = [nn.Conv2d(LATENT_CHANNELS, ch, 3, padding=1), _Res(ch)]
        for i, w in enumerate(ws):
            nxt = ws[i + 1] if i + 1 < len(ws) else 3
            if nxt == 3:
                layers += [nn.SiLU(), nn.Conv2d(ch, 3 * 4, 3, padding=1), nn.PixelShuffle(2)]
            else:
                layers += [nn.Conv2d(ch, nxt * 4, 3, padding=1), nn.PixelShuffle(2), _Res(nxt)]
            ch = nxt
        self.net = nn.Sequential(*layers)

    def forward(self, z):
        return torch.sigmoid(self.net(z))


class LatentAE:
    """Frozen encoder/decoder pair plus latent standardization constants."""

    def __init__(self, encoder: Encoder, decoder: Decoder, f: int,
                 shift: np.ndarray | None = None, scale: np.ndarray | None = None):
        self.encoder = encoder.eval()
        self.decoder = decoder.eval()
        self.f = f
        self.shift = torch.zeros(LATENT_CHANNELS) if shift is None else torch.as_tensor(shift, dtype=torch.float32)
        self.scale = torch.ones(LATENT_CHANNELS) if scale is None else torch.as_tensor(scale, dtype=torch.float32)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "LatentAE":
        cfg = ckpt.config
        enc = ckpt.load_into(Encoder(cfg["f"], cfg["ae_width"]), "encoder.")
        dec = ckpt.load_into(Decoder(cfg["f"], cfg["ae_width"]), "decoder.")
        return cls(enc, dec, cfg["f"], ckpt.extra["latent_shift"], ckpt.extra["latent_scale"])

    def _check(self, x: torch.Tensor):
        if x.ndim != 4 or x.shape[1] != 3:
            raise InvalidArgument(f"expected (N, 3, H, W) images, got {tuple(x.shape)}")
        if x.shape[2] % self.f or x.shape[3] % self.f:
            raise InvalidArgument(f"image size {tuple(x.shape[2:])} not divisible by f={self.f}")

    def encode_t(self, x: torch.Tensor, batch: int = 256) -> torch.Tensor:
        """(N, 3, H, W) in [0, 1] -> standardized (N, 3, H/f, W/f)."""
        self._check(x)
        with torch.no_grad():
            out = [self.encoder(x[i:i + batch]) for i in range(0, len(x), batch)]
        z = torch.cat(out) if out else torch.zeros(0, LATENT_CHANNELS, x.shape[2] // self.f, x.shape[3] // self.f)
        return (z - self.shift.view(1, -1, 1, 1)) / self.scale.view(1, -1, 1, 1)

    def decode_t(self, z: torch.Tensor, batch: int = 256) -> torch.Tensor:
        raw = z * self.scale.view(1, -1, 1, 1) + self.shift.view(1, -1, 1, 1)
        with torch.no_grad():
            out = [self.decoder(raw[i:i + batch]) for i in range(0, len(raw), batch)]
        if not out:
            return torch.zeros(0, 3, z.shape[2] * self.f, z.shape[3] * self.f)
        return torch.cat(out).clamp(0.0, 1.0)

    def encode_images(self, images) -> torch.Tensor:
        return self.encode_t(to_nchw(images))

    def decode_images(self, z: torch.Tensor) -> np.ndarray:
        return to_nhwc(self.decode_t(z))


def encode(image, ae: LatentAE) -> Latent:
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidArgument(f"expected an (H, W, 3) image, got {img.shape}")
    z = ae.encode_t(to_nchw(img))
    return Latent(to_nhwc(z)[0], img.shape[:2], ae.f)


def decode(latent: Latent, ae: LatentAE) -> np.ndarray:
    z = to_nchw(latent.data)
    return to_nhwc(ae.decode_t(z))[0]


def _image_pool(clips, resolution) -> np.ndarray:
    frames = np.concatenate([c.frames for c in clips])
    ldms = np.concatenate([rasterize_sequence(c.keypoints, (resolution, resolution)) for c in clips])
    return np.concatenate([frames, ldms]).astype(np.float32)


def _random_crops(pool: torch.Tensor, idx, size: int, align: int, rng) -> torch.Tensor:
    H, W = pool.shape[2:]
    if size >= H and size >= W:
        return pool[idx]
    out = torch.empty(len(idx), pool.shape[1], size, size)
    for k, i in enumerate(idx):
        y = int(rng.integers(0, (H - size) // align + 1)) * align
        x = int(rng.integers(0, (W - size) // align + 1)) * align
        out[k] = pool[i, :, y:y + size, x:x + size]
    return out


def _color_jitter(x: torch.Tensor, rng) -> torch.Tensor:
    # random channel permutation and gain: the training split holds few
    # identities, so the colours of unseen faces are otherwise out of range
    out = torch.empty_like(x)
    for k in range(len(x)):
        perm = torch.as_tensor(rng.permutation(3))
        gain = torch.as_tensor(rng.uniform(0.75, 1.25, 3), dtype=x.dtype).view(3, 1, 1)
        out[k] = (x[k, perm] * gain).clamp(0.0, 1.0)
    return out


def train_ae(manifest: DatasetManifest, config: RunConfig, clips=None) -> Checkpoint:
    """Fit the autoencoder on training frames and their landmark images."""
    clips = require_nonempty(clips if clips is not None else load_split(manifest, "train"), "train")
    rng, _ = seeded(config.seed)
    pool = torch.from_numpy(_image_pool(clips, config.resolution)).permute(0, 3, 1, 2).contiguous()
    enc, dec = Encoder(config.f, config.ae_width), Decoder(config.f, config.ae_width)
    params = list(enc.parameters()) + list(dec.parameters())
    opt, sched = adam_cosine(params, config.ae_lr, config.ae_steps)
    hist = History("ae", config.log_every)
    n_frames = len(pool) // 2
    for step in range(config.ae_steps):
        # three quarters photographs (colour-jittered), one quarter landmark images
        n_photo = (3 * config.ae_batch) // 4
        idx = np.concatenate([rng.integers(0, n_frames, n_photo),
                              n_frames + rng.integers(0, n_frames, config.ae_batch - n_photo)])
        x = _random_crops(pool, idx, config.ae_crop, config.f, rng)
        if config.ae_color_jitter:
            x[:n_photo] = _color_jitter(x[:n_photo], rng)
        z = enc(x)
        loss = F.mse_loss(dec(z), x) + 1e-4 * z.pow(2).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        hist.add(step, check_loss(loss, "ae", step), config.ae_steps)

    enc.eval()
    with torch.no_grad():
        z = torch.cat([enc(pool[i:i + 256]) for i in range(0, len(pool), 256)])
    shift = z.mean(dim=(0, 2, 3)).numpy()
    scale = z.std(dim=(0, 2, 3)).numpy()
    log.info("ae latent shift %s scale %s", shift, scale)
    return Checkpoint(
        "ae", params_from_modules(encoder=enc, decoder=dec), config.to_dict(), None, config.ae_steps,
        {"latent_shift": shift.tolist(), "latent_scale": scale.tolist(), "history": hist.rows},
    )
