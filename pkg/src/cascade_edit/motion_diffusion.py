"""Stage 1: audio-driven landmark-image diffusion with dynamically weighted anchors.

Each frame ``i`` (1-based) of an editing interval of ``bs`` frames is denoised
conditioned on a linear blend of the two anchor landmark images, the raw
anchors themselves, and a window of audio features centred on the frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .checkpoint import Checkpoint, params_from_modules
from .config import RunConfig
from .diffusion import ConditionPack, NoiseSchedule, ddim_sample, make_schedule, training_loss
from .errors import InvalidArgument
from .landmarks import LandmarkImage, rasterize_sequence
from .latent_ae import LatentAE
from .synthdata import AudioFeatureSequence, DatasetManifest, load_split
from .training import History, adam_cosine, check_loss, log, require_nonempty, seeded, to_nchw, to_nhwc
from .unet import DenoiserSpec, UNet


@dataclass
class AnchorPair:
    """Anchor landmark images; indices are positions on the (edited) audio timeline."""

    start_ldm: np.ndarray
    end_ldm: np.ndarray
    start_index: int
    end_index: int

    def __post_init__(self):
        if self.start_index >= self.end_index:
            raise InvalidArgument("anchor start_index must precede end_index")
        if np.shape(self.start_ldm) != np.shape(self.end_ldm):
            raise InvalidArgument("anchor images differ in shape")


def interp_weights(i: int, bs: int) -> tuple[float, float]:
    """Anchor weights for frame ``i`` of ``bs``: ``((bs - i) / bs, i / bs)``."""
    if bs < 1 or not 1 <= i <= bs:
        raise InvalidArgument(f"frame index {i} outside 1..{bs}")
    return (bs - i) / bs, i / bs


def audio_window(features: np.ndarray, center: int, context: int = 4) -> np.ndarray:
    """``(2 * context + 1, D)`` features around ``center``, edge-replicated."""
    n = len(features)
    idx = np.clip(np.arange(center - context, center + context + 1), 0, n - 1)
    return np.asarray(features)[idx]


def blend_anchors(start, end, i: int, bs: int):
    ws, we = interp_weights(i, bs)
    return ws * start + we * end


def build_condition(anchors: AnchorPair, window: np.ndarray, i: int, bs: int) -> ConditionPack:
    """Image-space condition: channels ``[blend(3), start(3), end(3)]`` plus audio tokens.

    ``image`` is ``(1, 9, H, W)``; encode it with :func:`to_latent_condition`
    before handing it to the denoiser.
    """
    start = np.asarray(anchors.start_ldm, dtype=np.float32)
    end = np.asarray(anchors.end_ldm, dtype=np.float32)
    blend = blend_anchors(start, end, i, bs)
    img = np.concatenate([blend, start, end], axis=-1)
    return ConditionPack(to_nchw(img), torch.as_tensor(np.asarray(window, dtype=np.float32))[None])


def to_latent_condition(pack: ConditionPack, ae: LatentAE) -> ConditionPack:
    """Encode each 3-channel group of an image-space condition into latent space."""
    img = pack.image
    if img.shape[1] % 3:
        raise InvalidArgument("image condition channels must be a multiple of 3")
    groups = [ae.encode_t(img[:, k:k + 3]) for k in range(0, img.shape[1], 3)]
    return ConditionPack(torch.cat(groups, dim=1), pack.audio)


class Stage1Model:
    def __init__(self, unet: UNet, ae: LatentAE, schedule: NoiseSchedule, config: RunConfig):
        self.unet = unet.eval()
        self.ae = ae
        self.schedule = schedule
        self.config = config

    def denoiser(self, z, t, cond):
        return self.unet(z, t, cond)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, ae: LatentAE) -> "Stage1Model":
        spec = DenoiserSpec.from_dict(ckpt.extra["denoiser"])
        unet = ckpt.load_into(UNet(spec), "denoiser.")
        return cls(unet, ae, NoiseSchedule.from_dict(ckpt.schedule), RunConfig.from_dict(ckpt.config))


def stage1_spec(config: RunConfig) -> DenoiserSpec:
    r = config.latent_res
    return DenoiserSpec((r, r, 3), config.base_width, config.levels, True, 9, config.D,
                        2 * config.audio_context + 1, config.audio_embed)


def _clip_tables(clips, ae: LatentAE, resolution: int):
    """Per clip: landmark images (n, 3, H, W) and their latents (n, 3, h, w)."""
    tables = []
    for c in clips:
        ldm = to_nchw(rasterize_sequence(c.keypoints, (resolution, resolution)))
        tables.append((ldm, ae.encode_t(ldm)))
    return tables


def sample_windows(clips, n: int, config: RunConfig, rng) -> list[tuple[int, int, int, int]]:
    """Random training windows ``(clip, start_anchor, bs, i)`` with bs in [bs_min, bs_max]."""
    out = []
    for _ in range(n):
        ci = int(rng.integers(len(clips)))
        length = len(clips[ci])
        bs = int(rng.integers(config.bs_min, config.bs_max + 1))
        assert config.bs_min <= bs <= config.bs_max
        if bs + 2 > length:
            raise InvalidArgument(f"clip of {length} frames too short for interval of {bs}")
        s = int(rng.integers(0, length - bs - 1))
        i = int(rng.integers(1, bs + 1))
        out.append((ci, s, bs, i))
    return out


def _batch(windows, clips, tables, ae: LatentAE, context: int):
    # same result as to_latent_condition on the image stack; the anchor latents come from the table
    z0, blends, anchors, aud = [], [], [], []
    for ci, s, bs, i in windows:
        ldm, lat = tables[ci]
        e = s + bs + 1
        ws, we = interp_weights(i, bs)
        blends.append(ws * ldm[s] + we * ldm[e])
        anchors.append(torch.cat([lat[s], lat[e]], dim=0))
        z0.append(lat[s + i])
        aud.append(audio_window(clips[ci].features, s + i, context))
    image = torch.cat([ae.encode_t(torch.stack(blends)), torch.stack(anchors)], dim=1)
    return torch.stack(z0), ConditionPack(image, torch.as_tensor(np.stack(aud), dtype=torch.float32))


def heldout_loss(unet, batches, schedule: NoiseSchedule, seed: int) -> float:
    """Mean diffusion loss over fixed batches with a fixed noise stream."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        vals = [training_loss(unet, z0, cond, schedule, gen).item() for z0, cond in batches]
    return float(np.mean(vals))


def train_stage1(manifest: DatasetManifest, ae: LatentAE, config: RunConfig, clips=None,
                 heldout=None) -> Checkpoint:
    clips = require_nonempty(clips if clips is not None else load_split(manifest, "train"), "train")
    rng, gen = seeded(config.seed + 1)
    schedule = make_schedule(config.T, config.beta_start, config.beta_end)
    tables = _clip_tables(clips, ae, config.resolution)
    spec = stage1_spec(config)
    unet = UNet(spec)

    held_batches = []
    if heldout:
        h_tables = _clip_tables(heldout, ae, config.resolution)
        h_rng = np.random.default_rng(config.seed + 101)
        for _ in range(4):
            w = sample_windows(heldout, 64, config, h_rng)
            held_batches.append(_batch(w, heldout, h_tables, ae, config.audio_context))
    held0 = heldout_loss(unet, held_batches, schedule, 7) if held_batches else None

    opt, sched = adam_cosine(unet.parameters(), config.stage1_lr, config.stage1_steps)
    hist = History("stage1", config.log_every)
    unet.train()
    for step in range(config.stage1_steps):
        windows = sample_windows(clips, config.stage1_batch, config, rng)
        z0, cond = _batch(windows, clips, tables, ae, config.audio_context)
        loss = training_loss(unet, z0, cond, schedule, gen)
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        hist.add(step, check_loss(loss, "stage1", step), config.stage1_steps)
    unet.eval()
    held1 = heldout_loss(unet, held_batches, schedule, 7) if held_batches else None
    log.info("stage1 held-out loss %s -> %s", held0, held1)
    return Checkpoint(
        "stage1", params_from_modules(denoiser=unet), config.to_dict(), schedule.to_dict(),
        config.stage1_steps,
        {"denoiser": spec.to_dict(), "history": hist.rows,
         "heldout_loss_initial": held0, "heldout_loss_final": held1},
    )


def synth_landmark_latents(anchors: AnchorPair, audio: AudioFeatureSequence, bs: int,
                           model: Stage1Model, seed: int, n_steps: int | None = None) -> torch.Tensor:
    """Sampled latents (bs, 3, h, w) for the landmark images inside the interval."""
    if bs == 0:
        r = model.config.latent_res
        return torch.zeros(0, 3, r, r)
    if anchors.start_index + bs >= len(audio):
        raise InvalidArgument("audio does not cover the editing interval")
    packs = [build_condition(anchors, audio_window(audio.features, anchors.start_index + i,
                                                   model.config.audio_context), i, bs)
             for i in range(1, bs + 1)]
    pack = ConditionPack(torch.cat([p.image for p in packs]), torch.cat([p.audio for p in packs]))
    cond = to_latent_condition(pack, model.ae)
    shape = (bs, 3) + tuple(cond.image.shape[2:])
    return ddim_sample(model.denoiser, cond, model.schedule, n_steps or model.config.ddim_steps, seed, shape)


def synth_landmark_interval(anchors: AnchorPair, audio: AudioFeatureSequence, bs: int,
                            model: Stage1Model, seed: int, n_steps: int | None = None) -> list[LandmarkImage]:
    z = synth_landmark_latents(anchors, audio, bs, model, seed, n_steps)
    if bs == 0:
        return []
    imgs = to_nhwc(model.ae.decode_t(z))
    return [LandmarkImage(im, 0) for im in imgs]
