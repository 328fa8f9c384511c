"""Stage 2b: latent diffusion that refines coarse warped frames.

The visual condition for frame ``n`` is the channel stack
``[0.5 * (C_p + C_n), C_n, 0.5 * (C_f + C_n)]`` of coarse-frame latents, where
``p``/``f`` are the previous/next frames of the interval. The audio window
enters through cross-attention.

With ``stage2_residual`` (the default) a coarse-conditioned model diffuses
the difference between the target latent and the coarse latent ``C_n`` and
adds ``C_n`` back after sampling, so whatever the coarse frame already gets
right does not have to be regenerated from noise. The sampled correction is
applied in image space, ``coarse + decode(C_n + z) - decode(C_n)``, so the
autoencoder's round-trip error on the coarse frame cancels.
"""

from __future__ import annotations

import numpy as np
import torch

from .checkpoint import Checkpoint, params_from_modules
from .config import RunConfig
from .diffusion import ConditionPack, NoiseSchedule, ddim_sample, make_schedule, training_loss
from .errors import InvalidArgument
from .ipiw import WarpModel, interpolate_frames, warp_t
from .landmarks import mouth_aperture, rasterize_sequence, with_mouth_aperture
from .latent_ae import LatentAE
from .motion_diffusion import audio_window, heldout_loss
from .synthdata import AudioFeatureSequence, DatasetManifest, load_split
from .training import History, adam_cosine, check_loss, log, require_nonempty, seeded, to_nchw, to_nhwc
from .unet import DenoiserSpec, UNet


def temporal_fuse(c_prev, c_cur, c_next):
    """Stack ``(0.5*(C_p+C_n), C_n, 0.5*(C_f+C_n))`` along the last axis.

    Works on numpy arrays (channels last) or, via :func:`fuse_sequence`, on
    torch batches. A missing neighbour (``None``) is replaced by ``C_n``.
    """
    cur = np.asarray(c_cur)
    prev = cur if c_prev is None else np.asarray(c_prev)
    nxt = cur if c_next is None else np.asarray(c_next)
    if prev.shape != cur.shape or nxt.shape != cur.shape:
        raise InvalidArgument(f"latent shapes differ: {prev.shape}, {cur.shape}, {nxt.shape}")
    return np.concatenate([(prev + cur) * 0.5, cur, (nxt + cur) * 0.5], axis=-1)


def fuse_sequence(z: torch.Tensor) -> torch.Tensor:
    """(n, c, h, w) latents of consecutive frames -> (n, 3c, h, w) fused conditions."""
    if len(z) == 0:
        return z.new_zeros((0, 3 * z.shape[1]) + tuple(z.shape[2:]))
    prev = torch.cat([z[:1], z[:-1]])
    nxt = torch.cat([z[1:], z[-1:]])
    return torch.cat([(prev + z) * 0.5, z, (nxt + z) * 0.5], dim=1)


class Stage2Model:
    """Denoiser plus the frozen AE; ``cond_mode`` says what the visual condition is built from."""

    def __init__(self, unet: UNet, ae: LatentAE, schedule: NoiseSchedule, config: RunConfig):
        self.unet = unet.eval()
        self.ae = ae
        self.schedule = schedule
        self.config = config

    @property
    def cond_mode(self) -> str:
        return self.config.stage2_cond

    def denoiser(self, z, t, cond):
        return self.unet(z, t, cond)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, ae: LatentAE) -> "Stage2Model":
        spec = DenoiserSpec.from_dict(ckpt.extra["denoiser"])
        unet = ckpt.load_into(UNet(spec), "denoiser.")
        return cls(unet, ae, NoiseSchedule.from_dict(ckpt.schedule), RunConfig.from_dict(ckpt.config))

    def visual_condition(self, cond_latents: torch.Tensor) -> torch.Tensor:
        fused = fuse_sequence(cond_latents)
        return torch.zeros_like(fused) if self.cond_mode == "none" else fused

    @property
    def is_residual(self) -> bool:
        return self.cond_mode == "coarse" and self.config.stage2_residual

    def base_latent(self, visual: torch.Tensor) -> torch.Tensor:
        """What the sampled latent is added to: the ``C_n`` slot, or zero."""
        c = visual.shape[1] // 3
        if self.is_residual:
            return visual[:, c:2 * c]
        return torch.zeros_like(visual[:, :c])


def stage2_spec(config: RunConfig) -> DenoiserSpec:
    r = config.latent_res
    return DenoiserSpec((r, r, 3), config.base_width, config.levels, True, 9, config.D,
                        2 * config.audio_context + 1, config.audio_embed)


def _audio_windows(features, start: int, n: int, context: int) -> torch.Tensor:
    return torch.as_tensor(np.stack([audio_window(features, start + k, context) for k in range(n)]),
                           dtype=torch.float32)


# training bank --------------------------------------------------------------

def build_bank(clips, ae: LatentAE, warp: WarpModel | None, config: RunConfig, n_intervals: int, rng):
    """Simulated edits from real clips.

    Each interval ``(s, s+bs+1)`` of a clip is cross-faded between its
    anchors and warped toward the ground-truth landmark geometry (landmark
    images instead, for ``stage2_cond='landmark'``). Returns per-interval
    tuples ``(target latents, visual-condition latents, audio windows)``.

    With probability ``config.stage2_mouth_jitter`` an interval's warp
    targets get the lip opening of other frames of the same clip. At edit
    time the targets come from Stage 1 and their mouths are not exact, so
    the refiner has to learn to take the mouth from the audio rather than
    copy it from the coarse frame.
    """
    res = (config.resolution, config.resolution)
    bank = []
    for _ in range(n_intervals):
        c = clips[int(rng.integers(len(clips)))]
        bs = int(rng.integers(config.bs_min, config.bs_max + 1))
        s = int(rng.integers(0, len(c) - bs - 1))
        e = s + bs + 1
        gt = to_nchw(c.frames[s + 1:e])
        tgt_kps = c.keypoints[s + 1:e]
        if config.stage2_cond != "landmark" and rng.random() < config.stage2_mouth_jitter:
            donors = rng.integers(0, len(c), bs)
            tgt_kps = np.stack([with_mouth_aperture(k, mouth_aperture(c.keypoints[d]))
                                for k, d in zip(tgt_kps, donors)])
        tgt_ldm = to_nchw(rasterize_sequence(tgt_kps, res))
        if config.stage2_cond == "landmark":
            cond_img = tgt_ldm
        else:
            frames, kps = interpolate_frames(c.frames[s], c.frames[e], bs, c.keypoints[s], c.keypoints[e])
            src = to_nchw(frames)
            if warp is None:
                cond_img = src
            else:
                with torch.no_grad():
                    cond_img = warp_t(src, warp.flows_t(src, to_nchw(rasterize_sequence(kps, res)), tgt_ldm))
        bank.append((ae.encode_t(gt), ae.encode_t(cond_img),
                     _audio_windows(c.features, s + 1, bs, config.audio_context)))
    return bank


def _flatten(bank, model_cond) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    z0 = torch.cat([b[0] for b in bank])
    cond = torch.cat([model_cond(b[1]) for b in bank])
    aud = torch.cat([b[2] for b in bank])
    return z0, cond, aud


def train_stage2(manifest: DatasetManifest, ae: LatentAE, warp: WarpModel | None, config: RunConfig,
                 clips=None, heldout=None) -> Checkpoint:
    """Epsilon-prediction training on a bank of simulated coarse intervals."""
    clips = require_nonempty(clips if clips is not None else load_split(manifest, "train"), "train")
    if config.stage2_cond == "coarse" and warp is None:
        raise InvalidArgument("coarse conditioning needs a trained warp model")
    rng, gen = seeded(config.seed + 3)
    schedule = make_schedule(config.T, config.beta_start, config.beta_end)
    spec = stage2_spec(config)
    unet = UNet(spec)
    shell = Stage2Model(unet, ae, schedule, config)

    z0_all, cond_all, aud_all = _flatten(build_bank(clips, ae, warp, config, config.stage2_bank_intervals, rng),
                                         shell.visual_condition)
    z0_all = z0_all - shell.base_latent(cond_all)
    log.info("stage2 bank: %d frames", len(z0_all))

    held_batches = []
    if heldout:
        h_rng = np.random.default_rng(config.seed + 103)
        hz, hc, ha = _flatten(build_bank(heldout, ae, warp, config, 24, h_rng), shell.visual_condition)
        hz = hz - shell.base_latent(hc)
        for k in range(0, min(len(hz), 256), 64):
            held_batches.append((hz[k:k + 64], ConditionPack(hc[k:k + 64], ha[k:k + 64])))
    held0 = heldout_loss(unet, held_batches, schedule, 7) if held_batches else None

    opt, sched = adam_cosine(unet.parameters(), config.stage2_lr, config.stage2_steps)
    hist = History("stage2", config.log_every)
    unet.train()
    for step in range(config.stage2_steps):
        idx = torch.as_tensor(rng.integers(0, len(z0_all), config.stage2_batch))
        loss = training_loss(unet, z0_all[idx], ConditionPack(cond_all[idx], aud_all[idx]), schedule, gen)
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        hist.add(step, check_loss(loss, "stage2", step), config.stage2_steps)
    unet.eval()
    held1 = heldout_loss(unet, held_batches, schedule, 7) if held_batches else None
    log.info("stage2 held-out loss %s -> %s", held0, held1)
    return Checkpoint(
        "stage2", params_from_modules(denoiser=unet), config.to_dict(), schedule.to_dict(),
        config.stage2_steps,
        {"denoiser": spec.to_dict(), "history": hist.rows,
         "heldout_loss_initial": held0, "heldout_loss_final": held1},
    )


def refine_interval(cond_frames, audio: AudioFeatureSequence, start_index: int, model: Stage2Model,
                    seed: int, n_steps: int | None = None) -> np.ndarray:
    """Refine an interval of frames; ``cond_frames[k]`` pairs with audio frame ``start_index + k``.

    ``cond_frames`` are the coarse warped frames, or the target landmark
    images for a landmark-conditioned model. Returns (n, H, W, 3) in [0, 1].
    """
    cond_frames = np.asarray(cond_frames, dtype=np.float32)
    n = len(cond_frames)
    if n == 0:
        return np.zeros((0, model.config.resolution, model.config.resolution, 3), np.float32)
    if start_index < 0 or start_index + n > len(audio):
        raise InvalidArgument("audio does not cover the interval")
    visual = model.visual_condition(model.ae.encode_t(to_nchw(cond_frames)))
    cond = ConditionPack(visual, _audio_windows(audio.features, start_index, n, model.config.audio_context))
    shape = (n, 3) + tuple(visual.shape[2:])
    z = ddim_sample(model.denoiser, cond, model.schedule, n_steps or model.config.ddim_steps, seed, shape)
    base = model.base_latent(visual)
    if not model.is_residual:
        return to_nhwc(model.ae.decode_t(z))
    delta = to_nhwc(model.ae.decode_t(z + base)) - to_nhwc(model.ae.decode_t(base))
    return np.clip(cond_frames + delta, 0.0, 1.0).astype(np.float32)
