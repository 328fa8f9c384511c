"""Identity-preserving interpolation-warping.

Anchor frames are cross-faded across the interval, then each interpolated
frame is warped from its own (interpolated) landmark geometry to the Stage-1
target geometry. A motion encoder summarizes the landmark pair into a code
``z_m``; the code modulates a flow estimator through adaptive instance
normalization; the flow backward-warps the source frame.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import kernels
from .checkpoint import Checkpoint, params_from_modules
from .config import RunConfig
from .errors import InvalidArgument
from .landmarks import rasterize, rasterize_sequence
from .synthdata import DatasetManifest, load_split
from .training import History, adam_cosine, check_loss, log, require_nonempty, seeded, to_nchw, to_nhwc


def interpolate_frames(frame_start, frame_end, bs: int, kps_start=None, kps_end=None):
    """Cross-fade ``bs`` frames strictly between two anchors.

    Frame ``i`` (1-based) is ``(1 - i/(bs+1)) * start + i/(bs+1) * end``;
    keypoints, when given, are interpolated with the same weights. Returns
    ``(frames, keypoints)`` with ``keypoints`` None if not supplied.
    """
    a = np.asarray(frame_start, dtype=np.float64)
    b = np.asarray(frame_end, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgument(f"anchor frames differ in shape: {a.shape} vs {b.shape}")
    if bs < 0:
        raise InvalidArgument("bs must be >= 0")
    lam = np.arange(1, bs + 1, dtype=np.float64) / (bs + 1)
    shape = (-1,) + (1,) * a.ndim
    frames = (1.0 - lam).reshape(shape) * a + lam.reshape(shape) * b
    kps = None
    if kps_start is not None and kps_end is not None:
        ka, kb = np.asarray(kps_start, np.float64), np.asarray(kps_end, np.float64)
        kps = (1.0 - lam)[:, None, None] * ka + lam[:, None, None] * kb
    return frames, kps


class AdaIN(nn.Module):
    """Instance norm whose per-channel scale/shift come from the motion code.

    The code-to-modulation head is zero-initialized, so at initialization
    the layer is a plain instance norm regardless of the code.
    """

    def __init__(self, ch: int, code_dim: int):
        super().__init__()
        self.norm = nn.InstanceNorm2d(ch, affine=False)
        self.mod = nn.Linear(code_dim, 2 * ch)
        nn.init.zeros_(self.mod.weight)
        nn.init.zeros_(self.mod.bias)

    def forward(self, x, code):
        gamma, beta = self.mod(code).chunk(2, dim=1)
        return self.norm(x) * (1 + gamma[:, :, None, None]) + beta[:, :, None, None]


class AdaResBlock(nn.Module):
    def __init__(self, ch: int, code_dim: int):
        super().__init__()
        self.n1 = AdaIN(ch, code_dim)
        self.c1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.n2 = AdaIN(ch, code_dim)
        self.c2 = nn.Conv2d(ch, ch, 3, padding=1)

    def forward(self, x, code):
        h = self.c1(F.silu(self.n1(x, code)))
        return x + self.c2(F.silu(self.n2(h, code)))


class MotionEncoder(nn.Module):
    """(source landmark image, target landmark image) -> motion code."""

    def __init__(self, code_dim: int = 128, width: int = 16, resolution: int = 64):
        super().__init__()
        layers, ch = [], 6
        for w in (width, 2 * width, 4 * width, 4 * width):
            layers += [nn.Conv2d(ch, w, 4, stride=2, padding=1), nn.SiLU()]
            ch = w
        self.conv = nn.Sequential(*layers)
        self.fc = nn.Linear(ch * (resolution // 16) ** 2, code_dim)

    def forward(self, src_ldm, tgt_ldm):
        h = self.conv(torch.cat([src_ldm, tgt_ldm, ], dim=1))
        return self.fc(h.flatten(1))


class FlowNet(nn.Module):
    """Source frame + motion code -> backward flow in normalized units, full resolution."""

    def __init__(self, code_dim: int = 128, width: int = 16):
        super().__init__()
        w = width
        self.inp = nn.Conv2d(3, w, 4, stride=2, padding=1)
        self.r1 = AdaResBlock(w, code_dim)
        self.down = nn.Conv2d(w, 2 * w, 4, stride=2, padding=1)
        self.r2 = AdaResBlock(2 * w, code_dim)
        self.r3 = AdaResBlock(2 * w, code_dim)
        self.up = nn.Conv2d(2 * w, w, 3, padding=1)
        self.r4 = AdaResBlock(w, code_dim)
        self.head = nn.Conv2d(w, 2, 3, padding=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, frame, code):
        h1 = self.r1(self.inp(frame), code)
        h = self.r3(self.r2(self.down(h1), code), code)
        h = self.up(F.interpolate(h, scale_factor=2, mode="nearest")) + h1
        flow = self.head(F.silu(self.r4(h, code)))
        return F.interpolate(flow, size=frame.shape[2:], mode="bilinear", align_corners=True)


def _base_grid(n, H, W):
    ys = torch.linspace(-1, 1, H)
    xs = torch.linspace(-1, 1, W)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([gx, gy], dim=-1)[None].expand(n, H, W, 2)


def warp_t(frame: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Differentiable backward warp; ``flow`` is (N, 2, H, W) normalized (x, y)."""
    n, _, H, W = frame.shape
    grid = _base_grid(n, H, W) + flow.permute(0, 2, 3, 1)
    return F.grid_sample(frame, grid, mode="bilinear", padding_mode="border", align_corners=True)


def apply_flow(source_frame, flow) -> np.ndarray:
    """``out(p) = source(p + flow(p))`` with bilinear sampling and border clamping.

    ``flow`` is (H, W, 2) in normalized [-1, 1] grid units (x first); a zero
    field returns the input unchanged, bit for bit.
    """
    src = np.ascontiguousarray(source_frame, dtype=np.float64)
    flow = np.asarray(flow, dtype=np.float64)
    H, W = src.shape[:2]
    if flow.shape != (H, W, 2):
        raise InvalidArgument(f"flow shape {flow.shape} does not match frame {src.shape[:2]}")
    px = np.empty_like(flow)
    px[..., 0] = flow[..., 0] * ((W - 1) / 2.0)
    px[..., 1] = flow[..., 1] * ((H - 1) / 2.0)
    squeeze = src.ndim == 2
    if squeeze:
        src = src[..., None]
    out = kernels.warp_bilinear(np.ascontiguousarray(src), np.ascontiguousarray(px))
    return out[..., 0] if squeeze else out


def total_variation(flow: torch.Tensor) -> torch.Tensor:
    return ((flow[:, :, 1:] - flow[:, :, :-1]).abs().mean()
            + (flow[:, :, :, 1:] - flow[:, :, :, :-1]).abs().mean())


class WarpModel:
    def __init__(self, encoder: MotionEncoder, flownet: FlowNet, config: RunConfig):
        self.encoder = encoder.eval()
        self.flownet = flownet.eval()
        self.config = config

    @classmethod
    def build(cls, config: RunConfig) -> "WarpModel":
        return cls(MotionEncoder(config.motion_dim, config.warp_width, config.resolution),
                   FlowNet(config.motion_dim, config.warp_width), config)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "WarpModel":
        config = RunConfig.from_dict(ckpt.config)
        m = cls.build(config)
        ckpt.load_into(m.encoder, "motion_encoder.")
        ckpt.load_into(m.flownet, "flow.")
        return m.eval()

    def eval(self):
        self.encoder.eval()
        self.flownet.eval()
        return self

    def flows_t(self, src_frames, src_ldms, tgt_ldms) -> torch.Tensor:
        return self.flownet(src_frames, self.encoder(src_ldms, tgt_ldms))

    def warp_batch(self, src_frames, src_ldms, tgt_ldms, batch: int = 64):
        """All tensors (N, 3, H, W); returns (warped, flow)."""
        outs, flows = [], []
        with torch.no_grad():
            for k in range(0, len(src_frames), batch):
                fl = self.flows_t(src_frames[k:k + batch], src_ldms[k:k + batch], tgt_ldms[k:k + batch])
                outs.append(warp_t(src_frames[k:k + batch], fl))
                flows.append(fl)
        return torch.cat(outs), torch.cat(flows)


def motion_encode(source_ldm, target_ldm, model: WarpModel) -> np.ndarray:
    src = np.asarray(getattr(source_ldm, "image", source_ldm))
    tgt = np.asarray(getattr(target_ldm, "image", target_ldm))
    if src.shape != tgt.shape:
        raise InvalidArgument("landmark images differ in resolution")
    with torch.no_grad():
        return model.encoder(to_nchw(src), to_nchw(tgt))[0].numpy()


def estimate_flow(code, source_frame, model: WarpModel) -> np.ndarray:
    """(H, W, 2) normalized backward flow for ``source_frame`` under motion ``code``."""
    code_t = torch.as_tensor(np.asarray(code, dtype=np.float32)).reshape(1, -1)
    with torch.no_grad():
        flow = model.flownet(to_nchw(source_frame), code_t)
    return to_nhwc(flow)[0]


def warp_interval(interp_frames, interp_ldms, target_ldms, model: WarpModel) -> np.ndarray:
    """Warp every interpolated frame toward its Stage-1 target landmark image."""
    n = len(interp_frames)
    if not (n == len(interp_ldms) == len(target_ldms)):
        raise InvalidArgument("interp frames, interp landmarks and targets must have equal length")
    if n == 0:
        return np.zeros((0,) + tuple(np.shape(interp_frames)[1:] or (0, 0, 3)), np.float32)
    warped, _ = model.warp_batch(to_nchw(interp_frames), to_nchw(_images(interp_ldms)),
                                 to_nchw(_images(target_ldms)))
    return to_nhwc(warped)


def _images(ldms):
    return np.stack([np.asarray(getattr(x, "image", x), dtype=np.float32) for x in ldms])


# training ---------------------------------------------------------------

def sample_pairs(clips, n: int, config: RunConfig, rng, p_identity: float = 0.1, p_blend: float = 0.5):
    """Training pairs ``(clip, a, b, lam, t)``.

    The source is ``(1 - lam) * frame_a + lam * frame_b`` (plain frame when
    ``a == b``) and the target is frame ``t``. Cross-faded sources mimic the
    interpolated frames the warper sees during an edit.
    """
    out = []
    for _ in range(n):
        ci = int(rng.integers(len(clips)))
        L = len(clips[ci])
        u = rng.random()
        if u < p_identity:
            s = int(rng.integers(L))
            out.append((ci, s, s, 0.0, s))
        elif u < p_identity + p_blend:
            gap = int(rng.integers(2, min(config.max_pair_offset + 2, L)))
            a = int(rng.integers(0, L - gap))
            j = int(rng.integers(1, gap))
            out.append((ci, a, a + gap, j / gap, a + j))
        else:
            s = int(rng.integers(L))
            lo, hi = max(0, s - config.max_pair_offset), min(L - 1, s + config.max_pair_offset)
            out.append((ci, s, s, 0.0, int(rng.integers(lo, hi + 1))))
    return out


def pair_tensors(pairs, clips, resolution: int):
    """(source frames, source landmark images, target landmark images, target frames)."""
    src, sl, tl, tgt = [], [], [], []
    res = (resolution, resolution)
    for ci, a, b, lam, t in pairs:
        c = clips[ci]
        src.append((1 - lam) * c.frames[a] + lam * c.frames[b])
        kp = (1 - lam) * c.keypoints[a] + lam * c.keypoints[b]
        sl.append(rasterize(kp, res).image)
        tl.append(rasterize(c.keypoints[t], res).image)
        tgt.append(c.frames[t])
    return tuple(to_nchw(np.stack(x)) for x in (src, sl, tl, tgt))


def train_warp(manifest: DatasetManifest, config: RunConfig, clips=None) -> Checkpoint:
    """L1 photometric loss on warped frames plus a total-variation penalty on the flow."""
    clips = require_nonempty(clips if clips is not None else load_split(manifest, "train"), "train")
    rng, _ = seeded(config.seed + 2)
    model = WarpModel.build(config)
    params = list(model.encoder.parameters()) + list(model.flownet.parameters())
    opt, sched = adam_cosine(params, config.warp_lr, config.warp_steps)
    hist = History("warp", config.log_every)
    model.encoder.train()
    model.flownet.train()
    for step in range(config.warp_steps):
        src, sl, tl, tgt = pair_tensors(sample_pairs(clips, config.warp_batch, config, rng), clips,
                                        config.resolution)
        flow = model.flows_t(src, sl, tl)
        loss = (warp_t(src, flow) - tgt).abs().mean() + config.tv_weight * total_variation(flow)
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        hist.add(step, check_loss(loss, "warp", step), config.warp_steps)
    model.eval()
    return Checkpoint("warp", params_from_modules(motion_encoder=model.encoder, flow=model.flownet),
                      config.to_dict(), None, config.warp_steps, {"history": hist.rows})
