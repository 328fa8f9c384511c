"""Small conditional UNet used as the denoiser by both diffusion stages."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .diffusion import ConditionPack
from .errors import InvalidArgument


@dataclass
class DenoiserSpec:
    latent_shape: tuple[int, int, int] = (16, 16, 3)
    base_width: int = 32
    levels: int = 2
    cross_attention: bool = True
    cond_channels: int = 9
    audio_dim: int = 16
    audio_len: int = 9
    audio_embed: bool = False  # also add an MLP embedding of the whole audio window to the time embedding

    def __post_init__(self):
        h, w, _ = self.latent_shape
        if h % (2 ** self.levels) or w % (2 ** self.levels):
            raise InvalidArgument(f"latent {self.latent_shape} not divisible by 2^{self.levels}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["latent_shape"] = list(self.latent_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserSpec":
        d = dict(d)
        d["latent_shape"] = tuple(d["latent_shape"])
        return cls(**d)


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


def _groups(ch: int) -> int:
    return 8 if ch % 8 == 0 else 1


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, temb: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(cin), cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.temb = nn.Linear(temb, cout)
        self.norm2 = nn.GroupNorm(_groups(cout), cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class CrossAttention(nn.Module):
    """Spatial tokens query a context sequence (audio window as key and value)."""

    def __init__(self, ch: int, ctx_dim: int, ctx_len: int, heads: int = 4):
        super().__init__()
        self.heads = heads
        self.norm = nn.GroupNorm(_groups(ch), ch)
        self.ctx_pos = nn.Parameter(torch.zeros(ctx_len, ctx_dim))
        self.q = nn.Linear(ch, ch, bias=False)
        self.k = nn.Linear(ctx_dim, ch, bias=False)
        self.v = nn.Linear(ctx_dim, ch, bias=False)
        self.out = nn.Linear(ch, ch)

    def forward(self, x, ctx):
        b, c, h, w = x.shape
        tokens = self.norm(x).flatten(2).transpose(1, 2)
        ctx = ctx + self.ctx_pos[None, : ctx.shape[1]]
        nh = self.heads
        q = self.q(tokens).view(b, -1, nh, c // nh).transpose(1, 2)
        k = self.k(ctx).view(b, -1, nh, c // nh).transpose(1, 2)
        v = self.v(ctx).view(b, -1, nh, c // nh).transpose(1, 2)
        att = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(c // nh), dim=-1)
        o = (att @ v).transpose(1, 2).reshape(b, h * w, c)
        return x + self.out(o).transpose(1, 2).view(b, c, h, w)


class UNet(nn.Module):
    """Epsilon predictor ``(z_t, t, cond) -> eps``.

    Image conditions are concatenated to ``z_t`` on the channel axis; the
    audio window enters through a cross-attention block at the bottleneck and,
    with ``audio_embed``, as a global embedding added to the timestep
    embedding so every residual block sees it.
    """

    def __init__(self, spec: DenoiserSpec):
        super().__init__()
        self.spec = spec
        c = spec.latent_shape[2]
        w = spec.base_width
        temb = 4 * w
        self.temb_dim = w
        self.time_mlp = nn.Sequential(nn.Linear(w, temb), nn.SiLU(), nn.Linear(temb, temb))
        self.audio_mlp = None
        if spec.cross_attention and spec.audio_embed:
            self.audio_mlp = nn.Sequential(nn.Linear(spec.audio_dim * spec.audio_len, temb), nn.SiLU(),
                                           nn.Linear(temb, temb))
        self.inp = nn.Conv2d(c + spec.cond_channels, w, 3, padding=1)

        widths = [w * min(2 ** i, 2) for i in range(spec.levels + 1)]
        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        ch = w
        for i in range(spec.levels):
            self.down_blocks.append(ResBlock(ch, widths[i], temb))
            ch = widths[i]
            self.downsamples.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))
        self.mid1 = ResBlock(ch, widths[-1], temb)
        ch = widths[-1]
        self.attn = CrossAttention(ch, spec.audio_dim, spec.audio_len) if spec.cross_attention else None
        self.mid2 = ResBlock(ch, ch, temb)
        self.up_blocks = nn.ModuleList()
        for i in reversed(range(spec.levels)):
            self.up_blocks.append(ResBlock(ch + widths[i], widths[i], temb))
            ch = widths[i]
        self.out_norm = nn.GroupNorm(_groups(ch), ch)
        self.out = nn.Conv2d(ch, c, 3, padding=1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, z_t: torch.Tensor, t: torch.Tensor, cond: ConditionPack | None = None):
        spec = self.spec
        img = cond.image if cond is not None else None
        if spec.cond_channels:
            if img is None or img.shape[1] != spec.cond_channels:
                got = None if img is None else img.shape[1]
                raise InvalidArgument(f"denoiser expects {spec.cond_channels} condition channels, got {got}")
            x = torch.cat([z_t, img.to(z_t.dtype)], dim=1)
        else:
            x = z_t
        emb = self.time_mlp(timestep_embedding(t, self.temb_dim))
        audio = None
        if self.attn is not None:
            if cond is None or cond.audio is None:
                raise InvalidArgument("denoiser built with cross-attention needs audio tokens")
            audio = cond.audio.to(z_t.dtype)
            if self.audio_mlp is not None:
                emb = emb + self.audio_mlp(audio.flatten(1))
        h = self.inp(x)
        skips = []
        for block, down in zip(self.down_blocks, self.downsamples):
            h = block(h, emb)
            skips.append(h)
            h = down(h)
        h = self.mid1(h, emb)
        if self.attn is not None:
            h = self.attn(h, audio)
        h = self.mid2(h, emb)
        for block in self.up_blocks:
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = block(torch.cat([h, skips.pop()], dim=1), emb)
        return self.out(F.silu(self.out_norm(h)))
