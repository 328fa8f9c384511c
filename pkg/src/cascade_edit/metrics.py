"""Quality, smoothness and sync measurements plus report assembly.

The sync score is a correlation proxy (mouth aperture vs. speech envelope)
and the perceptual score is a distance between autoencoder latents; both are
labelled as proxies in reports.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidArgument
from .landmarks import aperture_from_frame
from .plan import EditPlan

PSNR_CAP = 99.0
TABLE_COLUMNS = ("SyncProxy", "PSNR", "SSIM", "LatentDist", "F-SSIM")


class DegenerateSeriesWarning(UserWarning):
    """A correlation was requested on a constant series and reported as 0."""


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgument(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def _ssim_2d(x: np.ndarray, y: np.ndarray, window: int, c1: float, c2: float) -> float:
    mx, my = kernels.box_mean(x, window), kernels.box_mean(y, window)
    vx = kernels.box_mean(x * x, window) - mx * mx
    vy = kernels.box_mean(y * y, window) - my * my
    cxy = kernels.box_mean(x * y, window) - mx * my
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def ssim(a, b, window: int = 8, data_range: float = 1.0) -> float:
    """Mean local SSIM with a uniform ``window`` x ``window`` window, averaged over channels.

    Accepts (H, W), (H, W, C) or a sequence (n, H, W, C); a sequence is the
    mean of per-frame values.
    """
    a, b = _pair(a, b)
    if a.ndim == 4:
        return float(np.mean([ssim(x, y, window, data_range) for x, y in zip(a, b)]))
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.ndim != 3 or min(a.shape[:2]) < window:
        raise InvalidArgument(f"image {a.shape} too small for a {window}-pixel window")
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    return float(np.mean([
        _ssim_2d(np.ascontiguousarray(a[..., c]), np.ascontiguousarray(b[..., c]), window, c1, c2)
        for c in range(a.shape[2])
    ]))


def transition_pairs(n: int, plan: EditPlan, margin: int = 2) -> list[tuple[int, int]]:
    """Consecutive output-frame pairs touching the edited span widened by ``margin``.

    The edited span is the generated slice in output indices; for a delete it
    is empty and the window reduces to the seam between the two anchors.
    """
    lo = plan.anchor_before + 1 - margin
    hi = plan.anchor_before + plan.bs + margin
    if plan.anchor_before < 0 or plan.anchor_before + plan.bs + 1 >= n:
        raise InvalidArgument(f"edited span of plan lies outside a sequence of {n} frames")
    return [(k, k + 1) for k in range(n - 1) if lo <= k <= hi or lo <= k + 1 <= hi]


def f_ssim(frames, plan: EditPlan, margin: int = 2, window: int = 8) -> float:
    frames = np.asarray(frames, dtype=np.float64)
    pairs = transition_pairs(len(frames), plan, margin)
    return float(np.mean([ssim(frames[i], frames[j], window) for i, j in pairs]))


def pearson(x, y) -> tuple[float, bool]:
    """Pearson r, or ``(0.0, True)`` when either series has zero variance."""
    x, y = _pair(x, y)
    if x.size == 0 or np.all(x == x.flat[0]) or np.all(y == y.flat[0]):
        return 0.0, True
    xc, yc = x - x.mean(), y - y.mean()
    den = math.sqrt(float(np.sum(xc * xc)) * float(np.sum(yc * yc)))
    return float(np.clip(np.sum(xc * yc) / den, -1.0, 1.0)), False


def sync_corr(frames, envelope, mouth_roi, return_flag: bool = False):
    """Correlation between per-frame mouth aperture and the speech envelope."""
    env = np.asarray(envelope, dtype=np.float64)
    if len(frames) != len(env):
        raise InvalidArgument(f"{len(frames)} frames vs {len(env)} envelope values")
    if len(env) < 3:
        raise InvalidArgument("need at least 3 frames for a correlation")
    ap = [aperture_from_frame(f, mouth_roi) for f in frames]
    r, degenerate = pearson(ap, env)
    if degenerate:
        warnings.warn("constant series in sync correlation; reporting 0", DegenerateSeriesWarning)
    return (r, degenerate) if return_flag else r


def latent_dist(a, b, ae) -> float:
    """Root-mean-square difference of the two images' standardized AE latents."""
    a, b = _pair(a, b)
    if a.ndim == 3:
        a, b = a[None], b[None]
    za = ae.encode_images(a.astype(np.float32))
    zb = ae.encode_images(b.astype(np.float32))
    return float(((za - zb).double() ** 2).mean().sqrt())


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    f_ssim: float
    sync_r: float
    latent_dist: float
    sync_degenerate: bool = False
    per_edit: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(**json.loads(text))

    def row(self) -> tuple[float, ...]:
        return (self.sync_r, self.psnr, self.ssim, self.latent_dist, self.f_ssim)

    def table(self, label: str = "edit") -> str:
        return format_table([(label, self)])


def format_table(rows) -> str:
    """Aligned text table; columns in the fixed order of ``TABLE_COLUMNS``."""
    names = [str(r[0]) for r in rows]
    w0 = max([len("Method")] + [len(n) for n in names])
    head = "Method".ljust(w0) + "".join(c.rjust(12) for c in TABLE_COLUMNS)
    lines = [head, "-" * len(head)]
    for name, rep in zip(names, (r[1] for r in rows)):
        lines.append(name.ljust(w0) + "".join(f"{v:12.4f}" for v in rep.row()))
    return "\n".join(lines) + "\n"


def quality_indices(plan: EditPlan, n: int, margin: int = 2) -> list[int]:
    """Output frames scored for quality: the generated slice, or the seam window for deletes."""
    if plan.bs > 0:
        return list(range(plan.generated_slice.start, plan.generated_slice.stop))
    lo = max(0, plan.anchor_before + 1 - margin)
    hi = min(n - 1, plan.anchor_before + margin)
    return list(range(lo, hi + 1))


def evaluate(edited, reference, plan: EditPlan, envelope, ae, mouth_roi, margin: int = 2,
             config: dict | None = None) -> MetricReport:
    """Score one edit against an aligned reference clip.

    ``edited``/``reference`` are frame arrays (or objects with ``.frames``) of
    equal length; ``envelope`` is the edited speech envelope on the output
    timeline.
    """
    ed = np.asarray(getattr(edited, "frames", edited), dtype=np.float64)
    ref = np.asarray(getattr(reference, "frames", reference), dtype=np.float64)
    env = np.asarray(envelope, dtype=np.float64)
    if ed.shape != ref.shape:
        raise InvalidArgument(f"edited {ed.shape} and reference {ref.shape} are not aligned")
    if len(env) != len(ed) or len(ed) != plan.out_len:
        raise InvalidArgument("envelope, frames and plan disagree on length")
    idx = quality_indices(plan, len(ed), margin)
    sync_idx = idx if len(idx) >= 3 else transition_window(plan, len(ed), margin)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSeriesWarning)
        r, degenerate = sync_corr(ed[sync_idx], env[sync_idx], mouth_roi, return_flag=True)
    return MetricReport(
        psnr=psnr(ed[idx], ref[idx]),
        ssim=ssim(ed[idx], ref[idx]),
        f_ssim=f_ssim(ed, plan, margin),
        sync_r=r,
        latent_dist=latent_dist(ed[idx], ref[idx], ae),
        sync_degenerate=degenerate,
        config=dict(config or {}),
    )


def transition_window(plan: EditPlan, n: int, margin: int = 2) -> list[int]:
    return sorted({k for pair in transition_pairs(n, plan, margin) for k in pair})


def aggregate(reports: list[MetricReport], config: dict | None = None) -> MetricReport:
    """Mean of per-edit reports; the individual reports are kept in ``per_edit``."""
    if not reports:
        raise InvalidArgument("no reports to aggregate")
    mean = lambda name: float(np.mean([getattr(r, name) for r in reports]))  # noqa: E731
    return MetricReport(
        psnr=mean("psnr"), ssim=mean("ssim"), f_ssim=mean("f_ssim"), sync_r=mean("sync_r"),
        latent_dist=mean("latent_dist"),
        sync_degenerate=any(r.sync_degenerate for r in reports),
        per_edit=[{k: v for k, v in r.to_dict().items() if k not in ("per_edit", "config")} for r in reports],
        config=dict(config or {}),
    )
