"""End-to-end edit: landmark synthesis, interpolation-warping, refinement, stitching."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_checkpoint
from .errors import DataIOError, DependencyError, InvalidArgument
from .ipiw import WarpModel, interpolate_frames, warp_interval
from .landmarks import rasterize, rasterize_sequence
from .latent_ae import LatentAE
from .motion_diffusion import AnchorPair, Stage1Model, synth_landmark_interval
from .plan import EditPlan, EditSpec, plan_edit
from .refine_diffusion import Stage2Model, refine_interval
from .synthdata import AudioFeatureSequence, LandmarkSequence, VideoClip, _write_clip

__all__ = ["EditPlan", "EditSpec", "plan_edit", "PipelineModels", "EditResult", "run_edit",
           "load_models", "write_edit", "STAGES"]

STAGES = ("ae", "stage1", "warp", "stage2")


@dataclass
class PipelineModels:
    ae: LatentAE
    stage1: Stage1Model
    warp: WarpModel
    stage2: Stage2Model

    @property
    def resolution(self) -> int:
        return self.stage1.config.resolution


def checkpoint_path(ckpt_dir: str, stage: str) -> str:
    return os.path.join(ckpt_dir, f"{stage}.ckpt")


def load_models(ckpt_dir: str) -> PipelineModels:
    paths = {s: checkpoint_path(ckpt_dir, s) for s in STAGES}
    for stage, p in paths.items():
        if not os.path.exists(p):
            raise DependencyError(f"missing checkpoint for stage {stage!r}: {p}")
    ae = LatentAE.from_checkpoint(load_checkpoint(paths["ae"], "ae"))
    return PipelineModels(
        ae,
        Stage1Model.from_checkpoint(load_checkpoint(paths["stage1"], "stage1"), ae),
        WarpModel.from_checkpoint(load_checkpoint(paths["warp"], "warp")),
        Stage2Model.from_checkpoint(load_checkpoint(paths["stage2"], "stage2"), ae),
    )


@dataclass
class EditResult:
    clip: VideoClip
    plan: EditPlan
    keypoints: np.ndarray  # spliced; generated frames carry interpolated keypoints
    target_ldms: np.ndarray = field(repr=False)
    coarse: np.ndarray = field(repr=False)
    refined: np.ndarray = field(repr=False)
    seed: int = 0


def run_edit(video: VideoClip, landmarks: LandmarkSequence, audio_edited: AudioFeatureSequence,
             plan: EditPlan, models: PipelineModels, seed: int) -> EditResult:
    frames = video.frames
    n, H, W, _ = frames.shape
    if (H, W) != (models.resolution, models.resolution):
        raise InvalidArgument(f"clip is {H}x{W}, checkpoints expect {models.resolution}")
    if len(landmarks) != n or plan.orig_len != n:
        raise InvalidArgument("video, landmarks and plan disagree on clip length")
    if len(audio_edited) != plan.out_len:
        raise InvalidArgument(f"edited audio has {len(audio_edited)} frames, plan expects {plan.out_len}")

    bs, a, b = plan.bs, plan.anchor_before, plan.anchor_after
    res = (H, W)
    kps = landmarks.keypoints
    empty = np.zeros((0, H, W, 3), np.float32)
    target, coarse, refined = empty, empty, empty
    gen_kps = np.zeros((0,) + kps.shape[1:])
    if bs > 0:
        anchors = AnchorPair(rasterize(kps[a], res).image, rasterize(kps[b], res).image, a, a + bs + 1)
        target = np.stack([x.image for x in synth_landmark_interval(anchors, audio_edited, bs, models.stage1, seed)])
        interp, gen_kps = interpolate_frames(frames[a], frames[b], bs, kps[a], kps[b])
        coarse = warp_interval(interp.astype(np.float32), rasterize_sequence(gen_kps, res), target, models.warp)
        cond = target if models.stage2.cond_mode == "landmark" else coarse
        refined = refine_interval(cond, audio_edited, a + 1, models.stage2, seed + 1)

    out = plan.splice(frames, refined)
    out_kps = plan.splice(kps, gen_kps)
    return EditResult(VideoClip(out, video.fps, video.identity_id), plan, out_kps,
                      target, coarse, refined, seed)


def write_edit(out_dir: str, result: EditResult, audio_edited: AudioFeatureSequence, spec: EditSpec,
               meta_extra: dict | None = None) -> str:
    """Write the edited clip in the dataset layout plus ``edit_plan.json``."""
    clip = result.clip
    H, W = clip.frames.shape[1:3]
    meta = {
        "fps": clip.fps, "K": result.keypoints.shape[1], "D": audio_edited.features.shape[1],
        "n_frames": len(clip), "resolution": [H, W], "identity_id": clip.identity_id,
        "shapes": {"keypoints": list(result.keypoints.shape),
                   "features": list(audio_edited.features.shape),
                   "envelope": list(audio_edited.envelope.shape)},
        "generated_keypoints": "interpolated between anchors",
    }
    meta.update(meta_extra or {})
    try:
        _write_clip(out_dir, clip, LandmarkSequence(result.keypoints), audio_edited, meta)
        with open(os.path.join(out_dir, "edit_plan.json"), "w") as fh:
            json.dump({"plan": result.plan.to_dict(),
                       "spec": {"op": spec.op, "interval": list(spec.interval),
                                "new_len": spec.new_len, "audio_seed": spec.seed},
                       "seeds": {"stage1": result.seed, "stage2": result.seed + 1}},
                      fh, indent=2, sort_keys=True)
    except OSError as exc:
        raise DataIOError(f"cannot write edit to {out_dir}: {exc}") from exc
    return out_dir


def read_plan(clip_dir: str) -> EditPlan:
    path = os.path.join(clip_dir, "edit_plan.json")
    try:
        with open(path) as fh:
            return EditPlan.from_dict(json.load(fh)["plan"])
    except (OSError, KeyError, ValueError) as exc:
        raise DataIOError(f"cannot read edit plan {path}: {exc}") from exc
