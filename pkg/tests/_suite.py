"""One desk-scale training run shared by the trained-model and acceptance tests.

Everything is trained once per session with the default ``RunConfig``. Set
``CASCADE_EDIT_SUITE_DIR`` to keep the dataset and checkpoints between
sessions; checkpoints already present there are loaded instead of retrained.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from cascade_edit import synthdata as sd
from cascade_edit.checkpoint import load_checkpoint, save_checkpoint
from cascade_edit.config import RunConfig
from cascade_edit.edit_pipeline import PipelineModels, run_edit
from cascade_edit.ipiw import WarpModel, train_warp
from cascade_edit.latent_ae import LatentAE, train_ae
from cascade_edit.metrics import evaluate, f_ssim
from cascade_edit.landmarks import aperture_from_landmark_image, mouth_roi
from cascade_edit.motion_diffusion import Stage1Model, train_stage1
from cascade_edit.plan import EditSpec
from cascade_edit.refine_diffusion import Stage2Model, refine_interval, train_stage2

SUITE_ENV = "CASCADE_EDIT_SUITE_DIR"
log = logging.getLogger("cascade_edit.tests")


def quantize(frames) -> np.ndarray:
    """What a frame looks like after a round trip through an 8-bit PNG."""
    return (np.round(np.clip(frames, 0, 1) * 255) / 255).astype(np.float32)


@dataclass
class Suite:
    root: str
    config: RunConfig
    manifest: sd.DatasetManifest
    ae: LatentAE
    stage1: Stage1Model
    warp: WarpModel
    stage2: Stage2Model
    stage2_landmark: Stage2Model
    stage2_none: Stage2Model
    checkpoints: dict
    seconds: dict = field(default_factory=dict)

    @cached_property
    def train(self):
        return sd.load_split(self.manifest, "train")

    @cached_property
    def test(self):
        return sd.load_split(self.manifest, "test")

    @property
    def models(self) -> PipelineModels:
        return PipelineModels(self.ae, self.stage1, self.warp, self.stage2)

    @cached_property
    def edits(self) -> list["HeldoutEdit"]:
        return heldout_edits(self)


def _timed(seconds: dict, name: str, fn):
    t = time.perf_counter()
    out = fn()
    seconds[name] = time.perf_counter() - t
    log.info("%s took %.1f s", name, seconds[name])
    return out


def build_suite(root: str, config: RunConfig | None = None) -> Suite:
    cfg = config or RunConfig()
    data_dir = os.path.join(root, "data")
    ckpt_dir = os.path.join(root, "ckpt")
    os.makedirs(ckpt_dir, exist_ok=True)
    timing_path = os.path.join(ckpt_dir, "seconds.json")
    seconds = {}
    if os.path.exists(timing_path):
        with open(timing_path) as fh:
            seconds = json.load(fh)

    if not os.path.exists(os.path.join(data_dir, "manifest.json")):
        _timed(seconds, "gen-data", lambda: sd.make_dataset(
            cfg.n_identities, cfg.clips_per_identity, cfg.frames_per_clip, cfg.split_ratios, data_dir,
            seed=cfg.seed, resolution=cfg.resolution, fps=cfg.fps))
    manifest = sd.DatasetManifest.load(data_dir)
    heldout = sd.load_split(manifest, "test")
    paths = {s: os.path.join(ckpt_dir, f"{s}.ckpt") for s in ("ae", "stage1", "warp", "stage2", "stage2_landmark",
                                                         "stage2_none")}

    def stage(name, train):
        if not os.path.exists(paths[name]):
            save_checkpoint(_timed(seconds, name, train), paths[name])
        return load_checkpoint(paths[name])

    ae = LatentAE.from_checkpoint(stage("ae", lambda: train_ae(manifest, cfg)))
    s1 = Stage1Model.from_checkpoint(stage("stage1", lambda: train_stage1(manifest, ae, cfg, heldout=heldout)), ae)
    warp = WarpModel.from_checkpoint(stage("warp", lambda: train_warp(manifest, cfg)))
    s2 = Stage2Model.from_checkpoint(
        stage("stage2", lambda: train_stage2(manifest, ae, warp, cfg, heldout=heldout)), ae)
    lcfg = replace(cfg, stage2_cond="landmark")
    s2l = Stage2Model.from_checkpoint(
        stage("stage2_landmark", lambda: train_stage2(manifest, ae, None, lcfg, heldout=heldout)), ae)
    ncfg = replace(cfg, stage2_cond="none")
    s2n = Stage2Model.from_checkpoint(
        stage("stage2_none", lambda: train_stage2(manifest, ae, warp, ncfg, heldout=heldout)), ae)
    with open(timing_path, "w") as fh:
        json.dump(seconds, fh, indent=2, sort_keys=True)
    return Suite(root, cfg, manifest, ae, s1, warp, s2, s2l, s2n, paths, seconds)


@dataclass
class HeldoutEdit:
    """A substitute edit of a held-out clip plus its re-rendered ground truth."""

    clip: sd.ClipData
    spec: EditSpec
    audio: sd.AudioFeatureSequence
    reference: np.ndarray
    result: object
    refined_landmark: np.ndarray

    @property
    def plan(self):
        return self.result.plan

    @property
    def roi(self):
        return mouth_roi(self.clip.keypoints, resolution=self.reference.shape[1:3])

    @property
    def generated(self):
        return self.result.clip.frames[self.plan.generated_slice]

    @property
    def target(self):
        return self.reference[self.plan.generated_slice]

    def landmark_apertures(self):
        return [aperture_from_landmark_image(x) for x in self.result.target_ldms]

    def edited_envelope(self):
        return self.audio.envelope[self.plan.generated_slice]

    def report(self, ae):
        return evaluate(self.result.clip.frames, self.reference, self.plan, self.audio.envelope, ae, self.roi)

    def f_ssim_pair(self):
        return f_ssim(self.result.clip.frames, self.plan), f_ssim(self.reference, self.plan)


def reference_clip(clip: sd.ClipData, audio: sd.AudioFeatureSequence, plan) -> np.ndarray:
    """Ground truth for an equal-length substitute: the same face and head motion re-rendered
    with the edited envelope inside the interval, original frames elsewhere."""
    if plan.out_len != len(clip):
        raise ValueError("reference rendering needs an equal-length edit")
    video, _, _ = sd.gen_clip(clip.identity_params, len(clip), clip.meta["clip_seed"],
                              envelope=audio.envelope.astype(np.float64), fps=float(clip.meta["fps"]))
    sl = plan.generated_slice
    return plan.splice(clip.frames, quantize(video.frames[sl]))


def heldout_edits(suite: Suite) -> list[HeldoutEdit]:
    """One substitute edit per held-out clip, 6 to 12 frames long, at varied positions."""
    edits = []
    for k, c in enumerate(suite.test):
        bs = 6 + k % 7
        start = 20 + (37 * k) % (len(c) - bs - 40)
        spec = EditSpec("substitute", (start, start + bs - 1), bs, seed=1000 + k)
        audio, plan = sd.edit_audio(sd.AudioFeatureSequence(c.features, c.envelope), spec)
        video = sd.VideoClip(c.frames, float(c.meta["fps"]), c.identity)
        result = run_edit(video, sd.LandmarkSequence(c.keypoints), audio, plan, suite.models, seed=k)
        lm = refine_interval(result.target_ldms, audio, plan.anchor_before + 1, suite.stage2_landmark, k + 1)
        edits.append(HeldoutEdit(c, spec, audio, reference_clip(c, audio, plan), result, lm))
    return edits
