"""Trainer reproducibility and pipeline contracts on tiny, quickly trained models."""

import hashlib
import os

import numpy as np
import pytest

from cascade_edit import cli
from cascade_edit import synthdata as sd
from cascade_edit.config import RunConfig
from cascade_edit.edit_pipeline import PipelineModels, load_models, run_edit, write_edit
from cascade_edit.errors import DependencyError, InvalidArgument
from cascade_edit.ipiw import WarpModel, train_warp
from cascade_edit.latent_ae import LatentAE, train_ae
from cascade_edit.motion_diffusion import Stage1Model, train_stage1
from cascade_edit.plan import EditSpec
from cascade_edit.refine_diffusion import Stage2Model, train_stage2

TINY = RunConfig(ae_steps=8, ae_batch=8, stage1_steps=4, stage1_batch=4, warp_steps=4, warp_batch=4,
                 stage2_steps=4, stage2_batch=4, stage2_bank_intervals=3, ddim_steps=3, bs_min=3, bs_max=5,
                 log_every=2)


def _train_all(manifest, cfg=TINY):
    ae_ck = train_ae(manifest, cfg)
    ae = LatentAE.from_checkpoint(ae_ck)
    s1_ck = train_stage1(manifest, ae, cfg)
    w_ck = train_warp(manifest, cfg)
    warp = WarpModel.from_checkpoint(w_ck)
    s2_ck = train_stage2(manifest, ae, warp, cfg)
    return {"ae": ae_ck, "stage1": s1_ck, "warp": w_ck, "stage2": s2_ck}


@pytest.fixture(scope="module")
def tiny_ckpts(tiny_dataset):
    return _train_all(tiny_dataset)


@pytest.fixture(scope="module")
def tiny_models(tiny_ckpts):
    ae = LatentAE.from_checkpoint(tiny_ckpts["ae"])
    return PipelineModels(ae, Stage1Model.from_checkpoint(tiny_ckpts["stage1"], ae),
                          WarpModel.from_checkpoint(tiny_ckpts["warp"]),
                          Stage2Model.from_checkpoint(tiny_ckpts["stage2"], ae))


def test_every_trainer_is_seeded(tiny_dataset, tiny_ckpts):
    again = _train_all(tiny_dataset)
    for stage, ck in tiny_ckpts.items():
        assert ck.params.keys() == again[stage].params.keys()
        for k, v in ck.params.items():
            assert np.array_equal(v, again[stage].params[k]), (stage, k)
        assert ck.extra["history"] == again[stage].extra["history"]


def test_seed_changes_weights(tiny_dataset, tiny_ckpts):
    other = train_warp(tiny_dataset, RunConfig(**{**TINY.to_dict(), "seed": 1}))
    assert any(not np.array_equal(v, other.params[k]) for k, v in tiny_ckpts["warp"].params.items())


def test_histories_are_finite(tiny_ckpts):
    for ck in tiny_ckpts.values():
        assert all(np.isfinite(loss) for _, loss in ck.extra["history"])


def _clip(manifest):
    c = sd.load_split(manifest, "test")[0]
    return c, sd.VideoClip(c.frames, 25.0, c.identity), sd.LandmarkSequence(c.keypoints)


@pytest.mark.parametrize("spec", [EditSpec("substitute", (10, 14), 6, seed=1), EditSpec("insert", (10, 10), 4),
                                  EditSpec("delete", (10, 14))])
def test_pipeline_stitching_and_determinism(tiny_dataset, tiny_models, spec):
    c, video, lms = _clip(tiny_dataset)
    audio, plan = sd.edit_audio(sd.AudioFeatureSequence(c.features, c.envelope), spec)
    r1 = run_edit(video, lms, audio, plan, tiny_models, seed=3)
    r2 = run_edit(video, lms, audio, plan, tiny_models, seed=3)
    out = r1.clip.frames
    assert len(out) == plan.out_len == len(r1.keypoints)
    assert np.array_equal(out, r2.clip.frames)
    for src, dst in plan.output_index_map.items():
        assert np.array_equal(out[dst], c.frames[src])
    assert len(r1.refined) == len(r1.coarse) == len(r1.target_ldms) == plan.bs


def test_pipeline_rejects_mismatches(tiny_dataset, tiny_models):
    c, video, lms = _clip(tiny_dataset)
    audio, plan = sd.edit_audio(sd.AudioFeatureSequence(c.features, c.envelope), EditSpec("delete", (10, 12)))
    with pytest.raises(InvalidArgument):
        run_edit(video, lms, sd.AudioFeatureSequence(c.features, c.envelope), plan, tiny_models, 0)
    small = sd.VideoClip(c.frames[:, :32, :32], 25.0, "x")
    with pytest.raises(InvalidArgument):
        run_edit(small, lms, audio, plan, tiny_models, 0)


def test_write_edit_round_trip(tmp_path, tiny_dataset, tiny_models):
    from cascade_edit.edit_pipeline import read_plan

    c, video, lms = _clip(tiny_dataset)
    spec = EditSpec("substitute", (10, 14), 6, seed=1)
    audio, plan = sd.edit_audio(sd.AudioFeatureSequence(c.features, c.envelope), spec)
    result = run_edit(video, lms, audio, plan, tiny_models, seed=3)
    write_edit(str(tmp_path / "e"), result, audio, spec)
    back = sd.load_clip(str(tmp_path / "e"))
    assert read_plan(str(tmp_path / "e")) == plan
    assert len(back) == plan.out_len
    assert np.abs(back.frames - result.clip.frames).max() <= 0.5 / 255 + 1e-6


def test_load_models_names_missing_stage(tmp_path):
    with pytest.raises(DependencyError, match="ae"):
        load_models(str(tmp_path))


def _sha(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def test_cli_fixed_seed_gives_identical_checkpoint(tmp_path):
    data = str(tmp_path / "data")
    assert cli.main(["gen-data", "--out", data, "--seed", "2", "--set", "n_identities=4",
                     "--set", "clips_per_identity=1", "--set", "frames_per_clip=30"]) == 0
    hashes = []
    for run in ("a", "b"):
        ckpt = str(tmp_path / run)
        assert cli.main(["train", "ae", "--data", data, "--ckpt-dir", ckpt, "--seed", "2",
                         "--set", "ae_steps=6", "--set", "ae_batch=8"]) == 0
        hashes.append(_sha(os.path.join(ckpt, "ae.ckpt")))
        assert os.path.exists(os.path.join(ckpt, "ae_loss.csv"))
        assert os.path.exists(os.path.join(ckpt, "ae_config.json"))
    assert hashes[0] == hashes[1]
