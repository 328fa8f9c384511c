import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cascade_edit import synthdata as sd
from cascade_edit.errors import InvalidArgument
from cascade_edit.landmarks import mouth_aperture
from cascade_edit.plan import EditSpec


def test_identity_deterministic():
    assert sd.gen_identity(7) == sd.gen_identity(7)


def test_identity_hue_collisions_rare():
    same = sum(sd.gen_identity(2 * k).face_hue == sd.gen_identity(2 * k + 1).face_hue for k in range(100))
    assert same < 1


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([32, 64, 96]))
def test_identity_fits_frame(seed, res):
    ident = sd.gen_identity(seed, res)
    assert min(ident.face_axes) > 0 and ident.eye_spacing > 0 and ident.mouth_width > 0
    assert ident.max_extent() <= (res - 1) / 2.0


@pytest.mark.parametrize("level", [0.0, 1.0])
def test_constant_envelope_gives_constant_gap(level):
    ident = sd.gen_identity(11)
    _, lms, _ = sd.gen_clip(ident, 12, 5, envelope=np.full(12, level))
    gaps = np.array([mouth_aperture(k) for k in lms.keypoints])
    expect = ident.gap_range[1] if level else ident.gap_range[0]
    np.testing.assert_allclose(gaps, expect, atol=1e-9)


def test_gap_correlation_is_exactly_one(sample_clip):
    ident, clip, lms, audio = sample_clip
    gaps = np.array([mouth_aperture(k) for k in lms.keypoints])
    g0, g1 = ident.gap_range
    np.testing.assert_allclose(gaps, g0 + audio.envelope * (g1 - g0), atol=1e-9)
    assert np.corrcoef(gaps, audio.envelope)[0, 1] == pytest.approx(1.0, abs=1e-12)


def test_clip_alignment_and_bounds(sample_clip):
    ident, clip, lms, audio = sample_clip
    assert len(clip) == len(lms) == len(audio) == audio.features.shape[0]
    assert clip.frames.min() >= 0 and clip.frames.max() <= 1
    assert lms.keypoints.min() >= 0 and lms.keypoints.max() <= ident.resolution - 1
    assert audio.features.shape[1] == 16 and lms.K == 32


def test_clip_deterministic():
    ident = sd.gen_identity(3)
    a = sd.gen_clip(ident, 10, 9)
    b = sd.gen_clip(ident, 10, 9)
    assert np.array_equal(a[0].frames, b[0].frames) and np.array_equal(a[2].features, b[2].features)


def test_envelope_range_and_determinism():
    e = sd.synth_envelope(500, 4)
    assert e.shape == (500,) and e.min() >= 0 and e.max() <= 1
    assert np.array_equal(e, sd.synth_envelope(500, 4))


def test_features_layout():
    env = np.linspace(0, 1, 9)
    f = sd.audio_features(env)
    np.testing.assert_array_equal(f[:, 0], env)
    np.testing.assert_allclose(f[1:, 1], np.diff(env))


def test_split_rounding():
    assert sd.split_counts(16, (0.1125, 0.0125, 0.875)) == (2, 0, 14)
    assert sd.split_counts(8, (0.45, 0.05, 0.5)) == (4, 0, 4)


def test_make_dataset_disjoint_and_deterministic(tmp_path):
    m1 = sd.make_dataset(8, 1, 6, (0.45, 0.05, 0.5), str(tmp_path / "a"), seed=1)
    m2 = sd.make_dataset(8, 1, 6, (0.45, 0.05, 0.5), str(tmp_path / "b"), seed=1)
    assert len(m1.splits["test"]) == 4
    assert not set(m1.splits["train"]) & set(m1.splits["test"])
    a = open(tmp_path / "a" / "manifest.json", "rb").read()
    b = open(tmp_path / "b" / "manifest.json", "rb").read()
    assert a == b


def test_load_round_trip(tiny_dataset):
    entry = tiny_dataset.clips[0]
    clip = sd.load_clip(os.path.join(tiny_dataset.root, entry["path"]), entry["identity"])
    ident = clip.identity_params
    _, lms, audio = sd.gen_clip(ident, 40, clip.meta["clip_seed"])
    np.testing.assert_allclose(clip.keypoints, lms.keypoints, atol=1e-4)
    np.testing.assert_allclose(clip.envelope, audio.envelope, atol=1e-6)
    assert clip.frames.shape == (40, 64, 64, 3)


def test_make_dataset_rejects_bad_ratios(tmp_path):
    with pytest.raises(InvalidArgument):
        sd.make_dataset(8, 1, 5, (0.5, 0.5, 0.5), str(tmp_path))


def _audio(n=50):
    env = sd.synth_envelope(n, 1)
    return sd.AudioFeatureSequence(sd.audio_features(env), env)


def test_edit_audio_delete():
    audio = _audio()
    out, plan = sd.edit_audio(audio, EditSpec("delete", (10, 19)))
    assert len(out) == 40
    assert np.array_equal(out.envelope[:10], audio.envelope[:10])
    assert np.array_equal(out.features[10:], audio.features[20:])


def test_edit_audio_insert_nothing_is_noop():
    audio = _audio()
    out, _ = sd.edit_audio(audio, EditSpec("insert", (10, 10), 0))
    assert np.array_equal(out.envelope, audio.envelope) and np.array_equal(out.features, audio.features)


def test_edit_audio_substitute():
    audio = _audio()
    out, plan = sd.edit_audio(audio, EditSpec("substitute", (10, 19), 15, seed=3))
    assert len(out) == 55 and (plan.anchor_before, plan.anchor_after) == (9, 20)
    for src, dst in plan.output_index_map.items():
        assert np.array_equal(out.features[dst], audio.features[src])
    np.testing.assert_array_equal(out.envelope[plan.generated_slice], sd.synth_envelope(15, 3))
