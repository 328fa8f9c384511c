import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from cascade_edit import ipiw
from cascade_edit.config import RunConfig
from cascade_edit.errors import InvalidArgument
from cascade_edit.landmarks import rasterize


def test_interpolate_examples():
    F = np.random.default_rng(0).random((4, 4, 3))
    frames, _ = ipiw.interpolate_frames(F, F, 5)
    assert all(np.allclose(f, F, atol=1e-15) for f in frames)
    mid, _ = ipiw.interpolate_frames(np.zeros(3), np.ones(3) * 2, 1)
    np.testing.assert_allclose(mid[0], 1.0)
    frames, _ = ipiw.interpolate_frames(np.zeros((2, 2)), np.ones((2, 2)), 3)
    for f, v in zip(frames, (0.25, 0.5, 0.75)):
        np.testing.assert_array_equal(f, v)


def test_interpolate_keypoints_and_empty():
    frames, kps = ipiw.interpolate_frames(np.zeros((2, 2)), np.ones((2, 2)), 1, np.zeros((3, 2)), np.full((3, 2), 4.0))
    np.testing.assert_array_equal(kps[0], 2.0)
    assert len(ipiw.interpolate_frames(np.zeros(2), np.ones(2), 0)[0]) == 0
    with pytest.raises(InvalidArgument):
        ipiw.interpolate_frames(np.zeros(2), np.zeros(3), 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(0, 1000))
def test_interpolate_is_affine(bs, seed):
    rng = np.random.default_rng(seed)
    a1, b1, a2, b2 = rng.random((4, 3, 3))
    x, _ = ipiw.interpolate_frames(a1 + 2 * a2, b1 + 2 * b2, bs)
    y1, _ = ipiw.interpolate_frames(a1, b1, bs)
    y2, _ = ipiw.interpolate_frames(a2, b2, bs)
    np.testing.assert_allclose(x, y1 + 2 * y2, atol=1e-12)


def test_zero_flow_identity_bit_exact():
    src = np.random.default_rng(3).random((16, 20, 3))
    assert np.array_equal(ipiw.apply_flow(src, np.zeros((16, 20, 2))), src)


def test_constant_flow_translates_step_edge():
    H, W = 8, 16
    src = np.zeros((H, W, 3))
    src[:, 8:] = 1.0
    flow = np.zeros((H, W, 2))
    flow[..., 0] = 2 * 2.0 / (W - 1)  # +2 px in normalized units
    out = ipiw.apply_flow(src, flow)
    np.testing.assert_allclose(out[:, 2:12], src[:, 4:14], atol=1e-12)
    assert out[0, 5, 0] == pytest.approx(0.0, abs=1e-12) and out[0, 6, 0] == pytest.approx(1.0, abs=1e-12)


def test_flow_out_of_range_clamps_to_border():
    src = np.random.default_rng(1).random((6, 7, 3))
    out = ipiw.apply_flow(src, np.full((6, 7, 2), 10.0))
    np.testing.assert_allclose(out, np.broadcast_to(src[-1, -1], out.shape), atol=1e-12)


def test_torch_warp_matches_numpy():
    rng = np.random.default_rng(2)
    src = rng.random((10, 12, 3)).astype(np.float32)
    flow = rng.normal(0, 0.2, (10, 12, 2)).astype(np.float32)
    ref = ipiw.apply_flow(src, flow)
    t = ipiw.warp_t(torch.from_numpy(src).permute(2, 0, 1)[None], torch.from_numpy(flow).permute(2, 0, 1)[None])
    np.testing.assert_allclose(t[0].permute(1, 2, 0).numpy(), ref, atol=1e-5)


def test_apply_flow_shape_check():
    with pytest.raises(InvalidArgument):
        ipiw.apply_flow(np.zeros((4, 4, 3)), np.zeros((4, 5, 2)))


@pytest.fixture(scope="module")
def fresh_model():
    torch.manual_seed(0)
    return ipiw.WarpModel.build(RunConfig(warp_width=8))


def test_zero_code_gives_zero_flow_at_init(fresh_model):
    flow = ipiw.estimate_flow(np.zeros(128), np.random.default_rng(0).random((64, 64, 3)), fresh_model)
    assert flow.shape == (64, 64, 2) and not flow.any()


def test_motion_code_contract(fresh_model):
    kp = np.random.default_rng(0).uniform(10, 50, (32, 2))
    a, b = rasterize(kp), rasterize(kp + 1.5)
    c1 = ipiw.motion_encode(a, b, fresh_model)
    assert c1.shape == (128,) and np.isfinite(c1).all()
    assert np.array_equal(c1, ipiw.motion_encode(a, b, fresh_model))
    with pytest.raises(InvalidArgument):
        ipiw.motion_encode(a.image, np.zeros((32, 32, 3)), fresh_model)


def test_warp_interval_contract(fresh_model):
    assert len(ipiw.warp_interval([], [], [], fresh_model)) == 0
    with pytest.raises(InvalidArgument):
        ipiw.warp_interval(np.zeros((2, 64, 64, 3)), np.zeros((2, 64, 64, 3)), np.zeros((1, 64, 64, 3)), fresh_model)
    frames = np.random.default_rng(0).random((3, 64, 64, 3)).astype(np.float32)
    out = ipiw.warp_interval(frames, np.zeros_like(frames), np.zeros_like(frames), fresh_model)
    # untrained flow head is zero: grid_sample at exact pixel centres
    np.testing.assert_allclose(out, frames, atol=1e-5)


def test_pair_sampler(rng):
    class C:
        def __len__(self):
            return 30

    cfg = RunConfig()
    for ci, a, b, lam, t in ipiw.sample_pairs([C(), C()], 500, cfg, rng):
        assert 0 <= a <= b < 30 and 0 <= t < 30 and 0 <= lam < 1
        if a == b:
            assert lam == 0.0 and abs(t - a) <= cfg.max_pair_offset
        else:
            assert a < t < b and lam == pytest.approx((t - a) / (b - a))
