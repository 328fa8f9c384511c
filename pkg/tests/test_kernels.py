"""The compiled kernels and their numpy fallbacks must agree."""

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cascade_edit import _kernels_py as py
from cascade_edit import kernels

cy = pytest.importorskip("cascade_edit._kernels")

finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_render_ellipses_agree(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 8))
    ell = np.column_stack([rng.uniform(-5, 40, n), rng.uniform(-5, 40, n), rng.uniform(0.5, 10, n),
                           rng.uniform(0.5, 10, n), rng.uniform(0, 6.3, n), rng.random((n, 3))])
    a, b = np.zeros((32, 32, 3)), np.zeros((32, 32, 3))
    py.render_ellipses(a, ell)
    cy.render_ellipses(b, np.ascontiguousarray(ell))
    np.testing.assert_allclose(a, b, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_splat_agree(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-4, 36, (int(rng.integers(1, 12)), 2))
    ch = rng.integers(0, 3, len(pts)).astype(np.int64)
    a, b = np.zeros((32, 32, 3)), np.zeros((32, 32, 3))
    py.splat_gaussians(a, pts, ch, 0.8, 2.4)
    cy.splat_gaussians(b, pts, ch, 0.8, 2.4)
    np.testing.assert_allclose(a, b, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 20))
def test_warp_agree(seed, scale):
    rng = np.random.default_rng(seed)
    src = rng.random((12, 17, 3))
    flow = rng.normal(0, scale, (12, 17, 2))
    np.testing.assert_allclose(py.warp_bilinear(src, flow), cy.warp_bilinear(src, flow), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 9))
def test_box_mean_agree(seed, win):
    img = np.random.default_rng(seed).random((10, 13))
    a, b = py.box_mean(img, win), cy.box_mean(img, win)
    assert a.shape == b.shape == (11 - win, 14 - win)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_box_mean_matches_loop():
    img = np.arange(30, dtype=float).reshape(5, 6)
    ref = np.array([[img[i:i + 3, j:j + 3].mean() for j in range(4)] for i in range(3)])
    np.testing.assert_allclose(kernels.box_mean(img, 3), ref, atol=1e-12)


def test_zero_flow_is_identity_both_backends():
    src = np.random.default_rng(0).random((9, 11, 3))
    for mod in (py, cy):
        assert np.array_equal(mod.warp_bilinear(src, np.zeros((9, 11, 2))), src)


def test_backend_env_override():
    env = dict(os.environ, CASCADE_EDIT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from cascade_edit import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    if os.environ.get("CASCADE_EDIT_PURE_PYTHON", "") in ("", "0"):
        assert kernels.BACKEND == "cython"
