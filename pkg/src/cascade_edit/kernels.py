"""Backend selection for the per-pixel kernels.

The compiled Cython module is used when it was built; otherwise the numpy
fallback is imported. Setting ``CASCADE_EDIT_PURE_PYTHON=1`` forces the
fallback even when the extension is available.
"""

import os

if os.environ.get("CASCADE_EDIT_PURE_PYTHON", "") not in ("", "0"):
    from . import _kernels_py as _backend
    BACKEND = "python"
else:
    try:
        from . import _kernels as _backend  # type: ignore[attr-defined]
        BACKEND = "cython"
    except ImportError:
        from . import _kernels_py as _backend
        BACKEND = "python"

render_ellipses = _backend.render_ellipses
splat_gaussians = _backend.splat_gaussians
warp_bilinear = _backend.warp_bilinear
box_mean = _backend.box_mean

__all__ = ["BACKEND", "render_ellipses", "splat_gaussians", "warp_bilinear", "box_mean"]
