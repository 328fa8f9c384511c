"""Audio-driven talking-head video editing on a synthetic face corpus.

Two cascaded latent diffusion stages: the first synthesizes landmark images
for the edited interval from speech features and the flanking anchor frames,
the second turns interpolated-and-warped frames into refined video frames.
"""

from .errors import CascadeEditError, DataIOError, DependencyError, InvalidArgument, TrainingDivergence
from .kernels import BACKEND
from .plan import EditPlan, EditSpec, plan_edit

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CascadeEditError", "DataIOError", "DependencyError", "EditPlan", "EditSpec",
    "InvalidArgument", "TrainingDivergence", "plan_edit", "__version__",
]
