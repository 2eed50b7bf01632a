"""Unsupervised 4D LiDAR instance segmentation toolkit.

Pseudo-labels from spatio-temporal clustering, copy-paste sequence
synthesis, flexible pair sampling, a scaled matching loss and 4D
association metrics. Hot loops run through numba when it is available;
set ``LIDAR4D_BACKEND=numpy`` to force the pure numpy path.
"""

from ._backend import get_backend, set_backend
from .config import PipelineConfig, load_config
from .core import Pose, Scan, Sequence

__version__ = "0.1.0"

__all__ = ["Pose", "Scan", "Sequence", "PipelineConfig", "load_config", "get_backend", "set_backend"]
