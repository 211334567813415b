"""Open-vocabulary 3D instance segmentation over superpoints.

Turns posed RGB-D frames, a superpoint-partitioned point cloud, per-frame
2D instance masks, and embedding vectors into 3D instance segmentations:
overlap removal, 2D-to-3D lifting, tracking-based aggregation, consensus
refinement, iterative merge/removal, and similarity-based classification
with standardized-maximum-similarity filtering. Includes the evaluation
harness and a deterministic synthetic scene generator.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .bitset import SuperpointSet
from .config import PipelineConfig
from .scene import CameraFrame, PointCloud, SuperpointPartition, project_points

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "SuperpointSet",
    "PipelineConfig",
    "CameraFrame",
    "PointCloud",
    "SuperpointPartition",
    "project_points",
    "__version__",
]
