import numpy as np
import pytest

from ov3dis.bitset import SuperpointSet
from ov3dis.scene import CameraFrame


@pytest.fixture
def identity_camera():
    """fx=fy=100, cx=cy=50, identity pose, 100x100, all-invalid depth."""
    def make(depth=None):
        d = np.zeros((100, 100), dtype=np.float32) if depth is None else depth
        return CameraFrame(
            frame_id=0,
            intrinsics=np.array([[100.0, 0, 50], [0, 100.0, 50], [0, 0, 1]]),
            extrinsics=np.eye(4),
            width=100, height=100, depth=d,
        )
    return make


def sp(width, ids):
    return SuperpointSet.from_ids(width, list(ids))


@pytest.fixture
def make_set():
    return sp
