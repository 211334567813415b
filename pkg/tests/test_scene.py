"""Projection and depth-visibility against a hand-rolled per-point oracle.

The oracle multiplies matrices per point with plain Python floats and scans
the depth map directly; visibility flags must match bit for bit.
"""

import math

import numpy as np
import pytest

from ov3dis.errors import StructureError
from ov3dis.scene import (
    CameraFrame, PointCloud, SuperpointPartition, project_points,
    superpoint_visibility,
)


def oracle_project(positions, frame, delta):
    """Independent per-point projection: explicit matrix products, floor
    sampling, absolute depth test."""
    ext = frame.extrinsics
    fx, fy = frame.intrinsics[0, 0], frame.intrinsics[1, 1]
    cx, cy = frame.intrinsics[0, 2], frame.intrinsics[1, 2]
    out = []
    for i in range(positions.shape[0]):
        p = [float(positions[i, 0]), float(positions[i, 1]), float(positions[i, 2])]
        cam = [
            sum(float(ext[r, c]) * p[c] for c in range(3)) + float(ext[r, 3])
            for r in range(3)
        ]
        zc = cam[2]
        visible = False
        if zc > 0.0:
            uf = fx * (cam[0] / zc) + cx
            vf = fy * (cam[1] / zc) + cy
            if abs(uf) < 2**31 and abs(vf) < 2**31:
                u, v = math.floor(uf), math.floor(vf)
                if 0 <= u < frame.width and 0 <= v < frame.height:
                    d = float(frame.depth[v, u])
                    if d > 0.0 and abs(zc - d) <= delta:
                        visible = True
        out.append(visible)
    return np.array(out)


def test_optical_axis_identity_case(identity_camera):
    depth = np.zeros((100, 100), dtype=np.float32)
    depth[50, 50] = 1.0
    frame = identity_camera(depth)
    proj = project_points(PointCloud(np.array([[0.0, 0.0, 1.0]])), frame)
    assert proj.u[0] == 50 and proj.v[0] == 50
    assert proj.z[0] == 1.0
    assert proj.visible[0]


def test_point_behind_camera_invisible(identity_camera):
    frame = identity_camera(np.full((100, 100), 1.0, dtype=np.float32))
    proj = project_points(PointCloud(np.array([[0.0, 0.0, -1.0]])), frame)
    assert not proj.visible[0]
    assert proj.z[0] == -1.0


def test_border_pixel_is_outside(identity_camera):
    # u = fx * x/z + cx = 100 for x/z = 0.5: exactly the half-open border
    depth = np.full((100, 100), 2.0, dtype=np.float32)
    frame = identity_camera(depth)
    proj = project_points(PointCloud(np.array([[1.0, 0.0, 2.0]])), frame)
    assert proj.u[0] == 100
    assert not proj.visible[0]


def test_invalid_depth_pixel_is_invisible(identity_camera):
    frame = identity_camera(np.zeros((100, 100), dtype=np.float32))
    proj = project_points(PointCloud(np.array([[0.0, 0.0, 1.0]])), frame)
    assert not proj.visible[0]


def _random_scene(seed, n=200):
    rng = np.random.default_rng(seed)
    positions = rng.uniform(-2, 2, size=(n, 3))
    angle = rng.uniform(0, 2 * np.pi)
    rot = np.array([
        [np.cos(angle), -np.sin(angle), 0],
        [np.sin(angle), np.cos(angle), 0],
        [0, 0, 1.0],
    ])
    ext = np.eye(4)
    ext[:3, :3] = rot
    ext[:3, 3] = rng.uniform(-0.5, 0.5, size=3) + [0, 0, 3.0]
    depth = rng.uniform(0.5, 5.0, size=(60, 80)).astype(np.float32)
    depth[rng.random((60, 80)) < 0.2] = 0.0
    frame = CameraFrame(
        frame_id=1,
        intrinsics=np.array([[70.0, 0, 40], [0, 70.0, 30], [0, 0, 1]]),
        extrinsics=ext, width=80, height=60, depth=depth,
    )
    return PointCloud(positions), frame


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_visibility_matches_bruteforce_oracle(seed):
    cloud, frame = _random_scene(seed)
    for delta in (0.05, 0.5, 2.0):
        proj = project_points(cloud, frame, delta)
        expected = oracle_project(cloud.positions, frame, delta)
        assert np.array_equal(proj.visible, expected)


def test_shrinking_delta_never_adds_visibility():
    cloud, frame = _random_scene(9)
    deltas = [2.0, 1.0, 0.5, 0.1, 0.0]
    prev = None
    for delta in deltas:
        vis = project_points(cloud, frame, delta).visible
        if prev is not None:
            assert not np.any(vis & ~prev), "smaller delta made a point visible"
        prev = vis


def test_projection_deterministic():
    cloud, frame = _random_scene(4)
    a = project_points(cloud, frame)
    b = project_points(cloud, frame)
    assert np.array_equal(a.u, b.u) and np.array_equal(a.v, b.v)
    assert np.array_equal(a.z, b.z) and np.array_equal(a.visible, b.visible)


def test_superpoint_visibility_counts(identity_camera):
    # 10 points on the axis at z=1 (visible), 10 behind the camera
    depth = np.zeros((100, 100), dtype=np.float32)
    depth[50, 50] = 1.0
    frame = identity_camera(depth)
    pts = np.concatenate([
        np.tile([[0.0, 0.0, 1.0]], (10, 1)),
        np.tile([[0.0, 0.0, -1.0]], (10, 1)),
    ])
    labels = np.array([0] * 10 + [1] * 10, dtype=np.int32)
    partition = SuperpointPartition(labels, 2)
    proj = project_points(PointCloud(pts), frame)
    stats = superpoint_visibility(proj, partition)
    assert stats.visible_count.tolist() == [10, 0]
    assert stats.total_count.tolist() == [10, 10]


def test_half_occluded_superpoint_matches_enumeration():
    # far wall points behind a solid near plate covering half their span
    rng = np.random.default_rng(5)
    far = np.column_stack([
        rng.uniform(-0.4, 0.4, 60), rng.uniform(-0.4, 0.4, 60), np.full(60, 2.0)])
    near = np.column_stack([
        rng.uniform(0.0, 0.4, 40), rng.uniform(-0.4, 0.4, 40), np.full(40, 1.0)])
    positions = np.vstack([far, near])
    depth = np.full((100, 100), 2.0, dtype=np.float32)  # far wall plane
    depth[10:90, 50:90] = 1.0                           # near plate footprint
    intr = np.array([[100.0, 0, 50], [0, 100.0, 50], [0, 0, 1]])
    frame = CameraFrame(frame_id=0, intrinsics=intr, extrinsics=np.eye(4),
                        width=100, height=100, depth=depth)
    cloud = PointCloud(positions)
    partition = SuperpointPartition(
        np.array([0] * 60 + [1] * 40, dtype=np.int32), 2)
    proj = project_points(cloud, frame, delta_depth=1e-9)
    stats = superpoint_visibility(proj, partition)
    expected = oracle_project(positions, frame, 1e-9)
    assert stats.visible_count[0] == expected[:60].sum()
    assert stats.visible_count[1] == expected[60:].sum()
    assert 0 < stats.visible_count[0] < 60  # genuinely half-occluded


def test_visibility_stats_invariants():
    cloud, frame = _random_scene(11)
    labels = (np.arange(cloud.n) % 7).astype(np.int32)
    partition = SuperpointPartition(labels, 7)
    stats = superpoint_visibility(project_points(cloud, frame), partition)
    assert np.all(stats.visible_count <= stats.total_count)
    assert stats.total_count.sum() == cloud.n


def test_partition_projection_width_mismatch():
    cloud, frame = _random_scene(2)
    partition = SuperpointPartition(np.zeros(10, dtype=np.int32), 1)
    with pytest.raises(StructureError):
        superpoint_visibility(project_points(cloud, frame), partition)


def test_camera_validation():
    bad_rot = np.eye(4)
    bad_rot[0, 1] = 0.5
    with pytest.raises(StructureError):
        CameraFrame(0, np.eye(3) * [100, 100, 1], bad_rot, 10, 10,
                    np.zeros((10, 10), dtype=np.float32))
    with pytest.raises(StructureError):
        CameraFrame(0, np.array([[0.0, 0, 5], [0, 100, 5], [0, 0, 1]]),
                    np.eye(4), 10, 10, np.zeros((10, 10), dtype=np.float32))
    with pytest.raises(StructureError):
        CameraFrame(0, np.array([[100.0, 0, 5], [0, 100, 5], [0, 0, 1]]),
                    np.eye(4), 10, 10, np.full((10, 10), -1.0, dtype=np.float32))
