"""Visibility-ratio lifting: threshold strictness, set containment, and a
per-point enumeration oracle on a constructed frame."""

import numpy as np
import pytest

from ov3dis.grounding import Instance2D
from ov3dis.lifting import frame_visible_set, instance_support_set, lift_frame
from ov3dis.scene import (
    CameraFrame, PointCloud, SuperpointPartition, VisibilityStats,
    project_points, superpoint_visibility,
)


def stats(visible, total):
    return VisibilityStats(np.array(visible, dtype=np.int64),
                           np.array(total, dtype=np.int64))


class TestFrameVisibleSet:
    def test_below_threshold_excluded(self):
        # ratio 0.05 at tau_img = 0.1 (paper default): excluded
        s = frame_visible_set(stats([1], [20]), 0.1)
        assert s.count() == 0

    def test_fully_visible_included(self):
        s = frame_visible_set(stats([20], [20]), 0.99)
        assert list(s.to_ids()) == [0]

    def test_boundary_equality_excluded(self):
        # ratio exactly 0.1 at tau_img = 0.1: strict inequality excludes
        s = frame_visible_set(stats([1], [10]), 0.1)
        assert s.count() == 0

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(2)
        total = rng.integers(1, 30, size=50)
        visible = (rng.random(50) * total).astype(np.int64)
        prev = None
        for tau in (0.0, 0.2, 0.5, 0.9):
            s = set(frame_visible_set(stats(visible, total), tau).to_ids())
            if prev is not None:
                assert s <= prev
            prev = s


def _straddle_fixture():
    """Two 10-point superpoints at z=1; a mask covering x >= 0 splits one
    of them down the middle."""
    xs = np.concatenate([np.linspace(-0.45, -0.05, 10),   # superpoint 0: left
                         np.linspace(-0.18, 0.18, 10)])   # superpoint 1: straddles
    pts = np.column_stack([xs, np.zeros(20), np.ones(20)])
    depth = np.full((100, 100), 1.0, dtype=np.float32)
    frame = CameraFrame(
        frame_id=0,
        intrinsics=np.array([[100.0, 0, 50], [0, 100.0, 50], [0, 0, 1]]),
        extrinsics=np.eye(4), width=100, height=100, depth=depth,
    )
    partition = SuperpointPartition(np.array([0] * 10 + [1] * 10, dtype=np.int32), 2)
    mask = np.zeros((100, 100), dtype=bool)
    mask[:, 50:] = True  # pixels u >= 50 <=> x >= 0
    inst = Instance2D(frame_id=0, index=0, mask=mask, area=int(mask.sum()))
    return PointCloud(pts), frame, partition, inst


class TestInstanceSupport:
    def test_fully_inside_mask_included(self):
        cloud, frame, partition, inst = _straddle_fixture()
        inst.mask[:] = True
        proj = project_points(cloud, frame)
        st = superpoint_visibility(proj, partition)
        visible = frame_visible_set(st, 0.1)
        support = instance_support_set(inst, proj, partition, visible, st, 0.3)
        assert set(support.to_ids()) == {0, 1}

    def test_straddling_matches_per_point_enumeration(self):
        cloud, frame, partition, inst = _straddle_fixture()
        proj = project_points(cloud, frame)
        st = superpoint_visibility(proj, partition)
        visible = frame_visible_set(st, 0.1)

        # oracle: count visible member pixels inside the mask per superpoint
        for tau_inst in (0.0, 0.3, 0.5, 0.9):
            expected = set()
            for s in range(2):
                members = np.flatnonzero(partition.labels == s)
                vis = [i for i in members if proj.visible[i]]
                inside = [i for i in vis if inst.mask[proj.v[i], proj.u[i]]]
                if vis and s in visible and len(inside) / len(vis) > tau_inst:
                    expected.add(s)
            support = instance_support_set(inst, proj, partition, visible, st, tau_inst)
            assert set(support.to_ids()) == expected

        # the straddling superpoint sits at c = 0.5: strict boundary check
        support = instance_support_set(inst, proj, partition, visible, st, 0.5)
        assert 1 not in support

    def test_boundary_ratio_excluded(self):
        # c exactly 0.3 at tau_inst = 0.3 must be excluded
        pts = np.column_stack([
            np.concatenate([np.full(3, 0.1), np.full(7, -0.1)]),
            np.zeros(10), np.ones(10)])
        depth = np.full((100, 100), 1.0, dtype=np.float32)
        frame = CameraFrame(
            frame_id=0,
            intrinsics=np.array([[100.0, 0, 50], [0, 100.0, 50], [0, 0, 1]]),
            extrinsics=np.eye(4), width=100, height=100, depth=depth)
        partition = SuperpointPartition(np.zeros(10, dtype=np.int32), 1)
        mask = np.zeros((100, 100), dtype=bool)
        mask[:, 51:] = True  # covers exactly the 3 points at x = 0.1
        inst = Instance2D(frame_id=0, index=0, mask=mask, area=int(mask.sum()))
        proj = project_points(PointCloud(pts), frame)
        st = superpoint_visibility(proj, partition)
        visible = frame_visible_set(st, 0.1)
        support = instance_support_set(inst, proj, partition, visible, st, 0.3)
        assert support.count() == 0
        support = instance_support_set(inst, proj, partition, visible, st, 0.29)
        assert support.count() == 1

    def test_support_subset_of_frame_visible(self):
        cloud, frame, partition, inst = _straddle_fixture()
        proj = project_points(cloud, frame)
        _, lifted = lift_frame([inst], proj, partition, 0.1, 0.0)
        for li in lifted:
            assert not (li.support - li.frame_visible)

    def test_zero_visible_superpoint_excluded(self):
        st = stats([0, 5], [5, 5])
        visible = frame_visible_set(st, -0.5)  # admits ratio-0 superpoints
        assert 0 in visible
        proj_visible = np.array([False] * 5 + [True] * 5)
        inst = Instance2D(frame_id=0, index=0,
                          mask=np.ones((10, 10), dtype=bool), area=100)
        from ov3dis.scene import FrameProjection
        proj = FrameProjection(
            frame_id=0,
            u=np.full(10, 2, dtype=np.int64), v=np.full(10, 2, dtype=np.int64),
            z=np.ones(10), visible=proj_visible)
        partition = SuperpointPartition(
            np.array([0] * 5 + [1] * 5, dtype=np.int32), 2)
        support = instance_support_set(inst, proj, partition, visible, st, 0.0)
        assert 0 not in support and 1 in support


def test_singleton_superpoints_equal_point_level():
    """With S = N and tau_inst = 0, support must be exactly the visible
    points whose pixels fall inside the mask."""
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(-0.4, 0.4, 50),
                           rng.uniform(-0.4, 0.4, 50),
                           np.ones(50)])
    depth = np.full((100, 100), 1.0, dtype=np.float32)
    frame = CameraFrame(
        frame_id=0,
        intrinsics=np.array([[100.0, 0, 50], [0, 100.0, 50], [0, 0, 1]]),
        extrinsics=np.eye(4), width=100, height=100, depth=depth)
    mask = np.zeros((100, 100), dtype=bool)
    mask[20:70, 30:80] = True
    inst = Instance2D(frame_id=0, index=0, mask=mask, area=int(mask.sum()))
    cloud = PointCloud(pts)
    partition = SuperpointPartition.singletons(50)
    proj = project_points(cloud, frame)
    st = superpoint_visibility(proj, partition)
    visible = frame_visible_set(st, 0.1)
    support = instance_support_set(inst, proj, partition, visible, st, 0.0)
    expected = {
        i for i in range(50)
        if proj.visible[i] and mask[proj.v[i], proj.u[i]]
    }
    assert set(map(int, support.to_ids())) == expected
