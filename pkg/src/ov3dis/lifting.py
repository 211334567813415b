"""Lift 2D instances to superpoint sets via the two visibility-ratio gates.

A superpoint enters a frame's visible set when the fraction of its member
points passing the depth test exceeds ``tau_img`` (strictly). It enters an
instance's support set when, additionally, the fraction of its *visible*
member points whose pixels fall inside the instance mask exceeds
``tau_inst`` (strictly). Superpoints with no visible points are excluded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bitset import SuperpointSet
from .grounding import Instance2D
from .scene import FrameProjection, SuperpointPartition, VisibilityStats, superpoint_visibility


@dataclass
class LiftedInstance:
    """One 2D instance lifted to superpoints; ``frame_visible`` is the
    frame-level visible set, shared by all instances of the frame."""

    frame_id: int
    instance_index: int
    support: SuperpointSet
    frame_visible: SuperpointSet


def frame_visible_set(stats: VisibilityStats, tau_img: float) -> SuperpointSet:
    ratio = stats.visible_count.astype(np.float64) / stats.total_count.astype(np.float64)
    return SuperpointSet.from_bool(ratio > tau_img)


def instance_support_set(instance: Instance2D, projection: FrameProjection,
                         partition: SuperpointPartition, frame_visible: SuperpointSet,
                         stats: VisibilityStats, tau_inst: float) -> SuperpointSet:
    vis_idx = np.flatnonzero(projection.visible)
    if vis_idx.size == 0:
        return SuperpointSet(partition.n_superpoints)
    inside = instance.mask[projection.v[vis_idx], projection.u[vis_idx]]
    in_counts = np.bincount(
        partition.labels[vis_idx[inside]], minlength=partition.n_superpoints
    ).astype(np.int64)
    member = np.zeros(partition.n_superpoints, dtype=bool)
    judged = stats.visible_count > 0
    member[judged] = (
        in_counts[judged].astype(np.float64)
        / stats.visible_count[judged].astype(np.float64)
    ) > tau_inst
    return SuperpointSet.from_bool(member) & frame_visible


def lift_frame(instances: list[Instance2D], projection: FrameProjection,
               partition: SuperpointPartition, tau_img: float,
               tau_inst: float) -> tuple[SuperpointSet, list[LiftedInstance]]:
    """Lift every instance of one frame; returns (frame visible set, lifted
    instances with nonempty support)."""
    stats = superpoint_visibility(projection, partition)
    visible = frame_visible_set(stats, tau_img)
    lifted = []
    for inst in instances:
        support = instance_support_set(inst, projection, partition, visible, stats, tau_inst)
        if support:
            lifted.append(
                LiftedInstance(
                    frame_id=projection.frame_id,
                    instance_index=inst.index,
                    support=support,
                    frame_visible=visible,
                )
            )
    return visible, lifted
