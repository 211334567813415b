"""3D proposals: multi-view consensus refinement, the iterative merge loop,
and one-pass inclusion removal.

The merge loop follows a fixed discipline: build a strictly upper-triangular
IoU cost matrix, scan it row-major with a visited map, merge each
above-threshold column into its row (union masks, concatenate tracklets,
refine immediately), and repeat the whole scan until no entry exceeds the
threshold. The cost matrix is only rebuilt between scans.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .bitset import SuperpointSet
from .errors import StructureError
from .scene import SuperpointPartition
from .tracking import Tracklet

SOURCE_IMAGE = "image"
SOURCE_POINTCLOUD = "pointcloud"


@dataclass
class Proposal3D:
    """A 3D instance mask over the scene's points.

    Image-based proposals carry their superpoint set and tracklet; their
    point mask is exactly the expansion of the superpoint set. Point-cloud
    proposals are raw point masks.
    """

    proposal_id: int
    point_mask: np.ndarray
    source: str
    superpoints: SuperpointSet | None = None
    tracklet: Tracklet | None = None

    @property
    def point_count(self) -> int:
        return int(np.count_nonzero(self.point_mask))


def tracklet_to_proposal(t: Tracklet, partition: SuperpointPartition,
                         proposal_id: int) -> Proposal3D:
    """Aggregate a tracklet: the union of its observations' supports."""
    if not t.observations:
        raise StructureError("cannot aggregate an empty tracklet")
    superpoints = t.union_support
    return Proposal3D(
        proposal_id=proposal_id,
        point_mask=partition.expand(superpoints.to_bool()),
        source=SOURCE_IMAGE,
        superpoints=superpoints,
        tracklet=t,
    )


def refine_proposal(p: Proposal3D, t: Tracklet, tau_ref: float,
                    partition: SuperpointPartition) -> Proposal3D:
    """Drop superpoints whose multi-view consensus rate falls below
    ``tau_ref``; superpoints never visible in any tracked frame are kept
    (they were never judged). May return an empty proposal; the caller
    drops those."""
    if p.superpoints is None:
        raise StructureError("only image-based proposals can be refined")
    judged = t.visible_count > 0
    rate_ok = np.ones(t.n_superpoints, dtype=bool)
    rate_ok[judged] = (
        t.support_count[judged].astype(np.float64)
        / t.visible_count[judged].astype(np.float64)
    ) >= tau_ref
    keep = p.superpoints.to_bool() & rate_ok
    superpoints = SuperpointSet.from_bool(keep)
    return replace(
        p,
        point_mask=partition.expand(keep),
        superpoints=superpoints,
        tracklet=t,
    )


def point_iou(a: Proposal3D, b: Proposal3D) -> float:
    if a.point_mask.shape != b.point_mask.shape:
        raise StructureError("proposals live on different point clouds")
    inter = int(np.count_nonzero(a.point_mask & b.point_mask))
    union = int(np.count_nonzero(a.point_mask | b.point_mask))
    if union == 0:
        return 0.0
    return float(inter) / float(union)


def _pack_rows(masks: list[np.ndarray]) -> np.ndarray:
    width = masks[0].shape[0]
    if any(m.shape != (width,) for m in masks):
        raise StructureError("proposal masks live on different point clouds")
    padded_words = (width + 63) // 64
    padded = np.zeros((len(masks), padded_words * 64), dtype=bool)
    for i, m in enumerate(masks):
        padded[i, :width] = m
    packed = np.packbits(padded.reshape(len(masks), -1, 8)[:, :, ::-1], axis=2)
    return np.ascontiguousarray(packed.reshape(len(masks), -1).view(np.uint64))


def _intersections(proposals: list[Proposal3D]) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise intersection counts and per-proposal point counts."""
    rows = _pack_rows([p.point_mask for p in proposals])
    inter = _kernels.pairwise_intersections(rows)
    return inter, np.diagonal(inter).copy()


def merge_cost_matrix(proposals: list[Proposal3D]) -> np.ndarray:
    """Strictly upper-triangular pairwise point IoU."""
    k = len(proposals)
    if k == 0:
        return np.zeros((0, 0), dtype=np.float64)
    inter, counts = _intersections(proposals)
    union = counts[:, None] + counts[None, :] - inter
    cost = np.zeros((k, k), dtype=np.float64)
    nz = union > 0
    cost[nz] = inter[nz].astype(np.float64) / union[nz].astype(np.float64)
    return np.triu(cost, k=1)


def merge_loop(proposals: list[Proposal3D], tau_merge: float, tau_ref: float,
               partition: SuperpointPartition,
               refinement_enabled: bool = True,
               trace: list | None = None) -> list[Proposal3D]:
    """Iteratively merge overlapping proposals (point-cloud proposals never
    enter). Each merge immediately unions the tracklets and, when enabled,
    refines the merged proposal. Terminates because every scan with a
    qualifying pair performs at least one merge, strictly shrinking K.

    ``trace``, when given, collects ("merge", outer_iteration, id_into,
    id_merged) events for conformance tests.
    """
    props = list(proposals)
    for p in props:
        if p.source != SOURCE_IMAGE or p.tracklet is None:
            raise StructureError("merge loop expects image-based proposals with tracklets")

    outer = 0
    cost = merge_cost_matrix(props)
    while cost.size and np.any(cost > tau_merge):
        outer += 1
        k = len(props)
        visited = [False] * k
        valid = [True] * k
        for r in range(k):
            if visited[r]:
                continue
            for c in range(k):
                if r == c or visited[c] or cost[r, c] <= tau_merge:
                    continue
                if trace is not None:
                    trace.append(("merge", outer, props[r].proposal_id,
                                  props[c].proposal_id))
                merged_tracklet = Tracklet.merged(
                    props[r].tracklet, props[c].tracklet, props[r].tracklet.tracklet_id
                )
                merged_sp = props[r].superpoints | props[c].superpoints
                merged = Proposal3D(
                    proposal_id=props[r].proposal_id,
                    point_mask=partition.expand(merged_sp.to_bool()),
                    source=SOURCE_IMAGE,
                    superpoints=merged_sp,
                    tracklet=merged_tracklet,
                )
                if refinement_enabled:
                    merged = refine_proposal(merged, merged_tracklet, tau_ref, partition)
                props[r] = merged
                valid[c] = False
                visited[c] = True
            visited[r] = True
        props = [props[i] for i in range(k) if valid[i]]
        cost = merge_cost_matrix(props)
    return [p for p in props if p.point_count > 0]


def inclusion_removal(proposals: list[Proposal3D], tau_incl: float) -> list[Proposal3D]:
    """Remove proposals mostly contained in another, judged once on the
    original set. Identical pairs keep the lower proposal id."""
    k = len(proposals)
    if k <= 1:
        return list(proposals)
    inter, counts = _intersections(proposals)
    keep = []
    for r in range(k):
        removed = False
        for c in range(k):
            if c == r or counts[r] == 0:
                continue
            incl = float(inter[r, c]) / float(counts[r])
            if incl < tau_incl:
                continue
            identical = inter[r, c] == counts[r] == counts[c]
            if identical and proposals[r].proposal_id < proposals[c].proposal_id:
                continue
            removed = True
            break
        if not removed:
            keep.append(proposals[r])
    return keep
