"""Brute-force point-level reference pipeline.

Re-runs lifting, tracking, refinement, merging, and inclusion removal with
plain Python loops, sets of point indices, and point-level IoU: every
superpoint is a single point, every set operation is on ``frozenset``.
No bitsets, no kernels -- this is the independent oracle the superpoint
pipeline is checked against on singleton partitions.

Mask parsing and 2D overlap removal are shared plumbing (they are verified
against their own pixel-level oracles elsewhere); everything downstream of
the lifted masks is reimplemented here.
"""

from __future__ import annotations

import math

from . import grounding
from .config import PipelineConfig
from .errors import OracleSizeError
from .tracking import FRAME_WISE, TRACKLET_WISE

MAX_ORACLE_POINTS = 2000


class _OracleTracklet:
    def __init__(self, tid):
        self.tid = tid
        self.observations = []  # (support frozenset, visible frozenset)

    def add(self, support, visible):
        self.observations.append((support, visible))

    def union_support(self):
        out = set()
        for s, _ in self.observations:
            out |= s
        return frozenset(out)

    def union_visible(self):
        out = set()
        for _, v in self.observations:
            out |= v
        return frozenset(out)

    def counters(self):
        support_count: dict[int, int] = {}
        visible_count: dict[int, int] = {}
        for s, v in self.observations:
            for p in s:
                support_count[p] = support_count.get(p, 0) + 1
            for p in v:
                visible_count[p] = visible_count.get(p, 0) + 1
        return support_count, visible_count


def _point_siou(a, b, vis_a, vis_b):
    covis = vis_a & vis_b
    denom = len((a | b) & covis)
    if denom == 0:
        return 0.0
    return float(len(a & b)) / float(denom)


def _point_iou(a, b):
    union = len(a | b)
    if union == 0:
        return 0.0
    return float(len(a & b)) / float(union)


def _refine(mask, tracklet, tau_ref):
    support_count, visible_count = tracklet.counters()
    kept = set()
    for p in mask:
        vis = visible_count.get(p, 0)
        if vis == 0:
            kept.add(p)
        elif float(support_count.get(p, 0)) / float(vis) >= tau_ref:
            kept.add(p)
    return frozenset(kept)


def pointlevel_pipeline_oracle(scene, config: PipelineConfig) -> list[frozenset]:
    """Run the whole proposal-generation pipeline at point level.

    ``scene`` is a SynthScene (or anything with .cloud, .frames,
    .detections). Refuses clouds above MAX_ORACLE_POINTS.
    """
    n = scene.cloud.n
    if n > MAX_ORACLE_POINTS:
        raise OracleSizeError(f"oracle limited to {MAX_ORACLE_POINTS} points, got {n}")
    positions = scene.cloud.positions
    frames = sorted(scene.frames, key=lambda f: f.frame_id)
    frames = frames[:: config.frame_stride]

    # ---- per-frame lifting --------------------------------------------
    lifted_frames = []
    for frame in frames:
        rot = frame.extrinsics[:3, :3]
        trans = frame.extrinsics[:3, 3]
        fx, fy = float(frame.intrinsics[0, 0]), float(frame.intrinsics[1, 1])
        cx, cy = float(frame.intrinsics[0, 2]), float(frame.intrinsics[1, 2])
        r00, r01, r02 = float(rot[0, 0]), float(rot[0, 1]), float(rot[0, 2])
        r10, r11, r12 = float(rot[1, 0]), float(rot[1, 1]), float(rot[1, 2])
        r20, r21, r22 = float(rot[2, 0]), float(rot[2, 1]), float(rot[2, 2])
        t0, t1, t2 = float(trans[0]), float(trans[1]), float(trans[2])

        pixel = {}
        visible = set()
        for i in range(n):
            x, y, z = float(positions[i, 0]), float(positions[i, 1]), float(positions[i, 2])
            xc = r00 * x + r01 * y + r02 * z + t0
            yc = r10 * x + r11 * y + r12 * z + t1
            zc = r20 * x + r21 * y + r22 * z + t2
            if zc <= 0.0:
                continue
            uf = fx * (xc / zc) + cx
            vf = fy * (yc / zc) + cy
            if not (abs(uf) < 2**31 and abs(vf) < 2**31):
                continue
            u, v = math.floor(uf), math.floor(vf)
            if not (0 <= u < frame.width and 0 <= v < frame.height):
                continue
            d = float(frame.depth[v, u])
            if d > 0.0 and abs(zc - d) <= config.delta_depth:
                pixel[i] = (u, v)
                visible.add(i)

        s_t = frozenset(p for p in range(n)
                        if (1.0 if p in visible else 0.0) > config.tau_img)

        instances, _ = grounding.parse_detections(
            scene.detections[frame.frame_id], frame.frame_id
        )
        if config.overlap_removal_enabled:
            instances = grounding.remove_overlaps(instances)

        lifted = []
        for inst in instances:
            support = set()
            for p in s_t:
                if p not in visible:
                    continue
                u, v = pixel[p]
                c = 1.0 if inst.mask[v, u] else 0.0
                if c > config.tau_inst:
                    support.add(p)
            if support:
                lifted.append((frozenset(support), s_t))
        lifted_frames.append(lifted)

    # ---- tracking ------------------------------------------------------
    tracklets: list[_OracleTracklet] = []
    for lifted in lifted_frames:
        decisions = []
        for support, s_t in lifted:
            best, best_tid = 0.0, None
            if config.match_mode == FRAME_WISE:
                scores = [
                    (_point_siou(support, ts, s_t, tv), t.tid, pos)
                    for t in tracklets
                    for pos, (ts, tv) in enumerate(t.observations)
                ]
                if scores:
                    best = max(s[0] for s in scores)
                    best_tid = min((s[1], s[2]) for s in scores if s[0] == best)[0]
            elif config.match_mode == TRACKLET_WISE:
                for t in tracklets:  # creation order == ascending tid
                    val = _point_siou(support, t.union_support(), s_t, t.union_visible())
                    if val > best:
                        best, best_tid = val, t.tid
            decisions.append(best_tid if best > config.tau_tracking else None)
        for (support, s_t), tid in zip(lifted, decisions):
            if tid is None:
                t = _OracleTracklet(len(tracklets))
                tracklets.append(t)
            else:
                t = tracklets[tid]
            t.add(support, s_t)

    # ---- aggregation + refinement ---------------------------------------
    proposals = []  # (proposal_id, frozenset mask, tracklet)
    for t in tracklets:
        mask = t.union_support()
        if config.refinement_enabled:
            mask = _refine(mask, t, config.tau_ref)
        if mask:
            proposals.append([t.tid, mask, t])

    # ---- iterative merge + one-pass inclusion removal -------------------
    if config.merging_enabled:
        def cost(props):
            k = len(props)
            c = [[0.0] * k for _ in range(k)]
            for r in range(k):
                for col in range(r + 1, k):
                    c[r][col] = _point_iou(props[r][1], props[col][1])
            return c

        c = cost(proposals)
        while any(c[r][col] > config.tau_merge
                  for r in range(len(proposals)) for col in range(len(proposals))):
            k = len(proposals)
            visited = [False] * k
            valid = [True] * k
            for r in range(k):
                if visited[r]:
                    continue
                for col in range(k):
                    if r == col or visited[col] or c[r][col] <= config.tau_merge:
                        continue
                    merged_t = _OracleTracklet(proposals[r][2].tid)
                    for obs in proposals[r][2].observations + proposals[col][2].observations:
                        merged_t.add(*obs)
                    mask = proposals[r][1] | proposals[col][1]
                    if config.refinement_enabled:
                        mask = _refine(mask, merged_t, config.tau_ref)
                    proposals[r] = [proposals[r][0], mask, merged_t]
                    valid[col] = False
                    visited[col] = True
                visited[r] = True
            proposals = [proposals[i] for i in range(k) if valid[i]]
            c = cost(proposals)
        proposals = [p for p in proposals if p[1]]

        # inclusion removal, judged on the original (pre-removal) set
        kept = []
        for r, (rid, rmask, _) in enumerate(proposals):
            removed = False
            for col, (cid, cmask, _) in enumerate(proposals):
                if col == r or not rmask:
                    continue
                incl = float(len(rmask & cmask)) / float(len(rmask))
                if incl < config.tau_incl:
                    continue
                if rmask == cmask and rid < cid:
                    continue
                removed = True
                break
            if not removed:
                kept.append(proposals[r])
        proposals = kept

    return [p[1] for p in proposals]
