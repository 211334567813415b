"""Sequential tracklet association over frames via superpoint IoU.

Each new observation is compared against every tracked observation of every
tracklet (frame-wise mode) or against each tracklet's aggregated support
(tracklet-wise mode). The global best decides; a strict threshold gate
creates a new tracklet otherwise. Within one frame all observations match
against the tracklet state as of the previous frame, so same-frame
observations can join the same tracklet but never each other's.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .bitset import SuperpointSet
from .errors import StructureError
from .lifting import LiftedInstance

FRAME_WISE = "frame-wise"
TRACKLET_WISE = "tracklet-wise"


def siou(a: SuperpointSet, b: SuperpointSet,
         vis_a: SuperpointSet, vis_b: SuperpointSet) -> float:
    """|a n b| / |(a u b) n (vis_a n vis_b)|; 0 when the denominator is 0."""
    for s in (b, vis_a, vis_b):
        if s.width != a.width:
            raise StructureError("sIOU operands must share one bitset width")
    inter = (a & b).count()
    denom = ((a | b) & (vis_a & vis_b)).count()
    if denom == 0:
        return 0.0
    return float(inter) / float(denom)


class Tracklet:
    """A growing 3D instance hypothesis: matched observations plus
    per-superpoint support / visibility counters."""

    def __init__(self, tracklet_id: int, n_superpoints: int):
        self.tracklet_id = tracklet_id
        self.n_superpoints = n_superpoints
        self.observations: list[LiftedInstance] = []
        self.support_count = np.zeros(n_superpoints, dtype=np.int64)
        self.visible_count = np.zeros(n_superpoints, dtype=np.int64)
        self._union_support = SuperpointSet(n_superpoints)
        self._union_visible = SuperpointSet(n_superpoints)

    def add(self, obs: LiftedInstance) -> None:
        if obs.support.width != self.n_superpoints:
            raise StructureError("observation width does not match tracklet")
        self.observations.append(obs)
        self.support_count += obs.support.to_bool()
        self.visible_count += obs.frame_visible.to_bool()
        self._union_support = self._union_support | obs.support
        self._union_visible = self._union_visible | obs.frame_visible

    @property
    def union_support(self) -> SuperpointSet:
        return self._union_support

    @property
    def union_visible(self) -> SuperpointSet:
        return self._union_visible

    @classmethod
    def merged(cls, a: "Tracklet", b: "Tracklet", tracklet_id: int) -> "Tracklet":
        """Concatenate observation lists; counters come out exact because
        they are rebuilt through the same add path."""
        t = cls(tracklet_id, a.n_superpoints)
        for obs in a.observations + b.observations:
            t.add(obs)
        return t

    def __repr__(self):
        return (f"Tracklet(id={self.tracklet_id}, obs={len(self.observations)}, "
                f"support={self._union_support.count()})")


@dataclass
class MatchDecision:
    frame_id: int
    instance_index: int
    tracklet_id: int | None   # None -> new tracklet
    best_siou: float


class ObservationIndex:
    """Packed rows of all tracked observations for batched sIOU matching.

    Row storage doubles in capacity amortized; rows carry (tracklet_id,
    position-in-tracklet) so ties resolve to the lowest tracklet id, then
    the earliest observation.
    """

    def __init__(self, n_superpoints: int):
        self.n_superpoints = n_superpoints
        self._words = (n_superpoints + 63) // 64
        self._cap = 64
        self._size = 0
        self._support = np.zeros((self._cap, self._words), dtype=np.uint64)
        self._vis = np.zeros((self._cap, self._words), dtype=np.uint64)
        self._meta: list[tuple[int, int]] = []

    def add(self, obs: LiftedInstance, tracklet_id: int, obs_pos: int) -> None:
        if self._size == self._cap:
            self._cap *= 2
            for name in ("_support", "_vis"):
                old = getattr(self, name)
                grown = np.zeros((self._cap, self._words), dtype=np.uint64)
                grown[: self._size] = old[: self._size]
                setattr(self, name, grown)
        self._support[self._size] = obs.support.words
        self._vis[self._size] = obs.frame_visible.words
        self._meta.append((tracklet_id, obs_pos))
        self._size += 1

    def best_match(self, obs: LiftedInstance) -> tuple[int | None, float]:
        if self._size == 0:
            return None, 0.0
        vals = _kernels.batch_siou(
            obs.support.words, obs.frame_visible.words,
            self._support[: self._size], self._vis[: self._size],
        )
        best = float(vals.max())
        candidates = np.flatnonzero(vals == best)
        winner = min(candidates, key=lambda i: self._meta[i])
        return self._meta[winner][0], best


def match_observation(obs: LiftedInstance, tracklets: list[Tracklet],
                      tau_tracking: float) -> MatchDecision:
    """Frame-wise matching: global max over every tracked observation."""
    index = ObservationIndex(obs.support.width)
    for t in tracklets:
        for pos, tracked in enumerate(t.observations):
            index.add(tracked, t.tracklet_id, pos)
    tid, best = index.best_match(obs)
    matched = tid if best > tau_tracking else None
    return MatchDecision(obs.frame_id, obs.instance_index, matched, best)


def match_observation_trackletwise(obs: LiftedInstance, tracklets: list[Tracklet],
                                   tau_tracking: float) -> MatchDecision:
    """Ablation mode: each tracklet is one row, the union of its
    observations' supports, with co-visibility from the union of its
    frames' visible sets."""
    best = 0.0
    best_id: int | None = None
    for t in sorted(tracklets, key=lambda t: t.tracklet_id):
        val = siou(obs.support, t.union_support, obs.frame_visible, t.union_visible)
        if val > best:
            best = val
            best_id = t.tracklet_id
    matched = best_id if best > tau_tracking else None
    return MatchDecision(obs.frame_id, obs.instance_index, matched, best)


def run_tracking(frames: list[tuple[int, list[LiftedInstance]]],
                 tau_tracking: float, match_mode: str = FRAME_WISE) -> list[Tracklet]:
    """Associate lifted instances frame by frame into tracklets.

    ``frames`` must be ascending by frame id (stride-downsampling happens
    upstream). Deterministic: pure function of its inputs.
    """
    if match_mode not in (FRAME_WISE, TRACKLET_WISE):
        raise ValueError(f"unknown match mode {match_mode!r}")
    last_frame = None
    tracklets: list[Tracklet] = []
    by_id: dict[int, Tracklet] = {}
    index: ObservationIndex | None = None

    for frame_id, observations in frames:
        if last_frame is not None and frame_id <= last_frame:
            raise StructureError("frames must be strictly ascending by frame id")
        last_frame = frame_id
        if not observations:
            continue
        if index is None:
            index = ObservationIndex(observations[0].support.width)

        decisions: list[MatchDecision] = []
        for obs in observations:
            if match_mode == FRAME_WISE:
                tid, best = index.best_match(obs)
                matched = tid if best > tau_tracking else None
                decisions.append(
                    MatchDecision(obs.frame_id, obs.instance_index, matched, best)
                )
            else:
                decisions.append(
                    match_observation_trackletwise(obs, tracklets, tau_tracking)
                )

        # Updates are applied only after the whole frame is matched, so
        # tracklet state stays frozen at the previous frame inside a frame.
        for obs, decision in zip(observations, decisions):
            if decision.tracklet_id is None:
                t = Tracklet(len(tracklets), obs.support.width)
                tracklets.append(t)
                by_id[t.tracklet_id] = t
            else:
                t = by_id[decision.tracklet_id]
            pos = len(t.observations)
            t.add(obs)
            index.add(obs, t.tracklet_id, pos)
    return tracklets
