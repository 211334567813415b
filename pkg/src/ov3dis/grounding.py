"""2D instance ingestion and size-sorted overlap removal.

Detectors frequently emit masks that span several objects. Contested pixels
are therefore awarded to the smallest claiming mask, which is equivalent to
removing the overlapped region from every larger mask and is independent of
processing order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rle


@dataclass
class Instance2D:
    """One decoded 2D instance mask in its frame."""

    frame_id: int
    index: int              # stored (file) index; stable across filtering
    mask: np.ndarray        # (H, W) bool
    area: int
    score: float = 1.0
    label_hint: str | None = None


@dataclass
class LoadReport:
    frame_id: int
    accepted: int = 0
    rejected: list[tuple[int, str]] = field(default_factory=list)

    def reject(self, index: int, reason: str) -> None:
        self.rejected.append((index, reason))


def parse_detections(payload: dict, frame_id: int) -> tuple[list[Instance2D], LoadReport]:
    """Decode a detections document; malformed instances are rejected
    individually and recorded, never fatal."""
    report = LoadReport(frame_id=frame_id)
    height = int(payload["height"])
    width = int(payload["width"])
    size = height * width
    instances: list[Instance2D] = []
    for idx, entry in enumerate(payload.get("instances", [])):
        runs = entry.get("rle", [])
        problem = rle.check(runs, size)
        if problem is not None:
            report.reject(idx, problem)
            continue
        if rle.area(runs) == 0:
            report.reject(idx, "zero-area mask")
            continue
        mask = rle.decode(runs, size).reshape(height, width)
        instances.append(
            Instance2D(
                frame_id=frame_id,
                index=idx,
                mask=mask,
                area=rle.area(runs),
                score=float(entry.get("score", 1.0)),
                label_hint=entry.get("label_hint"),
            )
        )
        report.accepted += 1
    return instances, report


def remove_overlaps(instances: list[Instance2D]) -> list[Instance2D]:
    """Resolve contested pixels in favor of the smallest-area mask.

    Ties on area go to the lower stored index. Masks emptied by the removal
    are dropped. Output order follows input order.
    """
    if not instances:
        return []
    order = sorted(range(len(instances)), key=lambda i: (instances[i].area, instances[i].index))
    claimed = np.zeros_like(instances[order[0]].mask, dtype=bool)
    kept_masks: dict[int, np.ndarray] = {}
    for i in order:
        retained = instances[i].mask & ~claimed
        claimed |= retained
        if retained.any():
            kept_masks[i] = retained
    out = []
    for i, inst in enumerate(instances):
        if i in kept_masks:
            mask = kept_masks[i]
            out.append(
                Instance2D(
                    frame_id=inst.frame_id,
                    index=inst.index,
                    mask=mask,
                    area=int(mask.sum()),
                    score=inst.score,
                    label_hint=inst.label_hint,
                )
            )
    return out
