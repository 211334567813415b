"""Run-length encoding for binary masks.

A mask of any shape is flattened row-major; the encoding is the list of
``[start, length]`` pairs of its foreground runs, starts strictly ascending,
runs non-overlapping. This is the on-disk form for 2D instance masks, 3D
point masks, and ground-truth masks, chosen so every consumer can decode it
with a few lines of integer arithmetic.
"""

from __future__ import annotations

import numpy as np


def encode(mask: np.ndarray) -> list[list[int]]:
    """Encode a boolean array (any shape) as foreground runs."""
    flat = np.asarray(mask, dtype=bool).reshape(-1)
    if flat.size == 0:
        return []
    edges = np.diff(flat.astype(np.int8))
    starts = np.flatnonzero(edges == 1) + 1
    ends = np.flatnonzero(edges == -1) + 1
    if flat[0]:
        starts = np.concatenate([[0], starts])
    if flat[-1]:
        ends = np.concatenate([ends, [flat.size]])
    return [[int(s), int(e - s)] for s, e in zip(starts, ends)]


def check(runs, size: int) -> str | None:
    """Validate run structure; returns a message for the first violation."""
    prev_end = 0
    for i, run in enumerate(runs):
        if not (isinstance(run, (list, tuple)) and len(run) == 2):
            return f"run {i} is not a [start, length] pair"
        start, length = run
        if not (isinstance(start, int) and isinstance(length, int)):
            return f"run {i} has non-integer fields"
        if length <= 0:
            return f"run {i} has non-positive length {length}"
        if start < prev_end:
            return f"run {i} starts at {start}, overlapping or out of order"
        if start + length > size:
            return f"run {i} ends at {start + length}, beyond size {size}"
        prev_end = start + length
    return None


def decode(runs, size: int) -> np.ndarray:
    """Decode runs into a flat boolean array of ``size`` elements."""
    problem = check(runs, size)
    if problem is not None:
        raise ValueError(f"invalid RLE: {problem}")
    flat = np.zeros(size, dtype=bool)
    for start, length in runs:
        flat[start : start + length] = True
    return flat


def area(runs) -> int:
    return int(sum(length for _, length in runs))
