"""Run-length encoding per the bundle format: row-major flattened mask,
list of [start, length] foreground runs, ascending and non-overlapping."""

import numpy as np


def encode(mask: np.ndarray) -> list[list[int]]:
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


def decode(runs, size: int) -> np.ndarray:
    flat = np.zeros(size, dtype=bool)
    for start, length in runs:
        flat[start : start + length] = True
    return flat
