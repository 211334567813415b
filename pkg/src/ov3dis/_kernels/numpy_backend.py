"""Pure-NumPy kernel implementations.

These are the fallback for the compiled extension in ``_accel.pyx``. Both
backends must produce bit-identical outputs: every floating-point expression
here is written in the same operation order as the C loop, and all counting
is integer until the final division.
"""

from __future__ import annotations

import numpy as np

# Pixel coordinates further out than this are clamped to the invalid
# sentinel before the int cast; keeps float->int conversion defined.
_COORD_LIMIT = float(2**31)


def project_points(positions, rot, trans, fx, fy, cx, cy, depth, width, height, delta):
    """Project points into a frame and depth-test them.

    Returns (u, v, z, visible): integer pixel coordinates (floor), camera
    depth, and the visibility flag. Points behind the camera or projecting
    absurdly far off-image get u = v = -1.
    """
    x = positions[:, 0]
    y = positions[:, 1]
    z = positions[:, 2]
    xc = rot[0, 0] * x + rot[0, 1] * y + rot[0, 2] * z + trans[0]
    yc = rot[1, 0] * x + rot[1, 1] * y + rot[1, 2] * z + trans[1]
    zc = rot[2, 0] * x + rot[2, 1] * y + rot[2, 2] * z + trans[2]

    n = positions.shape[0]
    u = np.full(n, -1, dtype=np.int64)
    v = np.full(n, -1, dtype=np.int64)
    front = zc > 0.0

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        uf = fx * (xc / zc) + cx
        vf = fy * (yc / zc) + cy
    finite = front & (np.abs(uf) < _COORD_LIMIT) & (np.abs(vf) < _COORD_LIMIT)
    u[finite] = np.floor(uf[finite]).astype(np.int64)
    v[finite] = np.floor(vf[finite]).astype(np.int64)

    in_image = (u >= 0) & (u < width) & (v >= 0) & (v < height)
    visible = np.zeros(n, dtype=bool)
    if np.any(in_image):
        d = depth[v[in_image], u[in_image]].astype(np.float64)
        visible[in_image] = (d > 0.0) & (np.abs(zc[in_image] - d) <= delta)
    return u, v, zc, visible


def popcount_rows(words: np.ndarray) -> np.ndarray:
    """Per-row popcount of an (M, W) uint64 matrix."""
    if words.size == 0:
        return np.zeros(words.shape[0], dtype=np.int64)
    return np.bitwise_count(words).sum(axis=1).astype(np.int64)


def batch_siou(q_support, q_vis, supports, vis):
    """Superpoint IoU of one query observation against M tracked ones.

    All arguments are packed uint64 bitset rows; ``supports``/``vis`` are
    (M, W). The union in the denominator is restricted to superpoints
    visible in both frames; a zero denominator yields 0.
    """
    m = supports.shape[0]
    if m == 0:
        return np.zeros(0, dtype=np.float64)
    inter = np.bitwise_count(supports & q_support).sum(axis=1).astype(np.int64)
    covis = vis & q_vis
    denom = np.bitwise_count((supports | q_support) & covis).sum(axis=1).astype(np.int64)
    out = np.zeros(m, dtype=np.float64)
    nz = denom > 0
    out[nz] = inter[nz].astype(np.float64) / denom[nz].astype(np.float64)
    return out


def pairwise_intersections(rows: np.ndarray) -> np.ndarray:
    """(K, K) popcounts of pairwise AND of packed bitset rows."""
    k = rows.shape[0]
    inter = np.zeros((k, k), dtype=np.int64)
    for r in range(k):
        inter[r] = np.bitwise_count(rows & rows[r]).sum(axis=1)
    return inter
