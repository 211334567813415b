"""Open-vocabulary classification of combined 3D proposals.

Pipeline: source-priority NMS -> per-proposal multi-view feature
aggregation (visibility-weighted sum over top views and scale levels,
L2-normalized) -> cosine similarity against text queries -> standardized
maximum similarity (SMS) filtering -> protocol-specific label assignment.

Everything neural sits behind :class:`EmbeddingProvider`; the core only
handles unit vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .errors import PowerIterationError, StructureError
from .proposals import Proposal3D, SOURCE_POINTCLOUD, _intersections
from .scene import FrameProjection

_AXIS_SEED = 0x5EED0A15  # fixed Philox key for the power-iteration start


class EmbeddingProvider(Protocol):
    """Supplies unit feature vectors for (proposal, view, scale) and for
    text queries. ``view_feature`` may return None (view unusable); the
    caller skips and logs it."""

    dim: int

    def view_feature(self, proposal: Proposal3D, frame_id: int,
                     scale: int) -> np.ndarray | None: ...

    def text_features(self, queries: list[str]) -> np.ndarray: ...


def combine_and_nms(image_props: list[Proposal3D], pc_props: list[Proposal3D],
                    iou_threshold: float = 0.95) -> list[Proposal3D]:
    """Concatenate both sources and greedily suppress near-duplicates.

    Point-cloud proposals are iterated first (they have priority), each
    source ordered by descending point count with id as tie-break; a
    candidate is suppressed when its IoU with any kept proposal exceeds
    the threshold (strictly).
    """
    ordered = (
        sorted(pc_props, key=lambda p: (-p.point_count, p.proposal_id))
        + sorted(image_props, key=lambda p: (-p.point_count, p.proposal_id))
    )
    if not ordered:
        return []
    inter, counts = _intersections(ordered)
    kept: list[int] = []
    for i in range(len(ordered)):
        suppressed = False
        for j in kept:
            union = counts[i] + counts[j] - inter[i, j]
            if union > 0 and float(inter[i, j]) / float(union) > iou_threshold:
                suppressed = True
                break
        if not suppressed:
            kept.append(i)
    return [ordered[i] for i in kept]


@dataclass
class ViewSelection:
    proposal_id: int
    views: list[tuple[int, float]]  # (frame_id, visibility ratio), best first


def select_views(p: Proposal3D, projections: dict[int, FrameProjection],
                 top_v: int) -> ViewSelection:
    """Rank frames by the fraction of the proposal's points visible in
    them; keep the best ``top_v``, excluding fully invisible views."""
    total = p.point_count
    if total == 0:
        return ViewSelection(p.proposal_id, [])
    scored = []
    for frame_id in sorted(projections):
        visible = int(np.count_nonzero(projections[frame_id].visible & p.point_mask))
        if visible == 0:
            continue
        scored.append((frame_id, float(visible) / float(total)))
    scored.sort(key=lambda fa: (-fa[1], fa[0]))
    return ViewSelection(p.proposal_id, scored[:top_v])


@dataclass
class FeatureVector:
    values: np.ndarray
    unclassifiable: bool = False
    skipped_views: list[tuple[int, int]] = field(default_factory=list)


def aggregate_feature(p: Proposal3D, selection: ViewSelection,
                      provider: EmbeddingProvider,
                      scale_levels: int) -> FeatureVector:
    """Visibility-weighted sum of per-view, per-scale features, then
    L2-normalized. Empty selections or all-failed providers yield a zero
    vector flagged unclassifiable."""
    total = np.zeros(provider.dim, dtype=np.float64)
    skipped: list[tuple[int, int]] = []
    used = 0
    for frame_id, alpha in selection.views:
        for level in range(scale_levels):
            f = provider.view_feature(p, frame_id, level)
            if f is None:
                skipped.append((frame_id, level))
                continue
            total += f * alpha
            used += 1
    norm = float(np.linalg.norm(total))
    if used == 0 or norm == 0.0:
        return FeatureVector(np.zeros(provider.dim), unclassifiable=True,
                             skipped_views=skipped)
    return FeatureVector(total / norm, skipped_views=skipped)


def similarity(features: np.ndarray, text_embeddings: np.ndarray) -> np.ndarray:
    """Cosine similarity matrix for unit-normalized rows."""
    if features.ndim != 2 or text_embeddings.ndim != 2:
        raise StructureError("similarity expects 2-D feature matrices")
    if features.shape[1] != text_embeddings.shape[1]:
        raise StructureError(
            f"feature dim {features.shape[1]} != text dim {text_embeddings.shape[1]}"
        )
    return features @ text_embeddings.T


@dataclass
class SmsStats:
    mu: np.ndarray            # (C,) per-query mean
    sigma: np.ndarray         # (C,) per-query population std
    argmax_query: np.ndarray  # (K,) best query per proposal
    sms: np.ndarray           # (K,) standardized max similarity; NaN when degenerate


def sms_filter(sim: np.ndarray, tau_sms: float) -> tuple[list[int], SmsStats]:
    """Standardize each proposal's maximum similarity against that query's
    score distribution over the scene; drop proposals scoring below
    ``tau_sms``. Degenerate queries (zero spread) keep their proposals."""
    k, _ = sim.shape
    if k < 1:
        raise StructureError("SMS filtering needs at least one proposal")
    mu = sim.mean(axis=0)
    sigma = np.sqrt(np.mean((sim - mu) ** 2, axis=0))
    argmax_query = sim.argmax(axis=1)  # first max: lowest query index on ties
    sms = np.full(k, np.nan)
    kept = []
    for i in range(k):
        c = argmax_query[i]
        if sigma[c] > 0.0:
            sms[i] = (sim[i, c] - mu[c]) / sigma[c]
            if sms[i] >= tau_sms:
                kept.append(i)
        else:
            kept.append(i)
    return kept, SmsStats(mu, sigma, argmax_query, sms)


@dataclass
class Prediction:
    proposal_index: int  # row in the similarity matrix
    query_index: int
    confidence: float
    similarity: float


PROTOCOL_TOP1 = "top1"
PROTOCOL_TOPK = "topk"


def assign_labels(sim: np.ndarray, kept: list[int], protocol: str,
                  top_k: int = 300) -> list[Prediction]:
    """Emit predictions at confidence 1.0.

    top1: the argmax query per kept proposal. topk: all (proposal, query)
    pairs ranked by similarity, truncated to ``top_k``; ties resolve by
    kept order then lower query index.
    """
    if protocol == PROTOCOL_TOP1:
        out = []
        for i in kept:
            c = int(sim[i].argmax())
            out.append(Prediction(i, c, 1.0, float(sim[i, c])))
        return out
    if protocol == PROTOCOL_TOPK:
        pairs = [
            (i, c) for i in kept for c in range(sim.shape[1])
        ]
        kept_pos = {i: pos for pos, i in enumerate(kept)}
        pairs.sort(key=lambda ic: (-sim[ic[0], ic[1]], kept_pos[ic[0]], ic[1]))
        return [
            Prediction(i, c, 1.0, float(sim[i, c])) for i, c in pairs[:top_k]
        ]
    raise ValueError(f"unknown protocol {protocol!r}")


@dataclass
class AxisCorrection:
    visual: np.ndarray
    text: np.ndarray
    visual_ok: np.ndarray  # rows that stayed nonzero
    text_ok: np.ndarray
    axis: np.ndarray
    iterations: int


def principal_axis_correction(visual: np.ndarray, text: np.ndarray,
                              tol: float = 1e-8,
                              max_iterations: int = 1000) -> AxisCorrection:
    """Remove the dominant direction of the (uncentered) visual feature
    matrix from every visual and text vector, re-normalizing survivors.

    The direction is the leading right-singular vector, found by power
    iteration on the Gram operator; vectors collapsing to (numerically)
    zero after subtraction are flagged not-ok.
    """
    if visual.ndim != 2 or visual.shape[0] < 2:
        raise StructureError("principal-axis correction needs K >= 2 visual features")
    rng = np.random.Generator(np.random.Philox(key=_AXIS_SEED))
    v = rng.normal(size=visual.shape[1])
    v /= np.linalg.norm(v)
    residual = np.inf
    for iteration in range(1, max_iterations + 1):
        w = visual.T @ (visual @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            raise StructureError("visual feature matrix has no dominant direction")
        w /= norm
        residual = 1.0 - abs(float(np.dot(w, v)))
        v = w
        if residual <= tol:
            break
    else:
        raise PowerIterationError(max_iterations, residual)

    def _strip(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        out = rows - np.outer(rows @ v, v)
        norms = np.linalg.norm(out, axis=1)
        ok = norms > 1e-9
        out[ok] = out[ok] / norms[ok, None]
        out[~ok] = 0.0
        return out, ok

    new_visual, visual_ok = _strip(np.array(visual, dtype=np.float64))
    new_text, text_ok = _strip(np.array(text, dtype=np.float64))
    return AxisCorrection(new_visual, new_text, visual_ok, text_ok, v, iteration)
