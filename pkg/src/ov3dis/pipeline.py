"""End-to-end orchestration: bundle in, proposals + predictions out.

Stage order: grounding (overlap removal) -> projection + lifting
(parallelizable across frames) -> tracking -> consensus refinement ->
iterative merge + inclusion removal -> source-priority NMS against
point-cloud proposals -> classification (features, similarity, SMS,
labels). Per-stage wall-clock timings are recorded; all written artifacts
are deterministic functions of (bundle, config), so thread count never
changes output bytes (timings live in a separate, excluded file).
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import classify, grounding, lifting, proposals as prop, rle, tracking
from .bundle import BundleEmbeddingProvider, LoadedBundle, load_bundle, validate_bundle
from .config import PipelineConfig
from .errors import StructureError
from .scene import project_points
from .synth import PrototypeEmbeddingProvider, mask_fingerprint


@dataclass
class RunResult:
    proposals: list[prop.Proposal3D]
    predictions: list[classify.Prediction]
    kept_rows: list[int]
    sms_stats: classify.SmsStats | None
    similarity: np.ndarray | None
    classified: list[prop.Proposal3D]     # rows of the similarity matrix
    unclassifiable_ids: list[int]
    timings: dict[str, float] = field(default_factory=dict)
    counters: dict[str, int] = field(default_factory=dict)


class _Timer:
    def __init__(self, sink: dict, name: str):
        self.sink, self.name = sink, name

    def __enter__(self):
        self.start = time.perf_counter()

    def __exit__(self, *exc):
        self.sink[self.name] = self.sink.get(self.name, 0.0) + time.perf_counter() - self.start


def strided_frames(frames, stride: int):
    """Every stride-th frame of the ascending frame list, starting at the
    first (the rule both the pipeline and the oracle implement)."""
    ordered = sorted(frames, key=lambda f: f.frame_id)
    return ordered[::stride]


def resolve_provider(bundle: LoadedBundle, kind: str, config: PipelineConfig):
    """Pick the embedding provider: precomputed files when present, the
    synthetic prototype provider when the bundle carries ground truth."""
    if kind == "none":
        return None
    if kind in ("auto", "files") and bundle.embedding_index is not None:
        return BundleEmbeddingProvider(bundle)
    if kind == "files":
        raise StructureError("provider 'files' requested but bundle has no embeddings")
    if kind in ("auto", "prototype"):
        if bundle.point_class is None or bundle.text_embeddings is None:
            if kind == "prototype":
                raise StructureError(
                    "provider 'prototype' needs ground truth and text embeddings"
                )
            return None
        gen = bundle.generator_spec or {}
        return PrototypeEmbeddingProvider(
            prototypes=bundle.text_embeddings,
            point_class=bundle.point_class,
            queries=bundle.queries,
            seed=int(gen.get("seed", 0)),
            noise_sigma=float(gen.get("embedding_noise_sigma", 0.0)),
            label_flip_rate=float(gen.get("label_flip_rate", 0.0)),
        )
    raise StructureError(f"unknown provider kind {kind!r}")


def generate_image_proposals(bundle: LoadedBundle, config: PipelineConfig,
                             threads: int = 1, timings: dict | None = None,
                             counters: dict | None = None):
    """Grounding -> lifting -> tracking -> refine -> merge/removal.

    Returns (image proposals, per-frame projections) so classification can
    reuse the projections for view selection.
    """
    timings = timings if timings is not None else {}
    counters = counters if counters is not None else {}
    frames = strided_frames(bundle.frames, config.frame_stride)

    def lift_one(frame):
        instances, report = grounding.parse_detections(
            bundle.detections[frame.frame_id], frame.frame_id
        )
        if config.overlap_removal_enabled:
            instances = grounding.remove_overlaps(instances)
        projection = project_points(bundle.cloud, frame, config.delta_depth)
        visible, lifted = lifting.lift_frame(
            instances, projection, bundle.partition, config.tau_img, config.tau_inst
        )
        return frame.frame_id, projection, lifted, report

    with _Timer(timings, "grounding_and_lifting"):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(lift_one, frames))
        else:
            results = [lift_one(f) for f in frames]

    projections = {fid: projection for fid, projection, _, _ in results}
    counters["rejected_detections"] = sum(len(r.rejected) for *_, r in results)
    counters["lifted_instances"] = sum(len(l) for _, _, l, _ in results)

    with _Timer(timings, "tracking"):
        tracklets = tracking.run_tracking(
            [(fid, lifted) for fid, _, lifted, _ in results],
            config.tau_tracking, config.match_mode,
        )
    counters["tracklets"] = len(tracklets)

    with _Timer(timings, "refinement"):
        image_props = []
        for t in tracklets:
            p = prop.tracklet_to_proposal(t, bundle.partition, t.tracklet_id)
            if config.refinement_enabled:
                p = prop.refine_proposal(p, t, config.tau_ref, bundle.partition)
            if p.point_count > 0:
                image_props.append(p)
    counters["proposals_after_refine"] = len(image_props)

    with _Timer(timings, "merge_and_removal"):
        if config.merging_enabled and image_props:
            image_props = prop.merge_loop(
                image_props, config.tau_merge, config.tau_ref,
                bundle.partition, config.refinement_enabled,
            )
            image_props = prop.inclusion_removal(image_props, config.tau_incl)
    counters["image_proposals"] = len(image_props)
    return image_props, projections


def run_pipeline(bundle: LoadedBundle, config: PipelineConfig, mode: str = "auto",
                 provider_kind: str = "auto", threads: int = 1) -> RunResult:
    timings: dict[str, float] = {}
    counters: dict[str, int] = {}

    image_props: list[prop.Proposal3D] = []
    projections: dict = {}
    if mode != "3d-only":
        image_props, projections = generate_image_proposals(
            bundle, config, threads, timings, counters
        )

    pc_props: list[prop.Proposal3D] = []
    if mode != "2d-only" and bundle.pc_proposal_masks:
        next_id = (max((p.proposal_id for p in image_props), default=-1)) + 1
        for j, mask in enumerate(bundle.pc_proposal_masks):
            pc_props.append(prop.Proposal3D(
                proposal_id=next_id + j, point_mask=mask,
                source=prop.SOURCE_POINTCLOUD,
            ))
    counters["pc_proposals"] = len(pc_props)

    with _Timer(timings, "nms"):
        combined = classify.combine_and_nms(image_props, pc_props, config.nms_iou)
    counters["combined_proposals"] = len(combined)

    provider = resolve_provider(bundle, provider_kind, config)
    predictions: list[classify.Prediction] = []
    kept_rows: list[int] = []
    stats = None
    sim = None
    classified: list[prop.Proposal3D] = []
    unclassifiable: list[int] = []

    if provider is not None and combined and bundle.queries:
        with _Timer(timings, "classification"):
            if not projections:
                frames = strided_frames(bundle.frames, config.frame_stride)
                projections = {
                    f.frame_id: project_points(bundle.cloud, f, config.delta_depth)
                    for f in frames
                }
            feature_rows = []
            for p in combined:
                selection = classify.select_views(p, projections, config.top_views)
                feat = classify.aggregate_feature(p, selection, provider, config.scale_levels)
                if feat.unclassifiable:
                    unclassifiable.append(p.proposal_id)
                else:
                    classified.append(p)
                    feature_rows.append(feat.values)
            if feature_rows:
                features = np.stack(feature_rows)
                text = provider.text_features(bundle.queries)
                if config.principal_axis_correction:
                    if features.shape[0] >= 2:
                        corrected = classify.principal_axis_correction(features, text)
                        features, text = corrected.visual, corrected.text
                    else:
                        counters["principal_axis_skipped"] = 1
                sim = classify.similarity(features, text)
                if config.sms_enabled:
                    kept_rows, stats = classify.sms_filter(sim, config.tau_sms)
                else:
                    kept_rows = list(range(sim.shape[0]))
                predictions = classify.assign_labels(
                    sim, kept_rows, config.protocol, config.top_k
                )
    counters["predictions"] = len(predictions)
    counters["unclassifiable"] = len(unclassifiable)

    return RunResult(
        proposals=combined, predictions=predictions, kept_rows=kept_rows,
        sms_stats=stats, similarity=sim, classified=classified,
        unclassifiable_ids=unclassifiable, timings=timings, counters=counters,
    )


# --------------------------------------------------------------------------
# artifact export


def _dump(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_artifacts(result: RunResult, bundle: LoadedBundle,
                    config: PipelineConfig, out_dir) -> None:
    """Write the deterministic output set plus the (non-deterministic)
    timing file."""
    out = Path(out_dir)
    n = bundle.cloud.n

    _dump(out / "proposals.json", {
        "n_points": n,
        "proposals": [
            {
                "id": p.proposal_id,
                "source": p.source,
                "point_count": p.point_count,
                "fingerprint": mask_fingerprint(p.point_mask),
                "superpoints": p.superpoints.to_ids().tolist()
                if p.superpoints is not None else None,
                "point_rle": rle.encode(p.point_mask),
            }
            for p in result.proposals
        ],
    })

    by_row = {i: p for i, p in enumerate(result.classified)}
    _dump(out / "predictions.json", {
        "n_points": n,
        "queries": bundle.queries,
        "predictions": [
            {
                "proposal_id": by_row[pr.proposal_index].proposal_id,
                "query_index": pr.query_index,
                "query": bundle.queries[pr.query_index],
                "confidence": pr.confidence,
                "similarity": pr.similarity,
                "point_rle": rle.encode(by_row[pr.proposal_index].point_mask),
            }
            for pr in result.predictions
        ],
    })

    stats = result.sms_stats
    _dump(out / "sms_stats.json", {
        "enabled": config.sms_enabled and stats is not None,
        "tau_sms": config.tau_sms,
        "per_query": None if stats is None else [
            {"mu": float(m), "sigma": float(s)}
            for m, s in zip(stats.mu, stats.sigma)
        ],
        "per_proposal": None if stats is None else [
            {
                "proposal_id": result.classified[i].proposal_id,
                "argmax_query": int(stats.argmax_query[i]),
                "sms": None if np.isnan(stats.sms[i]) else float(stats.sms[i]),
                "kept": i in set(result.kept_rows),
            }
            for i in range(len(result.classified))
        ],
        "unclassifiable_proposals": result.unclassifiable_ids,
    })

    _dump(out / "effective_config.json", config.as_dict())
    _dump(out / "run_report.json", result.counters)
    _dump(out / "timings.json", {k: round(v, 6) for k, v in result.timings.items()})


DETERMINISTIC_ARTIFACTS = (
    "proposals.json", "predictions.json", "sms_stats.json",
    "effective_config.json", "run_report.json",
)
