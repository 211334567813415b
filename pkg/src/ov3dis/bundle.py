"""Scene bundle on-disk format: write, load, validate.

Layout (all binary blobs raw little-endian, dtype/shape declared in the
manifest; all JSON serialized with sorted keys so re-writing a bundle is
byte-identical):

    manifest.json              counts, dims, file table with sha256 hashes
    points.bin                 <f8, (N, 3)
    superpoints.bin            <i4, (N,)
    frames/FFFFFF.camera.json  intrinsics, extrinsics, width, height
    frames/FFFFFF.depth.bin    <f4, (H, W); 0 marks invalid depth
    frames/FFFFFF.detections.json  RLE instance masks (row-major runs)
    text_embeddings.bin        <f4, (C, D), unit rows     [optional]
    embeddings/manifest.json   records (proposal key, frame, scale, index)
    embeddings/blob.bin        <f4, records x D           [optional]
    pc_proposals.json          point-cloud proposal masks  [optional]
    ground_truth.json          GT instance masks + classes [optional]

Proposal keys in the embedding manifest are content fingerprints of the
point mask (see synth.mask_fingerprint), so embeddings can be matched to
any proposal with identical support regardless of how it was produced.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rle
from .errors import BundleValidationError, StructureError
from .evaluate import GroundTruthInstance
from .scene import CameraFrame, PointCloud, SuperpointPartition
from .synth import SynthScene, mask_fingerprint

FORMAT_NAME = "ov3dis-bundle"
FORMAT_VERSION = 1

_DTYPES = {"<f8": np.dtype("<f8"), "<f4": np.dtype("<f4"), "<i4": np.dtype("<i4")}


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_array(path: Path, arr: np.ndarray, dtype: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(arr.astype(_DTYPES[dtype], copy=False)).tobytes())


def write_bundle(scene: SynthScene, out_dir) -> Path:
    """Persist a scene (typically from synth.generate) as a bundle."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files: dict[str, dict] = {}

    def record(rel: str, dtype: str | None = None, shape=None):
        entry: dict = {"sha256": _sha256(out / rel)}
        if dtype:
            entry["dtype"] = dtype
            entry["shape"] = list(shape)
        files[rel] = entry

    _write_array(out / "points.bin", scene.cloud.positions, "<f8")
    record("points.bin", "<f8", scene.cloud.positions.shape)
    _write_array(out / "superpoints.bin", scene.partition.labels, "<i4")
    record("superpoints.bin", "<i4", scene.partition.labels.shape)

    frame_entries = []
    for frame in scene.frames:
        stem = f"frames/{frame.frame_id:06d}"
        _dump_json(out / f"{stem}.camera.json", {
            "frame_id": frame.frame_id,
            "intrinsics": frame.intrinsics.tolist(),
            "extrinsics": frame.extrinsics.tolist(),
            "width": frame.width,
            "height": frame.height,
        })
        record(f"{stem}.camera.json")
        _write_array(out / f"{stem}.depth.bin", frame.depth, "<f4")
        record(f"{stem}.depth.bin", "<f4", frame.depth.shape)
        _dump_json(out / f"{stem}.detections.json", scene.detections[frame.frame_id])
        record(f"{stem}.detections.json")
        frame_entries.append({
            "frame_id": frame.frame_id,
            "camera": f"{stem}.camera.json",
            "depth": f"{stem}.depth.bin",
            "detections": f"{stem}.detections.json",
        })

    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "n_points": scene.cloud.n,
        "n_superpoints": scene.partition.n_superpoints,
        "embedding_dim": int(scene.prototypes.shape[1]),
        "frame_count": len(scene.frames),
        "image_width": scene.frames[0].width,
        "image_height": scene.frames[0].height,
        "frames": frame_entries,
        "queries": list(scene.queries),
        "generator": scene.spec.as_dict(),
    }

    _write_array(out / "text_embeddings.bin", scene.prototypes, "<f4")
    record("text_embeddings.bin", "<f4", scene.prototypes.shape)
    manifest["text_embeddings"] = "text_embeddings.bin"

    _dump_json(out / "ground_truth.json", {
        "n_points": scene.cloud.n,
        "instances": [
            {"class_id": cid, "rle": rle.encode(mask)}
            for cid, mask in zip(scene.gt_class_ids, scene.gt_masks)
        ],
    })
    record("ground_truth.json")
    manifest["ground_truth"] = "ground_truth.json"

    if scene.pc_proposals:
        _dump_json(out / "pc_proposals.json", {
            "n_points": scene.cloud.n,
            "proposals": [{"rle": rle.encode(m)} for m in scene.pc_proposals],
        })
        record("pc_proposals.json")
        manifest["pc_proposals"] = "pc_proposals.json"

    manifest["files"] = files
    _dump_json(out / "manifest.json", manifest)
    return out


def write_embeddings(out_dir, records: list[tuple[str, int, int, np.ndarray]]) -> None:
    """Write an embedding sidecar: records of (proposal key, frame, scale,
    vector). Updates the bundle manifest in place."""
    out = Path(out_dir)
    dim = records[0][3].shape[0] if records else 0
    blob = np.zeros((len(records), dim), dtype="<f4")
    entries = []
    for i, (key, frame_id, scale, vec) in enumerate(records):
        blob[i] = vec.astype("<f4")
        entries.append({"proposal": key, "frame": int(frame_id),
                        "scale": int(scale), "index": i})
    (out / "embeddings").mkdir(parents=True, exist_ok=True)
    with open(out / "embeddings" / "blob.bin", "wb") as fh:
        fh.write(blob.tobytes())
    _dump_json(out / "embeddings" / "manifest.json",
               {"dim": dim, "blob": "embeddings/blob.bin", "records": entries})

    manifest_path = out / "manifest.json"
    manifest = json.loads(manifest_path.read_text())
    manifest["embeddings"] = "embeddings/manifest.json"
    manifest["files"]["embeddings/blob.bin"] = {
        "sha256": _sha256(out / "embeddings" / "blob.bin"),
        "dtype": "<f4", "shape": [len(records), dim],
    }
    manifest["files"]["embeddings/manifest.json"] = {
        "sha256": _sha256(out / "embeddings" / "manifest.json"),
    }
    _dump_json(manifest_path, manifest)


@dataclass
class LoadedBundle:
    path: Path
    manifest: dict
    cloud: PointCloud
    partition: SuperpointPartition
    frames: list[CameraFrame]
    detections: dict[int, dict]
    queries: list[str]
    text_embeddings: np.ndarray | None
    pc_proposal_masks: list[np.ndarray]
    ground_truth: list[GroundTruthInstance]
    point_class: np.ndarray | None
    embedding_index: dict | None = None
    embedding_blob: np.ndarray | None = None

    @property
    def generator_spec(self) -> dict | None:
        return self.manifest.get("generator")


def _read_array(path: Path, entry: dict) -> np.ndarray:
    data = np.frombuffer(path.read_bytes(), dtype=_DTYPES[entry["dtype"]])
    return data.reshape(entry["shape"])


def load_bundle(path) -> LoadedBundle:
    """Load a bundle; raises on structural problems (run validate_bundle
    for an exhaustive report instead of a first-error)."""
    root = Path(path)
    manifest = json.loads((root / "manifest.json").read_text())
    if manifest.get("format") != FORMAT_NAME:
        raise StructureError(f"not a {FORMAT_NAME} directory: {root}")
    files = manifest["files"]

    cloud = PointCloud(_read_array(root / "points.bin", files["points.bin"]))
    partition = SuperpointPartition(
        _read_array(root / "superpoints.bin", files["superpoints.bin"]),
        manifest["n_superpoints"],
    )

    frames, detections = [], {}
    for entry in manifest["frames"]:
        cam = json.loads((root / entry["camera"]).read_text())
        depth = _read_array(root / entry["depth"], files[entry["depth"]])
        frames.append(CameraFrame(
            frame_id=cam["frame_id"],
            intrinsics=np.array(cam["intrinsics"]),
            extrinsics=np.array(cam["extrinsics"]),
            width=cam["width"], height=cam["height"], depth=depth,
        ))
        detections[cam["frame_id"]] = json.loads((root / entry["detections"]).read_text())

    text = None
    if "text_embeddings" in manifest:
        text = _read_array(root / manifest["text_embeddings"],
                           files[manifest["text_embeddings"]]).astype(np.float64)

    pc_masks = []
    if "pc_proposals" in manifest:
        payload = json.loads((root / manifest["pc_proposals"]).read_text())
        pc_masks = [rle.decode(p["rle"], payload["n_points"])
                    for p in payload["proposals"]]

    gt, point_class = [], None
    if "ground_truth" in manifest:
        payload = json.loads((root / manifest["ground_truth"]).read_text())
        point_class = np.full(payload["n_points"], -1, dtype=np.int64)
        for inst in payload["instances"]:
            mask = rle.decode(inst["rle"], payload["n_points"])
            gt.append(GroundTruthInstance(mask, inst["class_id"]))
            point_class[mask] = inst["class_id"]

    embedding_index = embedding_blob = None
    if "embeddings" in manifest:
        emanifest = json.loads((root / manifest["embeddings"]).read_text())
        raw = np.frombuffer((root / emanifest["blob"]).read_bytes(), dtype="<f4")
        embedding_blob = raw.reshape(-1, emanifest["dim"]).astype(np.float64)
        embedding_index = {
            (r["proposal"], r["frame"], r["scale"]): r["index"]
            for r in emanifest["records"]
        }

    return LoadedBundle(
        path=root, manifest=manifest, cloud=cloud, partition=partition,
        frames=frames, detections=detections,
        queries=list(manifest.get("queries", [])),
        text_embeddings=text, pc_proposal_masks=pc_masks,
        ground_truth=gt, point_class=point_class,
        embedding_index=embedding_index, embedding_blob=embedding_blob,
    )


class BundleEmbeddingProvider:
    """Serves precomputed per-(proposal, view, scale) vectors from the
    bundle's embedding sidecar; unknown keys yield None (view skipped)."""

    def __init__(self, bundle: LoadedBundle):
        if bundle.embedding_index is None:
            raise StructureError("bundle has no embedding sidecar")
        self._index = bundle.embedding_index
        self._blob = bundle.embedding_blob
        self._text = bundle.text_embeddings
        self._queries = bundle.queries
        self.dim = self._blob.shape[1]

    def view_feature(self, proposal, frame_id: int, scale: int):
        key = (mask_fingerprint(proposal.point_mask), int(frame_id), int(scale))
        row = self._index.get(key)
        if row is None:
            return None
        return self._blob[row]

    def text_features(self, queries: list[str]) -> np.ndarray:
        if self._text is None:
            raise StructureError("bundle has no text embeddings")
        index = {q: i for i, q in enumerate(self._queries)}
        missing = [q for q in queries if q not in index]
        if missing:
            raise StructureError(f"bundle lacks text embeddings for: {missing}")
        return self._text[[index[q] for q in queries]]


# --------------------------------------------------------------------------
# validation


@dataclass
class BundleReport:
    path: str
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, message: str) -> None:
        self.violations.append(message)

    def as_dict(self) -> dict:
        return {"path": self.path, "ok": self.ok, "violations": self.violations}

    def raise_if_failed(self) -> None:
        if not self.ok:
            raise BundleValidationError(self.violations)


def validate_bundle(path) -> BundleReport:
    """Exhaustive schema + hash + invariant check; never raises for content
    problems, collects every violation instead."""
    root = Path(path)
    report = BundleReport(str(root))
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        report.add("manifest.json missing")
        return report
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        report.add(f"manifest.json unparseable: {exc}")
        return report

    if manifest.get("format") != FORMAT_NAME:
        report.add(f"manifest format is {manifest.get('format')!r}, expected {FORMAT_NAME!r}")
    if manifest.get("version") != FORMAT_VERSION:
        report.add(f"unsupported version {manifest.get('version')!r}")
    for key in ("n_points", "n_superpoints", "frame_count", "files", "frames"):
        if key not in manifest:
            report.add(f"manifest missing key {key!r}")
    if report.violations:
        return report

    files = manifest["files"]
    for rel, entry in sorted(files.items()):
        fpath = root / rel
        if not fpath.is_file():
            report.add(f"{rel}: file missing")
            continue
        actual = _sha256(fpath)
        if actual != entry.get("sha256"):
            report.add(f"{rel}: sha256 mismatch (manifest {entry.get('sha256')}, actual {actual})")
            continue
        if "dtype" in entry:
            if entry["dtype"] not in _DTYPES:
                report.add(f"{rel}: unknown dtype tag {entry['dtype']!r}")
                continue
            expected = int(np.prod(entry["shape"])) * _DTYPES[entry["dtype"]].itemsize
            actual_size = fpath.stat().st_size
            if actual_size != expected:
                report.add(f"{rel}: size {actual_size} != declared {expected} bytes")

    if report.violations:
        return report

    n = manifest["n_points"]
    s = manifest["n_superpoints"]
    points = _read_array(root / "points.bin", files["points.bin"])
    if points.shape != (n, 3):
        report.add(f"points.bin: shape {points.shape} != ({n}, 3)")
    elif not np.all(np.isfinite(points)):
        report.add("points.bin: non-finite coordinates")

    labels = _read_array(root / "superpoints.bin", files["superpoints.bin"])
    if labels.shape != (n,):
        report.add(f"superpoints.bin: shape {labels.shape} != ({n},)")
    else:
        if labels.min() < 0 or labels.max() >= s:
            report.add(
                f"superpoints.bin: label range [{labels.min()}, {labels.max()}] "
                f"outside [0, {s})"
            )
        elif np.any(np.bincount(labels, minlength=s) == 0):
            missing = int(np.flatnonzero(np.bincount(labels, minlength=s) == 0)[0])
            report.add(f"superpoints.bin: superpoint id {missing} has no points")

    if len(manifest["frames"]) != manifest["frame_count"]:
        report.add("frame_count does not match the frames table")
    seen_ids = set()
    for entry in manifest["frames"]:
        for key in ("camera", "depth", "detections"):
            if entry.get(key) not in files:
                report.add(f"frame {entry.get('frame_id')}: {key} file not in manifest file table")
        try:
            cam = json.loads((root / entry["camera"]).read_text())
            depth = _read_array(root / entry["depth"], files[entry["depth"]])
            CameraFrame(
                frame_id=cam["frame_id"], intrinsics=np.array(cam["intrinsics"]),
                extrinsics=np.array(cam["extrinsics"]), width=cam["width"],
                height=cam["height"], depth=depth,
            )
            if cam["frame_id"] in seen_ids:
                report.add(f"duplicate frame id {cam['frame_id']}")
            seen_ids.add(cam["frame_id"])
        except Exception as exc:
            report.add(f"frame {entry.get('frame_id')}: {exc}")
            continue
        try:
            payload = json.loads((root / entry["detections"]).read_text())
            size = payload["height"] * payload["width"]
            for i, inst in enumerate(payload.get("instances", [])):
                problem = rle.check(inst.get("rle", []), size)
                if problem is not None:
                    report.add(f"{entry['detections']}: instance {i}: {problem}")
                elif rle.area(inst["rle"]) == 0:
                    report.add(f"{entry['detections']}: instance {i}: zero area")
        except Exception as exc:
            report.add(f"{entry.get('detections')}: {exc}")

    d = manifest.get("embedding_dim")
    if "text_embeddings" in manifest:
        text = _read_array(root / manifest["text_embeddings"], files[manifest["text_embeddings"]])
        if d is not None and text.shape != (len(manifest.get("queries", [])), d):
            report.add(
                f"text_embeddings.bin: shape {text.shape} != "
                f"({len(manifest.get('queries', []))}, {d})"
            )
        else:
            norms = np.linalg.norm(text.astype(np.float64), axis=1)
            bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-5)
            if bad.size:
                report.add(f"text_embeddings.bin: row {int(bad[0])} norm {norms[bad[0]]:.6f} not unit")

    if "embeddings" in manifest:
        try:
            emanifest = json.loads((root / manifest["embeddings"]).read_text())
            blob = np.frombuffer((root / emanifest["blob"]).read_bytes(), dtype="<f4")
            if emanifest["dim"] and blob.size % emanifest["dim"] != 0:
                report.add("embeddings blob size is not a multiple of dim")
            else:
                mat = blob.reshape(-1, emanifest["dim"]).astype(np.float64)
                if len(emanifest["records"]) != mat.shape[0]:
                    report.add(
                        f"embeddings: {len(emanifest['records'])} records but "
                        f"{mat.shape[0]} vectors in blob"
                    )
                norms = np.linalg.norm(mat, axis=1)
                bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-5)
                if bad.size:
                    report.add(f"embeddings blob: vector {int(bad[0])} norm {norms[bad[0]]:.6f} not unit")
                for r in emanifest["records"]:
                    if r["frame"] not in seen_ids:
                        report.add(f"embeddings record references unknown frame {r['frame']}")
                        break
        except Exception as exc:
            report.add(f"embeddings: {exc}")

    for optional, label in (("pc_proposals", "pc proposal"), ("ground_truth", "ground-truth")):
        if optional not in manifest:
            continue
        try:
            payload = json.loads((root / manifest[optional]).read_text())
            if payload["n_points"] != n:
                report.add(f"{optional}: n_points {payload['n_points']} != {n}")
            entries = payload.get("proposals", payload.get("instances", []))
            for i, inst in enumerate(entries):
                problem = rle.check(inst.get("rle", []), n)
                if problem is not None:
                    report.add(f"{optional}: {label} {i}: {problem}")
                elif rle.area(inst["rle"]) == 0:
                    report.add(f"{optional}: {label} {i}: empty mask")
        except Exception as exc:
            report.add(f"{optional}: {exc}")

    return report
