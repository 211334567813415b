"""Deterministic synthetic room scenes for tests and benchmarks.

Scenes are boxes and ellipsoids sampled as point clusters in a room with a
floor, observed by an orbiting camera ring. Depth maps come from
nearest-point splatting into a z-buffer; ground-truth 2D masks are the
splat footprints of each object's depth-visible points, optionally
corrupted by boundary erosion/dilation, spurious merged-object masks, and
bounding-box replacements.

Reproducibility: all randomness flows through counter-based Philox streams
keyed as ``seed * 2^64 + stream * 2^32 + substream`` with the stream ids
below, so identical specs produce byte-identical bundles on every platform.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import ndimage

from .bitset import SuperpointSet
from .errors import StructureError
from .proposals import Proposal3D
from .scene import CameraFrame, PointCloud, SuperpointPartition

# Philox stream ids (documented contract, do not renumber)
STREAM_PLACEMENT = 1
STREAM_POINTS = 2
STREAM_FRAME_NOISE = 4
STREAM_PROTOTYPES = 5
STREAM_EMBEDDING = 6

BACKGROUND_CLASS = -1


def _rng(seed: int, stream: int, sub: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=(seed << 64) + (stream << 32) + sub))


@dataclass
class SynthSpec:
    """Knobs for one synthetic scene; ``seed`` fully determines the output."""

    seed: int = 0
    object_count: int = 5
    points_per_object: int = 120
    background_points: int = 400
    room_extent: tuple[float, float, float] = (6.0, 6.0, 3.0)
    camera_count: int = 12
    orbit_radius: float | None = None
    orbit_height: float = 1.7
    image_width: int = 160
    image_height: int = 120
    focal: float = 86.0
    superpoints_per_object: int = 4
    background_superpoints: int = 12
    singleton_superpoints: bool = False
    class_count: int | None = None
    embedding_dim: int = 64
    splat_radius: int = 1
    # noise knobs
    mask_erode_px: int = 0
    mask_dilate_px: int = 0
    wrong_detection_rate: float = 0.0
    embedding_noise_sigma: float = 0.0
    label_flip_rate: float = 0.0
    include_pc_proposals: bool = False

    def __post_init__(self):
        if self.object_count < 1:
            raise StructureError("object_count must be >= 1")
        if self.points_per_object < 8:
            raise StructureError("points_per_object must be >= 8")
        if not (0 <= self.seed < 2**64):
            raise StructureError("seed must fit in 64 bits")
        for knob in ("mask_erode_px", "mask_dilate_px", "wrong_detection_rate",
                     "embedding_noise_sigma", "label_flip_rate", "splat_radius"):
            if getattr(self, knob) < 0:
                raise StructureError(f"{knob} must be >= 0")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["room_extent"] = list(self.room_extent)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        if "room_extent" in d:
            d["room_extent"] = tuple(d["room_extent"])
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise StructureError(f"unknown synth spec keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SynthScene:
    """In-memory scene bundle plus ground truth, ready to write or run."""

    spec: SynthSpec
    cloud: PointCloud
    partition: SuperpointPartition
    frames: list[CameraFrame]
    detections: dict[int, dict]          # frame_id -> detections payload
    gt_masks: list[np.ndarray]           # per-object point masks
    gt_class_ids: list[int]
    point_class: np.ndarray              # per-point class id, -1 = background
    queries: list[str]
    prototypes: np.ndarray               # (C, D) unit rows; doubles as text embeddings
    pc_proposals: list[np.ndarray] = field(default_factory=list)


def _sample_objects(spec: SynthSpec):
    """Grid-with-jitter placement: objects can never overlap."""
    rng = _rng(spec.seed, STREAM_PLACEMENT)
    ex, ey, _ = spec.room_extent
    grid = int(np.ceil(np.sqrt(spec.object_count)))
    margin = 0.9
    cell_x = (ex - 2 * margin) / grid
    cell_y = (ey - 2 * margin) / grid
    centers, half_sizes, shapes = [], [], []
    for i in range(spec.object_count):
        gx, gy = i % grid, i // grid
        base = np.array([
            -ex / 2 + margin + (gx + 0.5) * cell_x,
            -ey / 2 + margin + (gy + 0.5) * cell_y,
            rng.uniform(0.45, 0.95),
        ])
        jitter = rng.uniform(-0.12, 0.12, size=2) * min(cell_x, cell_y)
        base[:2] += jitter
        half = rng.uniform(0.18, min(0.34, 0.38 * min(cell_x, cell_y)), size=3)
        half[2] = rng.uniform(0.18, 0.34)
        centers.append(base)
        half_sizes.append(half)
        shapes.append("box" if i % 2 == 0 else "ellipsoid")
    return centers, half_sizes, shapes


def _sample_points(spec: SynthSpec, centers, half_sizes, shapes) -> list[np.ndarray]:
    """Surface sampling of the observable shell: RGB-D sensors see shells,
    not interiors, and an orbiting camera never sees undersides, so bottom
    faces / lower caps are folded upward."""
    clusters = []
    for i, (c, h, shape) in enumerate(zip(centers, half_sizes, shapes)):
        rng = _rng(spec.seed, STREAM_POINTS, i)
        m = spec.points_per_object
        if shape == "ellipsoid":
            raw = rng.normal(size=(m, 3))
            raw /= np.linalg.norm(raw, axis=1, keepdims=True)
            low = raw[:, 2] < -0.25
            raw[low, 2] = -0.5 - raw[low, 2]  # mirror lower cap upward
            raw /= np.linalg.norm(raw, axis=1, keepdims=True)
            pts = c + raw * h
        else:
            areas = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]])
            probs = np.repeat(areas / areas.sum() / 2.0, 2)
            faces = rng.choice(6, size=m, p=probs)
            faces[faces == 5] = 4  # bottom face samples go to the top face
            spread = rng.uniform(-1.0, 1.0, size=(m, 3))
            pts = spread.copy()
            pts[np.arange(m), faces // 2] = np.where(faces % 2 == 0, 1.0, -1.0)
            pts = c + pts * h
        clusters.append(pts)
    return clusters


def _sample_background(spec: SynthSpec) -> np.ndarray:
    rng = _rng(spec.seed, STREAM_POINTS, 10_000)
    ex, ey, _ = spec.room_extent
    n = spec.background_points
    floor = np.column_stack([
        rng.uniform(-ex / 2, ex / 2, size=n),
        rng.uniform(-ey / 2, ey / 2, size=n),
        rng.uniform(0.0, 0.04, size=n),
    ])
    return floor


def _split_superpoints(points: np.ndarray, index_pool: np.ndarray, k: int) -> list[np.ndarray]:
    """Recursive median split along the longest axis into k chunks."""
    parts = [index_pool]
    while len(parts) < k:
        sizes = [p.size for p in parts]
        widest = int(np.argmax(sizes))
        idx = parts.pop(widest)
        coords = points[idx]
        axis = int(np.argmax(coords.max(axis=0) - coords.min(axis=0)))
        order = idx[np.argsort(coords[:, axis], kind="stable")]
        half = order.size // 2
        parts.insert(widest, order[half:])
        parts.insert(widest, order[:half])
    return parts


def _look_at(position: np.ndarray, target: np.ndarray) -> np.ndarray:
    """World->camera extrinsics with +z forward, +y down in the image."""
    forward = target - position
    forward = forward / np.linalg.norm(forward)
    world_up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, world_up)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    ext = np.eye(4)
    ext[:3, :3] = rot
    ext[:3, 3] = -rot @ position
    return ext


def _project_raw(positions: np.ndarray, ext: np.ndarray, fx, fy, cx, cy):
    """Projection in the same operation order the kernels use."""
    rot, trans = ext[:3, :3], ext[:3, 3]
    x, y, z = positions[:, 0], positions[:, 1], positions[:, 2]
    xc = rot[0, 0] * x + rot[0, 1] * y + rot[0, 2] * z + trans[0]
    yc = rot[1, 0] * x + rot[1, 1] * y + rot[1, 2] * z + trans[1]
    zc = rot[2, 0] * x + rot[2, 1] * y + rot[2, 2] * z + trans[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.floor(fx * (xc / zc) + cx).astype(np.int64)
        v = np.floor(fy * (yc / zc) + cy).astype(np.int64)
    return u, v, zc


def _render_depth(spec: SynthSpec, positions, ext, fx, fy, cx, cy):
    """Nearest-point z-buffer with splat hole-filling.

    Pixels a point lands on exactly keep the min direct z (so a point
    always agrees with its own pixel unless a genuinely closer point
    shares it); pixels with no direct return are filled from the splat
    neighborhood; anything else stays 0 (invalid)."""
    w, h = spec.image_width, spec.image_height
    u, v, zc = _project_raw(positions, ext, fx, fy, cx, cy)
    direct = np.full((h, w), np.inf, dtype=np.float64)
    front = zc > 0.0
    ok = front & (u >= 0) & (u < w) & (v >= 0) & (v < h)
    np.minimum.at(direct, (v[ok], u[ok]), zc[ok])
    filled = np.full((h, w), np.inf, dtype=np.float64)
    r = spec.splat_radius
    for dv in range(-r, r + 1):
        for du in range(-r, r + 1):
            uu, vv = u + du, v + dv
            okn = front & (uu >= 0) & (uu < w) & (vv >= 0) & (vv < h)
            np.minimum.at(filled, (vv[okn], uu[okn]), zc[okn])
    zbuf = np.where(np.isinf(direct), filled, direct)
    depth = np.where(np.isinf(zbuf), 0.0, zbuf).astype(np.float32)
    return depth, u, v, zc


def _object_footprint(spec: SynthSpec, obj_slice, u, v, zc, depth) -> np.ndarray:
    """Splat footprint of the object's depth-visible points."""
    w, h = spec.image_width, spec.image_height
    mask = np.zeros((h, w), dtype=bool)
    uo, vo, zo = u[obj_slice], v[obj_slice], zc[obj_slice]
    inb = (zo > 0) & (uo >= 0) & (uo < w) & (vo >= 0) & (vo < h)
    if not inb.any():
        return mask
    d = depth[vo[inb], uo[inb]].astype(np.float64)
    vis = (d > 0) & (np.abs(zo[inb] - d) <= 0.05)
    uu, vv = uo[inb][vis], vo[inb][vis]
    r = spec.splat_radius
    for dv in range(-r, r + 1):
        for du in range(-r, r + 1):
            ui, vi = uu + du, vv + dv
            ok = (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h)
            mask[vi[ok], ui[ok]] = True
    return mask


def _runs(mask: np.ndarray) -> list[list[int]]:
    from . import rle
    return rle.encode(mask)


def generate(spec: SynthSpec) -> SynthScene:
    """Build the full synthetic scene; byte-identical for equal specs."""
    centers, half_sizes, shapes = _sample_objects(spec)
    clusters = _sample_points(spec, centers, half_sizes, shapes)
    background = _sample_background(spec)
    positions = np.vstack(clusters + [background])
    cloud = PointCloud(positions)
    n = cloud.n

    object_slices = []
    offset = 0
    for c in clusters:
        object_slices.append(slice(offset, offset + c.shape[0]))
        offset += c.shape[0]

    # superpoint partition
    if spec.singleton_superpoints:
        partition = SuperpointPartition.singletons(n)
    else:
        labels = np.full(n, -1, dtype=np.int32)
        next_id = 0
        for sl in object_slices:
            idx = np.arange(sl.start, sl.stop)
            for part in _split_superpoints(positions, idx, spec.superpoints_per_object):
                labels[part] = next_id
                next_id += 1
        bg_idx = np.arange(offset, n)
        if bg_idx.size:
            for part in _split_superpoints(positions, bg_idx, spec.background_superpoints):
                labels[part] = next_id
                next_id += 1
        partition = SuperpointPartition(labels, next_id)

    # classes and ground truth
    class_count = spec.class_count or spec.object_count
    gt_class_ids = [i % class_count for i in range(spec.object_count)]
    gt_masks = []
    point_class = np.full(n, BACKGROUND_CLASS, dtype=np.int64)
    for i, sl in enumerate(object_slices):
        m = np.zeros(n, dtype=bool)
        m[sl] = True
        gt_masks.append(m)
        point_class[sl] = gt_class_ids[i]
    queries = [f"class_{c:03d}" for c in range(class_count)]
    prototypes = _rng(spec.seed, STREAM_PROTOTYPES).normal(size=(class_count, spec.embedding_dim))
    prototypes /= np.linalg.norm(prototypes, axis=1, keepdims=True)

    # cameras on an orbit ring
    ex, ey, _ = spec.room_extent
    radius = spec.orbit_radius if spec.orbit_radius is not None else 0.62 * max(ex, ey)
    target = np.array([0.0, 0.0, 0.7])
    fx = fy = spec.focal
    cx, cy = spec.image_width / 2.0, spec.image_height / 2.0
    intrinsics = np.array([[fx, 0, cx], [0, fy, cy], [0, 0, 1.0]])

    frames: list[CameraFrame] = []
    detections: dict[int, dict] = {}
    for j in range(spec.camera_count):
        theta = 2.0 * np.pi * j / spec.camera_count
        position = np.array([radius * np.cos(theta), radius * np.sin(theta), spec.orbit_height])
        ext = _look_at(position, target)
        depth, u, v, zc = _render_depth(spec, positions, ext, fx, fy, cx, cy)
        frame = CameraFrame(
            frame_id=j, intrinsics=intrinsics, extrinsics=ext,
            width=spec.image_width, height=spec.image_height, depth=depth,
        )
        frames.append(frame)

        footprints = [
            _object_footprint(spec, sl, u, v, zc, depth) for sl in object_slices
        ]
        noise = _rng(spec.seed, STREAM_FRAME_NOISE, j)
        instances = []
        noised_masks: list[np.ndarray | None] = []
        # fixed draw order: per-object boundary noise and bbox blow-ups,
        # then the multi-object blob draw
        for i, fp in enumerate(footprints):
            mask = fp
            if spec.mask_erode_px or spec.mask_dilate_px:
                d = int(noise.integers(-spec.mask_erode_px, spec.mask_dilate_px + 1))
                if d > 0:
                    mask = ndimage.binary_dilation(mask, iterations=d)
                elif d < 0:
                    mask = ndimage.binary_erosion(mask, iterations=-d)
            if mask.any() and spec.wrong_detection_rate > 0 \
                    and noise.uniform() < spec.wrong_detection_rate:
                # detector blow-up: the object's mask becomes its padded
                # bounding box, swallowing surrounding background
                pad = int(noise.integers(4, 9))
                ys, xs = np.nonzero(mask)
                box = np.zeros_like(mask)
                box[max(ys.min() - pad, 0): ys.max() + pad + 1,
                    max(xs.min() - pad, 0): xs.max() + pad + 1] = True
                mask = box
            noised_masks.append(mask if mask.any() else None)
            if mask.any():
                instances.append({
                    "rle": _runs(mask),
                    "score": round(float(noise.uniform(0.8, 1.0)), 6),
                    "label_hint": queries[gt_class_ids[i]],
                })
        if spec.wrong_detection_rate > 0 and spec.object_count >= 4:
            present = [i for i, m in enumerate(noised_masks) if m is not None]
            # multi-object blob: one detection spanning several instances
            # (built from the emitted masks, so overlap removal can fully
            # dismantle it when enabled)
            if noise.uniform() < spec.wrong_detection_rate and len(present) >= 4:
                size = int(noise.integers(4, min(len(present), 5) + 1))
                chosen = noise.choice(len(present), size=size, replace=False)
                blob = np.zeros_like(footprints[0])
                for k in chosen:
                    blob |= noised_masks[present[k]]
                instances.append({"rle": _runs(blob), "score": 0.75,
                                  "label_hint": None})
        detections[j] = {
            "frame_id": j,
            "height": spec.image_height,
            "width": spec.image_width,
            "instances": instances,
        }

    pc_proposals = [m.copy() for m in gt_masks] if spec.include_pc_proposals else []
    return SynthScene(
        spec=spec, cloud=cloud, partition=partition, frames=frames,
        detections=detections, gt_masks=gt_masks, gt_class_ids=gt_class_ids,
        point_class=point_class, queries=queries, prototypes=prototypes,
        pc_proposals=pc_proposals,
    )


def mask_fingerprint(point_mask: np.ndarray) -> str:
    """Stable content key for a proposal's point mask (hex, 16 chars)."""
    return hashlib.sha256(np.asarray(point_mask, dtype=bool).tobytes()).hexdigest()[:16]


class PrototypeEmbeddingProvider:
    """Synthetic embedding provider: class prototype of the proposal's
    dominant ground-truth class, plus seeded Gaussian noise, renormalized.

    Noise draws are keyed by (seed, frame, scale, mask content), so results
    are independent of call order and thread count. Proposals containing no
    object points get a background vector orthogonal-ish to all prototypes
    (a fixed random unit vector outside the query set).
    """

    def __init__(self, prototypes: np.ndarray, point_class: np.ndarray,
                 queries: list[str], seed: int, noise_sigma: float = 0.0,
                 label_flip_rate: float = 0.0):
        self.prototypes = np.asarray(prototypes, dtype=np.float64)
        self.point_class = np.asarray(point_class, dtype=np.int64)
        self.queries = list(queries)
        self.seed = int(seed)
        self.noise_sigma = float(noise_sigma)
        self.label_flip_rate = float(label_flip_rate)
        self.dim = self.prototypes.shape[1]
        bg = _rng(self.seed, STREAM_EMBEDDING, 0).normal(size=self.dim)
        self._background = bg / np.linalg.norm(bg)

    def _call_rng(self, proposal: Proposal3D, frame_id: int, scale: int):
        digest = hashlib.sha256(
            b"view-embedding"
            + self.seed.to_bytes(8, "little")
            + int(frame_id).to_bytes(4, "little")
            + int(scale).to_bytes(2, "little")
            + np.asarray(proposal.point_mask, dtype=bool).tobytes()
        ).digest()
        return np.random.Generator(np.random.Philox(key=int.from_bytes(digest[:16], "little")))

    def view_feature(self, proposal: Proposal3D, frame_id: int, scale: int):
        classes = self.point_class[proposal.point_mask]
        classes = classes[classes >= 0]
        rng = self._call_rng(proposal, frame_id, scale)
        if classes.size == 0:
            base = self._background
        else:
            dominant = int(np.argmax(np.bincount(classes, minlength=self.prototypes.shape[0])))
            if self.label_flip_rate > 0 and rng.uniform() < self.label_flip_rate:
                dominant = int(rng.integers(0, self.prototypes.shape[0]))
            base = self.prototypes[dominant]
        if self.noise_sigma > 0:
            base = base + self.noise_sigma * rng.normal(size=self.dim)
            norm = np.linalg.norm(base)
            if norm == 0.0:
                return None
            base = base / norm
        return np.array(base, dtype=np.float64)

    def text_features(self, queries: list[str]) -> np.ndarray:
        index = {q: i for i, q in enumerate(self.queries)}
        missing = [q for q in queries if q not in index]
        if missing:
            raise StructureError(f"no prototype for queries: {missing}")
        return self.prototypes[[index[q] for q in queries]]
