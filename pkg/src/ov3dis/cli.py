"""Command-line interface.

Subcommands: run, validate, eval, synth, export-view. Exit codes: 0 ok,
2 validation/configuration failure, 3 runtime failure. Machine-readable
error reports go to stderr as JSON. Relative bundle paths resolve against
$OV3DIS_BUNDLE_ROOT when set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import rle
from .bundle import load_bundle, validate_bundle
from .config import MODES, PipelineConfig, parse_set_overrides
from .errors import BundleValidationError, ConfigError
from .evaluate import EvalPrediction, evaluate, group_report
from .pipeline import run_pipeline, write_artifacts
from .synth import SynthSpec, generate

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def _resolve_bundle(path: str) -> Path:
    p = Path(path)
    root = os.environ.get("OV3DIS_BUNDLE_ROOT")
    if not p.is_absolute() and root and not p.exists():
        return Path(root) / p
    return p


def _load_config(args) -> PipelineConfig:
    config = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    if args.set:
        config = config.with_overrides(parse_set_overrides(args.set))
    return config


def cmd_run(args) -> int:
    bundle_path = _resolve_bundle(args.bundle)
    config = _load_config(args)
    if not args.no_validate:
        validate_bundle(bundle_path).raise_if_failed()
    bundle = load_bundle(bundle_path)
    result = run_pipeline(
        bundle, config, mode=args.mode,
        provider_kind=args.provider, threads=args.threads,
    )
    write_artifacts(result, bundle, config, args.out)
    print(f"proposals: {len(result.proposals)}  predictions: {len(result.predictions)}  "
          f"-> {args.out}")
    for stage, seconds in result.timings.items():
        print(f"  {stage}: {seconds:.3f}s")
    return EXIT_OK


def cmd_validate(args) -> int:
    report = validate_bundle(_resolve_bundle(args.bundle))
    print(json.dumps(report.as_dict(), indent=2, sort_keys=True))
    return EXIT_OK if report.ok else EXIT_VALIDATION


def _load_predictions(path: Path) -> tuple[list[EvalPrediction], int]:
    payload = json.loads(path.read_text())
    n = payload["n_points"]
    preds = [
        EvalPrediction(
            point_mask=rle.decode(p["point_rle"], n),
            class_id=p["query_index"] if not p.get("class_agnostic") else 0,
            confidence=p["confidence"],
            pred_id=i,
        )
        for i, p in enumerate(payload["predictions"])
    ]
    return preds, n


def _load_proposals_as_predictions(path: Path) -> tuple[list[EvalPrediction], int]:
    payload = json.loads(path.read_text())
    n = payload["n_points"]
    preds = [
        EvalPrediction(point_mask=rle.decode(p["point_rle"], n), class_id=0,
                       confidence=1.0, pred_id=i)
        for i, p in enumerate(payload["proposals"])
    ]
    return preds, n


def cmd_eval(args) -> int:
    bundle = load_bundle(_resolve_bundle(args.bundle))
    if not bundle.ground_truth:
        raise ConfigError("bundle carries no ground truth to evaluate against")
    if args.proposals:
        preds, _ = _load_proposals_as_predictions(Path(args.proposals))
        class_agnostic = True
    else:
        preds, _ = _load_predictions(Path(args.predictions))
        class_agnostic = args.class_agnostic
    exclude = set(args.exclude_classes or [])
    report = evaluate(preds, bundle.ground_truth,
                      class_agnostic=class_agnostic, exclude_class_ids=exclude)
    payload = report.as_dict()
    if args.groups:
        groups = {k: list(v) for k, v in json.loads(Path(args.groups).read_text()).items()}
        payload["groups"] = {
            name: metrics.as_dict()
            for name, metrics in group_report(report, groups).items()
        }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    # flat table for diffing
    with open(out / "report.tsv", "w") as fh:
        fh.write("class\tap25\tap50\tap\tar25\tar50\tar\n")
        for cid, m in sorted(report.per_class.items()):
            fh.write(f"{cid}\t{m.ap25:.6f}\t{m.ap50:.6f}\t{m.ap:.6f}"
                     f"\t{m.ar25:.6f}\t{m.ar50:.6f}\t{m.ar:.6f}\n")
        m = report.means
        fh.write(f"mean\t{m.ap25:.6f}\t{m.ap50:.6f}\t{m.ap:.6f}"
                 f"\t{m.ar25:.6f}\t{m.ar50:.6f}\t{m.ar:.6f}\n")
    print(json.dumps({"means": report.means.as_dict()}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_synth(args) -> int:
    from .bundle import write_bundle

    spec = SynthSpec.from_dict(json.loads(Path(args.spec).read_text())) if args.spec \
        else SynthSpec()
    if args.set:
        merged = spec.as_dict()
        for key, value in parse_set_overrides(args.set).items():
            if key not in merged:
                raise ConfigError(f"unknown synth spec key {key!r}")
            current = merged[key]
            if isinstance(current, bool):
                merged[key] = value.lower() in ("true", "1", "yes", "on")
            elif isinstance(current, int):
                merged[key] = int(value)
            elif isinstance(current, float):
                merged[key] = float(value)
            elif isinstance(current, list):
                merged[key] = json.loads(value)
            else:
                merged[key] = value
        spec = SynthSpec.from_dict(merged)
    scene = generate(spec)
    write_bundle(scene, args.out)
    print(f"wrote bundle: {args.out}  (N={scene.cloud.n}, "
          f"S={scene.partition.n_superpoints}, frames={len(scene.frames)})")
    return EXIT_OK


_PALETTE = np.array([
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 190), (0, 128, 128), (230, 190, 255),
    (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195),
    (128, 128, 0), (255, 215, 180), (0, 0, 128), (128, 128, 128),
], dtype=np.int64)


def cmd_export_view(args) -> int:
    bundle = load_bundle(_resolve_bundle(args.bundle))
    payload = json.loads(Path(args.proposals).read_text())
    n = payload["n_points"]
    colors = np.full((n, 3), 60, dtype=np.int64)  # unassigned: dark gray
    for p in payload["proposals"]:
        mask = rle.decode(p["point_rle"], n)
        colors[mask] = _PALETTE[p["id"] % len(_PALETTE)]
    positions = bundle.cloud.positions
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {n}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        fh.write("end_header\n")
        for i in range(n):
            x, y, z = positions[i]
            r, g, b = colors[i]
            fh.write(f"{x:.6f} {y:.6f} {z:.6f} {r} {g} {b}\n")
    print(f"wrote {out} ({n} points)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ov3dis",
        description="Open-vocabulary 3D instance segmentation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the pipeline on a bundle")
    p.add_argument("bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON pipeline config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field (repeatable)")
    p.add_argument("--mode", choices=MODES, default="auto")
    p.add_argument("--provider", choices=("auto", "files", "prototype", "none"),
                   default="auto")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--no-validate", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="check a bundle against the schema")
    p.add_argument("bundle")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("bundle", help="bundle providing the ground truth")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--predictions", help="predictions.json from a run")
    src.add_argument("--proposals", help="proposals.json (class-agnostic eval)")
    p.add_argument("--out", required=True)
    p.add_argument("--class-agnostic", action="store_true")
    p.add_argument("--exclude-classes", type=int, nargs="*")
    p.add_argument("--groups", help="JSON file of name -> class id list")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--spec", help="JSON synth spec file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("export-view", help="write a colored PLY of proposals")
    p.add_argument("bundle")
    p.add_argument("--proposals", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_view)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (BundleValidationError, ConfigError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
