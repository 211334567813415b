"""vfm-export command line: `export` a capture to a bundle, `make-sample`
for a tiny demo capture."""

from __future__ import annotations

import argparse
import json
import sys

from .export import DEFAULT_TEMPLATE, ExportJob, export_scene
from .models import MASK_PROMPT_BBOX, MASK_PROMPT_POINTS, procedural_models


def build_parser():
    parser = argparse.ArgumentParser(prog="vfm-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="export a capture directory to a bundle")
    p.add_argument("capture")
    p.add_argument("--out", required=True)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--template", default=DEFAULT_TEMPLATE)
    p.add_argument("--mask-prompt", choices=(MASK_PROMPT_BBOX, MASK_PROMPT_POINTS),
                   default=MASK_PROMPT_BBOX)
    p.add_argument("--scale-levels", type=int, default=3)
    p.add_argument("--scale-expansion", type=float, default=0.2)
    p.add_argument("--top-views", type=int, default=20)
    p.add_argument("--proposals", help="proposals.json to embed")
    p.add_argument("--backend", choices=("procedural", "clip"), default="procedural")
    p.add_argument("--checkpoint", help="local checkpoint dir for --backend clip")
    p.add_argument("--dim", type=int, default=32,
                   help="embedding width for the procedural backend")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("make-sample", help="write a tiny synthetic capture")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_sample)
    return parser


def cmd_export(args) -> int:
    if args.backend == "clip":
        if not args.checkpoint:
            print("--backend clip needs --checkpoint", file=sys.stderr)
            return 2
        from .models import clip_models
        models = clip_models(args.checkpoint)
    else:
        models = procedural_models(dim=args.dim)
    job = ExportJob(
        capture_path=args.capture, out_path=args.out,
        frame_stride=args.stride, prompt_template=args.template,
        mask_prompt_mode=args.mask_prompt, scale_levels=args.scale_levels,
        scale_expansion=args.scale_expansion, top_views=args.top_views,
        proposals_path=args.proposals,
    )
    root = export_scene(job, models)
    report = json.loads((root / "export_report.json").read_text())
    print(f"bundle: {root}")
    print(f"detections: {report['detections']}  "
          f"embedded views: {report['embedded_views']}  "
          f"skipped frames: {len(report['skipped_frames'])}")
    return 0


def cmd_make_sample(args) -> int:
    from .sample import make_sample_capture
    root = make_sample_capture(args.out, frame_count=args.frames, seed=args.seed)
    print(f"capture: {root}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
