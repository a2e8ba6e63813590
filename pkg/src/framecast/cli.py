"""Command-line interface: synth, extrapolate, eval, export.

Exit codes: 0 success, 1 usage error, 2 data/processing error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import FramecastError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="framecast",
                     description="Frame extrapolation laboratory with an analytic "
                                 "ray-cast oracle renderer.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="render a preset or scripted scene sequence")
    p.add_argument("--scene", required=True, help="preset name or scene-script JSON path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=10, help="rendered frame count")
    p.add_argument("--fps-in", type=float, default=30.0)
    p.add_argument("--fps-out", type=float, default=60.0)
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=360)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("extrapolate", help="run the extrapolation pipeline over a sequence")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=None,
                   help="frames to generate per rendered frame (default: manifest cadence)")
    p.add_argument("--k", type=int, default=2, help="history trajectory length")
    p.add_argument("--levels", type=int, default=2, help="background pyramid levels")
    p.add_argument("--eps-static", type=float, default=0.5)
    p.add_argument("--rel-eps", type=float, default=1e-3)
    p.add_argument("--plane-d", default="auto",
                   help="virtual plane distance for the window plan, or 'auto' (10 x near)")
    p.add_argument("--window-mode", choices=["density", "budget"], default="density")
    p.add_argument("--pose", choices=["predicted", "oracle"], default="predicted")
    p.add_argument("--no-me", action="store_true", help="disable per-fragment motion")
    p.add_argument("--no-bgc", action="store_true", help="disable background collection")
    p.add_argument("--no-aw", action="store_true", help="disable adaptive render windows")
    p.add_argument("--no-scn", action="store_true", help="disable shading correction")
    p.add_argument("--corrector", default="identity")
    p.add_argument("--dump-masks", action="store_true")
    p.add_argument("--label", default="")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("eval", help="score extrapolated frames against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--label", default="")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--dump-masks", action="store_true",
                   help="write per-frame focus-mask PNGs next to the report")

    p = sub.add_parser("export", help="convert a binary buffer to a gamma-encoded PNG")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--png", required=True)
    p.add_argument("--gamma", type=float, default=2.2)
    return parser


def _cmd_synth(args) -> int:
    from .presets import load_scene
    from .scene import generate_sequence

    scene = load_scene(args.scene, args.seed)
    man = generate_sequence(scene, args.fps_in, args.fps_out, args.frames,
                            args.out, args.width, args.height, workers=args.workers)
    print(f"wrote {len(man.frames)} frames "
          f"({len(man.entries('rendered'))} rendered) to {args.out}")
    return 0


def _cmd_extrapolate(args) -> int:
    from .pipeline import PipelineConfig, run_sequence
    from .sequence import SequenceManifest

    plane_d = None if args.plane_d == "auto" else float(args.plane_d)
    cfg = PipelineConfig(
        n=args.n, k=args.k, levels=args.levels, eps_static=args.eps_static,
        rel_eps=args.rel_eps, plane_d=plane_d, window_mode=args.window_mode,
        pose_mode=args.pose, enable_me=not args.no_me, enable_bgc=not args.no_bgc,
        enable_aw=not args.no_aw, enable_scn=not args.no_scn,
        corrector=args.corrector, dump_masks=args.dump_masks,
        label=args.label, workers=args.workers)
    man = SequenceManifest.load(args.in_dir)
    out_man, timings = run_sequence(man, cfg, args.out)
    steps = timings["extrapolation_steps"]
    print(f"wrote {steps} extrapolated frames to {args.out}")
    if timings["mean_step_ms"]:
        parts = ", ".join(f"{k}={v:.1f}" for k, v in timings["mean_step_ms"].items())
        print(f"mean per-step ms: {parts}")
    return 0


def _cmd_eval(args) -> int:
    from .metrics import evaluate_sequence, write_report
    from .sequence import SequenceManifest

    pred = SequenceManifest.load(args.pred)
    ref = SequenceManifest.load(args.ref)
    dump_dir = Path(args.report).parent / "focus_masks" if args.dump_masks else None
    report = evaluate_sequence(pred, ref, label=args.label, dump_masks_to=dump_dir)
    files = write_report(report, args.report, figures=not args.no_figures)
    agg = report.aggregate
    print(f"frames={agg['frame_count']} psnr={agg['psnr']:.2f} ssim={agg['ssim']:.4f}")
    print("wrote " + ", ".join(str(f) for f in files))
    return 0


def _cmd_export(args) -> int:
    from .buffers import export_png, gray_to_rgb, read_buffer

    buf = read_buffer(args.in_path)
    if buf.shape[2] == 1:
        buf = gray_to_rgb(buf)
    export_png(buf, args.png, gamma=args.gamma)
    print(f"wrote {args.png}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "extrapolate": _cmd_extrapolate,
    "eval": _cmd_eval,
    "export": _cmd_export,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return _COMMANDS[args.command](args)
    except FramecastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
