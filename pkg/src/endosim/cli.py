"""Command-line entry point: ``endosim <command> ...``."""
from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (DEFAULT_INTRINSICS, DEFAULT_SCALE_MM, Manifest, generate_dataset, load_depth,
                      load_manifest, load_mask, read_frame, save_depth)
from .errors import EndosimError
from .evaluation import angular_metrics, depth_metrics, fmt, metrics_csv, seg_metrics
from .fisher import diagnostics
from .geometry import CameraIntrinsics
from .kinematics import RobotState, SegmentLengths
from .scene import default_mounts
from .solvers.depth import DepthSolverConfig, recover_depth
from .solvers.state import StateFitConfig, fit_state
from .tracking import DEFAULT_EPS, bbox_update

_FRAME_NAME = re.compile(r"^(\d+)_")


def _round6(obj):
    """Round floats to 6 significant digits so JSON output matches the CSV formatting."""
    if isinstance(obj, dict):
        return {k: _round6(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round6(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(fmt(obj))
    return obj


def _dumps(obj) -> str:
    return json.dumps(_round6(obj), sort_keys=True)


def _floats(text: str, n: int, what: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{what}: expected {n} comma-separated numbers") from None
    if len(vals) != n:
        raise argparse.ArgumentTypeError(f"{what}: expected {n} values, got {len(vals)}")
    return vals


def _lengths(text: str) -> SegmentLengths:
    a, b, c = _floats(text, 3, "lengths")
    return SegmentLengths(a, b, c)


def _intrinsics(text: str) -> CameraIntrinsics:
    fx, fy, cx, cy, w, h = _floats(text, 6, "intrinsics")
    return CameraIntrinsics(fx, fy, cx, cy, int(w), int(h))


def _grid(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"(\d+)x(\d+)", text)
    if not m:
        raise argparse.ArgumentTypeError("grid must look like 16x16")
    return int(m.group(1)), int(m.group(2))


def _psi(text: str) -> np.ndarray:
    return np.array(_floats(text, 9, "psi")).reshape(3, 3)


def resolve_frame(ref: str, dataset: str | None = None) -> tuple[Manifest, int]:
    """A frame is named by any of its files (``DIR/frames/0003_rgb.png``) or by index with ``--dataset``."""
    if dataset is not None:
        if not ref.isdigit():
            raise EndosimError(f"with --dataset, --frame must be an index, got {ref!r}")
        return load_manifest(dataset), int(ref)
    p = Path(ref)
    m = _FRAME_NAME.match(p.name)
    if m is None:
        raise EndosimError(f"cannot tell the frame index from {ref!r}")
    return load_manifest(p.parent.parent), int(m.group(1))


# ------------------------------------------------------------------ commands

def cmd_gen(args) -> int:
    m = generate_dataset(args.out, args.scene_seed, args.frames, args.intrinsics, args.lengths, args.scale_mm)
    print(f"wrote {len(m.frames)} frames to {args.out}")
    return 0


def cmd_recover_depth(args) -> int:
    manifest, index = resolve_frame(args.frame, args.dataset)
    frame = read_frame(manifest, index)
    nx, ny = args.grid
    cfg = DepthSolverConfig(grid_nx=nx, grid_ny=ny, lambda_smooth=args.lam, iterations=args.iters,
                            seed=args.seed)
    light = np.asarray(manifest.scene.get("light_pos", [0.0, 0.0, 0.0]), float)
    res = recover_depth(frame.intensity, frame.specular_mask, manifest.intrinsics, light, cfg)
    scale = manifest.depth_scale_mm
    top = scale * (1.0 - 2.0 ** -17)
    if res.depth.max() > top:
        print(f"warning: depth above {fmt(top)} mm clipped to fit the encoding", file=sys.stderr)
    out = Path(args.out)
    save_depth(out, np.minimum(res.depth, top), scale)
    log = out.with_name(out.stem + "_loss.csv")
    lines = ["iteration,loss"] + [f"{i},{fmt(v)}" for i, v in enumerate(res.history)]
    log.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(_dumps({"frame": index, "depth": str(out), "loss_log": str(log), "final_loss": res.loss,
                  "converged": res.converged, "warning": res.warning}))
    return 0


def cmd_fit_state(args) -> int:
    manifest, index = resolve_frame(args.frame, args.dataset)
    rec = manifest.frame(index)
    gt = rec.state_left if args.instrument == "left" else rec.state_right
    insertion = args.insertion if args.insertion is not None else (gt.insertion if gt else None)
    if insertion is None:
        raise EndosimError("insertion length unknown; pass --insertion")
    mask = load_mask(manifest.path(rec.files[f"mask_{args.instrument}"]))
    cfg = StateFitConfig(restarts=args.restarts, seed=args.seed)
    fit = fit_state(mask, manifest.lengths, manifest.intrinsics, default_mounts()[args.instrument],
                    insertion, cfg)
    record = {"frame": index, "instrument": args.instrument, **fit.to_dict()}
    text = _dumps(record)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _depth_input(path: str, scale: float | None) -> np.ndarray:
    p = Path(path)
    if p.suffix == ".npy":
        return np.load(p)
    if scale is None:
        try:
            scale = load_manifest(p.parent.parent, check=False).depth_scale_mm
        except EndosimError:
            scale = DEFAULT_SCALE_MM
    return load_depth(p, scale)


def cmd_eval_depth(args) -> int:
    pred = _depth_input(args.pred, args.scale_mm)
    gt = _depth_input(args.gt, args.scale_mm)
    valid = (gt > 0) & (pred > 0)
    if args.align == "median":
        pred = pred * (np.median(gt[valid]) / np.median(pred[valid]))
    sys.stdout.write(metrics_csv(depth_metrics(pred, gt, valid).rows()))
    return 0


def _state_records(path: str) -> dict:
    """(frame, instrument) -> RobotState from a manifest, a JSON list or JSON lines."""
    p = Path(path)
    if p.is_dir() or p.name == "manifest.json":
        m = load_manifest(p, check=False)
        out = {}
        for f in m.frames:
            for side, st in (("left", f.state_left), ("right", f.state_right)):
                if st is not None:
                    out[(f.index, side)] = st
        return out
    text = p.read_text(encoding="utf-8").strip()
    if text.startswith("["):
        items = json.loads(text)
    else:
        items = [json.loads(line) for line in text.splitlines() if line.strip()]
    out = {}
    for it in items:
        key = (int(it["frame"]), str(it["instrument"]))
        if key in out:
            raise EndosimError(f"duplicate record for frame {key[0]} {key[1]}")
        out[key] = RobotState.from_dict(it["state"])
    return out


def cmd_eval_state(args) -> int:
    pred, gt = _state_records(args.pred), _state_records(args.gt)
    keys = sorted(set(pred) & set(gt))
    if not keys:
        raise EndosimError("no (frame, instrument) pairs shared by pred and gt")
    missing = sorted(set(pred) - set(gt))
    if missing:
        raise EndosimError(f"predictions without ground truth: {missing}")
    met = angular_metrics([pred[k] for k in keys], [gt[k] for k in keys])
    sys.stdout.write(metrics_csv(met.rows() + [("pairs", len(keys), "1")]))
    return 0


def cmd_eval_seg(args) -> int:
    dice, iou, prec = seg_metrics(load_mask(args.pred), load_mask(args.gt))
    sys.stdout.write(metrics_csv([("dice", dice, "%"), ("iou", iou, "%"), ("precision", prec, "%")]))
    return 0


def cmd_track_bbox(args) -> int:
    paths = sorted(Path(args.masks).glob(args.pattern))
    if not paths:
        raise EndosimError(f"no masks matching {args.pattern!r} in {args.masks}")
    print("frame,left,right,top,bottom")
    for p in paths:
        m = load_mask(p)
        b = bbox_update(m, args.eps)
        idx = _FRAME_NAME.match(p.name)
        name = idx.group(1) if idx else p.stem
        # the box is the search region for the frame after this mask
        print(f"{name},{b.left},{b.right},{b.top},{b.bottom}")
    return 0


def cmd_fisher(args) -> int:
    d = diagnostics(args.psi, args.mc, args.seed)
    print(_dumps(d.to_dict()))
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    fmt_cls = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="endosim", description=__doc__, formatter_class=fmt_cls)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset", formatter_class=fmt_cls)
    g.add_argument("--scene-seed", type=int, required=True)
    g.add_argument("--frames", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--lengths", type=_lengths, default=SegmentLengths(),
                   help="shoulder,proximal,distal in mm")
    g.add_argument("--intrinsics", type=_intrinsics, default=DEFAULT_INTRINSICS, help="fx,fy,cx,cy,W,H")
    g.add_argument("--scale-mm", type=float, default=DEFAULT_SCALE_MM, help="depth encoding scale")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("recover-depth", help="photometric depth recovery for one frame", formatter_class=fmt_cls)
    r.add_argument("--frame", required=True, help="a file of the frame, or an index with --dataset")
    r.add_argument("--dataset", default=None)
    r.add_argument("--out", required=True, help="encoded depth PNG; a _loss.csv log is written next to it")
    r.add_argument("--grid", type=_grid, default=(16, 16))
    r.add_argument("--lambda", dest="lam", type=float, default=0.01)
    r.add_argument("--iters", type=int, default=500)
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_recover_depth)

    f = sub.add_parser("fit-state", help="fit instrument state to a mask", formatter_class=fmt_cls)
    f.add_argument("--frame", required=True, help="a file of the frame, or an index with --dataset")
    f.add_argument("--dataset", default=None)
    f.add_argument("--instrument", choices=("left", "right"), required=True)
    f.add_argument("--insertion", type=float, default=None,
                   help="insertion length in mm (default: the value recorded for the frame)")
    f.add_argument("--restarts", type=int, default=8)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", default=None, help="also write the JSON record here")
    f.set_defaults(func=cmd_fit_state)

    e = sub.add_parser("eval-depth", help="depth error metrics as CSV", formatter_class=fmt_cls)
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--scale-mm", type=float, default=None,
                   help="decode scale (default: from the dataset manifest, else 128)")
    e.add_argument("--align", choices=("none", "median"), default="none")
    e.set_defaults(func=cmd_eval_depth)

    s = sub.add_parser("eval-state", help="angular state errors as CSV", formatter_class=fmt_cls)
    s.add_argument("--pred", required=True, help="JSON lines or list of fit-state records")
    s.add_argument("--gt", required=True, help="dataset manifest or records file")
    s.set_defaults(func=cmd_eval_state)

    sg = sub.add_parser("eval-seg", help="dice / IoU / precision as CSV", formatter_class=fmt_cls)
    sg.add_argument("--pred", required=True)
    sg.add_argument("--gt", required=True)
    sg.set_defaults(func=cmd_eval_seg)

    t = sub.add_parser("track-bbox", help="propagate boxes from a mask sequence", formatter_class=fmt_cls)
    t.add_argument("--masks", required=True, help="directory of mask PNGs")
    t.add_argument("--eps", type=int, default=DEFAULT_EPS)
    t.add_argument("--pattern", default="*_mask_left.png")
    t.set_defaults(func=cmd_track_bbox)

    fi = sub.add_parser("fisher", help="matrix Fisher diagnostics", formatter_class=fmt_cls)
    fi.add_argument("--psi", type=_psi, required=True, help="9 comma-separated values, row major")
    fi.add_argument("--mc", type=int, default=1_000_000)
    fi.add_argument("--seed", type=int, default=0)
    fi.set_defaults(func=cmd_fisher)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (EndosimError, ValueError, OSError) as e:
        print(f"endosim {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
