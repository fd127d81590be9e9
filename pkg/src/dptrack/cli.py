"""Command-line entry points: track, bench-springs, eval, make-synthetic."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import cv2
import numpy as np

from .benchmark import convergence_experiment
from .evaluation import (
    Occluder,
    SyntheticSpec,
    compare_boxes,
    load_frames,
    make_synthetic_sequence,
    parse_box,
    read_boxes,
    read_image,
    run_reset_based,
    write_boxes,
)
from .springs import SolverError
from .tracker import LAYOUTS, TOPOLOGIES, DeformablePartsTracker, TrackerConfig

log = logging.getLogger("dptrack")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ABORT = 0, 2, 3, 4
DEFAULT_SEED = 0


class DataError(Exception):
    pass


def _box_arg(text):
    try:
        return parse_box(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_pair(text):
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected 'a,b', got {text!r}")
    return tuple(vals)


def _occluder(text):
    try:
        start, stop = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected START:STOP, got {text!r}") from None
    return Occluder(start, stop, region=(-0.5, 0.5, 2.0, 0.5))


def _load_config(args):
    config = TrackerConfig.from_file(args.config) if args.config else TrackerConfig()
    overrides = {}
    if getattr(args, "topology", None):
        overrides["topology"] = args.topology
    if getattr(args, "parts", None):
        overrides["parts"] = args.parts
    if overrides:
        config = TrackerConfig(**{**config.__dict__, **overrides})
    return config


def _frame_paths(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"frames directory {directory} does not exist")
    paths = sorted(p for p in directory.iterdir() if p.suffix.lower() in (".png", ".pgm", ".ppm"))
    if not paths:
        raise DataError(f"no PNG/PGM/PPM frames in {directory}")
    return paths


def _to_u8(a):
    a = np.asarray(a, dtype=float)
    span = np.ptp(a)
    return np.zeros(a.shape, np.uint8) if span == 0 else np.uint8(np.rint(255 * (a - a.min()) / span))


def _dump_debug(directory, index, result):
    directory.mkdir(parents=True, exist_ok=True)
    dbg = result.debug
    if "root_response" in dbg:
        cv2.imwrite(str(directory / f"{index:05d}_root.pgm"), _to_u8(np.fft.fftshift(dbg["root_response"])))
    if "posterior" in dbg:
        post = np.uint8(np.rint(255 * np.clip(dbg["posterior"], 0, 1)))
        cv2.imwrite(str(directory / f"{index:05d}_posterior.pgm"), post)
        cv2.imwrite(str(directory / f"{index:05d}_mask.pgm"), np.uint8(dbg["mask"]) * 255)
    for i, resp in enumerate(dbg.get("part_responses", [])):
        cv2.imwrite(str(directory / f"{index:05d}_part{i}.pgm"), _to_u8(np.fft.fftshift(resp)))


def cmd_track(args):
    paths = _frame_paths(args.frames)
    if args.init is not None:
        init = args.init
    elif args.gt is not None:
        boxes = read_boxes(args.gt)
        if not boxes:
            raise DataError(f"ground-truth file {args.gt} is empty")
        init = boxes[0]
    else:
        args.parser.error("an initial box is required: pass --init x,y,w,h or --gt FILE")
    config = _load_config(args)
    tracker = DeformablePartsTracker(config)
    debug_dir = Path(args.dump_debug) if args.dump_debug else None

    def load(i):
        try:
            return read_image(paths[i])
        except OSError as exc:
            raise DataError(f"frame {i} ({paths[i].name}): {exc}") from None

    boxes, diagnostics = [tuple(init)], []
    status = EXIT_OK
    tracker.initialize(load(0), init)
    for i in range(1, len(paths)):
        image = load(i)
        try:
            result = tracker.track(image, debug=debug_dir is not None)
        except (SolverError, ValueError, np.linalg.LinAlgError) as exc:
            log.error("frame %d aborted: %s", i, exc)
            status = EXIT_ABORT
            break
        boxes.append(result.bbox)
        diagnostics.append(
            {
                "frame": i,
                "bbox": list(result.bbox),
                "part_weights": result.part_weights.tolist(),
                "updated_parts": result.updated_parts.tolist(),
                "alpha_col": result.alpha_col,
                "energy_initial": result.energy_initial,
                "energy_final": result.energy_final,
                "solver_iterations": result.solver_iterations,
                "low_confidence": result.low_confidence,
            }
        )
        if debug_dir is not None:
            _dump_debug(debug_dir, i, result)
    write_boxes(args.out, boxes)
    if args.diagnostics:
        Path(args.diagnostics).write_text(json.dumps(diagnostics, indent=1))
    log.info("tracked %d of %d frames", len(boxes), len(paths))
    return status


def cmd_bench_springs(args):
    if args.trials < 1:
        args.parser.error("--trials must be at least 1")
    result = convergence_experiment(args.sizes, args.trials, seed=args.seed)
    with open(args.out, "w", newline="") as fh:
        result.write_table(fh)
    if args.trace_dir:
        trace_dir = Path(args.trace_dir)
        trace_dir.mkdir(parents=True, exist_ok=True)
        for size in result.sizes:
            for solver in ("IDA", "CGD"):
                with open(trace_dir / f"trace_{solver.lower()}_{size}.csv", "w", newline="") as fh:
                    result.write_trace(fh, size, solver)
    for row in result.table():
        log.info("size %3d %s mean iters %.1f", row["size"], row["solver"], row["mean_iters"])
    return EXIT_OK


def cmd_eval(args):
    gt = read_boxes(args.gt)
    if args.protocol == "noreset":
        if args.pred is None:
            args.parser.error("--pred is required for the noreset protocol")
        pred = read_boxes(args.pred)
        if len(pred) != len(gt):
            raise DataError(f"length mismatch: {len(pred)} output boxes vs {len(gt)} ground-truth boxes")
        report = compare_boxes(pred, gt)
    else:
        if args.frames is None:
            args.parser.error("--frames is required for the reset protocol (the tracker is re-run)")
        paths = _frame_paths(args.frames)
        if len(paths) != len(gt):
            raise DataError(f"length mismatch: {len(paths)} frames vs {len(gt)} ground-truth boxes")
        report = run_reset_based(_load_config(args), load_frames(args.frames, gt))
    summary = report.summary()
    print(
        f"protocol={summary['protocol']} frames={summary['frames']} failures={summary['failures']} "
        f"accuracy={summary['accuracy']:.4f} average_overlap={summary['average_overlap']:.4f}"
    )
    if args.out:
        report.to_json(args.out)
    return EXIT_OK


def cmd_make_synthetic(args):
    spec = SyntheticSpec(
        n_frames=args.n_frames,
        velocity=args.velocity,
        scale_rate=args.scale_rate,
        deformation=args.deformation,
        occluders=list(args.occlude or []),
        distractors=args.distractors,
    )
    seq = make_synthetic_sequence(spec, seed=args.seed, name=Path(args.out).name)
    seq.save(args.out)
    log.info("wrote %d frames to %s", len(seq), args.out)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="dptrack", description="Deformable parts correlation filter tracker.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    def tracker_flags(p):
        p.add_argument("--config", help="key = value tracker configuration file")
        p.add_argument("--topology", choices=TOPOLOGIES)
        p.add_argument("--parts", choices=LAYOUTS)

    p = sub.add_parser("track", help="track a target through a directory of frames")
    p.add_argument("--frames", required=True, help="directory of PNG/PGM/PPM frames, ordered by name")
    p.add_argument("--init", type=_box_arg, help="initial box x,y,w,h")
    p.add_argument("--gt", help="ground-truth file; its first line is used when --init is absent")
    p.add_argument("--out", required=True, help="output file, one x,y,w,h line per frame")
    p.add_argument("--diagnostics", help="optional JSON file of per-frame part weights and energies")
    p.add_argument("--dump-debug", help="directory for PGM dumps of responses, posterior and mask")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    tracker_flags(p)
    p.set_defaults(func=cmd_track, parser=p)

    p = sub.add_parser("bench-springs", help="compare IDA and conjugate gradients on random spring systems")
    p.add_argument("--sizes", type=_int_list, default=[4, 8, 16, 32, 64])
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", required=True, help="TSV table")
    p.add_argument("--trace-dir", help="directory for mean energy-trace CSVs")
    p.set_defaults(func=cmd_bench_springs, parser=p)

    p = sub.add_parser("eval", help="score tracker output against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", help="tracker output file (noreset protocol)")
    p.add_argument("--frames", help="frames directory (reset protocol re-runs the tracker)")
    p.add_argument("--protocol", choices=("reset", "noreset"), default="noreset")
    p.add_argument("--out", help="JSON report")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    tracker_flags(p)
    p.set_defaults(func=cmd_eval, parser=p)

    p = sub.add_parser("make-synthetic", help="write a synthetic sequence with exact ground truth")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--n-frames", type=int, default=100)
    p.add_argument("--velocity", type=_float_pair, default=(2.0, 0.0), help="px/frame as vx,vy")
    p.add_argument("--scale-rate", type=float, default=0.002)
    p.add_argument("--deformation", type=float, default=0.0, help="per-quadrant wander in px")
    p.add_argument("--distractors", type=int, default=0)
    p.add_argument("--occlude", type=_occluder, action="append", help="START:STOP frames with the lower half hidden")
    p.set_defaults(func=cmd_make_synthetic, parser=p)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
