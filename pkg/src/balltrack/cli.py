"""``balltrack`` command line: calibrate, detect, track, synth, bench.

Exit status is 0 on success, 1 on a fatal runtime error (unreadable input,
calibration failure) and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .camera import CameraConfig, load_camera_config
from .colorcal import CalibrationConfig, CalibrationError, calibrate_detailed, load_lut, save_lut
from .config import apply_overrides, read_key_values
from .detect import Circle, StageTimer
from .imgcore import PPMFormatError, RgbImage, load_ppm, save_ppm
from .pipeline import STAGES, FramePipeline, FrameRecord, PipelineParams, write_report
from .synth import SceneSpec, load_scene, red_ball_scene, render

EXIT_OK = 0
EXIT_FAILURE = 1

OVERLAY_SELECTED = (0, 255, 0)
OVERLAY_OTHER = (255, 255, 0)


class CliError(Exception):
    """Fatal error reported on stderr with a nonzero exit."""


def _fail(message: str) -> int:
    print(f"balltrack: error: {message}", file=sys.stderr)
    return EXIT_FAILURE


def _require_file(path: Optional[str], what: str) -> Path:
    if path is None:
        raise CliError(f"{what} is required")
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} not found: {p}")
    return p


def _read_image(path: Path) -> RgbImage:
    try:
        return load_ppm(path)
    except (OSError, PPMFormatError) as exc:
        raise CliError(f"cannot read image {path}: {exc}") from exc


def _key_values(path: Optional[str]) -> dict[str, str]:
    if path is None:
        return {}
    return read_key_values(_require_file(path, "params file"))


def _pipeline_params(args) -> PipelineParams:
    try:
        return PipelineParams.from_key_values(_key_values(args.params), seed=args.seed)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _camera(args) -> Optional[CameraConfig]:
    if args.camera is None:
        return None
    path = _require_file(args.camera, "camera config")
    try:
        return load_camera_config(path)
    except (ValueError, KeyError) as exc:
        raise CliError(f"bad camera config {path}: {exc}") from exc


def _lut(args):
    path = _require_file(args.lut, "LUT file")
    try:
        return load_lut(path)
    except ValueError as exc:
        raise CliError(f"bad LUT file {path}: {exc}") from exc


def draw_overlay(frame: RgbImage, record: FrameRecord) -> RgbImage:
    """Copy of ``frame`` with every detection outlined; the tracked one in green."""
    px = frame.pixels.copy()
    h, w = px.shape[:2]
    for det in record.detections:
        colour = OVERLAY_SELECTED if det is record.selected else OVERLAY_OTHER
        c = det.best_circle
        n = max(16, int(2 * math.pi * c.c_r))
        t = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
        xs = np.rint(c.c_x + c.c_r * np.cos(t)).astype(int)
        ys = np.rint(c.c_y + c.c_r * np.sin(t)).astype(int)
        cx, cy = int(round(c.c_x)), int(round(c.c_y))
        arm = np.arange(-3, 4)
        xs = np.concatenate([xs, cx + arm, np.full(7, cx)])
        ys = np.concatenate([ys, np.full(7, cy), cy + arm])
        ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
        px[ys[ok], xs[ok]] = colour
    return RgbImage(px)


def _frame_paths(inputs: Sequence[str]) -> list[Path]:
    if len(inputs) == 1 and Path(inputs[0]).is_dir():
        d = Path(inputs[0])
        return sorted((p for p in d.iterdir() if p.suffix.lower() in (".ppm", ".pnm")), key=lambda p: p.name)
    paths = [Path(p) for p in inputs]
    missing = [p for p in paths if not p.exists()]
    if len(paths) == 1 and missing:
        raise CliError(f"frames not found: {missing[0]}")
    return sorted(paths, key=lambda p: p.name)


def _run_frames(paths: list[Path], args) -> list[FrameRecord]:
    pipeline = FramePipeline(_lut(args), _camera(args), _pipeline_params(args))
    overlay_dir = Path(args.overlay) if args.overlay else None
    if overlay_dir is not None:
        overlay_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for path in paths:
        try:
            frame: Optional[RgbImage] = load_ppm(path)
        except (OSError, PPMFormatError) as exc:
            print(f"balltrack: warning: {path}: {exc}", file=sys.stderr)
            frame = None
        rec = pipeline.process(frame, path.name)
        records.append(rec)
        if overlay_dir is not None and frame is not None:
            save_ppm(draw_overlay(frame, rec), overlay_dir / f"{path.stem}_overlay.ppm")
    return records


def _write_records(records: list[FrameRecord], out: Optional[str]) -> None:
    if out is None:
        write_report(records, sys.stdout)
        return
    with open(out, "w", encoding="utf-8", newline="") as fh:
        write_report(records, fh)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_calibrate(args) -> int:
    image = _read_image(_require_file(args.image, "image"))
    if args.out is None:
        raise CliError("--out is required for calibrate")
    config = CalibrationConfig()
    try:
        config = apply_overrides(config, _key_values(args.params), strict=True)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    if args.seed is not None:
        config = apply_overrides(config, {"seed": str(args.seed)})
    try:
        result = calibrate_detailed(image, config)
    except CalibrationError as exc:
        return _fail(f"calibration failed: {exc}")
    save_lut(result.lut, args.out)
    for fit in result.fits:
        circle = fit.circle
        geom = f"c=({circle.c_x:.2f}, {circle.c_y:.2f}) r={circle.c_r:.2f}" if circle else "no circle"
        verdict = f"class {fit.class_index}" if fit.accepted else "rejected"
        print(
            f"region {fit.label}: pixels={fit.pixel_count} {geom} "
            f"qc={fit.quality:.4f} fit_ratio={fit.fit_ratio:.3f} {verdict}"
        )
    for k, (count, (a, b)) in enumerate(zip(result.sample_counts, result.class_chroma), start=1):
        print(f"class {k}: samples={count} chroma=({a:.1f}, {b:.1f})")
    print(f"wrote {args.out} ({result.lut.classes} class(es))")
    return EXIT_OK


def cmd_detect(args) -> int:
    paths = [_require_file(p, "frame") for p in args.frames]
    _write_records(_run_frames(paths, args), args.out)
    return EXIT_OK


def cmd_track(args) -> int:
    _write_records(_run_frames(_frame_paths(args.frames), args), args.out)
    return EXIT_OK


def _scene(args) -> SceneSpec:
    if args.scene is None:
        spec = red_ball_scene()
    else:
        path = _require_file(args.scene, "scene file")
        try:
            spec = load_scene(path)
        except (ValueError, KeyError, TypeError) as exc:
            raise CliError(f"bad scene file {path}: {exc}") from exc
    if args.seed is not None:
        spec = SceneSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    return spec


def _truth_rows(k: int, name: str, truth: list[Circle]):
    for i, c in enumerate(truth):
        yield {"frame": name, "index": k, "disk": i, "cx": f"{c.c_x:.4f}", "cy": f"{c.c_y:.4f}", "r": f"{c.c_r:.4f}"}


def cmd_synth(args) -> int:
    spec = _scene(args)
    if args.out is None:
        raise CliError("--out is required for synth")
    if args.frames < 1:
        raise CliError("--frames must be >= 1")
    out = Path(args.out)
    if args.frames == 1 and out.suffix.lower() in (".ppm", ".pnm"):
        image, truth = render(spec)
        save_ppm(image, out)
        for c in truth:
            print(f"disk c=({c.c_x:.4f}, {c.c_y:.4f}) r={c.c_r:.4f}")
        return EXIT_OK
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in range(args.frames):
        try:
            frame_spec = spec.at_frame(k)
        except ValueError as exc:
            raise CliError(f"frame {k}: {exc}") from exc
        image, truth = render(frame_spec)
        name = f"frame_{k:06d}.ppm"
        save_ppm(image, out / name)
        rows.extend(_truth_rows(k, name, truth))
    with open(out / "truth.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, ["frame", "index", "disk", "cx", "cy", "r"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {args.frames} frame(s) to {out}")
    return EXIT_OK


def bench_stats(samples: dict[str, list[float]]) -> dict[str, tuple[float, float]]:
    """Median and 95th percentile per stage, in microseconds."""
    return {
        s: (float(np.median(samples[s])), float(np.percentile(samples[s], 95))) for s in STAGES
    }


def _disk_crop(spec: SceneSpec, frame: RgbImage, pad: int = 24) -> RgbImage:
    """The part of ``frame`` around the scene's disks; mean-shift on a full frame is slow."""
    boxes = [o.extent() for o in spec.objects if o.shape == "disk"]
    if not boxes:
        return frame
    x0 = max(int(min(b[0] for b in boxes)) - pad, 0)
    y0 = max(int(min(b[1] for b in boxes)) - pad, 0)
    x1 = min(int(math.ceil(max(b[2] for b in boxes))) + pad + 1, frame.width)
    y1 = min(int(math.ceil(max(b[3] for b in boxes))) + pad + 1, frame.height)
    return RgbImage(frame.pixels[y0:y1, x0:x1])


def cmd_bench(args) -> int:
    if args.reps < 1:
        raise CliError("--reps must be >= 1")
    spec = _scene(args)
    frame, _ = render(spec)
    if args.lut is not None:
        lut = _lut(args)
    else:
        try:
            lut = calibrate_detailed(_disk_crop(spec, frame), CalibrationConfig(seed=args.seed or 0)).lut
        except CalibrationError as exc:
            return _fail(f"cannot calibrate on the bench scene: {exc}")
    pipeline = FramePipeline(lut, _camera(args), _pipeline_params(args))
    samples: dict[str, list[float]] = {s: [] for s in STAGES}
    for _ in range(args.reps):
        timer = StageTimer()
        t0 = time.perf_counter()
        pipeline.detect(frame, timer)
        timer.add("total", time.perf_counter() - t0)
        for s in STAGES:
            samples[s].append(timer.times.get(s, 0.0))
    stats = bench_stats(samples)
    print(f"scene {spec.width}x{spec.height}, {args.reps} repetition(s)")
    print(f"{'stage':<12}{'median_us':>12}{'p95_us':>12}")
    for s in STAGES:
        med, p95 = stats[s]
        print(f"{s:<12}{med:>12.1f}{p95:>12.1f}")
    return EXIT_OK


# ---------------------------------------------------------------------------


RANDOMISED = {"calibrate", "detect", "track", "synth", "bench"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="balltrack", description=__doc__.splitlines()[0])
    parser.add_argument("--strict", action="store_true", help="require --seed for randomised stages")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, lut=False, camera=False, overlay=False):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--params", help="key = value parameter file")
        p.add_argument("--out", help="output path")
        p.add_argument("--strict", action="store_true", default=argparse.SUPPRESS)
        if lut:
            p.add_argument("--lut", help="colour LUT file")
        if camera:
            p.add_argument("--camera", help="camera key = value file")
        if overlay:
            p.add_argument("--overlay", help="directory for annotated PPM frames")

    p = sub.add_parser("calibrate", help="learn a colour LUT from a sample image")
    p.add_argument("image")
    common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("detect", help="detect balls in individual frames")
    p.add_argument("frames", nargs="+")
    common(p, lut=True, camera=True, overlay=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("track", help="track a ball through a frame sequence")
    p.add_argument("frames", nargs="+", help="a directory of PPM frames or a list of files")
    common(p, lut=True, camera=True, overlay=True)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("synth", help="render a synthetic scene")
    p.add_argument("scene", nargs="?", help="JSON scene file (default: one red ball)")
    p.add_argument("--frames", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="per-stage timings on a rendered scene")
    p.add_argument("scene", nargs="?", help="JSON scene file (default: one red ball)")
    p.add_argument("--reps", type=int, default=100)
    common(p, lut=True, camera=True)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.strict and args.command in RANDOMISED and args.seed is None:
        parser.error(f"--seed is required with --strict for '{args.command}'")
    try:
        return args.func(args)
    except CliError as exc:
        return _fail(str(exc))
    except OSError as exc:
        name = exc.filename if exc.filename else ""
        return _fail(f"{name}: {exc.strerror or exc}" if name else str(exc))


if __name__ == "__main__":
    sys.exit(main())
