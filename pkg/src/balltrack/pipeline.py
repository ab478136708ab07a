"""Per-frame processing: detect, refine, recover pose, track; with stage timings."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional

import numpy as np

from .camera import CameraConfig, CameraIntrinsics, UndistortMap, build_undistort_map, pose_from_circle
from .config import apply_overrides
from .detect import Circle, Detection, StageTimer, VoteParams, detect_balls
from .imgcore import GrayImage, RgbImage, luminance
from .refine import RefineParams, refine_circle
from .track import TrackParams, TrackState, update

STAGES = ("classify", "components", "vote", "refine", "total")

REPORT_COLUMNS = [
    "frame", "cx", "cy", "cr", "qc", "x_m", "y_m", "z_m", "status",
    "t_classify_us", "t_components_us", "t_vote_us", "t_refine_us", "t_total_us",
]
TIMING_COLUMNS = [c for c in REPORT_COLUMNS if c.startswith("t_")]


@dataclass(frozen=True)
class PipelineParams:
    vote: VoteParams = VoteParams()
    refine: RefineParams = RefineParams()
    track: TrackParams = TrackParams()

    @classmethod
    def from_key_values(cls, kv: dict[str, str], seed: Optional[int] = None) -> "PipelineParams":
        known = set()
        parts = []
        for default in (VoteParams(), RefineParams(), TrackParams()):
            names = {f for f in default.__dataclass_fields__}
            known |= names
            parts.append(apply_overrides(default, {k: v for k, v in kv.items() if k in names}))
        unknown = sorted(set(kv) - known)
        if unknown:
            raise ValueError(f"unknown parameter(s): {', '.join(unknown)}")
        vote, ref, trk = parts
        if seed is not None:
            from dataclasses import replace

            vote = replace(vote, seed=seed)
        return cls(vote, ref, trk)


@dataclass
class FrameRecord:
    frame: str
    status: str
    detections: list[Detection] = field(default_factory=list)
    selected: Optional[Detection] = None
    timings: dict[str, float] = field(default_factory=dict)

    def row(self) -> dict[str, str]:
        out = {c: "" for c in REPORT_COLUMNS}
        out["frame"] = self.frame
        out["status"] = self.status
        if self.selected is not None:
            c = self.selected.best_circle
            out.update(cx=f"{c.c_x:.4f}", cy=f"{c.c_y:.4f}", cr=f"{c.c_r:.4f}")
            out["qc"] = f"{self.selected.vote.quality:.6f}"
            pose = self.selected.pose
            if pose is not None:
                out.update(x_m=f"{pose.x:.6f}", y_m=f"{pose.y:.6f}", z_m=f"{pose.z:.6f}")
        for stage in STAGES:
            out[f"t_{stage}_us"] = f"{self.timings.get(stage, 0.0):.1f}"
        return out


def refine_in_frame(
    frame: RgbImage,
    circle: Circle,
    params: RefineParams,
    undistort: Optional[UndistortMap] = None,
):
    """Refine against the luminance of a crop around ``circle`` only."""
    reach = circle.c_r + params.annulus_half_width + 3
    x0 = max(int(math.floor(circle.c_x - reach)), 0)
    y0 = max(int(math.floor(circle.c_y - reach)), 0)
    x1 = min(int(math.ceil(circle.c_x + reach)) + 1, frame.width)
    y1 = min(int(math.ceil(circle.c_y + reach)) + 1, frame.height)
    if x1 - x0 < 3 or y1 - y0 < 3:
        return circle, False
    crop = luminance(RgbImage(frame.pixels[y0:y1, x0:x1]))
    coords = None
    if undistort is not None:
        coords = undistort.corrected[y0:y1, x0:x1] - np.array([x0, y0], dtype=np.float64)
    out = refine_circle(crop, circle.shifted(-x0, -y0), params, coords)
    return out.circle.shifted(x0, y0), out.refined


class FramePipeline:
    """Stateful per-sequence processor; frames must arrive in temporal order."""

    def __init__(
        self,
        lut,
        camera: Optional[CameraConfig] = None,
        params: PipelineParams = PipelineParams(),
    ):
        self.lut = lut
        self.camera = camera
        self.params = params
        intr = camera.intrinsics if camera is not None else None
        self.undistort = build_undistort_map(intr) if intr is not None and intr.has_distortion else None
        self.state = TrackState.initial()
        self.index = 0

    def detect(self, frame: RgbImage, timer: Optional[StageTimer] = None) -> list[Detection]:
        """Detections with refined circles and poses, best quality first."""
        intr = self.camera.intrinsics if self.camera is not None else None
        dets = detect_balls(
            frame, self.lut, intr, self.params.vote,
            undistort=self.undistort, frame_index=self.index, timer=timer,
        )
        t0 = time.perf_counter()
        out = []
        for det in dets:
            circle, ok = refine_in_frame(frame, det.vote.circle, self.params.refine, self.undistort)
            if not circle.c_r > 0:
                circle, ok = det.vote.circle, False
            pose = None
            if self.camera is not None:
                rel = Circle(circle.c_x - intr.cx, circle.c_y - intr.cy, circle.c_r)
                pose = pose_from_circle(rel, intr, self.camera.ball_radius_m)
            out.append(det._replace(circle=circle, refined=ok, pose=pose))
        if timer is not None:
            timer.add("refine", time.perf_counter() - t0)
        return out

    def process(self, frame: Optional[RgbImage], name: str = "") -> FrameRecord:
        name = name or f"{self.index:06d}"
        if frame is None:
            self.index += 1
            return FrameRecord(name, "ERROR")
        timer = StageTimer()
        t0 = time.perf_counter()
        dets = self.detect(frame, timer)
        self.state, chosen = update(self.state, dets, self.params.track)
        timer.add("total", time.perf_counter() - t0)
        self.index += 1
        return FrameRecord(name, self.state.status.value, dets, chosen, dict(timer.times))


def write_report(records: Iterable[FrameRecord], fh: IO[str]) -> None:
    writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for rec in records:
        writer.writerow(rec.row())


def default_camera(width: int = 640, height: int = 480, focal: float = 500.0) -> CameraConfig:
    return CameraConfig(CameraIntrinsics.default(width, height, focal))
