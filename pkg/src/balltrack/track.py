"""Last-position memory for resolving same-colour ambiguity between frames."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from .camera import BallPose
from .detect import Circle, Detection

# frames_since_seen before the first sighting.
NEVER_SEEN = 2**31 - 1


class TrackStatus(str, enum.Enum):
    TRACKING = "TRACKING"
    COASTING = "COASTING"
    LOST = "LOST"


@dataclass(frozen=True)
class TrackParams:
    gate_radius: float = 60.0
    coast_limit: int = 5


@dataclass(frozen=True)
class TrackState:
    last_circle: Optional[Circle] = None
    last_pose: Optional[BallPose] = None
    frames_since_seen: int = NEVER_SEEN
    status: TrackStatus = TrackStatus.LOST

    @classmethod
    def initial(cls) -> "TrackState":
        return cls(None, None, NEVER_SEEN, TrackStatus.LOST)


def _select(state: TrackState, detections: Sequence[Detection], params: TrackParams):
    if not detections:
        return None
    if state.last_circle is None or state.status is TrackStatus.LOST:
        # Nothing to gate against (or the track went stale): re-acquire.
        return detections[0]
    last = state.last_circle
    best, best_d = None, math.inf
    for det in detections:
        c = det.best_circle
        d = math.hypot(c.c_x - last.c_x, c.c_y - last.c_y)
        if d < best_d:
            best, best_d = det, d
    return best if best_d <= params.gate_radius else None


def update(
    state: TrackState,
    detections: Sequence[Detection],
    params: TrackParams = TrackParams(),
) -> tuple[TrackState, Optional[Detection]]:
    """One tracking step.

    With a recent position (TRACKING or COASTING), the nearest detection
    within the gate wins; otherwise the first (highest-quality) detection. Detections must
    already be quality-filtered and sorted best first.
    """
    chosen = _select(state, detections, params)
    if chosen is not None:
        new = TrackState(chosen.best_circle, chosen.pose or state.last_pose, 0, TrackStatus.TRACKING)
        return new, chosen
    gap = min(state.frames_since_seen + 1, NEVER_SEEN)
    status = TrackStatus.COASTING if gap <= params.coast_limit else TrackStatus.LOST
    return replace(state, frames_since_seen=gap, status=status), None
