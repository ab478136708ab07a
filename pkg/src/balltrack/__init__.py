"""Real-time detection and tracking of single-colour balls.

Offline, a colour lookup table is learned from a sample image. Per frame,
pixels are classified through the table, grouped into connected regions,
tested for circularity by randomised three-point voting, refined to
sub-pixel accuracy and converted to a 3-D position; a small tracker keeps
the last position to pick between same-coloured candidates.
"""

from .camera import (
    BallPose,
    CameraConfig,
    CameraIntrinsics,
    UndistortMap,
    build_undistort_map,
    load_camera_config,
    pose_from_circle,
    project_sphere,
)
from .colorcal import (
    CalibrationConfig,
    CalibrationError,
    ColorLut,
    calibrate,
    calibrate_detailed,
    load_lut,
    meanshift_segment,
    save_lut,
)
from .detect import (
    Circle,
    Detection,
    VoteParams,
    VoteResult,
    assess_quality,
    circumcenter,
    detect_balls,
    vote_center,
    vote_radius,
    vote_region,
)
from .imgcore import (
    ClassMap,
    GrayImage,
    Region,
    RgbImage,
    classify,
    connected_components,
    decode_ppm,
    encode_ppm,
    load_ppm,
    luminance,
    morph,
    save_ppm,
)
from .pipeline import FramePipeline, PipelineParams, write_report
from .refine import RefineParams, refine_circle
from .synth import SceneObject, SceneSpec, render, render_projected
from .track import TrackParams, TrackState, TrackStatus, update

__version__ = "0.1.0"
