"""Session orchestration: target setup, the per-frame pipeline, persistence.

A session fixes a target pose once (meshed and marker-bound), then runs
every incoming estimator frame through pose -> mesh -> waist alignment ->
marker states -> RMSE sample.  Invalid frames are counted and skipped so
a glitching live estimator cannot kill a session.  Each finished session
leaves two artifacts in the sessions directory: the echoed ``.poselog``
(replayable through the same pipeline, reproducing the report
bit-for-bit) and the final JSON report.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .body_model import BodyMesh, BodyModelAssets, pose_mesh
from .estimator import (
    EstimatedFrame,
    FrameProtocolError,
    StreamTransportError,
    frame_to_record,
    open_replay_file,
)

logger = logging.getLogger(__name__)
from .evaluation import (
    GUIDANCE_MODES,
    MetricsError,
    RmseSample,
    SessionMetrics,
    SessionTracker,
    render_report,
    series_to_csv,
)
from .guidance import (
    CameraIntrinsics,
    ColorThresholds,
    GuidanceFrame,
    GuidanceParams,
    MarkerBinding,
    MarkerSite,
    MarkerSizing,
    bind_markers,
    build_guidance_frame,
    coco_keypoints_from_mesh,
)

SESSIONS_DIR_ENV = "COREBODY_SESSIONS_DIR"
DEFAULT_SESSIONS_DIR = "sessions"


class SessionError(RuntimeError):
    """Session cannot proceed (no target, no frames, bad config)."""


@dataclass(frozen=True)
class ViewpointSpec:
    """One UI viewpoint: orbit angles plus distance around a look-at point."""

    azimuth: float = 0.0
    elevation: float = 0.0
    distance: float = 3.0
    look_at: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.distance <= 0:
            raise ValueError(f"viewpoint distance must be positive, got {self.distance}")

    def to_json(self) -> dict:
        return {
            "azimuth": self.azimuth,
            "elevation": self.elevation,
            "distance": self.distance,
            "lookAt": list(self.look_at),
        }

    @staticmethod
    def from_json(doc: dict) -> "ViewpointSpec":
        return ViewpointSpec(
            azimuth=float(doc.get("azimuth", 0.0)),
            elevation=float(doc.get("elevation", 0.0)),
            distance=float(doc.get("distance", 3.0)),
            look_at=tuple(float(c) for c in doc.get("lookAt", (0.0, 0.0, 0.0))),
        )


DEFAULT_VIEWPOINTS = (
    ViewpointSpec(azimuth=0.0, elevation=10.0, distance=3.0),
    ViewpointSpec(azimuth=90.0, elevation=10.0, distance=3.0),
)


@dataclass(frozen=True)
class SessionConfig:
    """Everything a session needs besides the frames themselves."""

    assets_path: str = ""
    target_source: dict | None = None  # {"poselog": path, "index": i} or {"frame": record}
    viewpoints: tuple[ViewpointSpec, ViewpointSpec] = DEFAULT_VIEWPOINTS
    mode: str = "markers"
    camera: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    thresholds: ColorThresholds = field(default_factory=ColorThresholds)
    sizing: MarkerSizing = field(default_factory=MarkerSizing)
    marker_half_width: float = 20.0

    def __post_init__(self):
        if len(self.viewpoints) != 2:
            raise ValueError("exactly two viewpoints required")
        if self.mode not in GUIDANCE_MODES:
            raise ValueError(f"mode must be one of {GUIDANCE_MODES}, got {self.mode!r}")

    @property
    def guidance_params(self) -> GuidanceParams:
        return GuidanceParams(
            thresholds=self.thresholds,
            sizing=self.sizing,
            marker_half_width=self.marker_half_width,
        )

    def to_json(self) -> dict:
        return {
            "assetsPath": self.assets_path,
            "targetSource": self.target_source,
            "viewpoints": [v.to_json() for v in self.viewpoints],
            "mode": self.mode,
            "camera": {
                "f": self.camera.f,
                "cx": self.camera.cx,
                "cy": self.camera.cy,
                "zCam": self.camera.z_cam,
            },
            "thresholds": {
                "yellow": self.thresholds.yellow,
                "orange": self.thresholds.orange,
                "red": self.thresholds.red,
            },
            "markerHalfWidth": self.marker_half_width,
            "markerRadius": {
                "rMin": self.sizing.r_min,
                "rMax": self.sizing.r_max,
                "dRef": self.sizing.d_ref,
            },
        }

    @staticmethod
    def from_json(doc: dict) -> "SessionConfig":
        cam = doc.get("camera", {})
        thr = doc.get("thresholds", {})
        rad = doc.get("markerRadius", {})
        viewpoints = doc.get("viewpoints")
        vps = (
            tuple(ViewpointSpec.from_json(v) for v in viewpoints)
            if viewpoints
            else DEFAULT_VIEWPOINTS
        )
        return SessionConfig(
            assets_path=doc.get("assetsPath", ""),
            target_source=doc.get("targetSource"),
            viewpoints=vps,  # type: ignore[arg-type]
            mode=doc.get("mode", "markers"),
            camera=CameraIntrinsics(
                f=float(cam.get("f", 500.0)),
                cx=float(cam.get("cx", 332.50)),
                cy=float(cam.get("cy", 325.00)),
                z_cam=float(cam.get("zCam", 2.0)),
            ),
            thresholds=ColorThresholds(
                yellow=float(thr.get("yellow", 0.1)),
                orange=float(thr.get("orange", 0.25)),
                red=float(thr.get("red", 0.5)),
            ),
            sizing=MarkerSizing(
                r_min=float(rad.get("rMin", 6.0)),
                r_max=float(rad.get("rMax", 30.0)),
                d_ref=float(rad.get("dRef", 0.5)),
            ),
            marker_half_width=float(doc.get("markerHalfWidth", 20.0)),
        )


def load_config_file(path) -> SessionConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return SessionConfig.from_json(json.load(fh))


@dataclass(frozen=True)
class TargetState:
    """Fixed per-session reference: mesh, bindings, skeleton points, frame echo."""

    mesh: BodyMesh
    bindings: dict[MarkerSite, MarkerBinding]
    skeleton_points: np.ndarray  # (18, 3) COCO-ordered
    frame: EstimatedFrame


def set_target(
    assets: BodyModelAssets, config: SessionConfig, frame: EstimatedFrame
) -> TargetState:
    """Mesh the target frame and bind the ten markers on it."""
    frame.pose.validate()
    frame.shape.validate()
    mesh = pose_mesh(assets, frame.shape, frame.pose)
    bindings = bind_markers(mesh, config.camera, config.marker_half_width)
    return TargetState(
        mesh=mesh,
        bindings=bindings,
        skeleton_points=coco_keypoints_from_mesh(mesh),
        frame=frame,
    )


@dataclass
class SessionResult:
    metrics: SessionMetrics
    samples: list[RmseSample]
    frames_processed: int
    frames_skipped: int
    partial: bool = False  # transport died before the stream ended


def run_session(
    assets: BodyModelAssets,
    config: SessionConfig,
    target: TargetState,
    frames: Iterable[EstimatedFrame],
    on_frame: Callable[[int, EstimatedFrame, GuidanceFrame], None] | None = None,
) -> SessionResult:
    """Drive the full per-frame pipeline over a frame stream.

    Per-frame validation errors are counted and the frame skipped; a
    transport error ends the session early with whatever metrics exist,
    flagged partial.  ``on_frame`` sees every processed frame (the service
    uses it to broadcast).
    """
    tracker = SessionTracker(n_rmse=assets.n_rmse_vertices)
    processed = 0
    skipped = 0
    partial = False
    params = config.guidance_params

    iterator = iter(frames)
    while True:
        try:
            frame = next(iterator)
        except StopIteration:
            break
        except (FrameProtocolError, StreamTransportError) as exc:
            logger.warning("stream ended early: %s", exc)
            partial = True
            break
        try:
            frame.pose.validate()
            frame.shape.validate()
            current = pose_mesh(assets, frame.shape, frame.pose)
            guidance = build_guidance_frame(
                current,
                target.mesh,
                target.bindings,
                config.camera,
                params,
                assets.head_vertex_mask,
                timestamp=frame.t,
            )
            tracker.add(RmseSample(frame.t, guidance.rmse))
        except (ValueError, MetricsError) as exc:
            logger.warning("skipping invalid frame at t=%s: %s", frame.t, exc)
            skipped += 1
            continue
        processed += 1
        if on_frame is not None:
            on_frame(processed, frame, guidance)

    if processed == 0:
        raise SessionError("no valid frames: session has no samples")
    return SessionResult(
        metrics=tracker.finalize(),
        samples=tracker.samples,
        frames_processed=processed,
        frames_skipped=skipped,
        partial=partial,
    )


def resolve_target_frame(config: SessionConfig) -> EstimatedFrame:
    """Materialize the configured target source into one frame."""
    src = config.target_source
    if not src:
        raise SessionError("config has no target source")
    if "frame" in src:
        from .estimator import parse_frame_record

        return parse_frame_record(json.dumps(src["frame"]))
    if "poselog" in src:
        index = int(src.get("index", 0))
        for i, frame in enumerate(open_replay_file(src["poselog"])):
            if i == index:
                return frame
        raise SessionError(f"target index {index} beyond end of {src['poselog']}")
    raise SessionError("target source must carry 'frame' or 'poselog'")


class SessionStore:
    """Append-only session artifacts: echoed .poselog plus final report."""

    def __init__(self, directory: str | Path | None = None):
        if directory is None:
            directory = os.environ.get(SESSIONS_DIR_ENV, DEFAULT_SESSIONS_DIR)
        self.directory = Path(directory)

    def paths(self, session_id: str) -> tuple[Path, Path, Path]:
        base = self.directory / session_id
        return (
            base.with_suffix(".poselog"),
            base.with_suffix(".report.json"),
            base.with_suffix(".csv"),
        )

    def persist(
        self,
        session_id: str,
        frames: list[EstimatedFrame],
        result: SessionResult,
        mode: str,
    ) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        poselog, report, csv_path = self.paths(session_id)
        with open(poselog, "w", encoding="utf-8") as fh:
            for frame in frames:
                fh.write(frame_to_record(frame) + "\n")
        with open(report, "w", encoding="utf-8") as fh:
            fh.write(render_report(result.metrics, result.samples, mode))
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(series_to_csv(result.samples))
        return report

    def latest_report(self) -> dict | None:
        reports = sorted(self.directory.glob("*.report.json"))
        if not reports:
            return None
        return json.loads(reports[-1].read_text(encoding="utf-8"))
