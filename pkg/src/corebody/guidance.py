"""Per-frame guidance: alignment, projection, marker selection, coloring.

The current mesh is first translated so its root (waist) joint coincides
with the target's; no rotation or scaling is applied.  Ten marker sites
(hands, elbows, shoulders, knees, ankles on both sides; hips are skipped
because the waists already coincide) are each bound to the set of mesh
vertices whose perspective projection falls strictly inside a square
window around the site's projected joint.  Binding happens once, on the
target model; the same vertex indices are then tracked on every incoming
mesh (shared topology), and the Euclidean distance between the two
centroids drives a four-color scale and the marker's pixel radius.

Projection uses a fixed pinhole camera: ``x = f*X/(Z + z_cam) + cx`` and
``y = f*Y/(Z + z_cam) + cy``, with f = 500 px, optical center
(332.50, 325.00), and the model pushed z_cam = 2 m in front of the
camera.  Window membership is evaluated in the algebraically equivalent
constraint form ``f*X > (x_s - cx)*(Z + z_cam)`` (and mirrored for the
other three bounds), which avoids the division and keeps the inequalities
strict.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .body_model import BodyMesh, rodrigues
from .estimator import DEFAULT_CONFIDENCE_THRESHOLD, EstimatedFrame
from .evaluation import compute_rmse

_EPS_DEPTH = 1e-9


class ProjectionError(ValueError):
    """A point sits at or behind the camera plane."""


class BindingError(ValueError):
    """A marker site selected no vertices."""

    def __init__(self, site: "MarkerSite", half_width: float):
        self.site = site
        super().__init__(
            f"marker {site.value!r} bound no vertices (window half-width {half_width} px"
            " too small or pathological pose)"
        )


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera for the guidance image plane."""

    f: float = 500.0
    cx: float = 332.50
    cy: float = 325.00
    z_cam: float = 2.0

    def __post_init__(self):
        if self.f <= 0:
            raise ValueError(f"focal length must be positive, got {self.f}")


class MarkerSite(str, enum.Enum):
    """The ten guided body sites; values are the wire names."""

    L_HAND = "l_hand"
    R_HAND = "r_hand"
    L_ELBOW = "l_elbow"
    R_ELBOW = "r_elbow"
    L_SHOULDER = "l_shoulder"
    R_SHOULDER = "r_shoulder"
    L_KNEE = "l_knee"
    R_KNEE = "r_knee"
    L_ANKLE = "l_ankle"
    R_ANKLE = "r_ankle"


MARKER_SITES: tuple[MarkerSite, ...] = tuple(MarkerSite)

# Site -> joint index on the 24-joint rig.
DEFAULT_SITE_JOINTS: dict[MarkerSite, int] = {
    MarkerSite.L_HAND: 22,
    MarkerSite.R_HAND: 23,
    MarkerSite.L_ELBOW: 18,
    MarkerSite.R_ELBOW: 19,
    MarkerSite.L_SHOULDER: 16,
    MarkerSite.R_SHOULDER: 17,
    MarkerSite.L_KNEE: 4,
    MarkerSite.R_KNEE: 5,
    MarkerSite.L_ANKLE: 7,
    MarkerSite.R_ANKLE: 8,
}


class MarkerColor(str, enum.Enum):
    RED = "red"
    ORANGE = "orange"
    YELLOW = "yellow"
    GREEN_YELLOW = "green_yellow"


#: Severity order, worst last.
COLOR_SEVERITY: dict[MarkerColor, int] = {
    MarkerColor.GREEN_YELLOW: 0,
    MarkerColor.YELLOW: 1,
    MarkerColor.ORANGE: 2,
    MarkerColor.RED: 3,
}


@dataclass(frozen=True)
class ColorThresholds:
    """Distance cut points, meters; lower bound inclusive, upper exclusive."""

    yellow: float = 0.1
    orange: float = 0.25
    red: float = 0.5

    def __post_init__(self):
        if not 0 < self.yellow < self.orange < self.red:
            raise ValueError("color thresholds must be strictly increasing and positive")


@dataclass(frozen=True)
class MarkerSizing:
    """Pixel radius ramp: r_min at zero distance up to r_max at d_ref."""

    r_min: float = 6.0
    r_max: float = 30.0
    d_ref: float = 0.5

    def __post_init__(self):
        if self.r_min > self.r_max:
            raise ValueError("r_min must not exceed r_max")
        if self.d_ref <= 0:
            raise ValueError("d_ref must be positive")


@dataclass(frozen=True)
class GuidanceParams:
    """Tunables for marker construction and display."""

    thresholds: ColorThresholds = field(default_factory=ColorThresholds)
    sizing: MarkerSizing = field(default_factory=MarkerSizing)
    marker_half_width: float = 20.0


@dataclass(frozen=True)
class MarkerWindow:
    """Axis-aligned selection window in image coordinates."""

    site: MarkerSite
    x_s: float
    y_s: float
    x_e: float
    y_e: float

    def __post_init__(self):
        if self.x_s > self.x_e or self.y_s > self.y_e:
            raise ValueError(f"window for {self.site.value} has inverted bounds")


@dataclass(frozen=True)
class MarkerBinding:
    site: MarkerSite
    vertex_indices: np.ndarray  # sorted int indices

    def __post_init__(self):
        self.vertex_indices.setflags(write=False)


@dataclass(frozen=True)
class MarkerState:
    site: MarkerSite
    d_e: float
    color: MarkerColor
    radius: float


@dataclass(frozen=True)
class GuidanceFrame:
    timestamp: float
    current: BodyMesh  # aligned to the target
    target: BodyMesh
    markers: tuple[MarkerState, ...]
    rmse: float


def project_vertex(point, cam: CameraIntrinsics = CameraIntrinsics()) -> tuple[float, float]:
    """Project one 3D point to image pixels; raises behind the camera."""
    x, y, z = (float(c) for c in point)
    depth = z + cam.z_cam
    if depth <= _EPS_DEPTH:
        raise ProjectionError(f"point depth {depth:.3g} m is at or behind the camera")
    return (cam.f * x / depth + cam.cx, cam.f * y / depth + cam.cy)


def project_vertices(points: np.ndarray, cam: CameraIntrinsics = CameraIntrinsics()) -> np.ndarray:
    """Vectorized projection of (N, 3) points to (N, 2) pixels."""
    pts = np.asarray(points, dtype=np.float64)
    depth = pts[:, 2] + cam.z_cam
    if np.any(depth <= _EPS_DEPTH):
        raise ProjectionError("some points are at or behind the camera")
    out = np.empty((pts.shape[0], 2))
    out[:, 0] = cam.f * pts[:, 0] / depth + cam.cx
    out[:, 1] = cam.f * pts[:, 1] / depth + cam.cy
    return out


def compute_marker_windows(
    site_joints_px: dict[MarkerSite, tuple[float, float]],
    half_width: float,
) -> dict[MarkerSite, MarkerWindow]:
    """Square windows of the given half-width centered on projected joints."""
    if half_width < 0:
        raise ValueError("half_width must be nonnegative")
    return {
        site: MarkerWindow(site, jx - half_width, jy - half_width, jx + half_width, jy + half_width)
        for site, (jx, jy) in site_joints_px.items()
    }


def select_marker_vertices(
    mesh: BodyMesh,
    window: MarkerWindow,
    cam: CameraIntrinsics = CameraIntrinsics(),
) -> np.ndarray:
    """Indices of vertices projecting strictly inside the window.

    Evaluates the constraint form f*X vs (bound - c)*(Z + z_cam) on every
    vertex, which equals "project, then compare to the bounds" wherever
    the vertex is in front of the camera; behind-camera vertices are never
    selected.
    """
    v = mesh.vertices
    depth = v[:, 2] + cam.z_cam
    fx = cam.f * v[:, 0]
    fy = cam.f * v[:, 1]
    inside = (
        (depth > _EPS_DEPTH)
        & (fx > (window.x_s - cam.cx) * depth)
        & (fx < (window.x_e - cam.cx) * depth)
        & (fy > (window.y_s - cam.cy) * depth)
        & (fy < (window.y_e - cam.cy) * depth)
    )
    return np.nonzero(inside)[0]


def bind_markers(
    mesh: BodyMesh,
    cam: CameraIntrinsics = CameraIntrinsics(),
    half_width: float = 20.0,
    site_joints: dict[MarkerSite, int] | None = None,
) -> dict[MarkerSite, MarkerBinding]:
    """Bind every site to its window's vertex set on the given (target) mesh."""
    site_joints = site_joints if site_joints is not None else DEFAULT_SITE_JOINTS
    projected = {
        site: project_vertex(mesh.joints[joint], cam) for site, joint in site_joints.items()
    }
    windows = compute_marker_windows(projected, half_width)
    bindings: dict[MarkerSite, MarkerBinding] = {}
    for site, window in windows.items():
        indices = select_marker_vertices(mesh, window, cam)
        if indices.size == 0:
            raise BindingError(site, half_width)
        bindings[site] = MarkerBinding(site, indices)
    return bindings


def align_to_target(current: BodyMesh, target: BodyMesh) -> BodyMesh:
    """Translate the current mesh so the root (waist) joints coincide.

    Realized as "subtract own root, add target root" so the aligned root
    equals the target root bitwise and re-aligning is a no-op.
    """
    if current.vertices.shape != target.vertices.shape:
        raise ValueError("meshes must share topology")
    root = current.root_joint
    if np.array_equal(root, target.root_joint):
        return current
    return BodyMesh(
        (current.vertices - root) + target.root_joint,
        (current.joints - root) + target.root_joint,
    )


def binding_centroid(binding: MarkerBinding, mesh: BodyMesh) -> np.ndarray:
    return mesh.vertices[binding.vertex_indices].mean(axis=0)


def marker_distance(binding: MarkerBinding, current: BodyMesh, target: BodyMesh) -> float:
    """Distance between the binding's centroid on the two (aligned) meshes."""
    if binding.vertex_indices.size == 0:
        raise BindingError(binding.site, 0.0)
    delta = binding_centroid(binding, current) - binding_centroid(binding, target)
    return float(np.linalg.norm(delta))


def color_for_distance(
    d_e: float, thresholds: ColorThresholds = ColorThresholds()
) -> MarkerColor:
    """Four-step color scale over the marker distance, far to close."""
    if not math.isfinite(d_e) or d_e < 0:
        raise ValueError(f"marker distance must be finite and >= 0, got {d_e}")
    if d_e >= thresholds.red:
        return MarkerColor.RED
    if d_e >= thresholds.orange:
        return MarkerColor.ORANGE
    if d_e >= thresholds.yellow:
        return MarkerColor.YELLOW
    return MarkerColor.GREEN_YELLOW


def marker_radius(d_e: float, sizing: MarkerSizing = MarkerSizing()) -> float:
    """Pixel radius growing linearly with distance, clamped to [r_min, r_max]."""
    if not math.isfinite(d_e) or d_e < 0:
        raise ValueError(f"marker distance must be finite and >= 0, got {d_e}")
    raw = sizing.r_min + (sizing.r_max - sizing.r_min) * d_e / sizing.d_ref
    return float(min(max(raw, sizing.r_min), sizing.r_max))


def build_guidance_frame(
    current: BodyMesh,
    target: BodyMesh,
    bindings: dict[MarkerSite, MarkerBinding],
    cam: CameraIntrinsics,
    params: GuidanceParams,
    head_mask: np.ndarray,
    timestamp: float = 0.0,
) -> GuidanceFrame:
    """Align, then derive all ten marker states and the frame's RMSE sample."""
    aligned = align_to_target(current, target)
    markers = []
    for site in MARKER_SITES:
        d_e = marker_distance(bindings[site], aligned, target)
        markers.append(
            MarkerState(
                site=site,
                d_e=d_e,
                color=color_for_distance(d_e, params.thresholds),
                radius=marker_radius(d_e, params.sizing),
            )
        )
    rmse = compute_rmse(aligned, target, head_mask)
    return GuidanceFrame(
        timestamp=timestamp,
        current=aligned,
        target=target,
        markers=tuple(markers),
        rmse=rmse,
    )


# --- Skeleton-overlay baseline -------------------------------------------

#: COCO-18 keypoint order (OpenPose convention).
COCO_KEYPOINT_NAMES = (
    "nose", "neck", "r_shoulder", "r_elbow", "r_wrist", "l_shoulder",
    "l_elbow", "l_wrist", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee",
    "l_ankle", "r_eye", "l_eye", "r_ear", "l_ear",
)

#: Standard COCO-18 bone list (17 bones).
COCO_BONES: tuple[tuple[int, int], ...] = (
    (1, 2), (1, 5), (2, 3), (3, 4), (5, 6), (6, 7),
    (1, 8), (8, 9), (9, 10), (1, 11), (11, 12), (12, 13),
    (1, 0), (0, 14), (14, 16), (0, 15), (15, 17),
)

#: COCO index -> joint index on the 24-joint rig (head-derived points are None).
COCO_FROM_RIG_JOINTS: tuple[int | None, ...] = (
    None,  # nose: head joint + offset
    12,    # neck
    17,    # r_shoulder
    19,    # r_elbow
    21,    # r_wrist ("hands" in the 18-point set)
    16,    # l_shoulder
    18,    # l_elbow
    20,    # l_wrist
    2,     # r_hip
    5,     # r_knee
    8,     # r_ankle
    1,     # l_hip
    4,     # l_knee
    7,     # l_ankle
    None,  # r_eye
    None,  # l_eye
    None,  # r_ear
    None,  # l_ear
)

_HEAD_JOINT = 15

#: Face keypoints approximated from the head joint (model frame, meters).
#: The rig carries no face landmarks, so these fixed offsets stand in.
FACE_OFFSETS_FROM_HEAD: dict[int, tuple[float, float, float]] = {
    0: (0.0, 0.04, 0.11),     # nose
    14: (-0.035, 0.07, 0.09),  # r_eye
    15: (0.035, 0.07, 0.09),   # l_eye
    16: (-0.075, 0.05, 0.01),  # r_ear
    17: (0.075, 0.05, 0.01),   # l_ear
}


@dataclass(frozen=True)
class BoneSegment:
    joints: tuple[int, int]  # COCO keypoint indices
    start: tuple[float, float]
    end: tuple[float, float]


def coco_keypoints_from_mesh(mesh: BodyMesh) -> np.ndarray:
    """(18, 3) COCO-ordered points from rig joints plus head-offset face points."""
    pts = np.empty((len(COCO_KEYPOINT_NAMES), 3))
    head = mesh.joints[_HEAD_JOINT]
    for i in range(pts.shape[0]):
        rig = COCO_FROM_RIG_JOINTS[i]
        pts[i] = mesh.joints[rig] if rig is not None else head + np.asarray(FACE_OFFSETS_FROM_HEAD[i])
    return pts


def skeleton_overlay(
    source: EstimatedFrame | BodyMesh,
    cam: CameraIntrinsics = CameraIntrinsics(),
    confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
) -> list[BoneSegment]:
    """2D stick figure: COCO bones between confident keypoints.

    An EstimatedFrame contributes its own 2D keypoints when present
    (low-confidence joints drop their incident bones); otherwise the mesh
    joints are mapped to the 18-point set and projected.
    """
    if isinstance(source, EstimatedFrame) and source.keypoints2d is not None:
        kp = source.keypoints2d
        points = kp[:, :2]
        visible = kp[:, 2] > confidence_threshold
    else:
        mesh = source if isinstance(source, BodyMesh) else None
        if mesh is None:
            raise ValueError("frame carries no keypoints and no mesh was given")
        points = project_vertices(coco_keypoints_from_mesh(mesh), cam)
        visible = np.ones(len(points), dtype=bool)

    if int(visible.sum()) < 2:
        raise ValueError("fewer than 2 confident joints; no skeleton to draw")

    segments = []
    for a, b in COCO_BONES:
        if visible[a] and visible[b]:
            segments.append(
                BoneSegment(
                    joints=(a, b),
                    start=(float(points[a, 0]), float(points[a, 1])),
                    end=(float(points[b, 0]), float(points[b, 1])),
                )
            )
    return segments
