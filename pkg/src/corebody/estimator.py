"""Gateway to the external pose estimator.

The neural pipeline (2D keypoints plus mesh-parameter regression) lives
outside this system; it talks to us through a newline-delimited JSON frame
protocol, one record per line:

    {"t": 1.5, "theta": [72 numbers], "beta": [10 numbers],
     "kp": [[x, y, confidence] * 18]}        # "kp" optional

The same records form replay files (extension ``.poselog``), arrive over
TCP, or stream from a child process's stdout; parsing is shared, so
transports are interchangeable.  This module is the validation boundary:
every frame it yields satisfies the full frame contract, and downstream
code may assume validity.

It also carries the normalization arithmetic the estimator applies before
inference: an axis-aligned keypoint bounding box is rescaled so its
diagonal hits a target size (150 px) inside a fixed 224x224 crop.  Only
the numbers pass through here; pixels never do.
"""

from __future__ import annotations

import json
import math
import socket
import subprocess
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .body_model import NUM_POSE_PARAMS, NUM_SHAPE_COEFFS, BodyPose, BodyShape, interpolate_pose

NUM_KEYPOINTS = 18
CROP_SIZE = 224
TARGET_DIAGONAL = 150.0
DEFAULT_CONFIDENCE_THRESHOLD = 0.1


class FrameProtocolError(ValueError):
    """A frame record violates the protocol (carries the 1-based line number)."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno is not None else message)


class StreamTransportError(RuntimeError):
    """The live transport failed (connect error, idle timeout)."""


class KeypointError(ValueError):
    """Keypoint-derived geometry is unusable (nothing confident, degenerate box)."""


@dataclass(frozen=True)
class EstimatedFrame:
    """One timestamped estimator output: pose, shape, optional 2D keypoints."""

    t: float
    pose: BodyPose
    shape: BodyShape
    keypoints2d: np.ndarray | None = None  # (18, 3): x px, y px, confidence


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def diagonal(self) -> float:
        return math.hypot(self.x_max - self.x_min, self.y_max - self.y_min)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))


@dataclass(frozen=True)
class CropSpec:
    scale: float
    crop_center: tuple[float, float]
    output_size: int = CROP_SIZE


def compute_bounding_box(
    keypoints2d: np.ndarray,
    confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
) -> BoundingBox:
    """Axis-aligned min/max box over keypoints above the confidence threshold."""
    kp = np.asarray(keypoints2d, dtype=np.float64)
    if kp.ndim != 2 or kp.shape[1] != 3:
        raise KeypointError(f"keypoints must be (K, 3), got {kp.shape}")
    confident = kp[kp[:, 2] > confidence_threshold]
    if confident.shape[0] == 0:
        raise KeypointError("no keypoints above the confidence threshold")
    return BoundingBox(
        float(confident[:, 0].min()),
        float(confident[:, 1].min()),
        float(confident[:, 0].max()),
        float(confident[:, 1].max()),
    )


def compute_crop(bbox: BoundingBox, target_diagonal: float = TARGET_DIAGONAL) -> CropSpec:
    """Scale so the box diagonal hits the target size; crop centered on the box."""
    diag = bbox.diagonal
    if diag <= 0.0:
        raise KeypointError("bounding box diagonal is zero")
    return CropSpec(scale=target_diagonal / diag, crop_center=bbox.center)


def parse_frame_record(line: str, lineno: int | None = None) -> EstimatedFrame:
    """Parse and validate one protocol line."""
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FrameProtocolError(f"invalid JSON: {exc.msg}", lineno) from None
    if not isinstance(doc, dict):
        raise FrameProtocolError("record must be a JSON object", lineno)
    for key in ("t", "theta", "beta"):
        if key not in doc:
            raise FrameProtocolError(f"missing field {key!r}", lineno)

    t = doc["t"]
    if not isinstance(t, (int, float)) or not math.isfinite(t):
        raise FrameProtocolError("timestamp must be a finite number", lineno)

    theta = np.asarray(doc["theta"], dtype=np.float64)
    if theta.shape != (NUM_POSE_PARAMS,):
        raise FrameProtocolError(
            f"theta must have {NUM_POSE_PARAMS} entries, got {theta.size}", lineno
        )
    beta = np.asarray(doc["beta"], dtype=np.float64)
    if beta.shape != (NUM_SHAPE_COEFFS,):
        raise FrameProtocolError(
            f"beta must have {NUM_SHAPE_COEFFS} entries, got {beta.size}", lineno
        )
    if not np.all(np.isfinite(theta)) or not np.all(np.isfinite(beta)):
        raise FrameProtocolError("non-finite pose or shape parameters", lineno)

    keypoints = None
    if doc.get("kp") is not None:
        keypoints = np.asarray(doc["kp"], dtype=np.float64)
        if keypoints.shape != (NUM_KEYPOINTS, 3):
            raise FrameProtocolError(
                f"kp must be {NUM_KEYPOINTS}x3, got {keypoints.shape}", lineno
            )
        if not np.all(np.isfinite(keypoints)):
            raise FrameProtocolError("non-finite keypoints", lineno)

    return EstimatedFrame(
        t=float(t),
        pose=BodyPose.from_vector(theta),
        shape=BodyShape.from_vector(beta),
        keypoints2d=keypoints,
    )


def frame_to_record(frame: EstimatedFrame) -> str:
    """One protocol line (no trailing newline)."""
    doc: dict = {
        "t": frame.t,
        "theta": frame.pose.to_vector().tolist(),
        "beta": frame.shape.beta.tolist(),
    }
    if frame.keypoints2d is not None:
        doc["kp"] = frame.keypoints2d.tolist()
    return json.dumps(doc)


def _parse_lines(lines: Iterable[str]) -> Iterator[EstimatedFrame]:
    """Shared record loop: skip blanks, enforce non-decreasing timestamps."""
    last_t = None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        frame = parse_frame_record(line, lineno)
        if last_t is not None and frame.t < last_t:
            raise FrameProtocolError(
                f"timestamp regression: {frame.t} after {last_t}", lineno
            )
        last_t = frame.t
        yield frame


def open_replay(source: IO[bytes] | IO[str] | bytes | str) -> Iterator[EstimatedFrame]:
    """Stream frames from a replay in file order, validating as it goes."""
    if isinstance(source, bytes):
        lines: Iterable[str] = source.decode("utf-8").splitlines()
    elif isinstance(source, str):
        lines = source.splitlines()
    else:
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        lines = text.splitlines()
    return _parse_lines(lines)


def open_replay_file(path) -> Iterator[EstimatedFrame]:
    with open(path, "rb") as fh:
        data = fh.read()
    return open_replay(data)


def write_poselog(frames: Iterable[EstimatedFrame], path) -> int:
    """Write frames as a .poselog file; returns the record count."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for frame in frames:
            fh.write(frame_to_record(frame))
            fh.write("\n")
            count += 1
    return count


def connect_external(
    endpoint: str | Sequence[str],
    idle_timeout: float = 30.0,
) -> Iterator[EstimatedFrame]:
    """Live frame stream from an external estimator.

    ``endpoint`` is either ``"host:port"`` (TCP) or an argv list for a
    child process whose stdout speaks the frame protocol.  Frames are
    yielded as produced; the stream ends when the peer closes.  A garbage
    line raises FrameProtocolError and closes the stream; silence longer
    than ``idle_timeout`` seconds raises StreamTransportError.
    """
    if isinstance(endpoint, str):
        return _stream_tcp(endpoint, idle_timeout)
    return _stream_child(list(endpoint), idle_timeout)


def _stream_tcp(address: str, idle_timeout: float) -> Iterator[EstimatedFrame]:
    host, _, port_text = address.rpartition(":")
    if not host or not port_text.isdigit():
        raise StreamTransportError(f"endpoint must be host:port, got {address!r}")
    try:
        sock = socket.create_connection((host, int(port_text)), timeout=idle_timeout)
    except OSError as exc:
        raise StreamTransportError(f"cannot connect to {address}: {exc}") from None

    def lines():
        with sock, sock.makefile("r", encoding="utf-8") as fh:
            sock.settimeout(idle_timeout)
            while True:
                try:
                    line = fh.readline()
                except socket.timeout:
                    raise StreamTransportError(
                        f"no frame within {idle_timeout} s from {address}"
                    ) from None
                if not line:
                    return  # peer closed cleanly
                yield line

    return _parse_lines(lines())


def _stream_child(argv: list[str], idle_timeout: float) -> Iterator[EstimatedFrame]:
    try:
        proc = subprocess.Popen(argv, stdout=subprocess.PIPE, text=True)
    except OSError as exc:
        raise StreamTransportError(f"cannot spawn {argv[0]}: {exc}") from None

    def lines():
        try:
            assert proc.stdout is not None
            yield from proc.stdout
        finally:
            proc.stdout.close()
            proc.wait()

    return _parse_lines(lines())


def synthesize_convergence_replay(
    start: BodyPose,
    target: BodyPose,
    frames: int,
    dt: float,
    shape: BodyShape | None = None,
) -> list[EstimatedFrame]:
    """Synthetic trainee walking linearly from a start pose onto the target.

    Frame i carries the interpolated pose at fraction i/(frames-1) and
    timestamp i*dt; the final frame equals the target parameters exactly.
    """
    if frames < 2:
        raise ValueError(f"need at least 2 frames, got {frames}")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    shape = shape if shape is not None else BodyShape.zeros()
    return [
        EstimatedFrame(
            t=i * dt,
            pose=interpolate_pose(start, target, i / (frames - 1)),
            shape=shape,
        )
        for i in range(frames)
    ]
