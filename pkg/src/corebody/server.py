"""Delivery layer: REST configuration + WebSocket guidance streaming.

One service hosts one session at a time.  Frames are ingested on a worker
thread (single ordered sequence); every processed frame is broadcast to
WebSocket subscribers through bounded latest-wins queues, so a slow
subscriber drops intermediate frames (detectable through the frame id
carried by every message) and can never stall ingestion or metrics.

Wire format per guidance frame: one JSON text message

    {"type": "guidance", "frameId": k, "t": ..., "rmse": ...,
     "markers": [{"site", "d_e", "color", "radius", "pos"} * 10]}
    (skeleton mode replaces "markers" with "skeleton": [[x1,y1,x2,y2]...])

followed by one binary message with the aligned current-mesh vertices:

    magic b"MESH" | u32 frame id | u32 vertex count | u32 kind | f32 xyz...

kind 0 is a current mesh, kind 1 the target (sent once on subscribe).
Topology (faces) is fetched once over REST.  All little-endian.
"""

from __future__ import annotations

import asyncio
import json
import struct
import threading
import time
from contextlib import asynccontextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .body_model import BodyModelAssets
from .estimator import (
    EstimatedFrame,
    FrameProtocolError,
    connect_external,
    open_replay_file,
    parse_frame_record,
)
from .evaluation import SessionMetrics, render_report
from .guidance import BindingError, GuidanceFrame, binding_centroid, skeleton_overlay
from .session import (
    SessionConfig,
    SessionResult,
    SessionStore,
    TargetState,
    run_session,
    set_target,
)

MESH_MAGIC = b"MESH"
KIND_CURRENT = 0
KIND_TARGET = 1

_HEADER = struct.Struct("<4sIII")


def encode_mesh_frame(frame_id: int, vertices: np.ndarray, kind: int = KIND_CURRENT) -> bytes:
    """16-byte header + little-endian f32 vertex triplets."""
    header = _HEADER.pack(MESH_MAGIC, frame_id, vertices.shape[0], kind)
    return header + np.ascontiguousarray(vertices, dtype="<f4").tobytes()


def decode_mesh_frame(payload: bytes) -> tuple[int, int, np.ndarray]:
    """Returns (frame_id, kind, (N, 3) float32 vertices)."""
    magic, frame_id, count, kind = _HEADER.unpack_from(payload, 0)
    if magic != MESH_MAGIC:
        raise ValueError(f"bad mesh frame magic {magic!r}")
    vertices = np.frombuffer(payload, dtype="<f4", offset=_HEADER.size)
    if vertices.size != count * 3:
        raise ValueError(f"mesh frame carries {vertices.size} floats, expected {count * 3}")
    return frame_id, kind, vertices.reshape(count, 3)


def guidance_message(frame_id: int, guidance: GuidanceFrame, mode: str, cam, bindings) -> dict:
    doc: dict = {
        "type": "guidance",
        "frameId": frame_id,
        "t": guidance.timestamp,
        "rmse": guidance.rmse,
    }
    if mode == "skeleton":
        segments = skeleton_overlay(guidance.current, cam)
        doc["skeleton"] = [[*seg.start, *seg.end] for seg in segments]
    else:
        doc["markers"] = [
            {
                "site": m.site.value,
                "d_e": m.d_e,
                "color": m.color.value,
                "radius": m.radius,
                # marker drawn at the binding centroid on the user's mesh
                "pos": binding_centroid(bindings[m.site], guidance.current).tolist(),
            }
            for m in guidance.markers
        ]
    return doc


def metrics_message(metrics: SessionMetrics, mode: str, result: SessionResult) -> dict:
    return {
        "type": "metrics",
        "mode": mode,
        "rmse0": metrics.rmse_0,
        "rmseMin": metrics.rmse_min,
        "tMin": metrics.t_min,
        "accuracyR": metrics.accuracy_r,
        "nRmse": metrics.n_rmse,
        "sampleCount": metrics.sample_count,
        "framesSkipped": result.frames_skipped,
        "partial": result.partial,
    }


class _Subscriber:
    """Latest-wins bounded queue feeding one WebSocket."""

    def __init__(self, maxsize: int = 2):
        self.queue: asyncio.Queue = asyncio.Queue(maxsize=maxsize)

    def offer(self, item) -> None:
        while True:
            try:
                self.queue.put_nowait(item)
                return
            except asyncio.QueueFull:
                try:
                    self.queue.get_nowait()  # drop the oldest frame
                except asyncio.QueueEmpty:
                    pass


class ServiceState:
    def __init__(
        self,
        assets: BodyModelAssets,
        config: SessionConfig,
        sessions_dir: str | Path | None = None,
    ):
        self.assets = assets
        self.config = config
        self.store = SessionStore(sessions_dir)
        self.target: TargetState | None = None
        self.subscribers: set[_Subscriber] = set()
        self.session_thread: threading.Thread | None = None
        self.session_stop = threading.Event()
        self.last_report: dict | None = None
        self.last_frame_id = 0
        self.session_counter = 0
        self.lock = threading.Lock()

    @property
    def session_active(self) -> bool:
        return self.session_thread is not None and self.session_thread.is_alive()


def _frames_from_source(source: dict, state: ServiceState):
    if "poselog" in source:
        return open_replay_file(source["poselog"])
    if "tcp" in source:
        return connect_external(source["tcp"], idle_timeout=float(source.get("idleTimeout", 30.0)))
    if "cmd" in source:
        return connect_external(list(source["cmd"]))
    raise ValueError("source must carry 'poselog', 'tcp', or 'cmd'")


def build_app(state: ServiceState, static_dir: str | Path | None = None) -> FastAPI:
    @asynccontextmanager
    async def lifespan(_: FastAPI):
        yield
        # Shutdown: unblock and reap a still-running ingestion thread.
        state.session_stop.set()
        thread = state.session_thread
        if thread is not None and thread.is_alive():
            thread.join(timeout=5.0)

    app = FastAPI(title="corebody session service", lifespan=lifespan)

    def broadcast(loop: asyncio.AbstractEventLoop, message: dict, blob: bytes | None):
        def push():
            for sub in list(state.subscribers):
                sub.offer((message, blob))

        try:
            loop.call_soon_threadsafe(push)
        except RuntimeError:
            pass  # loop already closed; delivery is best-effort

    @app.get("/config")
    def get_config():
        return state.config.to_json()

    @app.put("/config")
    def put_config(doc: dict):
        try:
            new_config = SessionConfig.from_json(doc)
        except (ValueError, TypeError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        with state.lock:
            if state.session_active:
                frozen_now = replace(state.config, viewpoints=new_config.viewpoints)
                if frozen_now != new_config:
                    raise HTTPException(
                        status_code=409,
                        detail="session running: only viewpoint changes are allowed",
                    )
            state.config = new_config
        return state.config.to_json()

    @app.get("/topology")
    def get_topology():
        return {
            "vertexCount": state.assets.n_vertices,
            "faceCount": state.assets.n_faces,
            "faces": state.assets.faces.astype(int).tolist(),
        }

    @app.post("/target")
    def post_target(doc: dict):
        if state.session_active:
            raise HTTPException(status_code=409, detail="session running: target is frozen")
        try:
            frame = parse_frame_record(json.dumps(doc))
        except FrameProtocolError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        try:
            target = set_target(state.assets, state.config, frame)
        except BindingError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        state.target = target
        return {
            "bound": {site.value: int(b.vertex_indices.size) for site, b in target.bindings.items()},
            "vertexCount": state.assets.n_vertices,
        }

    @app.get("/report")
    def get_report():
        report = state.last_report or state.store.latest_report()
        if report is None:
            raise HTTPException(status_code=404, detail="no finished session")
        return report

    @app.post("/session/start")
    async def start_session(doc: dict):
        if state.session_active:
            raise HTTPException(status_code=409, detail="session already running")
        if state.target is None:
            raise HTTPException(status_code=409, detail="no target set")
        source = doc.get("source")
        if not isinstance(source, dict):
            raise HTTPException(status_code=400, detail="body must carry a 'source' object")
        speed = doc.get("speed", "max")
        if speed not in ("max", "realtime"):
            raise HTTPException(status_code=400, detail="speed must be 'max' or 'realtime'")
        try:
            frames = _frames_from_source(source, state)
        except (ValueError, OSError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))

        loop = asyncio.get_running_loop()
        state.session_counter += 1
        session_id = f"session-{state.session_counter:04d}"
        state.session_stop.clear()
        config = state.config
        target = state.target
        assert target is not None

        def worker():
            echoed: list[EstimatedFrame] = []
            prev_t: float | None = None

            def on_frame(frame_id: int, frame: EstimatedFrame, guidance: GuidanceFrame):
                nonlocal prev_t
                if state.session_stop.is_set():
                    raise _SessionStopped()
                if speed == "realtime" and prev_t is not None and frame.t > prev_t:
                    time.sleep(min(frame.t - prev_t, 1.0))
                prev_t = frame.t
                echoed.append(frame)
                state.last_frame_id = frame_id
                message = guidance_message(
                    frame_id, guidance, config.mode, config.camera, target.bindings
                )
                blob = encode_mesh_frame(frame_id, guidance.current.vertices, KIND_CURRENT)
                broadcast(loop, message, blob)

            try:
                result = run_session(state.assets, config, target, frames, on_frame)
            except _SessionStopped:
                return
            except Exception as exc:
                broadcast(loop, {"type": "error", "detail": str(exc)}, None)
                return
            state.store.persist(session_id, echoed, result, config.mode)
            state.last_report = json.loads(
                render_report(result.metrics, result.samples, config.mode)
            )
            broadcast(loop, metrics_message(result.metrics, config.mode, result), None)

        state.session_thread = threading.Thread(target=worker, daemon=True)
        state.session_thread.start()
        return {"sessionId": session_id, "speed": speed}

    @app.post("/session/stop")
    def stop_session():
        if not state.session_active:
            return {"stopped": False}
        state.session_stop.set()
        assert state.session_thread is not None
        state.session_thread.join(timeout=10.0)
        return {"stopped": True}

    @app.websocket("/ws/guidance")
    async def ws_guidance(sock: WebSocket):
        await sock.accept()
        sub = _Subscriber()
        state.subscribers.add(sub)
        try:
            await sock.send_json(
                {
                    "type": "hello",
                    "mode": state.config.mode,
                    "vertexCount": state.assets.n_vertices,
                    "lastFrameId": state.last_frame_id,
                }
            )
            if state.target is not None:
                await sock.send_json({"type": "target", "frameId": 0})
                await sock.send_bytes(
                    encode_mesh_frame(0, state.target.mesh.vertices, KIND_TARGET)
                )
            while True:
                message, blob = await sub.queue.get()
                await sock.send_json(message)
                if blob is not None:
                    await sock.send_bytes(blob)
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            state.subscribers.discard(sub)

    @app.exception_handler(json.JSONDecodeError)
    def bad_json(_, exc):
        return JSONResponse(status_code=400, content={"detail": f"invalid JSON: {exc}"})

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app


class _SessionStopped(Exception):
    pass
