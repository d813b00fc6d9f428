import json
import time

import numpy as np
import pytest
from starlette.testclient import TestClient

from corebody import BodyPose, BodyShape
from corebody.estimator import synthesize_convergence_replay, write_poselog
from corebody.server import (
    KIND_CURRENT,
    KIND_TARGET,
    ServiceState,
    build_app,
    decode_mesh_frame,
    encode_mesh_frame,
)
from corebody.session import SessionConfig

from conftest import random_pose


ZERO_FRAME_DOC = {"t": 0.0, "theta": [0.0] * 72, "beta": [0.0] * 10}


@pytest.fixture()
def service(assets, tmp_path):
    state = ServiceState(assets, SessionConfig(), sessions_dir=tmp_path / "sessions")
    app = build_app(state)
    with TestClient(app) as client:
        yield client, state


def start_replay_session(client, tmp_path, rng, frames=6, speed="max"):
    target_pose = random_pose(rng, 0.25)
    replay = synthesize_convergence_replay(BodyPose.zeros(), target_pose, frames, 0.25)
    path = tmp_path / "stream.poselog"
    write_poselog(replay, path)
    target_doc = {
        "t": replay[-1].t,
        "theta": replay[-1].pose.to_vector().tolist(),
        "beta": replay[-1].shape.beta.tolist(),
    }
    assert client.post("/target", json=target_doc).status_code == 200
    resp = client.post("/session/start", json={"source": {"poselog": str(path)}, "speed": speed})
    assert resp.status_code == 200, resp.text
    return replay


class TestMeshFrameCodec:
    def test_round_trip(self, rng):
        verts = rng.normal(0, 1, (50, 3))
        frame_id, kind, decoded = decode_mesh_frame(encode_mesh_frame(7, verts, KIND_TARGET))
        assert frame_id == 7 and kind == KIND_TARGET
        assert decoded.shape == (50, 3)
        np.testing.assert_allclose(decoded, verts, atol=1e-6)  # f32 wire precision

    def test_header_is_16_bytes(self):
        blob = encode_mesh_frame(1, np.zeros((2, 3)))
        assert len(blob) == 16 + 2 * 3 * 4

    def test_bad_magic_rejected(self):
        with pytest.raises(ValueError, match="magic"):
            decode_mesh_frame(b"JUNK" + b"\0" * 12)


class TestRest:
    def test_config_round_trip(self, service):
        client, _ = service
        doc = client.get("/config").json()
        doc["viewpoints"][0]["azimuth"] = 42.0
        doc["viewpoints"][1]["distance"] = 5.5
        put = client.put("/config", json=doc)
        assert put.status_code == 200
        back = client.get("/config").json()
        assert back["viewpoints"][0]["azimuth"] == 42.0
        assert back["viewpoints"][1]["distance"] == 5.5

    def test_invalid_config_rejected(self, service):
        client, _ = service
        doc = client.get("/config").json()
        doc["thresholds"] = {"yellow": 0.5, "orange": 0.2, "red": 0.7}
        assert client.put("/config", json=doc).status_code == 400

    def test_topology_matches_assets(self, service, assets):
        client, _ = service
        topo = client.get("/topology").json()
        assert topo["vertexCount"] == assets.n_vertices
        assert topo["faceCount"] == assets.n_faces
        assert len(topo["faces"]) == assets.n_faces

    def test_target_binds_ten_sites(self, service):
        client, _ = service
        resp = client.post("/target", json=ZERO_FRAME_DOC)
        assert resp.status_code == 200
        bound = resp.json()["bound"]
        assert len(bound) == 10
        assert all(count > 0 for count in bound.values())

    def test_malformed_target_is_400(self, service):
        client, _ = service
        resp = client.post("/target", json={"t": 0.0, "theta": [0.0] * 71, "beta": [0.0] * 10})
        assert resp.status_code == 400
        assert "theta" in resp.json()["detail"]

    def test_report_404_before_any_session(self, service):
        client, _ = service
        assert client.get("/report").status_code == 404

    def test_session_start_requires_target(self, service):
        client, _ = service
        resp = client.post("/session/start", json={"source": {"poselog": "nope.poselog"}})
        assert resp.status_code == 409


def wait_for_metrics(ws, max_messages=200):
    """Consume WS messages until the finalize message; returns (frames, metrics)."""
    frames = []
    for _ in range(max_messages):
        message = ws.receive_json()
        if message["type"] == "metrics":
            return frames, message
        if message["type"] == "guidance":
            blob = ws.receive_bytes()
            frames.append((message, blob))
    raise AssertionError("no metrics message received")


class TestWebSocket:
    def test_subscriber_receives_stream_and_finalize(self, service, tmp_path, rng):
        client, state = service
        with client.websocket_connect("/ws/guidance") as ws:
            hello = ws.receive_json()
            assert hello["type"] == "hello"
            assert hello["vertexCount"] == state.assets.n_vertices

            replay = start_replay_session(client, tmp_path, rng)

            # target announced to subscribers connected before it was set?
            # this socket connected before POST /target, so first frames are guidance
            frames, metrics = wait_for_metrics(ws)
            assert len(frames) >= 1
            ids = [m["frameId"] for m, _ in frames]
            assert ids == sorted(ids)
            for message, blob in frames:
                frame_id, kind, verts = decode_mesh_frame(blob)
                assert kind == KIND_CURRENT
                assert frame_id == message["frameId"]
                assert verts.shape == (state.assets.n_vertices, 3)
                assert len(message["markers"]) == 10
            assert metrics["accuracyR"] == 100.0
            assert metrics["sampleCount"] == len(replay)

    def test_late_subscriber_gets_target_mesh(self, service, tmp_path, rng):
        client, state = service
        assert client.post("/target", json=ZERO_FRAME_DOC).status_code == 200
        with client.websocket_connect("/ws/guidance") as ws:
            assert ws.receive_json()["type"] == "hello"
            target_msg = ws.receive_json()
            assert target_msg["type"] == "target"
            _, kind, verts = decode_mesh_frame(ws.receive_bytes())
            assert kind == KIND_TARGET
            assert verts.shape == (state.assets.n_vertices, 3)

    def test_two_subscribers_both_complete(self, service, tmp_path, rng):
        client, state = service
        with client.websocket_connect("/ws/guidance") as ws1:
            with client.websocket_connect("/ws/guidance") as ws2:
                ws1.receive_json()
                ws2.receive_json()
                start_replay_session(client, tmp_path, rng, frames=5)
                frames1, metrics1 = wait_for_metrics(ws1)
                frames2, metrics2 = wait_for_metrics(ws2)
                # Every subscriber sees monotone ids ending at the last frame,
                # with drops (if any) detectable as id gaps.
                for frames in (frames1, frames2):
                    ids = [m["frameId"] for m, _ in frames]
                    assert ids == sorted(ids)
                    assert ids[-1] == 5
                assert metrics1 == metrics2

    def test_latest_wins_queue_drops_oldest(self):
        """The per-subscriber queue is bounded: a stalled consumer keeps only
        the newest entries, and the final (metrics) message is never lost."""
        from corebody.server import _Subscriber

        sub = _Subscriber(maxsize=2)
        for frame_id in range(1, 31):
            sub.offer(({"type": "guidance", "frameId": frame_id}, b""))
        sub.offer(({"type": "metrics"}, None))
        drained = []
        while not sub.queue.empty():
            drained.append(sub.queue.get_nowait())
        assert len(drained) == 2
        assert drained[0][0] == {"type": "guidance", "frameId": 30}
        assert drained[1][0] == {"type": "metrics"}

    def test_stalled_subscriber_never_blocks_metrics(self, service, tmp_path, rng):
        """Ingestion runs to completion regardless of consumer pace; the frame
        ids carried by each message make any drop detectable downstream."""
        client, state = service
        with client.websocket_connect("/ws/guidance") as ws:
            ws.receive_json()  # hello
            replay = start_replay_session(client, tmp_path, rng, frames=30)
            deadline = time.time() + 10.0
            while state.session_active and time.time() < deadline:
                time.sleep(0.01)
            assert not state.session_active
            frames, metrics = wait_for_metrics(ws)
            assert metrics["sampleCount"] == len(replay)
            ids = [m["frameId"] for m, _ in frames]
            assert ids == sorted(ids)

    def test_report_available_after_session(self, service, tmp_path, rng):
        client, state = service
        with client.websocket_connect("/ws/guidance") as ws:
            ws.receive_json()
            start_replay_session(client, tmp_path, rng)
            wait_for_metrics(ws)
        deadline = time.time() + 5.0
        while state.session_active and time.time() < deadline:
            time.sleep(0.01)
        report = client.get("/report")
        assert report.status_code == 200
        assert report.json()["accuracyR"] == 100.0

    def test_config_frozen_mid_session_except_viewpoints(self, service, tmp_path, rng):
        client, state = service
        slow = synthesize_convergence_replay(BodyPose.zeros(), random_pose(rng, 0.2), 40, 0.05)
        path = tmp_path / "slow.poselog"
        write_poselog(slow, path)
        assert client.post("/target", json=ZERO_FRAME_DOC).status_code == 200
        resp = client.post(
            "/session/start", json={"source": {"poselog": str(path)}, "speed": "realtime"}
        )
        assert resp.status_code == 200
        try:
            doc = client.get("/config").json()
            doc["viewpoints"][0]["azimuth"] = 77.0
            assert client.put("/config", json=doc).status_code == 200

            doc["mode"] = "skeleton"
            assert client.put("/config", json=doc).status_code == 409

            assert client.post("/target", json=ZERO_FRAME_DOC).status_code == 409
        finally:
            client.post("/session/stop")

    def test_skeleton_mode_messages(self, service, tmp_path, rng, assets):
        client, state = service
        doc = client.get("/config").json()
        doc["mode"] = "skeleton"
        assert client.put("/config", json=doc).status_code == 200
        with client.websocket_connect("/ws/guidance") as ws:
            hello = ws.receive_json()
            assert hello["mode"] == "skeleton"
            start_replay_session(client, tmp_path, rng, frames=4)
            for _ in range(50):
                message = ws.receive_json()
                if message["type"] == "guidance":
                    assert "skeleton" in message and "markers" not in message
                    assert len(message["skeleton"]) == 17
                    ws.receive_bytes()
                    break
                if message["type"] == "target":
                    ws.receive_bytes()
            else:
                raise AssertionError("no guidance message seen")
