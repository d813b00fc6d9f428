"""
Live service over real sockets
==============================

Boot the REST + WebSocket service on a local port, set a target, stream a
synthetic replay through it, and consume the guidance broadcast exactly as
a UI client would: JSON marker states plus binary vertex frames.
"""

import json
import socket
import threading
import time

import numpy as np
import uvicorn
from websockets.sync.client import connect as ws_connect

from corebody import BodyPose, generate_test_assets
from corebody.estimator import synthesize_convergence_replay, write_poselog
from corebody.server import ServiceState, build_app, decode_mesh_frame
from corebody.session import SessionConfig
import tempfile, os, urllib.request

# --- boot the service on a free port --------------------------------------
sock = socket.socket()
sock.bind(("127.0.0.1", 0))
port = sock.getsockname()[1]
sock.close()

workdir = tempfile.mkdtemp(prefix="corebody-demo-")
state = ServiceState(generate_test_assets(8, 1), SessionConfig(), os.path.join(workdir, "sessions"))
server = uvicorn.Server(uvicorn.Config(build_app(state), host="127.0.0.1", port=port, log_level="warning"))
threading.Thread(target=server.run, daemon=True).start()
base = f"http://127.0.0.1:{port}"
while not server.started:
    time.sleep(0.02)
print(f"service listening on {base}")


def post(path, doc):
    req = urllib.request.Request(
        base + path, json.dumps(doc).encode(), {"Content-Type": "application/json"}
    )
    with urllib.request.urlopen(req) as resp:
        return json.loads(resp.read())


def get(path):
    with urllib.request.urlopen(base + path) as resp:
        return json.loads(resp.read())


# --- target + replay fixture ----------------------------------------------
rng = np.random.default_rng(5)
target_pose = BodyPose.from_vector(rng.normal(0.0, 0.25, 72))
replay = synthesize_convergence_replay(BodyPose.zeros(), target_pose, 12, 0.25)
replay_path = os.path.join(workdir, "session.poselog")
write_poselog(replay, replay_path)

topology = get("/topology")
print(f"topology: {topology['vertexCount']} vertices, {topology['faceCount']} faces")

bound = post("/target", {
    "t": 0.0,
    "theta": target_pose.to_vector().tolist(),
    "beta": [0.0] * 10,
})
print("bound vertices per site:", bound["bound"])

# --- subscribe, then start the session ------------------------------------
with ws_connect(f"ws://127.0.0.1:{port}/ws/guidance") as ws:
    hello = json.loads(ws.recv())
    print("hello:", hello)
    target_msg = json.loads(ws.recv())          # target mesh announcement
    frame_id, kind, target_verts = decode_mesh_frame(ws.recv())
    print(f"target mesh: kind={kind} {target_verts.shape}")

    post("/session/start", {"source": {"poselog": replay_path}, "speed": "max"})

    while True:
        message = json.loads(ws.recv())
        if message["type"] == "metrics":
            print(f"finalized: R={message['accuracyR']:.1f} t_min={message['tMin']} s")
            break
        if message["type"] != "guidance":
            continue
        _, _, verts = decode_mesh_frame(ws.recv())
        worst = max(message["markers"], key=lambda m: m["d_e"])
        print(
            f"frame {message['frameId']:2d}  rmse={message['rmse']:.4f} m  "
            f"worst={worst['site']}:{worst['color']}"
        )

report = get("/report")
print(f"report: mode={report['mode']} R={report['accuracyR']:.1f} samples={report['sampleCount']}")
server.should_exit = True
