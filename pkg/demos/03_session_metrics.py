"""
Scoring a training session
==========================

Synthesize a trainee converging onto a target pose (with some hesitation
in the middle), run the full per-frame pipeline, and plot the RMSE series
with the derived accuracy and training time.
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from corebody import BodyPose, BodyShape, generate_test_assets, interpolate_pose
from corebody.estimator import EstimatedFrame
from corebody.evaluation import render_report
from corebody.session import SessionConfig, run_session, set_target

out_dir = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(out_dir, exist_ok=True)

assets = generate_test_assets(n_ring=8, seed=1)
config = SessionConfig()

rng = np.random.default_rng(11)
target_pose = BodyPose.from_vector(rng.normal(0.0, 0.3, 72))
target = set_target(assets, config, EstimatedFrame(0.0, target_pose, BodyShape.zeros()))

# A plausible trainee: approach, overshoot back a little, then settle.
progress = np.concatenate([
    np.linspace(0.0, 0.8, 12),
    np.linspace(0.8, 0.55, 4),
    np.linspace(0.55, 1.0, 9),
])
frames = [
    EstimatedFrame(round(i * 0.4, 2), interpolate_pose(BodyPose.zeros(), target_pose, float(p)), BodyShape.zeros())
    for i, p in enumerate(progress)
]

result = run_session(assets, config, target, frames)
metrics = result.metrics
print(render_report(metrics, result.samples, config.mode))

ts = [s.t for s in result.samples]
values = [s.value for s in result.samples]
fig, ax = plt.subplots(figsize=(8, 4.5))
ax.plot(ts, values, marker="o", ms=3.5, lw=1.2)
ax.axhline(metrics.rmse_min, color="green", ls=":", lw=1)
ax.axvline(metrics.t_min, color="green", ls=":", lw=1)
ax.annotate(
    f"t_min = {metrics.t_min:g} s\nRMSE_min = {metrics.rmse_min:.4f} m",
    xy=(metrics.t_min, metrics.rmse_min),
    xytext=(metrics.t_min + 0.6, metrics.rmse_min + 0.05),
    arrowprops={"arrowstyle": "->"},
)
ax.set_xlabel("time [s]")
ax.set_ylabel("RMSE [m]")
ax.set_title(f"training session: accuracy R = {metrics.accuracy_r:.1f}")
fig.tight_layout()
path = os.path.join(out_dir, "session_rmse.png")
fig.savefig(path, dpi=110)
print(f"wrote {path}")
