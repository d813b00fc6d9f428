"""
Generating and posing a test body
=================================

Build the deterministic tube-limbed humanoid, apply shape coefficients,
pose a few joints, and render the results side by side.
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from corebody import BodyPose, BodyShape, generate_test_assets, pose_mesh

out_dir = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(out_dir, exist_ok=True)

# The default body: ~1k vertices, 24 joints, deterministic for a seed.
assets = generate_test_assets(n_ring=8, seed=1)
print(f"body: {assets.n_vertices} vertices, {assets.n_faces} faces, {assets.n_joints} joints")

# Three variants: rest pose, a taller/wider shape, and a bent pose.
rest = pose_mesh(assets, BodyShape.zeros(), BodyPose.zeros())

tall = BodyShape.from_vector(np.array([3.0, 2.0] + [0.0] * 8))
shaped = pose_mesh(assets, tall, BodyPose.zeros())

rot = np.zeros((23, 3))
rot[15, 2] = -1.1  # left shoulder swings the arm down
rot[3, 0] = 0.4    # left knee bends
bent = pose_mesh(assets, BodyShape.zeros(), BodyPose(np.zeros(3), rot))

fig, axes = plt.subplots(1, 3, figsize=(14, 6), subplot_kw={"projection": "3d"})
for ax, (mesh, title) in zip(
    axes, [(rest, "rest pose"), (shaped, "taller + wider shape"), (bent, "bent pose")]
):
    v = mesh.vertices
    ax.scatter(v[:, 0], v[:, 2], v[:, 1], s=2, c=v[:, 1], cmap="viridis")
    j = mesh.joints
    ax.scatter(j[:, 0], j[:, 2], j[:, 1], s=25, c="red", marker="o")
    ax.set_title(title)
    ax.set_box_aspect((1, 1, 2))
    ax.set_xlim(-0.9, 0.9)
    ax.set_ylim(-0.9, 0.9)
    ax.set_zlim(-1.1, 0.9)

fig.tight_layout()
path = os.path.join(out_dir, "posed_bodies.png")
fig.savefig(path, dpi=110)
print(f"wrote {path}")
