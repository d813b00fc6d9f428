"""
Marker windows on the image plane
=================================

Project the body through the fixed guidance camera, draw the ten marker
windows around the projected joints, and color each marker by its
distance between a bent "current" pose and the rest-pose target.
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from matplotlib.patches import Circle, Rectangle

from corebody import BodyPose, BodyShape, generate_test_assets, pose_mesh
from corebody.guidance import (
    DEFAULT_SITE_JOINTS,
    CameraIntrinsics,
    GuidanceParams,
    bind_markers,
    binding_centroid,
    build_guidance_frame,
    project_vertex,
    project_vertices,
)

out_dir = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(out_dir, exist_ok=True)

DISPLAY = {"red": "#d62728", "orange": "#ff7f0e", "yellow": "#e8c61a", "green_yellow": "#9acd32"}

assets = generate_test_assets(n_ring=8, seed=1)
cam = CameraIntrinsics()  # f=500 px, center (332.5, 325), body 2 m out
half_width = 20.0

target = pose_mesh(assets, BodyShape.zeros(), BodyPose.zeros())
bindings = bind_markers(target, cam, half_width)

rot = np.zeros((23, 3))
rot[15, 2] = -0.9
current = pose_mesh(assets, BodyShape.zeros(), BodyPose(np.zeros(3), rot))
frame = build_guidance_frame(
    current, target, bindings, cam, GuidanceParams(), assets.head_vertex_mask
)

fig, ax = plt.subplots(figsize=(7.5, 7.5))
for mesh, color, label in [(target, "#2060c0", "target"), (frame.current, "#c03030", "current")]:
    px = project_vertices(mesh.vertices, cam)
    ax.scatter(px[:, 0], px[:, 1], s=1.5, c=color, alpha=0.4, label=label)

for state in frame.markers:
    joint = target.joints[DEFAULT_SITE_JOINTS[state.site]]
    jx, jy = project_vertex(joint, cam)
    ax.add_patch(
        Rectangle(
            (jx - half_width, jy - half_width), 2 * half_width, 2 * half_width,
            fill=False, edgecolor="gray", linewidth=0.8,
        )
    )
    cx, cy = project_vertex(binding_centroid(bindings[state.site], frame.current), cam)
    ax.add_patch(Circle((cx, cy), state.radius, color=DISPLAY[state.color.value], alpha=0.75))
    print(f"{state.site.value:11s} d_e={state.d_e:6.3f} m -> {state.color.value:12s} r={state.radius:5.1f} px")

ax.set_xlim(60, 610)
ax.set_ylim(620, 30)  # image coordinates: y grows downward
ax.set_aspect("equal")
ax.set_title(f"marker windows and states (frame RMSE {frame.rmse:.3f} m)")
ax.legend(loc="upper right")
path = os.path.join(out_dir, "marker_windows.png")
fig.savefig(path, dpi=110)
print(f"wrote {path}")
