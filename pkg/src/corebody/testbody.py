"""Deterministic low-resolution humanoid for tests and demos.

Builds a tube-limbed body on the standard 24-joint kinematic tree: one
triangulated tube per bone plus a sphere for the head, roughly 1.7 m tall
and centered at the pelvis.  No licensed model data is involved; joint
regressor rows average the vertex ring placed at each joint, skinning
weights are rigid along each bone with a blended zone near the child
joint, and ten small smooth blendshape fields stand in for a learned
shape basis.
"""

from __future__ import annotations

import numpy as np

from .body_model import (
    NUM_JOINTS,
    NUM_SHAPE_COEFFS,
    ROOT_PARENT,
    BodyModelAssets,
)

KINEMATIC_PARENTS = np.array(
    [ROOT_PARENT, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21],
    dtype=np.int32,
)

JOINT_NAMES = [
    "pelvis", "l_hip", "r_hip", "spine1", "l_knee", "r_knee", "spine2",
    "l_ankle", "r_ankle", "spine3", "l_foot", "r_foot", "neck", "l_collar",
    "r_collar", "head", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow",
    "l_wrist", "r_wrist", "l_hand", "r_hand",
]

HEAD_JOINT = 15

# T-pose joint layout, meters.  +Y up, +X toward the subject's left,
# +Z toward the camera.  Pelvis at the origin.
_JOINT_POSITIONS = np.array(
    [
        [0.00, 0.00, 0.00],    # pelvis
        [0.09, -0.06, 0.00],   # l_hip
        [-0.09, -0.06, 0.00],  # r_hip
        [0.00, 0.11, 0.00],    # spine1
        [0.10, -0.50, 0.00],   # l_knee
        [-0.10, -0.50, 0.00],  # r_knee
        [0.00, 0.25, 0.00],    # spine2
        [0.10, -0.90, 0.00],   # l_ankle
        [-0.10, -0.90, 0.00],  # r_ankle
        [0.00, 0.31, 0.00],    # spine3
        [0.11, -0.95, 0.10],   # l_foot
        [-0.11, -0.95, 0.10],  # r_foot
        [0.00, 0.48, 0.00],    # neck
        [0.07, 0.42, 0.00],    # l_collar
        [-0.07, 0.42, 0.00],   # r_collar
        [0.00, 0.62, 0.00],    # head
        [0.17, 0.45, 0.00],    # l_shoulder
        [-0.17, 0.45, 0.00],   # r_shoulder
        [0.43, 0.45, 0.00],    # l_elbow
        [-0.43, 0.45, 0.00],   # r_elbow
        [0.68, 0.45, 0.00],    # l_wrist
        [-0.68, 0.45, 0.00],   # r_wrist
        [0.76, 0.45, 0.00],    # l_hand
        [-0.76, 0.45, 0.00],   # r_hand
    ]
)

# Tube radius at each joint; a bone tapers linearly between its endpoints.
_JOINT_RADII = {
    "pelvis": 0.105, "l_hip": 0.075, "r_hip": 0.075, "spine1": 0.105,
    "l_knee": 0.055, "r_knee": 0.055, "spine2": 0.110, "l_ankle": 0.042,
    "r_ankle": 0.042, "spine3": 0.110, "l_foot": 0.035, "r_foot": 0.035,
    "neck": 0.045, "l_collar": 0.060, "r_collar": 0.060, "head": 0.045,
    "l_shoulder": 0.050, "r_shoulder": 0.050, "l_elbow": 0.042,
    "r_elbow": 0.042, "l_wrist": 0.035, "r_wrist": 0.035, "l_hand": 0.032,
    "r_hand": 0.032,
}

_HEAD_SPHERE_RADIUS = 0.10
_HEAD_SPHERE_LIFT = 0.07

# Fraction of a bone (from the parent end) that stays rigidly attached to
# the parent joint; beyond it weights ramp smoothly to a 50/50 split at
# the child joint.
_RIGID_FRACTION = 0.6
_CHILD_MAX_WEIGHT = 0.5


def generate_test_assets(
    n_ring: int = 8,
    seed: int = 1,
    *,
    ring_spacing: float = 0.045,
    jitter: float = 0.002,
) -> BodyModelAssets:
    """Build a deterministic humanoid asset set.

    Parameters
    ----------
    n_ring : int
        Segments around each tube's circumference (>= 3).  8 yields a body
        of roughly a thousand vertices; larger values scale the mesh up.
    seed : int
        Drives the vertex jitter and the random blendshape fields only;
        the skeleton and topology are fixed.
    ring_spacing : float
        Approximate distance between consecutive rings along a bone.
    jitter : float
        Standard deviation of the per-vertex position noise, meters.
    """
    if n_ring < 3:
        raise ValueError(f"n_ring must be >= 3, got {n_ring}")
    if ring_spacing <= 0:
        raise ValueError("ring_spacing must be positive")

    rng = np.random.default_rng(seed)
    verts: list[np.ndarray] = []
    faces: list[tuple[int, int, int]] = []
    weight_rows: list[tuple[int, dict[int, float]]] = []  # (vertex, {joint: w})
    joint_rings: dict[int, list[int]] = {}

    def add_ring(center, radius, u, v):
        base = len(verts)
        angles = 2.0 * np.pi * np.arange(n_ring) / n_ring
        for a in angles:
            verts.append(center + radius * (np.cos(a) * u + np.sin(a) * v))
        return list(range(base, base + n_ring))

    def bridge(ring_a, ring_b):
        for k in range(n_ring):
            k2 = (k + 1) % n_ring
            faces.append((ring_a[k], ring_a[k2], ring_b[k2]))
            faces.append((ring_a[k], ring_b[k2], ring_b[k]))

    for child in range(1, NUM_JOINTS):
        parent = int(KINEMATIC_PARENTS[child])
        pa, pb = _JOINT_POSITIONS[parent], _JOINT_POSITIONS[child]
        ra = _JOINT_RADII[JOINT_NAMES[parent]]
        rb = _JOINT_RADII[JOINT_NAMES[child]]
        length = float(np.linalg.norm(pb - pa))
        axis = (pb - pa) / length
        u, v = _ring_basis(axis)
        n_rows = max(2, int(round(length / ring_spacing)) + 1)

        rings = []
        for i in range(n_rows):
            t = i / (n_rows - 1)
            ring = add_ring(pa + t * (pb - pa), ra + t * (rb - ra), u, v)
            rings.append(ring)
            w_child = _child_weight(t)
            for idx in ring:
                if w_child == 0.0:
                    weight_rows.append((idx, {parent: 1.0}))
                else:
                    weight_rows.append((idx, {parent: 1.0 - w_child, child: w_child}))
        for a, b in zip(rings[:-1], rings[1:]):
            bridge(a, b)

        joint_rings.setdefault(parent, rings[0])
        joint_rings[child] = rings[-1]

    head_center = _JOINT_POSITIONS[HEAD_JOINT] + np.array([0.0, _HEAD_SPHERE_LIFT, 0.0])
    _add_head_sphere(head_center, n_ring, verts, faces, weight_rows)

    template = np.array(verts)
    template += rng.normal(0.0, jitter, size=template.shape)

    n = template.shape[0]
    weights = np.zeros((n, NUM_JOINTS))
    for idx, row in weight_rows:
        for joint, w in row.items():
            weights[idx, joint] = w
    weights /= weights.sum(axis=1, keepdims=True)

    regressor = np.zeros((NUM_JOINTS, n))
    for joint, ring in joint_rings.items():
        regressor[joint, ring] = 1.0 / len(ring)

    head_mask = np.argmax(weights, axis=1) == HEAD_JOINT

    blend = _make_blendshapes(template, rng)

    assets = BodyModelAssets(
        template_vertices=template,
        faces=np.array(faces, dtype=np.uint32),
        shape_blendshapes=blend,
        joint_regressor=regressor,
        skinning_weights=weights,
        kinematic_parents=KINEMATIC_PARENTS.copy(),
        head_vertex_mask=head_mask,
        pose_blendshapes=None,
    )
    return assets.validate()


def _ring_basis(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    anchor = np.array([0.0, 0.0, 1.0])
    if abs(float(axis @ anchor)) > 0.9:
        anchor = np.array([1.0, 0.0, 0.0])
    u = np.cross(axis, anchor)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    return u, v


def _child_weight(t: float) -> float:
    if t <= _RIGID_FRACTION:
        return 0.0
    s = (t - _RIGID_FRACTION) / (1.0 - _RIGID_FRACTION)
    return _CHILD_MAX_WEIGHT * s * s * (3.0 - 2.0 * s)


def _add_head_sphere(center, n_ring, verts, faces, weight_rows):
    n_lat = max(3, n_ring // 2 + 2)
    bottom = len(verts)
    verts.append(center + np.array([0.0, -_HEAD_SPHERE_RADIUS, 0.0]))
    weight_rows.append((bottom, {HEAD_JOINT: 1.0}))

    rings = []
    for i in range(1, n_lat):
        phi = np.pi * i / n_lat
        y = -np.cos(phi) * _HEAD_SPHERE_RADIUS
        r = np.sin(phi) * _HEAD_SPHERE_RADIUS
        base = len(verts)
        for k in range(n_ring):
            a = 2.0 * np.pi * k / n_ring
            verts.append(center + np.array([r * np.cos(a), y, r * np.sin(a)]))
            weight_rows.append((base + k, {HEAD_JOINT: 1.0}))
        rings.append(list(range(base, base + n_ring)))

    top = len(verts)
    verts.append(center + np.array([0.0, _HEAD_SPHERE_RADIUS, 0.0]))
    weight_rows.append((top, {HEAD_JOINT: 1.0}))

    for k in range(n_ring):
        k2 = (k + 1) % n_ring
        faces.append((bottom, rings[0][k2], rings[0][k]))
        faces.append((top, rings[-1][k], rings[-1][k2]))
    for a, b in zip(rings[:-1], rings[1:]):
        for k in range(n_ring):
            k2 = (k + 1) % n_ring
            faces.append((a[k], a[k2], b[k2]))
            faces.append((a[k], b[k2], b[k]))


def _make_blendshapes(template: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = template.shape[0]
    blend = np.zeros((n, 3, NUM_SHAPE_COEFFS))
    # Coefficient 0: height (stretch along y away from the pelvis plane).
    blend[:, 1, 0] = 0.05 * template[:, 1]
    # Coefficient 1: girth (widen in x and z).
    blend[:, 0, 1] = 0.04 * template[:, 0]
    blend[:, 2, 1] = 0.04 * template[:, 2]
    # Remaining coefficients: small smooth harmonic displacement fields.
    for k in range(2, NUM_SHAPE_COEFFS):
        for c in range(3):
            freq = rng.uniform(1.0, 4.0, size=3)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            amp = rng.normal(0.0, 0.006)
            blend[:, c, k] = amp * np.sin(template @ freq + phase)
    return blend
