"""Parametric body mesh: shape blendshapes, joint regression, linear blend skinning.

A body model is a fixed-topology triangle mesh deformed by two kinds of
parameters: 10 shape coefficients (``beta``) scaling a linear displacement
basis, and 72 pose parameters (``theta``) holding one axis-angle rotation per
joint of a 24-joint kinematic tree (23 body joints plus the root
orientation).  Posing regresses rest joints from the shaped vertices,
composes per-joint rigid transforms down the tree, and skins each vertex
with its blend of joint transforms.

All arrays are float64 and all positions are in meters.  Assets are
immutable after construction; every function here is pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NUM_SHAPE_COEFFS = 10
NUM_BODY_JOINTS = 23
NUM_JOINTS = NUM_BODY_JOINTS + 1
NUM_POSE_PARAMS = 3 * NUM_JOINTS

ROOT_PARENT = -1

_SMALL_ANGLE = 1e-8


class BodyModelError(ValueError):
    """Base class for body-model input problems."""


class AssetValidationError(BodyModelError):
    """Asset arrays violate a structural invariant."""


class ParameterError(BodyModelError):
    """Shape or pose parameters are malformed or non-finite."""


@dataclass(frozen=True)
class BodyShape:
    """10 dimensionless PCA-style shape coefficients."""

    beta: np.ndarray

    @staticmethod
    def zeros() -> "BodyShape":
        return BodyShape(np.zeros(NUM_SHAPE_COEFFS))

    @staticmethod
    def from_vector(values) -> "BodyShape":
        beta = np.asarray(values, dtype=np.float64)
        if beta.shape != (NUM_SHAPE_COEFFS,):
            raise ParameterError(
                f"shape vector must have {NUM_SHAPE_COEFFS} entries, got {beta.shape}"
            )
        return BodyShape(beta)

    def validate(self, limit: float = 10.0) -> None:
        if self.beta.shape != (NUM_SHAPE_COEFFS,):
            raise ParameterError(f"beta must be ({NUM_SHAPE_COEFFS},), got {self.beta.shape}")
        if not np.all(np.isfinite(self.beta)):
            raise ParameterError("beta contains non-finite values")
        if np.any(np.abs(self.beta) > limit):
            raise ParameterError(f"|beta| exceeds sanity limit {limit}")


@dataclass(frozen=True)
class BodyPose:
    """Axis-angle pose: root orientation plus 23 joint rotations (radians)."""

    root_orientation: np.ndarray
    joint_rotations: np.ndarray

    @staticmethod
    def zeros() -> "BodyPose":
        return BodyPose(np.zeros(3), np.zeros((NUM_BODY_JOINTS, 3)))

    @staticmethod
    def from_vector(values) -> "BodyPose":
        vec = np.asarray(values, dtype=np.float64).reshape(-1)
        if vec.shape != (NUM_POSE_PARAMS,):
            raise ParameterError(
                f"pose vector must have {NUM_POSE_PARAMS} entries, got {vec.shape[0]}"
            )
        return BodyPose(vec[:3].copy(), vec[3:].reshape(NUM_BODY_JOINTS, 3).copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.root_orientation, self.joint_rotations.reshape(-1)])

    def validate(self) -> None:
        if self.root_orientation.shape != (3,) or self.joint_rotations.shape != (NUM_BODY_JOINTS, 3):
            raise ParameterError("pose arrays have wrong shape")
        if not (np.all(np.isfinite(self.root_orientation)) and np.all(np.isfinite(self.joint_rotations))):
            raise ParameterError("pose contains non-finite values")


@dataclass(frozen=True)
class BodyMesh:
    """Posed mesh: vertex positions plus the posed joint locations."""

    vertices: np.ndarray
    joints: np.ndarray

    @property
    def root_joint(self) -> np.ndarray:
        return self.joints[0]

    def translated(self, offset: np.ndarray) -> "BodyMesh":
        offset = np.asarray(offset, dtype=np.float64)
        return BodyMesh(self.vertices + offset, self.joints + offset)


@dataclass(frozen=True)
class BodyModelAssets:
    """Everything fixed about one body model.

    Attributes
    ----------
    template_vertices : (N, 3) float64
        Rest-shape vertex positions, meters.
    faces : (F, 3) uint32
        Triangle vertex indices.
    shape_blendshapes : (N, 3, 10) float64
        Displacement per unit shape coefficient.
    joint_regressor : (J, N) float64
        Nonnegative rows summing to 1; joint = row . vertices.
    skinning_weights : (N, J) float64
        Nonnegative rows summing to 1.
    kinematic_parents : (J,) int32
        Parent joint index per joint; root is joint 0 with parent -1.
    pose_blendshapes : (N, 3, 9*(J-1)) float64 or None
        Optional displacement basis driven by (R - I) of the non-root joints.
    head_vertex_mask : (N,) bool
        True for head vertices (excluded from session error metrics).
    """

    template_vertices: np.ndarray
    faces: np.ndarray
    shape_blendshapes: np.ndarray
    joint_regressor: np.ndarray
    skinning_weights: np.ndarray
    kinematic_parents: np.ndarray
    head_vertex_mask: np.ndarray
    pose_blendshapes: np.ndarray | None = None

    @property
    def n_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    @property
    def n_joints(self) -> int:
        return self.joint_regressor.shape[0]

    @property
    def n_rmse_vertices(self) -> int:
        """Number of non-head vertices entering the session error metric."""
        return int(np.count_nonzero(~self.head_vertex_mask))

    def __post_init__(self):
        for name in (
            "template_vertices",
            "faces",
            "shape_blendshapes",
            "joint_regressor",
            "skinning_weights",
            "kinematic_parents",
            "head_vertex_mask",
            "pose_blendshapes",
        ):
            arr = getattr(self, name)
            if arr is not None:
                arr.setflags(write=False)

    def validate(self, weight_tol: float = 1e-6) -> "BodyModelAssets":
        """Check every structural invariant, raising AssetValidationError on the first failure."""
        n = self.template_vertices.shape[0]
        j = self.joint_regressor.shape[0]
        if self.template_vertices.ndim != 2 or self.template_vertices.shape[1] != 3:
            raise AssetValidationError("template_vertices must be (N, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise AssetValidationError("faces must be (F, 3)")
        if self.shape_blendshapes.shape != (n, 3, NUM_SHAPE_COEFFS):
            raise AssetValidationError(
                f"shape_blendshapes must be (N, 3, {NUM_SHAPE_COEFFS}), got {self.shape_blendshapes.shape}"
            )
        if self.joint_regressor.shape != (j, n):
            raise AssetValidationError("joint_regressor must be (J, N)")
        if self.skinning_weights.shape != (n, j):
            raise AssetValidationError("skinning_weights must be (N, J)")
        if self.kinematic_parents.shape != (j,):
            raise AssetValidationError("kinematic_parents must be (J,)")
        if self.head_vertex_mask.shape != (n,) or self.head_vertex_mask.dtype != np.bool_:
            raise AssetValidationError("head_vertex_mask must be (N,) bool")
        if self.pose_blendshapes is not None and self.pose_blendshapes.shape != (n, 3, 9 * (j - 1)):
            raise AssetValidationError(
                f"pose_blendshapes must be (N, 3, {9 * (j - 1)}), got {self.pose_blendshapes.shape}"
            )

        for name in ("template_vertices", "shape_blendshapes", "joint_regressor", "skinning_weights"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise AssetValidationError(f"{name} contains non-finite values")
        if self.pose_blendshapes is not None and not np.all(np.isfinite(self.pose_blendshapes)):
            raise AssetValidationError("pose_blendshapes contains non-finite values")

        if self.faces.size and int(self.faces.max()) >= n:
            raise AssetValidationError("face index out of range")
        if self.faces.size and int(self.faces.min()) < 0:
            raise AssetValidationError("negative face index")

        if np.any(self.skinning_weights < 0):
            raise AssetValidationError("skinning_weights must be nonnegative")
        w_sums = self.skinning_weights.sum(axis=1)
        bad = np.nonzero(np.abs(w_sums - 1.0) > weight_tol)[0]
        if bad.size:
            raise AssetValidationError(
                f"skinning weight row {bad[0]} sums to {w_sums[bad[0]]:.6g}, expected 1"
            )
        if np.any(self.joint_regressor < 0):
            raise AssetValidationError("joint_regressor must be nonnegative")
        r_sums = self.joint_regressor.sum(axis=1)
        bad = np.nonzero(np.abs(r_sums - 1.0) > weight_tol)[0]
        if bad.size:
            raise AssetValidationError(
                f"joint regressor row {bad[0]} sums to {r_sums[bad[0]]:.6g}, expected 1"
            )

        _check_tree(self.kinematic_parents)
        return self


def _check_tree(parents: np.ndarray) -> None:
    """Parents must encode a tree rooted at joint 0 (single root, no cycles)."""
    j = parents.shape[0]
    if j < 1 or parents[0] != ROOT_PARENT:
        raise AssetValidationError("joint 0 must be the root (parent -1)")
    if np.count_nonzero(parents == ROOT_PARENT) != 1:
        raise AssetValidationError("exactly one root joint allowed")
    for start in range(1, j):
        p = int(parents[start])
        seen = 0
        while p != ROOT_PARENT:
            if p < 0 or p >= j:
                raise AssetValidationError(f"joint {start} has parent outside [0, {j})")
            seen += 1
            if seen > j:
                raise AssetValidationError("kinematic_parents contains a cycle")
            p = int(parents[p])


def rodrigues(rotvecs: np.ndarray) -> np.ndarray:
    """Axis-angle vectors to rotation matrices.

    Accepts (..., 3) and returns (..., 3, 3).  Uses the closed-form
    R = I + sin(a) K + (1 - cos(a)) K^2 with K the unit-axis cross-product
    matrix; below ``1e-8`` radians the first-order series I + [r]_x is used
    so the identity pose reproduces exactly.
    """
    r = np.asarray(rotvecs, dtype=np.float64)
    flat = r.reshape(-1, 3)
    n = flat.shape[0]
    angle = np.linalg.norm(flat, axis=1)
    out = np.empty((n, 3, 3))

    small = angle < _SMALL_ANGLE
    if np.any(small):
        out[small] = np.eye(3) + _skew(flat[small])
    big = ~small
    if np.any(big):
        a = angle[big]
        axis = flat[big] / a[:, None]
        k = _skew(axis)
        sin = np.sin(a)[:, None, None]
        cos = np.cos(a)[:, None, None]
        out[big] = np.eye(3) + sin * k + (1.0 - cos) * (k @ k)
    return out.reshape(r.shape[:-1] + (3, 3))


def _skew(v: np.ndarray) -> np.ndarray:
    """(..., 3) vectors to cross-product matrices."""
    v = np.asarray(v, dtype=np.float64)
    zeros = np.zeros(v.shape[:-1])
    return np.stack(
        [
            np.stack([zeros, -v[..., 2], v[..., 1]], axis=-1),
            np.stack([v[..., 2], zeros, -v[..., 0]], axis=-1),
            np.stack([-v[..., 1], v[..., 0], zeros], axis=-1),
        ],
        axis=-2,
    )


def shape_template(assets: BodyModelAssets, shape: BodyShape) -> np.ndarray:
    """Rest-shape vertices: template plus beta-weighted blendshape displacements."""
    return assets.template_vertices + assets.shape_blendshapes @ shape.beta


def regress_joints(assets: BodyModelAssets, shaped_vertices: np.ndarray) -> np.ndarray:
    """Joint positions as the regressor-weighted average of the shaped vertices."""
    if shaped_vertices.shape[0] != assets.n_vertices:
        raise ParameterError(
            f"expected {assets.n_vertices} vertices, got {shaped_vertices.shape[0]}"
        )
    return assets.joint_regressor @ shaped_vertices


def pose_mesh(assets: BodyModelAssets, shape: BodyShape, pose: BodyPose) -> BodyMesh:
    """Forward model: shaped template posed by linear blend skinning.

    Steps: apply shape blendshapes, regress rest joints, convert each
    axis-angle to a rotation, compose world transforms down the kinematic
    tree, express them relative to the rest joints, and blend per vertex
    with the skinning weights.  When the assets carry pose blendshapes the
    rest shape is first corrected by the (R - I) feature of the 23 non-root
    joints.
    """
    shape.validate(limit=np.inf)
    pose.validate()
    if assets.n_joints != NUM_JOINTS:
        raise ParameterError(f"assets have {assets.n_joints} joints, pose expects {NUM_JOINTS}")

    v_shaped = shape_template(assets, shape)
    rest_joints = regress_joints(assets, v_shaped)

    rots = rodrigues(np.vstack([pose.root_orientation[None, :], pose.joint_rotations]))

    if assets.pose_blendshapes is not None:
        feature = (rots[1:] - np.eye(3)).reshape(-1)
        v_shaped = v_shaped + assets.pose_blendshapes @ feature

    world = _compose_world_transforms(rots, rest_joints, assets.kinematic_parents)
    posed_joints = world[:, :3, 3].copy()

    # Transforms relative to the rest joints: A_j = T_j . translate(-rest_j)
    rel = world.copy()
    rel[:, :3, 3] -= np.einsum("jab,jb->ja", world[:, :3, :3], rest_joints)

    blended = (assets.skinning_weights @ rel.reshape(NUM_JOINTS, 16)).reshape(-1, 4, 4)
    vertices = (
        np.einsum("nab,nb->na", blended[:, :3, :3], v_shaped) + blended[:, :3, 3]
    )
    return BodyMesh(vertices, posed_joints)


def _compose_world_transforms(
    rots: np.ndarray, rest_joints: np.ndarray, parents: np.ndarray
) -> np.ndarray:
    """Accumulate 4x4 joint-to-world transforms down the kinematic tree."""
    j = rots.shape[0]
    local = np.tile(np.eye(4), (j, 1, 1))
    local[:, :3, :3] = rots
    local[0, :3, 3] = rest_joints[0]
    local[1:, :3, 3] = rest_joints[1:] - rest_joints[parents[1:]]

    world = np.empty_like(local)
    world[0] = local[0]
    for i in range(1, j):
        world[i] = world[parents[i]] @ local[i]
    return world


def interpolate_pose(a: BodyPose, b: BodyPose, t: float) -> BodyPose:
    """Componentwise linear blend of two poses.

    Endpoints are exact: t=0 returns a's parameters, t=1 returns b's.
    Adequate for the small rotations used in synthetic replays; for large
    axis-angle differences this is not a geodesic interpolation.
    """
    if not 0.0 <= t <= 1.0:
        raise ParameterError(f"interpolation fraction must be in [0, 1], got {t}")
    va, vb = a.to_vector(), b.to_vector()
    return BodyPose.from_vector((1.0 - t) * va + t * vb)
