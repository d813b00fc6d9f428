"""corebody: compare a trainee's estimated 3D body mesh against a target pose.

The library turns per-frame pose parameters from an external estimator into
posed meshes, computes per-body-part difference markers (color and size),
scores a training session with an RMSE-based accuracy metric, and serves
live guidance frames to UI clients over REST + WebSocket.
"""

from .body_model import (
    AssetValidationError,
    BodyMesh,
    BodyModelAssets,
    BodyPose,
    BodyShape,
    ParameterError,
    interpolate_pose,
    pose_mesh,
    regress_joints,
    rodrigues,
    shape_template,
)
from .testbody import generate_test_assets
from .assets_io import (
    AssetFormatError,
    assets_to_json,
    load_assets,
    load_assets_file,
    save_assets,
    save_assets_file,
)

__version__ = "0.1.0"

__all__ = [
    "AssetFormatError",
    "AssetValidationError",
    "BodyMesh",
    "BodyModelAssets",
    "BodyPose",
    "BodyShape",
    "ParameterError",
    "assets_to_json",
    "generate_test_assets",
    "interpolate_pose",
    "load_assets",
    "load_assets_file",
    "pose_mesh",
    "regress_joints",
    "rodrigues",
    "save_assets",
    "save_assets_file",
    "shape_template",
]
