#!/usr/bin/env python3
"""Convert an official SMPL pickle into a corebody asset file.

The official body-model download (a Python pickle with fields
``v_template``, ``f``, ``shapedirs``, ``J_regressor``, ``weights``,
``kintree_table`` and ``posedirs``) is licensed and cannot ship with this
repository, so users run this converter themselves:

    python3 tools/convert_smpl_assets.py SMPL_NEUTRAL.pkl --out body.cbm

The head vertex mask is derived from the skinning weights: a vertex is
"head" when its dominant weight belongs to the head joint (index 15),
optionally also the neck (12) with ``--include-neck``.  Pass
``--drop-posedirs`` to produce a smaller file without pose blendshapes.

This script is intentionally outside the package and the test suite; the
test bodies used everywhere else are generated, not converted.
"""

from __future__ import annotations

import argparse
import pickle
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from corebody.assets_io import save_assets_file  # noqa: E402
from corebody.body_model import BodyModelAssets, ROOT_PARENT  # noqa: E402

HEAD_JOINT = 15
NECK_JOINT = 12


def dense(value) -> np.ndarray:
    """Pickle fields may be chumpy arrays or scipy sparse matrices."""
    if hasattr(value, "r"):
        value = value.r
    if hasattr(value, "todense"):
        value = value.todense()
    return np.asarray(value, dtype=np.float64)


def convert(path: Path, include_neck: bool, drop_posedirs: bool) -> BodyModelAssets:
    with open(path, "rb") as fh:
        data = pickle.load(fh, encoding="latin1")

    weights = dense(data["weights"])
    kintree = np.asarray(data["kintree_table"], dtype=np.int64)
    parents = kintree[0].astype(np.int32)
    parents[0] = ROOT_PARENT

    head_joints = {HEAD_JOINT} | ({NECK_JOINT} if include_neck else set())
    head_mask = np.isin(np.argmax(weights, axis=1), sorted(head_joints))

    shapedirs = dense(data["shapedirs"])[:, :, :10]
    posedirs = None
    if not drop_posedirs and "posedirs" in data:
        pd = dense(data["posedirs"])
        posedirs = pd.reshape(pd.shape[0], 3, -1)

    regressor = dense(data["J_regressor"])
    regressor = regressor / regressor.sum(axis=1, keepdims=True)
    weights = weights / weights.sum(axis=1, keepdims=True)

    assets = BodyModelAssets(
        template_vertices=dense(data["v_template"]),
        faces=np.asarray(data["f"], dtype=np.uint32),
        shape_blendshapes=shapedirs,
        joint_regressor=regressor,
        skinning_weights=weights,
        kinematic_parents=parents,
        head_vertex_mask=head_mask,
        pose_blendshapes=posedirs,
    )
    return assets.validate()


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("pickle", type=Path, help="official model pickle")
    parser.add_argument("--out", type=Path, required=True, help="output .cbm path")
    parser.add_argument("--include-neck", action="store_true",
                        help="count neck-dominated vertices as head")
    parser.add_argument("--drop-posedirs", action="store_true",
                        help="omit pose blendshapes from the output")
    args = parser.parse_args()

    assets = convert(args.pickle, args.include_neck, args.drop_posedirs)
    save_assets_file(assets, args.out)
    print(
        f"{args.out}: N={assets.n_vertices} F={assets.n_faces} J={assets.n_joints} "
        f"head={assets.n_vertices - assets.n_rmse_vertices} rmse={assets.n_rmse_vertices}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
