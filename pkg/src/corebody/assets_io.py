"""Body-model asset serialization.

Binary format (all little-endian):

    magic   4 bytes  b"CBM1"
    header  5 x u32  N, F, J, n_shape, flags (bit 0: pose blendshapes present)
    template_vertices  N*3   f64
    faces              F*3   u32
    shape_blendshapes  N*3*n_shape  f64
    joint_regressor    J*N   f64
    skinning_weights   N*J   f64
    kinematic_parents  J     u32  (0xFFFFFFFF marks the root)
    pose_blendshapes   N*3*9*(J-1)  f64, only when flag bit 0 set
    head_vertex_mask   ceil(N/8) bytes, packed bits, LSB first

A JSON mirror with the same field names (nested lists, parents with -1 for
the root) is accepted for hand-authored fixtures; ``load_assets`` sniffs
the magic to pick the parser.
"""

from __future__ import annotations

import io
import json
from typing import BinaryIO

import numpy as np

from .body_model import ROOT_PARENT, BodyModelAssets

MAGIC = b"CBM1"
_ROOT_SENTINEL = 0xFFFFFFFF
_FLAG_POSE_BLENDSHAPES = 1


class AssetFormatError(ValueError):
    """Stream is not a parseable asset file."""


def save_assets(assets: BodyModelAssets) -> bytes:
    """Serialize assets to the binary format."""
    n, f, j = assets.n_vertices, assets.n_faces, assets.n_joints
    n_shape = assets.shape_blendshapes.shape[2]
    flags = _FLAG_POSE_BLENDSHAPES if assets.pose_blendshapes is not None else 0

    parents = assets.kinematic_parents.astype(np.int64).copy()
    parents[parents == ROOT_PARENT] = _ROOT_SENTINEL

    out = io.BytesIO()
    out.write(MAGIC)
    out.write(np.array([n, f, j, n_shape, flags], dtype="<u4").tobytes())
    out.write(assets.template_vertices.astype("<f8").tobytes())
    out.write(assets.faces.astype("<u4").tobytes())
    out.write(assets.shape_blendshapes.astype("<f8").tobytes())
    out.write(assets.joint_regressor.astype("<f8").tobytes())
    out.write(assets.skinning_weights.astype("<f8").tobytes())
    out.write(parents.astype("<u4").tobytes())
    if assets.pose_blendshapes is not None:
        out.write(assets.pose_blendshapes.astype("<f8").tobytes())
    out.write(np.packbits(assets.head_vertex_mask, bitorder="little").tobytes())
    return out.getvalue()


def save_assets_file(assets: BodyModelAssets, path) -> None:
    with open(path, "wb") as fh:
        fh.write(save_assets(assets))


def load_assets(source: bytes | BinaryIO) -> BodyModelAssets:
    """Parse assets from binary or JSON bytes and validate every invariant."""
    data = source if isinstance(source, bytes) else source.read()
    if data[:4] == MAGIC:
        assets = _parse_binary(data)
    else:
        assets = _parse_json(data)
    return assets.validate()


def load_assets_file(path) -> BodyModelAssets:
    with open(path, "rb") as fh:
        return load_assets(fh.read())


class _Cursor:
    def __init__(self, data: bytes, offset: int):
        self.data = data
        self.offset = offset

    def take(self, dtype: str, count: int, shape: tuple[int, ...]) -> np.ndarray:
        nbytes = np.dtype(dtype).itemsize * count
        end = self.offset + nbytes
        if end > len(self.data):
            raise AssetFormatError(
                f"truncated stream: need {end} bytes, have {len(self.data)}"
            )
        arr = np.frombuffer(self.data[self.offset:end], dtype=dtype)
        self.offset = end
        return arr.reshape(shape).astype(dtype.replace("<", "="))


def _parse_binary(data: bytes) -> BodyModelAssets:
    if len(data) < 4 + 5 * 4:
        raise AssetFormatError("truncated stream: header incomplete")
    header = np.frombuffer(data[4:24], dtype="<u4")
    n, f, j, n_shape, flags = (int(x) for x in header)
    if n == 0 or j == 0:
        raise AssetFormatError("malformed header: zero vertex or joint count")
    if n_shape != 10:
        raise AssetFormatError(f"malformed header: expected 10 shape coefficients, got {n_shape}")

    cur = _Cursor(data, 24)
    template = cur.take("<f8", n * 3, (n, 3))
    faces = cur.take("<u4", f * 3, (f, 3))
    blend = cur.take("<f8", n * 3 * n_shape, (n, 3, n_shape))
    regressor = cur.take("<f8", j * n, (j, n))
    weights = cur.take("<f8", n * j, (n, j))
    parents_raw = cur.take("<u4", j, (j,))
    pose_blend = None
    if flags & _FLAG_POSE_BLENDSHAPES:
        pose_blend = cur.take("<f8", n * 3 * 9 * (j - 1), (n, 3, 9 * (j - 1)))
    mask_bytes = (n + 7) // 8
    if cur.offset + mask_bytes > len(data):
        raise AssetFormatError("truncated stream: head mask missing")
    mask = np.unpackbits(
        np.frombuffer(data[cur.offset:cur.offset + mask_bytes], dtype=np.uint8),
        bitorder="little",
    )[:n].astype(bool)

    parents = parents_raw.astype(np.int64)
    parents[parents_raw == _ROOT_SENTINEL] = ROOT_PARENT

    return BodyModelAssets(
        template_vertices=template,
        faces=faces.astype(np.uint32),
        shape_blendshapes=blend,
        joint_regressor=regressor,
        skinning_weights=weights,
        kinematic_parents=parents.astype(np.int32),
        head_vertex_mask=mask,
        pose_blendshapes=pose_blend,
    )


_JSON_FIELDS = (
    "template_vertices",
    "faces",
    "shape_blendshapes",
    "joint_regressor",
    "skinning_weights",
    "kinematic_parents",
    "head_vertex_mask",
)


def _parse_json(data: bytes) -> BodyModelAssets:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise AssetFormatError(f"neither CBM1 binary nor JSON assets: {exc}") from None
    if not isinstance(doc, dict):
        raise AssetFormatError("JSON assets must be an object")
    missing = [k for k in _JSON_FIELDS if k not in doc]
    if missing:
        raise AssetFormatError(f"JSON assets missing fields: {', '.join(missing)}")
    try:
        pose_blend = None
        if doc.get("pose_blendshapes") is not None:
            pose_blend = np.asarray(doc["pose_blendshapes"], dtype=np.float64)
        return BodyModelAssets(
            template_vertices=np.asarray(doc["template_vertices"], dtype=np.float64),
            faces=np.asarray(doc["faces"], dtype=np.uint32),
            shape_blendshapes=np.asarray(doc["shape_blendshapes"], dtype=np.float64),
            joint_regressor=np.asarray(doc["joint_regressor"], dtype=np.float64),
            skinning_weights=np.asarray(doc["skinning_weights"], dtype=np.float64),
            kinematic_parents=np.asarray(doc["kinematic_parents"], dtype=np.int32),
            head_vertex_mask=np.asarray(doc["head_vertex_mask"], dtype=bool),
        )
    except (TypeError, ValueError) as exc:
        raise AssetFormatError(f"malformed JSON asset arrays: {exc}") from None


def assets_to_json(assets: BodyModelAssets) -> str:
    """JSON mirror of the binary format, for hand-editable fixtures."""
    doc = {
        "template_vertices": assets.template_vertices.tolist(),
        "faces": assets.faces.tolist(),
        "shape_blendshapes": assets.shape_blendshapes.tolist(),
        "joint_regressor": assets.joint_regressor.tolist(),
        "skinning_weights": assets.skinning_weights.tolist(),
        "kinematic_parents": assets.kinematic_parents.tolist(),
        "head_vertex_mask": assets.head_vertex_mask.tolist(),
    }
    if assets.pose_blendshapes is not None:
        doc["pose_blendshapes"] = assets.pose_blendshapes.tolist()
    return json.dumps(doc)
