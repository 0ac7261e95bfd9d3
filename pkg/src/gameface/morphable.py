"""Linear morphable-model shape synthesis and the 257-coefficient layout.

The flattened shape vector interleaves coordinates per vertex:
``[x0, y0, z0, x1, y1, z1, ...]``. Basis files are flat little-endian
float64 binaries (mean, then identity matrix, then expression matrix, all
row-major) with a JSON sidecar recording the dimensions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

IDENTITY_DIMS = 80
EXPRESSION_DIMS = 64
TEXTURE_DIMS = 80
POSE_DIMS = 6
LIGHTING_SH_DIMS = 27
COEFFICIENT_DIMS = IDENTITY_DIMS + EXPRESSION_DIMS + TEXTURE_DIMS + POSE_DIMS + LIGHTING_SH_DIMS


@dataclass
class MorphableBasis:
    mean_shape: np.ndarray
    identity_basis: np.ndarray
    expression_basis: np.ndarray

    def __post_init__(self):
        self.mean_shape = np.asarray(self.mean_shape, dtype=np.float64).reshape(-1)
        self.identity_basis = np.asarray(self.identity_basis, dtype=np.float64)
        self.expression_basis = np.asarray(self.expression_basis, dtype=np.float64)
        rows = self.mean_shape.shape[0]
        if rows % 3 != 0:
            raise ValidationError("mean shape length must be a multiple of 3")
        if self.identity_basis.shape != (rows, IDENTITY_DIMS):
            raise ValidationError(
                f"identity basis must be {rows}x{IDENTITY_DIMS}, got {self.identity_basis.shape}"
            )
        if self.expression_basis.shape != (rows, EXPRESSION_DIMS):
            raise ValidationError(
                f"expression basis must be {rows}x{EXPRESSION_DIMS}, got {self.expression_basis.shape}"
            )

    @property
    def vertex_count(self) -> int:
        return self.mean_shape.shape[0] // 3


@dataclass
class Pose:
    """Rotation as XYZ intrinsic Euler angles (radians) plus translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(self.rotation)) or not np.all(np.isfinite(self.translation)):
            raise ValidationError("pose values must be finite")
        if np.any(np.abs(self.rotation) > 2 * math.pi):
            raise ValidationError("rotation angles must lie in [-2*pi, 2*pi]")

    def rotation_matrix(self) -> np.ndarray:
        ax, ay, az = self.rotation
        cx, sx = math.cos(ax), math.sin(ax)
        cy, sy = math.cos(ay), math.sin(ay)
        cz, sz = math.cos(az), math.sin(az)
        rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
        ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
        rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
        # Intrinsic XYZ: rotate about X, then the new Y, then the new Z.
        return rx @ ry @ rz

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation_matrix().T + self.translation

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.zeros(3))


@dataclass
class CoefficientVector:
    """The 257-vector split ``(identity 80, expression 64, texture 80, pose 6, lighting 27)``.

    Texture and spherical-harmonics lighting coefficients are carried for
    interoperability but drive nothing in this package.
    """

    identity: np.ndarray
    expression: np.ndarray
    texture: np.ndarray
    pose: np.ndarray
    lighting_sh: np.ndarray

    def __post_init__(self):
        expected = {
            "identity": IDENTITY_DIMS,
            "expression": EXPRESSION_DIMS,
            "texture": TEXTURE_DIMS,
            "pose": POSE_DIMS,
            "lighting_sh": LIGHTING_SH_DIMS,
        }
        for name, dims in expected.items():
            value = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if value.shape[0] != dims:
                raise ValidationError(f"{name} must have length {dims}, got {value.shape[0]}")
            setattr(self, name, value)

    def concatenate(self) -> np.ndarray:
        return np.concatenate(
            [self.identity, self.expression, self.texture, self.pose, self.lighting_sh]
        )

    def to_pose(self) -> Pose:
        return Pose(self.pose[:3], self.pose[3:])


def split_coefficients(raw: np.ndarray) -> CoefficientVector:
    raw = np.asarray(raw, dtype=np.float64).reshape(-1)
    if raw.shape[0] != COEFFICIENT_DIMS:
        raise ValidationError(f"coefficient vector must have length {COEFFICIENT_DIMS}, got {raw.shape[0]}")
    bounds = np.cumsum([IDENTITY_DIMS, EXPRESSION_DIMS, TEXTURE_DIMS, POSE_DIMS])
    return CoefficientVector(
        identity=raw[: bounds[0]],
        expression=raw[bounds[0] : bounds[1]],
        texture=raw[bounds[1] : bounds[2]],
        pose=raw[bounds[2] : bounds[3]],
        lighting_sh=raw[bounds[3] :],
    )


def synthesize_shape(basis: MorphableBasis, identity: np.ndarray, expression: np.ndarray) -> np.ndarray:
    """Mean shape plus identity and expression basis contributions."""
    identity = np.asarray(identity, dtype=np.float64).reshape(-1)
    expression = np.asarray(expression, dtype=np.float64).reshape(-1)
    if identity.shape[0] != IDENTITY_DIMS:
        raise ValidationError(f"identity coefficients must have length {IDENTITY_DIMS}")
    if expression.shape[0] != EXPRESSION_DIMS:
        raise ValidationError(f"expression coefficients must have length {EXPRESSION_DIMS}")
    return basis.mean_shape + basis.identity_basis @ identity + basis.expression_basis @ expression


def shape_to_vertices(shape: np.ndarray) -> np.ndarray:
    """Reshape a flat 3N shape vector into (N, 3) vertex positions."""
    shape = np.asarray(shape, dtype=np.float64).reshape(-1)
    if shape.shape[0] % 3 != 0:
        raise ValidationError("shape vector length must be a multiple of 3")
    return shape.reshape(-1, 3)


def save_basis(basis: MorphableBasis, path: str | Path) -> None:
    """Write ``<path>`` (flat LE float64) and ``<path>.json`` (dimensions)."""
    path = Path(path)
    blob = np.concatenate(
        [basis.mean_shape, basis.identity_basis.reshape(-1), basis.expression_basis.reshape(-1)]
    )
    blob.astype("<f8").tofile(path)
    sidecar = {
        "rows": int(basis.mean_shape.shape[0]),
        "identity_cols": IDENTITY_DIMS,
        "expression_cols": EXPRESSION_DIMS,
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=1) + "\n")


def load_basis(path: str | Path) -> MorphableBasis:
    path = Path(path)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    if not sidecar_path.exists():
        raise ValidationError(f"missing basis sidecar {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text())
    rows = int(sidecar["rows"])
    icols = int(sidecar.get("identity_cols", IDENTITY_DIMS))
    ecols = int(sidecar.get("expression_cols", EXPRESSION_DIMS))
    blob = np.fromfile(path, dtype="<f8")
    expected = rows * (1 + icols + ecols)
    if blob.shape[0] != expected:
        raise ValidationError(f"basis file {path} has {blob.shape[0]} values, expected {expected}")
    mean = blob[:rows]
    identity = blob[rows : rows * (1 + icols)].reshape(rows, icols)
    expression = blob[rows * (1 + icols) :].reshape(rows, ecols)
    return MorphableBasis(mean, identity, expression)


def load_coefficients(path: str | Path) -> CoefficientVector:
    """Read a 257-vector from a JSON array or a flat LE float64 binary."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        raw = np.asarray(json.loads(path.read_text()), dtype=np.float64)
    else:
        raw = np.fromfile(path, dtype="<f8")
    return split_coefficients(raw)
