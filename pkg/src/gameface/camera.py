"""Pinhole camera: x right, y down, z forward, camera at the origin.

Projection lands in corner-origin continuous image coordinates: the center
of pixel ``(row i, col j)`` is at ``(j + 0.5, i + 0.5)``. The pose maps
model coordinates into this camera frame.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError


@dataclass
class PinholeCamera:
    focal_length: float
    principal_point: np.ndarray
    image_size: tuple[int, int]

    def __post_init__(self):
        self.focal_length = float(self.focal_length)
        self.principal_point = np.asarray(self.principal_point, dtype=np.float64).reshape(2)
        self.image_size = (int(self.image_size[0]), int(self.image_size[1]))
        if self.focal_length <= 0:
            raise ValidationError("focal length must be positive")
        if self.image_size[0] <= 0 or self.image_size[1] <= 0:
            raise ValidationError("image size must be positive")

    @property
    def width(self) -> int:
        return self.image_size[0]

    @property
    def height(self) -> int:
        return self.image_size[1]

    def project(self, points_cam: np.ndarray) -> np.ndarray:
        """Perspective-project camera-frame points; z must be handled by callers."""
        points_cam = np.asarray(points_cam, dtype=np.float64).reshape(-1, 3)
        z = points_cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            xy = self.focal_length * points_cam[:, :2] / z[:, None]
        return xy + self.principal_point

    @classmethod
    def default_for(cls, width: int, height: int | None = None) -> "PinholeCamera":
        height = width if height is None else height
        return cls(
            focal_length=1.2 * max(width, height),
            principal_point=(width / 2.0, height / 2.0),
            image_size=(width, height),
        )

    def to_dict(self) -> dict:
        return {
            "focal_length": self.focal_length,
            "principal_point": list(self.principal_point),
            "image_size": list(self.image_size),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PinholeCamera":
        try:
            return cls(data["focal_length"], data["principal_point"], data["image_size"])
        except KeyError as exc:
            raise ValidationError(f"camera description missing key {exc}") from exc


def load_camera(path: str | Path) -> PinholeCamera:
    return PinholeCamera.from_dict(json.loads(Path(path).read_text()))


def save_camera(camera: PinholeCamera, path: str | Path) -> None:
    Path(path).write_text(json.dumps(camera.to_dict(), indent=1) + "\n")
