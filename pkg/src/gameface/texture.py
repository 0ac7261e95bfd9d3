"""Floating-point RGB rasters with optional validity masks, plus PNG I/O.

Values live in [0, 1], row-major ``(H, W, 3)`` float64. Row 0 is the top of
the image; texel ``(i, j)`` of a UV-space texture covers the UV square
centered at ``u = (j + 0.5) / W``, ``v = 1 - (i + 0.5) / H``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ValidationError

DEFAULT_TEXTURE_SIZE = 1024

IMAGE_SPACE = "image"
UV_SPACE = "uv"


@dataclass
class TextureMap:
    rgb: np.ndarray
    validity: np.ndarray | None = None

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float64)
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise ValidationError(f"texture must be HxWx3, got {self.rgb.shape}")
        if self.rgb.size and (self.rgb.min() < 0.0 or self.rgb.max() > 1.0):
            raise ValidationError("texture values outside [0, 1]")
        if self.validity is not None:
            self.validity = np.asarray(self.validity, dtype=bool)
            if self.validity.shape != self.rgb.shape[:2]:
                raise ValidationError("validity mask dimensions differ from rgb")

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    def copy(self) -> "TextureMap":
        return TextureMap(
            self.rgb.copy(), None if self.validity is None else self.validity.copy()
        )

    @classmethod
    def constant(
        cls, value, width: int = DEFAULT_TEXTURE_SIZE, height: int | None = None
    ) -> "TextureMap":
        height = width if height is None else height
        rgb = np.empty((height, width, 3))
        rgb[:] = np.asarray(value, dtype=np.float64).reshape(-1)[:3]
        return cls(rgb)


@dataclass
class SkinMask:
    """Binary pixel mask tagged with the space it lives in (image or UV)."""

    bits: np.ndarray
    space: str = IMAGE_SPACE

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 2:
            raise ValidationError("mask must be 2-D")
        if self.space not in (IMAGE_SPACE, UV_SPACE):
            raise ValidationError(f"mask space must be {IMAGE_SPACE!r} or {UV_SPACE!r}")

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def count(self) -> int:
        return int(self.bits.sum())


def read_image(path: str | Path) -> np.ndarray:
    """Load an 8- or 16-bit PNG (or any cv2-readable raster) into [0, 1] RGB."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ValidationError(f"cannot read image {path}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ValidationError(f"{path}: unsupported sample type {raw.dtype}")
    data = raw.astype(np.float64) / scale
    if data.ndim == 2:
        data = np.repeat(data[:, :, None], 3, axis=2)
    elif data.shape[2] == 4:
        data = data[:, :, :3][:, :, ::-1].copy()
    else:
        data = data[:, :, ::-1].copy()  # BGR -> RGB
    return data


def write_image(rgb: np.ndarray, path: str | Path, bit_depth: int = 8) -> None:
    """Write [0, 1] RGB to PNG at 8 or 16 bits per channel."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if bit_depth == 8:
        quantized = np.rint(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    elif bit_depth == 16:
        quantized = np.rint(np.clip(rgb, 0.0, 1.0) * 65535.0).astype(np.uint16)
    else:
        raise ValidationError("bit_depth must be 8 or 16")
    if quantized.ndim == 3:
        quantized = quantized[:, :, ::-1]  # RGB -> BGR
    if not cv2.imwrite(str(path), quantized):
        raise ValidationError(f"cannot write image {path}")


def read_texture(path: str | Path) -> TextureMap:
    return TextureMap(read_image(path))


def write_texture(texture: TextureMap, path: str | Path, bit_depth: int = 8) -> None:
    write_image(texture.rgb, path, bit_depth=bit_depth)


def read_mask(path: str | Path, space: str = IMAGE_SPACE) -> SkinMask:
    """Grayscale PNG thresholded at >127 (scaled equivalently for 16-bit)."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ValidationError(f"cannot read mask {path}")
    if raw.ndim == 3:
        raw = raw[:, :, 0]
    if raw.dtype == np.uint8:
        bits = raw > 127
    elif raw.dtype == np.uint16:
        bits = raw > (127 * 257)
    else:
        raise ValidationError(f"{path}: unsupported mask sample type {raw.dtype}")
    return SkinMask(bits, space)


def write_mask(mask: SkinMask, path: str | Path) -> None:
    if not cv2.imwrite(str(path), np.where(mask.bits, 255, 0).astype(np.uint8)):
        raise ValidationError(f"cannot write mask {path}")


def gaussian_blur(texture: TextureMap, sigma: float) -> TextureMap:
    """Separable Gaussian blur, kernel radius ceil(3*sigma), clamp-to-edge.

    The kernel is normalized, so blurring is a convex combination and the
    [0, 1] range is preserved.
    """
    if sigma <= 0:
        raise ValidationError("sigma must be positive")
    radius = math.ceil(3.0 * sigma)
    blurred = np.empty_like(texture.rgb)
    for c in range(3):
        blurred[:, :, c] = gaussian_filter(
            texture.rgb[:, :, c], sigma=sigma, mode="nearest", radius=radius
        )
    np.clip(blurred, 0.0, 1.0, out=blurred)
    return TextureMap(blurred, None if texture.validity is None else texture.validity.copy())


def default_blur_sigma(width: int) -> float:
    """Skin-regularization blur width: 5 px at 1024, scaled proportionally."""
    return 5.0 * width / 1024.0
