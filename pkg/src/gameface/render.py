"""Deterministic software rasterizer with Blinn-Phong shading and analytic
gradients with respect to texture texels and lighting coefficients.

Rasterization is hard (pixel-center sampling, z-buffer, top-left fill rule,
depth ties to the lower triangle index); shading and texture sampling are
smooth, which is where the gradients come from. Triangles touching or
crossing the near plane are discarded rather than clipped. Everything is
plain single-threaded numpy, so identical inputs give bitwise-identical
outputs no matter the host's thread configuration.

Shading happens in the camera frame: the pose places the mesh in it, the
camera sits at the origin, and ``light_direction`` is expressed in it
(pointing from the surface toward the light).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import PinholeCamera
from .errors import ValidationError
from .mesh import Mesh, compute_vertex_normals
from .morphable import Pose
from .texture import TextureMap

_NEAR_EPS = 1e-9
NO_TRIANGLE = -1


@dataclass
class PhongLighting:
    """Directional light plus ambient term.

    ``light_direction`` is a unit vector from the surface toward the light,
    in the camera frame.
    """

    light_direction: np.ndarray
    ambient_rgb: np.ndarray
    diffuse_rgb: np.ndarray
    specular_rgb: np.ndarray
    shininess: float = 16.0

    def __post_init__(self):
        self.light_direction = np.asarray(self.light_direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(self.light_direction) - 1.0) > 1e-6:
            raise ValidationError("light_direction must be unit length")
        for name in ("ambient_rgb", "diffuse_rgb", "specular_rgb"):
            value = np.asarray(getattr(self, name), dtype=np.float64).reshape(3)
            if value.min() < 0.0 or value.max() > 1.0:
                raise ValidationError(f"{name} components must lie in [0, 1]")
            setattr(self, name, value)
        self.shininess = float(self.shininess)
        if self.shininess <= 0:
            raise ValidationError("shininess must be positive")

    def to_dict(self) -> dict:
        return {
            "light_direction": list(self.light_direction),
            "ambient_rgb": list(self.ambient_rgb),
            "diffuse_rgb": list(self.diffuse_rgb),
            "specular_rgb": list(self.specular_rgb),
            "shininess": self.shininess,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PhongLighting":
        try:
            return cls(
                data["light_direction"],
                data["ambient_rgb"],
                data["diffuse_rgb"],
                data["specular_rgb"],
                data.get("shininess", 16.0),
            )
        except KeyError as exc:
            raise ValidationError(f"lighting description missing key {exc}") from exc


def load_lighting(path: str | Path) -> PhongLighting:
    return PhongLighting.from_dict(json.loads(Path(path).read_text()))


def save_lighting(lighting: PhongLighting, path: str | Path) -> None:
    Path(path).write_text(json.dumps(lighting.to_dict(), indent=1) + "\n")


@dataclass
class FrameBuffers:
    """Raster outputs plus the interpolated geometry shading needs.

    ``uv``, ``position`` and ``normal`` are caches filled by ``rasterize``
    (camera-frame position, unit normal) so that ``shade`` and
    ``render_backward`` need no pose argument.
    """

    color: np.ndarray
    depth: np.ndarray
    coverage: np.ndarray
    triangle_id: np.ndarray
    barycentric: np.ndarray
    uv: np.ndarray | None = None
    position: np.ndarray | None = None
    normal: np.ndarray | None = None
    clear_color: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def height(self) -> int:
        return self.color.shape[0]

    @property
    def width(self) -> int:
        return self.color.shape[1]


@dataclass
class RenderGradients:
    d_texture: np.ndarray
    d_ambient: np.ndarray
    d_diffuse: np.ndarray
    d_specular: np.ndarray
    d_light_direction: np.ndarray
    d_shininess: float


def _is_top_left(dx: float, dy: float) -> bool:
    # y grows downward; interiors sit on the positive side of each edge.
    return dy < 0.0 or (dy == 0.0 and dx > 0.0)


def rasterize_triangles_2d(
    points: np.ndarray,
    triangles: np.ndarray,
    width: int,
    height: int,
    vertex_depth: np.ndarray | None = None,
):
    """Shared 2-D rasterization core over pixel centers ``(j+0.5, i+0.5)``.

    ``vertex_depth`` is interpolated screen-linearly; the smallest value wins
    the pixel, ties going to the lower triangle index. With no depth, the
    lowest overlapping triangle index wins. Returns ``(triangle_id,
    barycentric, depth)`` where barycentrics are the screen-linear weights.
    """
    points = np.asarray(points, dtype=np.float64)
    triangles = np.asarray(triangles, dtype=np.int64)
    tri_id = np.full((height, width), NO_TRIANGLE, dtype=np.int64)
    bary = np.zeros((height, width, 3))
    depth = np.full((height, width), np.inf)

    for k in range(len(triangles)):
        idx = triangles[k]
        if vertex_depth is not None and np.any(~np.isfinite(vertex_depth[idx])):
            continue
        p = points[idx]
        order = (0, 1, 2)
        area2 = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[1, 1] - p[0, 1]) * (p[2, 0] - p[0, 0])
        if area2 == 0.0:
            continue
        if area2 < 0.0:
            order = (0, 2, 1)
            p = p[list(order)]
            area2 = -area2

        x_lo = max(0, math.ceil(p[:, 0].min() - 0.5))
        x_hi = min(width - 1, math.floor(p[:, 0].max() - 0.5))
        y_lo = max(0, math.ceil(p[:, 1].min() - 0.5))
        y_hi = min(height - 1, math.floor(p[:, 1].max() - 0.5))
        if x_lo > x_hi or y_lo > y_hi:
            continue

        xs = np.arange(x_lo, x_hi + 1) + 0.5
        ys = np.arange(y_lo, y_hi + 1) + 0.5
        sx = xs[None, :]
        sy = ys[:, None]

        inside = np.ones((len(ys), len(xs)), dtype=bool)
        edge_vals = []
        for e in range(3):
            a = p[(e + 1) % 3]
            b = p[(e + 2) % 3]
            dx, dy = b[0] - a[0], b[1] - a[1]
            val = dx * (sy - a[1]) - dy * (sx - a[0])
            accept = val > 0.0
            if _is_top_left(dx, dy):
                accept |= val == 0.0
            inside &= accept
            edge_vals.append(val)
        if not inside.any():
            continue

        lam = np.stack(edge_vals, axis=-1) / area2
        if vertex_depth is not None:
            cand_depth = lam @ vertex_depth[list(idx[list(order)])]
        else:
            cand_depth = np.zeros(inside.shape)

        region = (slice(y_lo, y_hi + 1), slice(x_lo, x_hi + 1))
        better = inside & (cand_depth < depth[region])
        if not better.any():
            continue
        depth[region][better] = cand_depth[better]
        tri_id[region][better] = k
        # Store barycentrics in the triangle's original vertex order.
        unscramble = np.argsort(order)
        bary[region][better] = lam[better][:, unscramble]

    return tri_id, bary, depth


def _mesh_normals(mesh: Mesh) -> np.ndarray:
    return mesh.normals if mesh.normals is not None else compute_vertex_normals(mesh)


def rasterize(
    mesh: Mesh,
    pose: Pose,
    camera: PinholeCamera,
    size: tuple[int, int] | None = None,
) -> FrameBuffers:
    """Geometry-only pass: perspective projection, z-buffer, attribute caches.

    ``size`` overrides the raster dimensions (defaults to the camera's image
    size). Color is initialized to the clear color; call :func:`shade` or
    :func:`render` to fill it.
    """
    width, height = size if size is not None else camera.image_size
    rotation = pose.rotation_matrix()
    verts_cam = mesh.vertices @ rotation.T + pose.translation
    normals_cam = _mesh_normals(mesh) @ rotation.T
    xy = camera.project(verts_cam)
    z = verts_cam[:, 2]

    # Interpolating 1/z screen-linearly is perspective-correct; negate so the
    # shared "smallest wins" core keeps the nearest surface.
    neg_inv_z = np.where(z > _NEAR_EPS, -1.0 / np.where(z > _NEAR_EPS, z, 1.0), np.nan)
    tri_id, screen_bary, core_depth = rasterize_triangles_2d(
        xy, mesh.triangles, width, height, vertex_depth=neg_inv_z
    )

    coverage = tri_id != NO_TRIANGLE
    depth = np.full((height, width), np.inf)
    depth[coverage] = -1.0 / core_depth[coverage]

    buffers = FrameBuffers(
        color=np.zeros((height, width, 3)),
        depth=depth,
        coverage=coverage,
        triangle_id=tri_id,
        barycentric=np.zeros((height, width, 3)),
        uv=np.zeros((height, width, 2)),
        position=np.zeros((height, width, 3)),
        normal=np.zeros((height, width, 3)),
    )
    if not coverage.any():
        return buffers

    tris = mesh.triangles[tri_id[coverage]]
    lam = screen_bary[coverage]
    zi = z[tris]
    w = lam / zi
    persp = w / w.sum(axis=1, keepdims=True)
    buffers.barycentric[coverage] = persp

    def interpolate(attr: np.ndarray) -> np.ndarray:
        return (
            persp[:, 0, None] * attr[tris[:, 0]]
            + persp[:, 1, None] * attr[tris[:, 1]]
            + persp[:, 2, None] * attr[tris[:, 2]]
        )

    buffers.position[coverage] = interpolate(verts_cam)
    n = interpolate(normals_cam)
    lengths = np.linalg.norm(n, axis=1)
    lengths[lengths < 1e-20] = 1.0
    buffers.normal[coverage] = n / lengths[:, None]
    if mesh.uvs is not None:
        buffers.uv[coverage] = interpolate(mesh.uvs)
    return buffers


def bilinear_setup(x: np.ndarray, y: np.ndarray, width: int, height: int):
    """Clamp-to-edge bilinear footprint at corner-origin coordinates.

    Returns ``(rows0, cols0, rows1, cols1, w00, w01, w10, w11)`` where the
    second index in each weight name walks x.
    """
    xf = x - 0.5
    yf = y - 0.5
    x0 = np.floor(xf)
    y0 = np.floor(yf)
    fx = xf - x0
    fy = yf - y0
    c0 = np.clip(x0.astype(np.int64), 0, width - 1)
    c1 = np.clip(x0.astype(np.int64) + 1, 0, width - 1)
    r0 = np.clip(y0.astype(np.int64), 0, height - 1)
    r1 = np.clip(y0.astype(np.int64) + 1, 0, height - 1)
    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy
    return r0, c0, r1, c1, w00, w01, w10, w11


def sample_image_bilinear(image: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear sample at corner-origin image coordinates, clamp-to-edge."""
    h, w = image.shape[:2]
    r0, c0, r1, c1, w00, w01, w10, w11 = bilinear_setup(x, y, w, h)
    if image.ndim == 3:
        w00, w01, w10, w11 = (v[:, None] for v in (w00, w01, w10, w11))
    return (
        w00 * image[r0, c0]
        + w01 * image[r0, c1]
        + w10 * image[r1, c0]
        + w11 * image[r1, c1]
    )


def _uv_to_image_coords(uv: np.ndarray, width: int, height: int):
    x = uv[:, 0] * width
    y = (1.0 - uv[:, 1]) * height
    return x, y


def sample_texture_bilinear(texture: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Bilinear texture lookup; UV (0,0) is the bottom-left of the map."""
    h, w = texture.shape[:2]
    x, y = _uv_to_image_coords(uv, w, h)
    return sample_image_bilinear(texture, x, y)


def _shading_terms(buffers: FrameBuffers, texture: np.ndarray, lighting: PhongLighting):
    """Forward shading intermediates for covered pixels (shared with backward)."""
    covered = buffers.coverage
    uv = buffers.uv[covered]
    pos = buffers.position[covered]
    normal = buffers.normal[covered]

    th, tw = texture.shape[:2]
    x, y = _uv_to_image_coords(uv, tw, th)
    footprint = bilinear_setup(x, y, tw, th)
    r0, c0, r1, c1, w00, w01, w10, w11 = footprint
    albedo = (
        w00[:, None] * texture[r0, c0]
        + w01[:, None] * texture[r0, c1]
        + w10[:, None] * texture[r1, c0]
        + w11[:, None] * texture[r1, c1]
    )

    light = lighting.light_direction
    view = -pos
    view_len = np.linalg.norm(view, axis=1)
    view_len[view_len < 1e-20] = 1.0
    view = view / view_len[:, None]

    half_raw = view + light
    half_len = np.linalg.norm(half_raw, axis=1)
    half_len[half_len < 1e-20] = 1.0
    half = half_raw / half_len[:, None]

    ndl = np.maximum(0.0, normal @ light)
    ndh = np.maximum(0.0, (normal * half).sum(axis=1))
    spec_pow = np.where(ndh > 0.0, ndh, 1.0) ** lighting.shininess
    spec_pow = np.where(ndh > 0.0, spec_pow, 0.0)

    pre_clamp = (
        albedo * (lighting.ambient_rgb[None, :] + lighting.diffuse_rgb[None, :] * ndl[:, None])
        + lighting.specular_rgb[None, :] * spec_pow[:, None]
    )
    return {
        "covered": covered,
        "albedo": albedo,
        "footprint": footprint,
        "normal": normal,
        "half": half,
        "half_len": half_len,
        "ndl": ndl,
        "ndh": ndh,
        "spec_pow": spec_pow,
        "pre_clamp": pre_clamp,
    }


def shade(
    buffers: FrameBuffers,
    mesh: Mesh,
    texture: TextureMap,
    lighting: PhongLighting,
    camera: PinholeCamera,
) -> np.ndarray:
    """Blinn-Phong shading of the covered pixels; returns the color image."""
    if buffers.uv is None or buffers.position is None or buffers.normal is None:
        raise ValidationError("buffers lack geometry caches; produce them with rasterize()")
    if mesh.uvs is None:
        raise ValidationError("mesh has no UVs to sample the texture with")
    image = np.empty((buffers.height, buffers.width, 3))
    image[:] = buffers.clear_color
    if not buffers.coverage.any():
        return image
    terms = _shading_terms(buffers, texture.rgb, lighting)
    image[buffers.coverage] = np.clip(terms["pre_clamp"], 0.0, 1.0)
    return image


def render(
    mesh: Mesh,
    texture: TextureMap,
    pose: Pose,
    camera: PinholeCamera,
    lighting: PhongLighting,
    size: tuple[int, int] | None = None,
    clear_color=(0.0, 0.0, 0.0),
) -> FrameBuffers:
    """Rasterize then shade; deterministic across runs and thread counts."""
    buffers = rasterize(mesh, pose, camera, size=size)
    buffers.clear_color = np.asarray(clear_color, dtype=np.float64).reshape(3)
    buffers.color = shade(buffers, mesh, texture, lighting, camera)
    return buffers


def render_backward(
    buffers: FrameBuffers,
    mesh: Mesh,
    texture: TextureMap,
    lighting: PhongLighting,
    camera: PinholeCamera,
    upstream: np.ndarray,
) -> RenderGradients:
    """Chain-rule gradients w.r.t. texture texels and lighting coefficients.

    Rasterization (coverage, barycentrics, depth) is held fixed. Channels
    that were clamped in the forward pass propagate zero gradient. The
    light-direction gradient is projected onto the tangent space of the unit
    sphere, matching finite differences that renormalize the perturbed
    direction.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != buffers.color.shape:
        raise ValidationError(
            f"upstream shape {upstream.shape} differs from color buffer {buffers.color.shape}"
        )
    texture_rgb = texture.rgb
    grads = RenderGradients(
        d_texture=np.zeros_like(texture_rgb),
        d_ambient=np.zeros(3),
        d_diffuse=np.zeros(3),
        d_specular=np.zeros(3),
        d_light_direction=np.zeros(3),
        d_shininess=0.0,
    )
    if not buffers.coverage.any():
        return grads

    terms = _shading_terms(buffers, texture_rgb, lighting)
    pre = terms["pre_clamp"]
    g = upstream[buffers.coverage].copy()
    g[(pre < 0.0) | (pre > 1.0)] = 0.0

    albedo = terms["albedo"]
    ndl = terms["ndl"]
    ndh = terms["ndh"]
    spec_pow = terms["spec_pow"]
    normal = terms["normal"]
    half = terms["half"]
    half_len = terms["half_len"]
    light = lighting.light_direction

    # Texture: through the bilinear weights and the diffuse+ambient factor.
    d_albedo = g * (lighting.ambient_rgb[None, :] + lighting.diffuse_rgb[None, :] * ndl[:, None])
    r0, c0, r1, c1, w00, w01, w10, w11 = terms["footprint"]
    np.add.at(grads.d_texture, (r0, c0), w00[:, None] * d_albedo)
    np.add.at(grads.d_texture, (r0, c1), w01[:, None] * d_albedo)
    np.add.at(grads.d_texture, (r1, c0), w10[:, None] * d_albedo)
    np.add.at(grads.d_texture, (r1, c1), w11[:, None] * d_albedo)

    grads.d_ambient = (albedo * g).sum(axis=0)
    grads.d_diffuse = (albedo * ndl[:, None] * g).sum(axis=0)
    grads.d_specular = (spec_pow[:, None] * g).sum(axis=0)

    spec_g = (lighting.specular_rgb[None, :] * g).sum(axis=1)
    positive = ndh > 0.0
    if positive.any():
        log_term = np.zeros_like(ndh)
        log_term[positive] = np.log(ndh[positive])
        grads.d_shininess = float((spec_g * spec_pow * log_term).sum())

    # Light direction: diffuse term through n.l, specular through the
    # half-vector normalization h = (l + v)/||l + v||.
    diffuse_g = (albedo * lighting.diffuse_rgb[None, :] * g).sum(axis=1)
    d_light = ((ndl > 0.0) * diffuse_g)[:, None] * normal
    if positive.any():
        coeff = spec_g * lighting.shininess * np.where(positive, ndh, 1.0) ** (lighting.shininess - 1.0)
        coeff = np.where(positive, coeff, 0.0)
        dndh_dl = (normal - (normal * half).sum(axis=1)[:, None] * half) / half_len[:, None]
        d_light = d_light + coeff[:, None] * dndh_dl
    raw = d_light.sum(axis=0)
    grads.d_light_direction = raw - (raw @ light) * light

    return grads
