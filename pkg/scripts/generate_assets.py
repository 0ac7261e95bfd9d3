#!/usr/bin/env python3
"""Generate the bundled sample assets.

Everything here is synthetic: a parametric head for the game-topology mesh
(8,520 vertices / 16,020 triangles), a face-patch morphable template with a
seeded random basis, 68 landmark pairs placed at matching parametric
feature positions, a symmetric skin-tone template texture with UV mask, and
a portrait rendered from the deformed mesh itself. Deterministic: rerunning
rewrites identical files.
"""

from __future__ import annotations

import argparse
import json
import math
from pathlib import Path

import numpy as np

from gameface.camera import PinholeCamera, save_camera
from gameface.mesh import LandmarkCorrespondence, Mesh, save_obj
from gameface.morphable import (
    EXPRESSION_DIMS,
    IDENTITY_DIMS,
    LIGHTING_SH_DIMS,
    MorphableBasis,
    Pose,
    TEXTURE_DIMS,
    save_basis,
    split_coefficients,
    synthesize_shape,
    shape_to_vertices,
)
from gameface.render import PhongLighting, render, save_lighting
from gameface.texture import SkinMask, TextureMap, UV_SPACE, write_mask, write_texture
from gameface.transfer import RbfKernelConfig, transfer_shape

GAME_ROWS, GAME_COLS = 120, 71  # 8,520 vertices
GAME_T_RANGE = (0.02, 0.95)
GAME_PHI_RANGE = (-2.0, 2.0)
MM_ROWS, MM_COLS = 48, 44
MM_T_RANGE = (0.30, 0.88)
MM_PHI_RANGE = (-1.05, 1.05)
MM_SCALE = 2.4
MM_OFFSET = np.array([0.4, -0.3, 0.2])
MM_YAW = 0.12


def feature_bump(t, phi, t0, phi0, t_width, phi_width, amplitude):
    return amplitude * np.exp(-(((t - t0) / t_width) ** 2 + ((phi - phi0) / phi_width) ** 2))


def head_radius(t, phi, nose=0.18, chin=0.05, lips=0.04, brow=0.03, cheek=0.03, socket=-0.04):
    """Radius field of the synthetic head; symmetric in phi."""
    r = np.ones_like(t)
    r += feature_bump(t, phi, 0.55, 0.0, 0.10, 0.22, nose)
    r += feature_bump(t, phi, 0.80, 0.0, 0.07, 0.25, chin)
    r += feature_bump(t, phi, 0.68, 0.0, 0.045, 0.28, lips)
    for side in (-1, 1):
        r += feature_bump(t, phi, 0.36, side * 0.30, 0.05, 0.28, brow)
        r += feature_bump(t, phi, 0.60, side * 0.75, 0.12, 0.30, cheek)
        r += feature_bump(t, phi, 0.42, side * 0.45, 0.05, 0.18, socket)
    return r


def surface_points(t, phi, radius):
    theta = 0.15 + t * (2.6 - 0.15)
    x = 1.00 * radius * np.sin(theta) * np.sin(phi)
    y = 1.25 * radius * np.cos(theta)
    z = -1.05 * radius * np.sin(theta) * np.cos(phi)
    return np.stack([x, y, z], axis=-1)


def grid_tris(rows, cols, keep):
    tris = []
    for i in range(rows - 1):
        for j in range(cols - 1):
            if not keep(i, j):
                continue
            a = i * cols + j
            b = a + 1
            c = a + cols
            d = c + 1
            tris.append((a, b, c))
            tris.append((b, d, c))
    return np.asarray(tris, dtype=np.int64)


def build_game_mesh() -> Mesh:
    t = np.linspace(*GAME_T_RANGE, GAME_ROWS)
    phi = np.linspace(*GAME_PHI_RANGE, GAME_COLS)
    tt, pp = np.meshgrid(t, phi, indexing="ij")
    verts = surface_points(tt, pp, head_radius(tt, pp)).reshape(-1, 3)
    uu, vv = np.meshgrid(np.linspace(0.0, 1.0, GAME_COLS), 1.0 - np.linspace(0.0, 1.0, GAME_ROWS))
    uvs = np.stack([uu, vv], axis=-1).reshape(-1, 2)

    # Trim the neck: drop the last 4 quad rows entirely and, in the row above,
    # the outer 20 quads per side. 8330 - 280 - 40 = 8010 quads = 16,020 tris.
    def keep(i, j):
        if i >= 115:
            return False
        if i == 114 and not (20 <= j <= 49):
            return False
        return True

    tris = grid_tris(GAME_ROWS, GAME_COLS, keep)
    return Mesh(verts, tris, uvs)


def build_mm_template():
    t = np.linspace(*MM_T_RANGE, MM_ROWS)
    phi = np.linspace(*MM_PHI_RANGE, MM_COLS)
    tt, pp = np.meshgrid(t, phi, indexing="ij")
    # Slightly different feature amplitudes than the game head so that the
    # transfer actually moves vertices.
    radius = head_radius(tt, pp, nose=0.22, chin=0.03, lips=0.05, brow=0.02, cheek=0.04)
    local = surface_points(tt, pp, radius).reshape(-1, 3)
    yaw = np.array(
        [
            [math.cos(MM_YAW), 0.0, math.sin(MM_YAW)],
            [0.0, 1.0, 0.0],
            [-math.sin(MM_YAW), 0.0, math.cos(MM_YAW)],
        ]
    )
    verts = MM_SCALE * local @ yaw.T + MM_OFFSET
    tris = grid_tris(MM_ROWS, MM_COLS, lambda i, j: True)
    return Mesh(verts, tris)


def landmark_parametric_positions():
    """68 (t, phi) feature positions: jaw 17, brows 10, nose 9, eyes 12, mouth 20."""
    spots = []
    for k in range(17):
        p = -0.95 + 1.9 * k / 16
        spots.append((0.50 + 0.30 * (1.0 - (p / 0.95) ** 2), p))
    for side in (-1, 1):
        for k in range(5):
            spots.append((0.355, side * (0.15 + 0.10 * k)))
    for k in range(4):
        spots.append((0.44 + 0.04 * k, 0.0))
    for k in range(5):
        spots.append((0.60, -0.12 + 0.06 * k))
    for side in (-1, 1):
        for k in range(6):
            ang = 2 * math.pi * k / 6
            spots.append((0.42 + 0.028 * math.sin(ang), side * 0.45 + 0.10 * math.cos(ang)))
    for k in range(12):
        ang = 2 * math.pi * k / 12
        spots.append((0.68 + 0.035 * math.sin(ang), 0.22 * math.cos(ang)))
    for k in range(8):
        ang = 2 * math.pi * k / 8
        spots.append((0.68 + 0.018 * math.sin(ang), 0.12 * math.cos(ang)))
    assert len(spots) == 68
    return spots


def nearest_grid_index(t, phi, t_range, phi_range, rows, cols, used: set[int]) -> int:
    i = round((t - t_range[0]) / (t_range[1] - t_range[0]) * (rows - 1))
    j = round((phi - phi_range[0]) / (phi_range[1] - phi_range[0]) * (cols - 1))
    i = min(max(i, 0), rows - 1)
    j = min(max(j, 0), cols - 1)
    for radius in range(6):
        for di in range(-radius, radius + 1):
            for dj in range(-radius, radius + 1):
                ii, jj = i + di, j + dj
                if 0 <= ii < rows and 0 <= jj < cols:
                    idx = ii * cols + jj
                    if idx not in used:
                        used.add(idx)
                        return idx
    raise RuntimeError("could not place landmark on a free vertex")


def build_landmarks() -> LandmarkCorrespondence:
    pairs = []
    used_mm: set[int] = set()
    used_game: set[int] = set()
    for t, phi in landmark_parametric_positions():
        mm_idx = nearest_grid_index(t, phi, MM_T_RANGE, MM_PHI_RANGE, MM_ROWS, MM_COLS, used_mm)
        game_idx = nearest_grid_index(
            t, phi, GAME_T_RANGE, GAME_PHI_RANGE, GAME_ROWS, GAME_COLS, used_game
        )
        pairs.append((mm_idx, game_idx))
    return LandmarkCorrespondence(np.asarray(pairs))


def build_basis(mm_mesh: Mesh) -> MorphableBasis:
    rng = np.random.default_rng(20240801)
    t = np.linspace(0.0, 1.0, MM_ROWS)
    phi = np.linspace(-1.0, 1.0, MM_COLS)
    tt, pp = np.meshgrid(t, phi, indexing="ij")

    def smooth_columns(count, amplitude):
        columns = np.zeros((MM_ROWS * MM_COLS * 3, count))
        for k in range(count):
            field = np.zeros((MM_ROWS, MM_COLS, 3))
            for _ in range(3):
                ft = rng.integers(1, 5)
                fp = rng.integers(1, 5)
                p1, p2 = rng.uniform(0, 2 * math.pi, 2)
                direction = rng.normal(size=3)
                direction /= np.linalg.norm(direction)
                amp = rng.uniform(0.3, 1.0) * amplitude
                wave = np.sin(math.pi * ft * tt + p1) * np.cos(fp * pp * math.pi + p2)
                field += amp * wave[:, :, None] * direction
            columns[:, k] = field.reshape(-1)
        return columns

    return MorphableBasis(
        mean_shape=mm_mesh.vertices.reshape(-1),
        identity_basis=smooth_columns(IDENTITY_DIMS, 0.030),
        expression_basis=smooth_columns(EXPRESSION_DIMS, 0.015),
    )


def build_coefficients() -> np.ndarray:
    rng = np.random.default_rng(112)
    raw = np.zeros(IDENTITY_DIMS + EXPRESSION_DIMS + TEXTURE_DIMS + 6 + LIGHTING_SH_DIMS)
    raw[:IDENTITY_DIMS] = rng.normal(0.0, 0.8, IDENTITY_DIMS)
    raw[IDENTITY_DIMS : IDENTITY_DIMS + EXPRESSION_DIMS] = rng.normal(0.0, 0.5, EXPRESSION_DIMS)
    # pose: xyz intrinsic rotation then translation, game-mesh frame -> camera
    raw[224:230] = [0.03, 0.10, 0.0, 0.0, 0.05, 4.0]
    return raw


def uv_param_grid(size):
    """Map texel centers to the head parametrization (t, phi)."""
    u = np.broadcast_to(((np.arange(size) + 0.5) / size)[None, :], (size, size))
    v = np.broadcast_to((1.0 - (np.arange(size) + 0.5) / size)[:, None], (size, size))
    t = GAME_T_RANGE[0] + (1.0 - v) * (GAME_T_RANGE[1] - GAME_T_RANGE[0])
    phi = GAME_PHI_RANGE[0] + u * (GAME_PHI_RANGE[1] - GAME_PHI_RANGE[0])
    return t, phi


def build_template_texture(size=512) -> TextureMap:
    rng = np.random.default_rng(7)
    t, phi = uv_param_grid(size)
    base = np.array([0.78, 0.62, 0.52])
    rgb = np.empty((size, size, 3))
    rgb[:] = base
    rgb += (0.04 * (0.5 - np.abs(t - 0.5)))[:, :, None] * np.array([1.0, 0.8, 0.6])

    def blob(t0, phi0, tw, pw, color):
        g = np.exp(-(((t - t0) / tw) ** 2 + ((phi - phi0) / pw) ** 2))
        return g[:, :, None] * np.asarray(color)

    rgb += blob(0.68, 0.0, 0.035, 0.20, (0.08, -0.12, -0.10))  # lips
    for side in (-1, 1):
        rgb += blob(0.355, side * 0.33, 0.020, 0.16, (-0.30, -0.28, -0.24))  # brows
        rgb += blob(0.42, side * 0.45, 0.022, 0.07, (-0.22, -0.18, -0.12))  # eyes
        rgb += blob(0.60, side * 0.75, 0.10, 0.22, (0.05, -0.01, -0.02))  # cheeks
    noise = rng.normal(0.0, 1.0, (size, size))
    from scipy.ndimage import gaussian_filter

    noise = gaussian_filter(noise, 6.0, mode="nearest")
    noise = (noise + noise[:, ::-1]) / 2.0  # keep the template bilaterally symmetric
    noise /= max(np.abs(noise).max(), 1e-9)
    rgb += 0.015 * noise[:, :, None]
    return TextureMap(np.clip(rgb, 0.0, 1.0))


def build_uv_mask(size=512) -> SkinMask:
    t, phi = uv_param_grid(size)
    face = ((phi / 1.15) ** 2 + ((t - 0.55) / 0.33) ** 2) < 1.0
    for side in (-1, 1):
        face &= ~((((phi - side * 0.45) / 0.13) ** 2 + ((t - 0.42) / 0.034) ** 2) < 1.0)
    face &= ~(((phi / 0.20) ** 2 + ((t - 0.68) / 0.030) ** 2) < 1.0)
    face[0, :] = face[-1, :] = False
    face[:, 0] = face[:, -1] = False
    return SkinMask(face, UV_SPACE)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--output", type=Path, default=Path(__file__).parent.parent / "assets")
    args = parser.parse_args()
    out: Path = args.output
    out.mkdir(parents=True, exist_ok=True)

    game_mesh = build_game_mesh()
    print(f"game mesh: {game_mesh.vertex_count} vertices, {game_mesh.triangle_count} triangles")
    save_obj(game_mesh, out / "game_head.obj")

    mm_mesh = build_mm_template()
    print(f"mm template: {mm_mesh.vertex_count} vertices, {mm_mesh.triangle_count} triangles")
    save_obj(mm_mesh, out / "mm_face.obj")

    landmarks = build_landmarks()
    (out / "landmarks.json").write_text(
        json.dumps({"pairs": landmarks.pairs.tolist()}) + "\n"
    )

    basis = build_basis(mm_mesh)
    save_basis(basis, out / "basis.bin")

    raw_coeffs = build_coefficients()
    (out / "coeffs.json").write_text(json.dumps(raw_coeffs.tolist()) + "\n")

    template = build_template_texture(512)
    write_texture(template, out / "template_texture.png")
    uv_mask = build_uv_mask(512)
    write_mask(uv_mask, out / "template_uv_mask.png")

    camera = PinholeCamera(614.4, (256.0, 256.0), (512, 512))
    save_camera(camera, out / "camera.json")
    direction = np.array([0.3, -0.25, -0.91])
    direction /= np.linalg.norm(direction)
    lighting = PhongLighting(direction, (0.62, 0.62, 0.62), (0.38, 0.36, 0.34), (0.04, 0.04, 0.04), 16.0)
    save_lighting(lighting, out / "lighting.json")

    coeffs = split_coefficients(raw_coeffs)
    pose = coeffs.to_pose()
    (out / "pose.json").write_text(
        json.dumps({"rotation": list(pose.rotation), "translation": list(pose.translation)}, indent=1)
        + "\n"
    )
    (out / "weights.json").write_text(
        json.dumps(
            {
                "lambda_l1": 3.0,
                "lambda_perc": 1.0,
                "lambda_sty": 1.0,
                "lambda_sym": 0.1,
                "lambda_std": 3.0,
                "lambda_adv": 0.001,
            },
            indent=1,
        )
        + "\n"
    )

    mm_vertices = shape_to_vertices(synthesize_shape(basis, coeffs.identity, coeffs.expression))
    mm_vertices.reshape(-1).astype("<f8").tofile(out / "mm_vertices.bin")
    deformed = transfer_shape(game_mesh, landmarks, mm_vertices, RbfKernelConfig())
    portrait = render(deformed, template, pose, camera, lighting)
    write_texture(TextureMap(portrait.color), out / "portrait.png")
    print(f"portrait coverage: {portrait.coverage.mean():.3f}")

    # The skin mask a segmenter would produce: render the UV skin region.
    mask_texture = TextureMap(uv_mask.bits[:, :, None] * np.ones(3))
    flat = PhongLighting((0.0, 0.0, -1.0), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0))
    mask_render = render(deformed, mask_texture, pose, camera, flat)
    portrait_mask = mask_render.color[:, :, 0] > 0.5
    write_mask(SkinMask(portrait_mask), out / "portrait_skin_mask.png")
    print(f"portrait skin pixels: {portrait_mask.sum()}")

    config = f"""# Sample end-to-end configuration. Paths are relative to this file.
output_dir = "out"
uv_size = 512

[paths]
game_mesh = "game_head.obj"
morphable_basis = "basis.bin"
coefficients = "coeffs.json"
landmarks = "landmarks.json"
portrait = "portrait.png"
portrait_skin_mask = "portrait_skin_mask.png"
template_texture = "template_texture.png"
template_uv_skin_mask = "template_uv_mask.png"

[kernel]
kind = "thin_plate_linear"
sigma = "auto"
regularization = "auto"

[camera]
focal_length = 614.4
principal_point = [256.0, 256.0]
image_size = [512, 512]

[lighting]
light_direction = [{direction[0]!r}, {direction[1]!r}, {direction[2]!r}]
ambient_rgb = [0.62, 0.62, 0.62]
diffuse_rgb = [0.38, 0.36, 0.34]
specular_rgb = [0.04, 0.04, 0.04]
shininess = 16.0

[weights]
lambda_l1 = 3.0
lambda_perc = 1.0
lambda_sty = 1.0
lambda_sym = 0.1
lambda_std = 3.0
lambda_adv = 0.001
"""
    (out / "config.toml").write_text(config)
    print(f"assets written to {out}")


if __name__ == "__main__":
    main()
