"""Batch orchestration: TOML-configured end-to-end run producing a deformed
mesh, a coarse texture, a preview render, and a loss report.

Paths inside the config resolve relative to the config file's directory.
The run writes a manifest with the config hash, per-stage wall-clock
timings, and sha256 hashes of every artifact; identical configs produce
bitwise-identical artifacts.
"""

from __future__ import annotations

import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .camera import PinholeCamera
from .errors import ValidationError
from .losses import (
    GeneratorLossTerms,
    LossWeights,
    SeededConvExtractor,
    SeededDiscriminator,
    adversarial_generator_loss,
    perceptual_loss,
    pixel_loss_image,
    psnr,
    skin_std_loss,
    ssim,
    style_loss,
    symmetry_loss,
    total_generator_loss,
)
from .mesh import load_landmarks, load_obj, save_obj
from .morphable import load_basis, load_coefficients, synthesize_shape, shape_to_vertices
from .render import PhongLighting, render
from .texture import (
    SkinMask,
    TextureMap,
    default_blur_sigma,
    gaussian_blur,
    read_image,
    read_mask,
    read_texture,
    write_texture,
    IMAGE_SPACE,
    UV_SPACE,
)
from .transfer import RbfKernelConfig, transfer_shape
from .uvmap import create_coarse_texture

ALLOWED_UV_SIZES = (256, 512, 1024, 2048)

_PATH_KEYS = (
    "game_mesh",
    "morphable_basis",
    "coefficients",
    "landmarks",
    "portrait",
    "portrait_skin_mask",
    "template_texture",
    "template_uv_skin_mask",
)


@dataclass
class PipelineConfig:
    game_mesh: Path
    morphable_basis: Path
    coefficients: Path
    landmarks: Path
    portrait: Path
    portrait_skin_mask: Path
    template_texture: Path
    template_uv_skin_mask: Path
    output_dir: Path
    uv_size: int = 1024
    kernel: RbfKernelConfig = field(default_factory=RbfKernelConfig)
    camera: PinholeCamera | None = None
    lighting: PhongLighting | None = None
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.uv_size not in ALLOWED_UV_SIZES:
            raise ValidationError(f"uv_size must be one of {ALLOWED_UV_SIZES}, got {self.uv_size}")
        for key in _PATH_KEYS:
            path = Path(getattr(self, key))
            setattr(self, key, path)
            if not path.exists():
                raise ValidationError(f"{key} file does not exist: {path}")
        self.output_dir = Path(self.output_dir)

    def describe(self) -> dict:
        """Canonical dictionary for hashing and the manifest."""
        data = {key: str(getattr(self, key)) for key in _PATH_KEYS}
        data["output_dir"] = str(self.output_dir)
        data["uv_size"] = self.uv_size
        data["kernel"] = {
            "kind": self.kernel.kind,
            "sigma": self.kernel.sigma,
            "regularization": self.kernel.regularization,
        }
        data["camera"] = None if self.camera is None else self.camera.to_dict()
        data["lighting"] = None if self.lighting is None else self.lighting.to_dict()
        data["weights"] = self.weights.to_dict()
        return data

    def config_hash(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _parse_kernel(table: dict) -> RbfKernelConfig:
    sigma = table.get("sigma")
    if isinstance(sigma, str):
        if sigma != "auto":
            raise ValidationError(f"kernel sigma must be a number or 'auto', got {sigma!r}")
        sigma = None
    reg = table.get("regularization")
    if isinstance(reg, str):
        if reg != "auto":
            raise ValidationError(f"kernel regularization must be a number or 'auto', got {reg!r}")
        reg = None
    return RbfKernelConfig(kind=table.get("kind", "gaussian"), sigma=sigma, regularization=reg)


def load_config(path: str | Path, overrides: dict | None = None) -> PipelineConfig:
    """Parse a TOML pipeline config; ``overrides`` replace top-level values
    (``output_dir``, ``uv_size``) or kernel fields before validation."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file does not exist: {path}")
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(f"{path}: invalid TOML: {exc}") from exc

    base = path.parent
    overrides = dict(overrides or {})
    paths_table = raw.get("paths", {})
    missing = [k for k in _PATH_KEYS if k not in paths_table]
    if missing:
        raise ValidationError(f"{path}: [paths] missing keys: {missing}")

    kernel_table = dict(raw.get("kernel", {}))
    for key in ("kernel_kind", "kernel_sigma", "kernel_regularization"):
        if key in overrides and overrides[key] is not None:
            kernel_table[key.removeprefix("kernel_")] = overrides[key]

    output_dir = overrides.get("output_dir") or raw.get("output_dir", "out")
    uv_size = overrides.get("uv_size") or raw.get("uv_size", 1024)

    camera = raw.get("camera")
    lighting = raw.get("lighting")
    return PipelineConfig(
        **{key: base / paths_table[key] for key in _PATH_KEYS},
        output_dir=base / output_dir if not Path(output_dir).is_absolute() else Path(output_dir),
        uv_size=int(uv_size),
        kernel=_parse_kernel(kernel_table),
        camera=None if camera is None else PinholeCamera.from_dict(camera),
        lighting=None if lighting is None else PhongLighting.from_dict(lighting),
        weights=LossWeights.from_dict(raw.get("weights", {})),
    )


@dataclass
class PipelineResult:
    output_dir: Path
    mesh_path: Path
    texture_path: Path
    preview_path: Path
    loss_report_path: Path
    manifest_path: Path
    manifest: dict


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_pipeline(config: PipelineConfig) -> PipelineResult:
    """Execute shape synthesis, transfer, coarse texture, preview render and
    loss evaluation, writing all artifacts into the output directory."""
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}

    def staged(name):
        class _Timer:
            def __enter__(self):
                self.start = time.perf_counter()

            def __exit__(self, *exc):
                timings[name] = round(time.perf_counter() - self.start, 4)
                return False

        return _Timer()

    with staged("load"):
        game_mesh = load_obj(config.game_mesh)
        basis = load_basis(config.morphable_basis)
        coeffs = load_coefficients(config.coefficients)
        landmarks = load_landmarks(config.landmarks)
        portrait = read_image(config.portrait)
        portrait_mask = read_mask(config.portrait_skin_mask, IMAGE_SPACE)
        template = read_texture(config.template_texture)
        uv_mask = read_mask(config.template_uv_skin_mask, UV_SPACE)
        camera = (
            config.camera
            if config.camera is not None
            else PinholeCamera.default_for(portrait.shape[1], portrait.shape[0])
        )
        lighting = (
            config.lighting
            if config.lighting is not None
            else PhongLighting((0.0, 0.0, -1.0), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0))
        )
        pose = coeffs.to_pose()

    with staged("synthesize_shape"):
        mm_vertices = shape_to_vertices(
            synthesize_shape(basis, coeffs.identity, coeffs.expression)
        )

    with staged("transfer_shape"):
        deformed = transfer_shape(game_mesh, landmarks, mm_vertices, config.kernel)
        mesh_path = out / "deformed_mesh.obj"
        save_obj(deformed, mesh_path)

    with staged("coarse_texture"):
        coarse = create_coarse_texture(
            portrait,
            portrait_mask,
            deformed,
            pose,
            camera,
            template,
            uv_mask,
            config.uv_size,
        )
        texture_path = out / "coarse_texture.png"
        write_texture(coarse, texture_path)

    with staged("render"):
        buffers = render(deformed, coarse, pose, camera, lighting)
        preview_path = out / "preview.png"
        write_texture(TextureMap(buffers.color), preview_path)

    with staged("loss_report"):
        extractor = SeededConvExtractor(seed=0)
        disc_image = SeededDiscriminator(seed=1)
        disc_texture = SeededDiscriminator(seed=2)
        loss_mask = SkinMask(portrait_mask.bits & buffers.coverage, IMAGE_SPACE)
        blurred = gaussian_blur(coarse, default_blur_sigma(config.uv_size))
        terms = GeneratorLossTerms(
            image_pixel=pixel_loss_image(portrait, buffers.color, loss_mask),
            image_perceptual=perceptual_loss(portrait, buffers.color, extractor),
            image_style=style_loss(portrait, buffers.color, extractor),
            symmetry=symmetry_loss(blurred),
            skin_std=skin_std_loss(blurred, uv_mask),
            image_adversarial=adversarial_generator_loss(disc_image(buffers.color)),
            texture_adversarial=adversarial_generator_loss(disc_texture(coarse)),
        )
        total, breakdown = total_generator_loss(terms, config.weights)
        report = {
            "total": total,
            "weighted_terms": breakdown,
            "weights": config.weights.to_dict(),
            "supervised": False,
            "metrics": {
                "psnr_db": psnr(portrait, buffers.color),
                "ssim": ssim(portrait, buffers.color),
            },
        }
        loss_report_path = out / "loss_report.json"
        loss_report_path.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")

    artifacts = {
        "deformed_mesh.obj": _sha256(mesh_path),
        "coarse_texture.png": _sha256(texture_path),
        "preview.png": _sha256(preview_path),
        "loss_report.json": _sha256(loss_report_path),
    }
    manifest = {
        "config": config.describe(),
        "config_hash": config.config_hash(),
        "artifacts": artifacts,
        "timings_s": timings,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return PipelineResult(
        output_dir=out,
        mesh_path=mesh_path,
        texture_path=texture_path,
        preview_path=preview_path,
        loss_report_path=loss_report_path,
        manifest_path=manifest_path,
        manifest=manifest,
    )
