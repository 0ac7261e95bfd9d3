"""Command-line interface. Every subcommand is a thin wrapper over the
library: identical inputs produce byte-identical outputs either way.

Exit codes: 0 success, 1 internal error, 2 invalid input.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from .camera import PinholeCamera, load_camera
from .errors import GamefaceError, ParseError, ValidationError
from .losses import (
    GeneratorLossTerms,
    LossWeights,
    SeededConvExtractor,
    SeededDiscriminator,
    adversarial_generator_loss,
    load_weights,
    perceptual_loss,
    pixel_loss_image,
    pixel_loss_texture,
    psnr,
    skin_std_loss,
    ssim,
    style_loss,
    symmetry_loss,
    total_generator_loss,
)
from .mesh import load_landmarks, load_obj, save_obj
from .morphable import Pose, load_coefficients
from .pipeline import load_config, run_pipeline
from .render import PhongLighting, load_lighting, render
from .texture import (
    IMAGE_SPACE,
    UV_SPACE,
    SkinMask,
    TextureMap,
    default_blur_sigma,
    gaussian_blur,
    read_image,
    read_mask,
    read_texture,
    write_mask,
    write_texture,
)
from .transfer import RbfKernelConfig, transfer_shape
from .uvmap import create_coarse_texture, poisson_blend, unwrap_to_uv


def friendly_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValidationError, ParseError, FileNotFoundError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except GamefaceError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _load_pose(path: str) -> Pose:
    data = json.loads(Path(path).read_text())
    try:
        return Pose(data["rotation"], data["translation"])
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: pose JSON needs 'rotation' and 'translation'") from exc


def _parse_auto(value: str | None, flag: str) -> float | None:
    if value is None or value == "auto":
        return None
    try:
        return float(value)
    except ValueError:
        raise ValidationError(f"--{flag} must be a number or 'auto', got {value!r}") from None


def _load_mm_vertices(path: str) -> np.ndarray:
    """Morphable vertices from a flat LE float64 .bin, a JSON array, or an OBJ."""
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"mm-vertices file does not exist: {p}")
    suffix = p.suffix.lower()
    if suffix == ".obj":
        return load_obj(p).vertices
    if suffix == ".json":
        return np.asarray(json.loads(p.read_text()), dtype=np.float64).reshape(-1, 3)
    flat = np.fromfile(p, dtype="<f8")
    if flat.size % 3 != 0:
        raise ValidationError(f"{p}: flat vertex file length {flat.size} is not a multiple of 3")
    return flat.reshape(-1, 3)


@click.group()
def main():
    """Single-portrait game-character creation toolkit."""


@main.command()
@click.option("--game-mesh", required=True, type=click.Path())
@click.option("--mm-vertices", required=True, type=click.Path())
@click.option("--landmarks", required=True, type=click.Path())
@click.option("--kernel", default="thin_plate_linear", type=click.Choice(["gaussian", "thin_plate_linear"]))
@click.option("--sigma", default="auto", help="Kernel width, or 'auto' for the mean pairwise landmark distance.")
@click.option("--regularization", default="auto", help="Diagonal regularization, or 'auto'.")
@click.option("-o", "--output", required=True, type=click.Path())
@friendly_errors
def transfer(game_mesh, mm_vertices, landmarks, kernel, sigma, regularization, output):
    """Deform the game mesh onto the morphable-model shape."""
    mesh = load_obj(game_mesh)
    config = RbfKernelConfig(
        kind=kernel,
        sigma=_parse_auto(sigma, "sigma"),
        regularization=_parse_auto(regularization, "regularization"),
    )
    deformed = transfer_shape(mesh, load_landmarks(landmarks), _load_mm_vertices(mm_vertices), config)
    save_obj(deformed, output)
    click.echo(f"wrote {output}")


@main.command()
@click.option("--image", required=True, type=click.Path())
@click.option("--mesh", required=True, type=click.Path())
@click.option("--pose", "pose_path", required=True, type=click.Path())
@click.option("--camera", "camera_path", type=click.Path(), default=None,
              help="Camera JSON; defaults to a camera framing the image size.")
@click.option("--uv-size", default=1024, type=int)
@click.option("-o", "--output", required=True, type=click.Path())
@click.option("--validity-out", type=click.Path(), default=None,
              help="Also write the validity mask as a PNG.")
@friendly_errors
def unwrap(image, mesh, pose_path, camera_path, uv_size, output, validity_out):
    """Back-project a portrait into UV space along the mesh."""
    raster = read_image(image)
    cam = (
        load_camera(camera_path)
        if camera_path
        else PinholeCamera.default_for(raster.shape[1], raster.shape[0])
    )
    result = unwrap_to_uv(raster, load_obj(mesh), _load_pose(pose_path), cam, uv_size)
    write_texture(result, output)
    if validity_out:
        write_mask(SkinMask(result.validity, UV_SPACE), validity_out)
    click.echo(f"wrote {output}")


@main.command()
@click.option("--source", required=True, type=click.Path())
@click.option("--target", required=True, type=click.Path())
@click.option("--region", required=True, type=click.Path())
@click.option("-o", "--output", required=True, type=click.Path())
@friendly_errors
def blend(source, target, region, output):
    """Poisson-blend the source texture into the target over a region."""
    out = poisson_blend(
        read_texture(source), read_texture(target), read_mask(region, UV_SPACE)
    )
    write_texture(out, output)
    click.echo(f"wrote {output}")


@main.command("coarse-texture")
@click.option("--image", required=True, type=click.Path())
@click.option("--image-mask", required=True, type=click.Path())
@click.option("--mesh", required=True, type=click.Path())
@click.option("--pose", "pose_path", required=True, type=click.Path())
@click.option("--camera", "camera_path", type=click.Path(), default=None)
@click.option("--template", required=True, type=click.Path())
@click.option("--uv-mask", required=True, type=click.Path())
@click.option("--uv-size", default=None, type=int, help="Defaults to the template size.")
@click.option("-o", "--output", required=True, type=click.Path())
@friendly_errors
def coarse_texture(image, image_mask, mesh, pose_path, camera_path, template, uv_mask, uv_size, output):
    """Run the full coarse-texture pipeline for one portrait."""
    raster = read_image(image)
    cam = (
        load_camera(camera_path)
        if camera_path
        else PinholeCamera.default_for(raster.shape[1], raster.shape[0])
    )
    result = create_coarse_texture(
        raster,
        read_mask(image_mask, IMAGE_SPACE),
        load_obj(mesh),
        _load_pose(pose_path),
        cam,
        read_texture(template),
        read_mask(uv_mask, UV_SPACE),
        uv_size,
    )
    write_texture(result, output)
    click.echo(f"wrote {output}")


@main.command("render")
@click.option("--mesh", required=True, type=click.Path())
@click.option("--texture", required=True, type=click.Path())
@click.option("--pose", "pose_path", required=True, type=click.Path())
@click.option("--lighting", "lighting_path", required=True, type=click.Path())
@click.option("--camera", "camera_path", type=click.Path(), default=None)
@click.option("--size", default=512, type=int, help="Image size when no camera file is given.")
@click.option("-o", "--output", required=True, type=click.Path())
@friendly_errors
def render_cmd(mesh, texture, pose_path, lighting_path, camera_path, size, output):
    """Rasterize and shade the textured mesh."""
    cam = load_camera(camera_path) if camera_path else PinholeCamera.default_for(size)
    buffers = render(
        load_obj(mesh),
        read_texture(texture),
        _load_pose(pose_path),
        cam,
        load_lighting(lighting_path),
    )
    write_texture(TextureMap(buffers.color), output)
    click.echo(f"wrote {output}")


@main.command("loss-eval")
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--render", "render_path", required=True, type=click.Path())
@click.option("--texture", required=True, type=click.Path())
@click.option("--gt", type=click.Path(), default=None, help="Ground-truth texture (supervised terms).")
@click.option("--mask", required=True, type=click.Path(), help="Image-space skin mask.")
@click.option("--uv-mask", type=click.Path(), default=None,
              help="UV-space skin mask for the std loss; defaults to all texels.")
@click.option("--weights", "weights_path", type=click.Path(), default=None)
@friendly_errors
def loss_eval(input_path, render_path, texture, gt, mask, uv_mask, weights_path):
    """Print the weighted loss breakdown between a portrait and a render.

    Perceptual terms use the bundled seeded extractor; adversarial terms use
    the bundled seeded discriminators (no trained networks ship with this
    package).
    """
    portrait = read_image(input_path)
    rendered = read_image(render_path)
    refined = read_texture(texture)
    skin = read_mask(mask, IMAGE_SPACE)
    weights = load_weights(weights_path) if weights_path else LossWeights()
    if uv_mask:
        uv = read_mask(uv_mask, UV_SPACE)
    else:
        uv = SkinMask(np.ones(refined.rgb.shape[:2], dtype=bool), UV_SPACE)

    extractor = SeededConvExtractor(seed=0)
    disc_image = SeededDiscriminator(seed=1)
    disc_texture = SeededDiscriminator(seed=2)
    blurred = gaussian_blur(refined, default_blur_sigma(refined.width))
    ground_truth = read_texture(gt) if gt else None
    terms = GeneratorLossTerms(
        image_pixel=pixel_loss_image(portrait, rendered, skin),
        image_perceptual=perceptual_loss(portrait, rendered, extractor),
        image_style=style_loss(portrait, rendered, extractor),
        symmetry=symmetry_loss(blurred),
        skin_std=skin_std_loss(blurred, uv),
        image_adversarial=adversarial_generator_loss(disc_image(rendered)),
        texture_adversarial=adversarial_generator_loss(disc_texture(refined)),
        texture_pixel=None if ground_truth is None else pixel_loss_texture(refined, ground_truth),
        texture_perceptual=(
            None if ground_truth is None else perceptual_loss(refined, ground_truth, extractor)
        ),
        texture_style=None if ground_truth is None else style_loss(refined, ground_truth, extractor),
    )
    total, breakdown = total_generator_loss(terms, weights)
    click.echo(
        json.dumps(
            {
                "total": total,
                "weighted_terms": breakdown,
                "weights": weights.to_dict(),
                "supervised": ground_truth is not None,
            },
            indent=1,
            sort_keys=True,
        )
    )


@main.command()
@click.option("--a", "a_path", required=True, type=click.Path())
@click.option("--b", "b_path", required=True, type=click.Path())
@click.option("--json", "as_json", is_flag=True, default=False)
@friendly_errors
def metrics(a_path, b_path, as_json):
    """PSNR and SSIM between two images."""
    a = read_image(a_path)
    b = read_image(b_path)
    values = {"psnr_db": psnr(a, b), "ssim": ssim(a, b)}
    if as_json:
        click.echo(json.dumps(values, sort_keys=True))
    else:
        click.echo(f"psnr: {values['psnr_db']:.4f} dB")
        click.echo(f"ssim: {values['ssim']:.6f}")


@main.command("pipeline")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--output-dir", default=None, type=click.Path())
@click.option("--uv-size", default=None, type=int)
@click.option("--kernel", "kernel_kind", default=None,
              type=click.Choice(["gaussian", "thin_plate_linear"]))
@click.option("--sigma", "kernel_sigma", default=None)
@click.option("--json", "as_json", is_flag=True, default=False)
@friendly_errors
def pipeline_cmd(config_path, output_dir, uv_size, kernel_kind, kernel_sigma, as_json):
    """Run the full pipeline from a TOML config."""
    overrides = {
        "output_dir": output_dir,
        "uv_size": uv_size,
        "kernel_kind": kernel_kind,
        "kernel_sigma": _parse_auto(kernel_sigma, "sigma") if kernel_sigma is not None else None,
    }
    config = load_config(config_path, {k: v for k, v in overrides.items() if v is not None})
    result = run_pipeline(config)
    if as_json:
        click.echo(json.dumps(result.manifest, indent=1, sort_keys=True))
    else:
        click.echo(f"artifacts in {result.output_dir}")
        for name, digest in result.manifest["artifacts"].items():
            click.echo(f"  {name}  sha256:{digest[:12]}")


if __name__ == "__main__":
    main()
