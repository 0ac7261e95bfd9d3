"""Training objectives and evaluation metrics for the rendering loop.

All L1 norms sum over color channels; pixel losses then average over the
counted pixels. Every loss has an analytic-gradient companion verified
against central finite differences in the test suite. The feature extractor
behind the perceptual and style losses is pluggable; the bundled default is
a fixed, seeded convolution stack that needs no external weights.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import correlate1d

from .errors import ValidationError
from .texture import IMAGE_SPACE, UV_SPACE, SkinMask, TextureMap

PROBABILITY_EPS = 1e-7
PSNR_CAP_DB = 99.0
_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5


def _as_rgb(image) -> np.ndarray:
    rgb = image.rgb if isinstance(image, TextureMap) else np.asarray(image, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValidationError(f"expected an HxWx3 raster, got shape {rgb.shape}")
    return rgb


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValidationError(f"raster shapes differ: {a.shape} vs {b.shape}")


# --------------------------------------------------------------------------
# weights


@dataclass(frozen=True)
class LossWeights:
    lambda_l1: float = 3.0
    lambda_perc: float = 1.0
    lambda_sty: float = 1.0
    lambda_sym: float = 0.1
    lambda_std: float = 3.0
    lambda_adv: float = 0.001

    def __post_init__(self):
        for name in ("lambda_l1", "lambda_perc", "lambda_sty", "lambda_sym", "lambda_std", "lambda_adv"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")

    def to_dict(self) -> dict:
        return {
            "lambda_l1": self.lambda_l1,
            "lambda_perc": self.lambda_perc,
            "lambda_sty": self.lambda_sty,
            "lambda_sym": self.lambda_sym,
            "lambda_std": self.lambda_std,
            "lambda_adv": self.lambda_adv,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LossWeights":
        known = {f: data[f] for f in cls.__dataclass_fields__ if f in data}
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown loss weight keys: {sorted(unknown)}")
        return cls(**known)


def load_weights(path: str | Path) -> LossWeights:
    return LossWeights.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# feature extractors


@runtime_checkable
class FeatureExtractor(Protocol):
    """Stateless map from an RGB raster to a list of (C, h, w) activations."""

    def features(self, rgb: np.ndarray) -> list[np.ndarray]: ...

    def backward(self, rgb: np.ndarray, upstreams: list[np.ndarray]) -> np.ndarray: ...


class IdentityExtractor:
    """Single layer equal to the input; collapses the perceptual loss to a
    mean-normalized pixel L1."""

    def features(self, rgb: np.ndarray) -> list[np.ndarray]:
        return [np.transpose(_as_rgb(rgb), (2, 0, 1))]

    def backward(self, rgb: np.ndarray, upstreams: list[np.ndarray]) -> np.ndarray:
        return np.transpose(upstreams[0], (1, 2, 0))


def _conv_stride2(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(padded, (3, 3), axis=(1, 2))[:, ::2, ::2]
    return np.einsum("ockl,chwkl->ohw", kernel, windows)


def _conv_stride2_backward(grad: np.ndarray, kernel: np.ndarray, input_shape) -> np.ndarray:
    c, h, w = input_shape
    _, ho, wo = grad.shape
    padded = np.zeros((c, h + 2, w + 2))
    for ky in range(3):
        for kx in range(3):
            contrib = np.einsum("oc,ohw->chw", kernel[:, :, ky, kx], grad)
            padded[:, ky : ky + 2 * ho : 2, kx : kx + 2 * wo : 2] += contrib
    return padded[:, 1 : h + 1, 1 : w + 1]


class SeededConvExtractor:
    """Fixed random stack of 3x3 stride-2 convolutions with half-wave
    rectification. Deterministic for a given seed; no trained weights."""

    def __init__(self, seed: int = 0, channels: tuple[int, ...] = (4, 8, 16)):
        rng = np.random.default_rng(seed)
        dims = (3, *channels)
        self.kernels = [
            rng.normal(0.0, 1.0 / math.sqrt(9 * dims[i]), size=(dims[i + 1], dims[i], 3, 3))
            for i in range(len(channels))
        ]

    def _forward(self, rgb: np.ndarray):
        x = np.transpose(_as_rgb(rgb), (2, 0, 1))
        pre = []
        acts = []
        for kernel in self.kernels:
            z = _conv_stride2(x, kernel)
            pre.append(z)
            x = np.maximum(z, 0.0)
            acts.append(x)
        return pre, acts

    def features(self, rgb: np.ndarray) -> list[np.ndarray]:
        return self._forward(rgb)[1]

    def backward(self, rgb: np.ndarray, upstreams: list[np.ndarray]) -> np.ndarray:
        pre, acts = self._forward(rgb)
        inputs = [np.transpose(_as_rgb(rgb), (2, 0, 1))] + acts[:-1]
        grad = np.zeros_like(acts[-1])
        for k in range(len(self.kernels) - 1, -1, -1):
            grad = grad + upstreams[k]
            grad = grad * (pre[k] > 0.0)
            grad = _conv_stride2_backward(grad, self.kernels[k], inputs[k].shape)
        return np.transpose(grad, (1, 2, 0))


@runtime_checkable
class DiscriminatorScore(Protocol):
    """Maps a raster to a probability strictly inside (0, 1)."""

    def __call__(self, rgb: np.ndarray) -> float: ...


class SeededDiscriminator:
    """Deterministic stand-in scoring rasters from seeded global statistics.

    Fills the discriminator slot of the adversarial terms when no trained
    network is available (there is none in this package)."""

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.weights = rng.normal(0.0, 1.0, size=8)

    def __call__(self, rgb) -> float:
        rgb = _as_rgb(rgb)
        stats = np.concatenate(
            [
                rgb.mean(axis=(0, 1)) - 0.5,
                rgb.std(axis=(0, 1)),
                [rgb.mean() - 0.5, np.abs(np.diff(rgb, axis=1)).mean()],
            ]
        )
        score = 1.0 / (1.0 + math.exp(-float(self.weights @ stats)))
        return clamp_probability(score)


def clamp_probability(score: float) -> float:
    return float(min(max(score, PROBABILITY_EPS), 1.0 - PROBABILITY_EPS))


# --------------------------------------------------------------------------
# pixel losses


def pixel_loss_image(portrait, rendered, mask: SkinMask) -> float:
    """Masked mean of channel-summed absolute differences."""
    i_rgb = _as_rgb(portrait)
    r_rgb = _as_rgb(rendered)
    _check_same_shape(i_rgb, r_rgb)
    if mask.space != IMAGE_SPACE:
        raise ValidationError("pixel_loss_image expects an image-space mask")
    if mask.bits.shape != i_rgb.shape[:2]:
        raise ValidationError("mask dimensions differ from images")
    if mask.count == 0:
        raise ValidationError("mask has no pixels")
    return float(np.abs(i_rgb[mask.bits] - r_rgb[mask.bits]).sum() / mask.count)


def pixel_loss_image_grad(portrait, rendered, mask: SkinMask):
    i_rgb = _as_rgb(portrait)
    r_rgb = _as_rgb(rendered)
    d_r = np.zeros_like(r_rgb)
    d_r[mask.bits] = np.sign(r_rgb[mask.bits] - i_rgb[mask.bits]) / mask.count
    return -d_r, d_r


def pixel_loss_texture(refined, ground_truth) -> float:
    """Mean over texels of channel-summed absolute differences."""
    f_rgb = _as_rgb(refined)
    g_rgb = _as_rgb(ground_truth)
    _check_same_shape(f_rgb, g_rgb)
    texels = f_rgb.shape[0] * f_rgb.shape[1]
    return float(np.abs(f_rgb - g_rgb).sum() / texels)


def pixel_loss_texture_grad(refined, ground_truth):
    f_rgb = _as_rgb(refined)
    g_rgb = _as_rgb(ground_truth)
    texels = f_rgb.shape[0] * f_rgb.shape[1]
    d_f = np.sign(f_rgb - g_rgb) / texels
    return d_f, -d_f


# --------------------------------------------------------------------------
# perceptual and style losses


def perceptual_loss(x, x_prime, extractor: FeatureExtractor) -> float:
    """Sum over layers of the element-count-normalized activation L1."""
    x_rgb = _as_rgb(x)
    xp_rgb = _as_rgb(x_prime)
    _check_same_shape(x_rgb, xp_rgb)
    total = 0.0
    for fx, fxp in zip(extractor.features(x_rgb), extractor.features(xp_rgb)):
        total += np.abs(fx - fxp).sum() / fx.size
    return float(total)


def perceptual_loss_grad(x, x_prime, extractor: FeatureExtractor):
    x_rgb = _as_rgb(x)
    xp_rgb = _as_rgb(x_prime)
    fx = extractor.features(x_rgb)
    fxp = extractor.features(xp_rgb)
    upstreams = [np.sign(a - b) / a.size for a, b in zip(fx, fxp)]
    d_x = extractor.backward(x_rgb, upstreams)
    d_xp = extractor.backward(xp_rgb, [-u for u in upstreams])
    return d_x, d_xp


def gram_matrix(activation: np.ndarray) -> np.ndarray:
    """Channel covariance ``A A^T / (C*H*W)`` of a (C, H, W) activation."""
    c = activation.shape[0]
    flat = activation.reshape(c, -1)
    return flat @ flat.T / activation.size


def style_loss(x, x_prime, extractor: FeatureExtractor) -> float:
    """Mean over layers of the entrywise L1 between Gram matrices."""
    x_rgb = _as_rgb(x)
    xp_rgb = _as_rgb(x_prime)
    _check_same_shape(x_rgb, xp_rgb)
    fx = extractor.features(x_rgb)
    fxp = extractor.features(xp_rgb)
    layer_losses = [
        np.abs(gram_matrix(a) - gram_matrix(b)).sum() for a, b in zip(fx, fxp)
    ]
    return float(np.mean(layer_losses))


def style_loss_grad(x, x_prime, extractor: FeatureExtractor):
    x_rgb = _as_rgb(x)
    xp_rgb = _as_rgb(x_prime)
    fx = extractor.features(x_rgb)
    fxp = extractor.features(xp_rgb)
    n_layers = len(fx)
    up_x = []
    up_xp = []
    for a, b in zip(fx, fxp):
        u = np.sign(gram_matrix(a) - gram_matrix(b)) / n_layers
        sym = u + u.T
        c = a.shape[0]
        up_x.append((sym @ a.reshape(c, -1) / a.size).reshape(a.shape))
        up_xp.append((-sym @ b.reshape(c, -1) / b.size).reshape(b.shape))
    return extractor.backward(x_rgb, up_x), extractor.backward(xp_rgb, up_xp)


# --------------------------------------------------------------------------
# skin regularization


def symmetry_loss(blurred_texture) -> float:
    """Channel-summed absolute difference between mirrored column pairs,
    scaled by 2/(columns*rows). Odd widths leave the center column unpaired."""
    rgb = _as_rgb(blurred_texture)
    height, width = rgb.shape[:2]
    half = width // 2
    left = rgb[:, :half]
    right = rgb[:, width - 1 : width - 1 - half : -1] if half else rgb[:, :0]
    return float(2.0 / (width * height) * np.abs(left - right).sum())


def symmetry_loss_grad(blurred_texture) -> np.ndarray:
    rgb = _as_rgb(blurred_texture)
    height, width = rgb.shape[:2]
    half = width // 2
    grad = np.zeros_like(rgb)
    if half:
        left = rgb[:, :half]
        right = rgb[:, width - 1 : width - 1 - half : -1]
        s = 2.0 / (width * height) * np.sign(left - right)
        grad[:, :half] += s
        grad[:, width - 1 : width - 1 - half : -1] -= s
    return grad


def skin_std_loss(blurred_texture, mask: SkinMask) -> float:
    """Population standard deviation over masked texels, averaged across
    channels. The mean is taken over the mask only."""
    rgb = _as_rgb(blurred_texture)
    if mask.space != UV_SPACE:
        raise ValidationError("skin_std_loss expects a UV-space mask")
    if mask.bits.shape != rgb.shape[:2]:
        raise ValidationError("mask dimensions differ from texture")
    if mask.count < 2:
        raise ValidationError("skin_std_loss needs at least 2 masked texels")
    values = rgb[mask.bits]
    return float(np.sqrt(((values - values.mean(axis=0)) ** 2).mean(axis=0)).mean())


def skin_std_loss_grad(blurred_texture, mask: SkinMask) -> np.ndarray:
    rgb = _as_rgb(blurred_texture)
    values = rgb[mask.bits]
    centered = values - values.mean(axis=0)
    std = np.sqrt((centered**2).mean(axis=0))
    std_safe = np.where(std > 0, std, 1.0)
    per_texel = centered / (3.0 * mask.count * std_safe[None, :])
    per_texel[:, std == 0] = 0.0
    grad = np.zeros_like(rgb)
    grad[mask.bits] = per_texel
    return grad


# --------------------------------------------------------------------------
# adversarial terms


def adversarial_generator_loss(score: float) -> float:
    """Non-saturating generator objective: minimized when the discriminator
    is fooled (score -> 1)."""
    return -math.log(clamp_probability(score))


def adversarial_generator_loss_grad(score: float) -> float:
    return -1.0 / clamp_probability(score)


def adversarial_discriminator_loss(real_score: float, fake_score: float) -> float:
    return -math.log(clamp_probability(real_score)) - math.log(1.0 - clamp_probability(fake_score))


def adversarial_discriminator_loss_grad(real_score: float, fake_score: float):
    return -1.0 / clamp_probability(real_score), 1.0 / (1.0 - clamp_probability(fake_score))


# --------------------------------------------------------------------------
# total objective


@dataclass
class GeneratorLossTerms:
    """Scalar components of the combined generator objective. The three
    ground-truth-dependent texture terms are optional; leaving them unset
    drops them from the total (the unsupervised case)."""

    image_pixel: float
    image_perceptual: float
    image_style: float
    symmetry: float
    skin_std: float
    image_adversarial: float
    texture_adversarial: float
    texture_pixel: float | None = None
    texture_perceptual: float | None = None
    texture_style: float | None = None


def total_generator_loss(terms: GeneratorLossTerms, weights: LossWeights = LossWeights()):
    """Weighted sum of the objective; returns ``(total, breakdown)`` where
    the breakdown maps term names to their weighted contributions."""
    for name in terms.__dataclass_fields__:
        value = getattr(terms, name)
        if value is not None and not math.isfinite(value):
            raise ValidationError(f"loss component {name!r} is not finite")

    breakdown: dict[str, float] = {
        "image_pixel": weights.lambda_l1 * terms.image_pixel,
        "image_perceptual": weights.lambda_perc * terms.image_perceptual,
        "image_style": weights.lambda_sty * terms.image_style,
        "symmetry": weights.lambda_sym * terms.symmetry,
        "skin_std": weights.lambda_std * terms.skin_std,
        "image_adversarial": weights.lambda_adv * terms.image_adversarial,
        "texture_adversarial": weights.lambda_adv * terms.texture_adversarial,
    }
    if terms.texture_pixel is not None:
        breakdown["texture_pixel"] = weights.lambda_l1 * terms.texture_pixel
    if terms.texture_perceptual is not None:
        breakdown["texture_perceptual"] = weights.lambda_perc * terms.texture_perceptual
    if terms.texture_style is not None:
        breakdown["texture_style"] = weights.lambda_sty * terms.texture_style
    total = float(sum(breakdown.values()))
    return total, breakdown


# --------------------------------------------------------------------------
# metrics


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] rasters, capped at 99."""
    a_rgb = _as_rgb(a)
    b_rgb = _as_rgb(b)
    _check_same_shape(a_rgb, b_rgb)
    mse = float(((a_rgb - b_rgb) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / mse)))


def _ssim_window() -> np.ndarray:
    half = (_SSIM_WINDOW - 1) // 2
    g = np.exp(-((np.arange(_SSIM_WINDOW) - half) ** 2) / (2.0 * _SSIM_SIGMA**2))
    return g / g.sum()


def _windowed_mean(channel: np.ndarray, window: np.ndarray) -> np.ndarray:
    half = (_SSIM_WINDOW - 1) // 2
    smoothed = correlate1d(correlate1d(channel, window, axis=0), window, axis=1)
    return smoothed[half:-half, half:-half]


def ssim(a, b) -> float:
    """Mean local SSIM over fully interior 11x11 Gaussian windows (sigma 1.5,
    stabilizers C1=0.01^2, C2=0.03^2), averaged across channels."""
    a_rgb = _as_rgb(a)
    b_rgb = _as_rgb(b)
    _check_same_shape(a_rgb, b_rgb)
    if min(a_rgb.shape[:2]) < _SSIM_WINDOW:
        raise ValidationError(f"ssim needs both dimensions >= {_SSIM_WINDOW}")
    window = _ssim_window()
    values = []
    for c in range(3):
        x = a_rgb[:, :, c]
        y = b_rgb[:, :, c]
        mu_x = _windowed_mean(x, window)
        mu_y = _windowed_mean(y, window)
        var_x = _windowed_mean(x * x, window) - mu_x * mu_x
        var_y = _windowed_mean(y * y, window) - mu_y * mu_y
        cov = _windowed_mean(x * y, window) - mu_x * mu_y
        ssim_map = ((2 * mu_x * mu_y + _SSIM_C1) * (2 * cov + _SSIM_C2)) / (
            (mu_x * mu_x + mu_y * mu_y + _SSIM_C1) * (var_x + var_y + _SSIM_C2)
        )
        values.append(ssim_map.mean())
    return float(np.mean(values))
