"""Image losses for training and metrics for evaluation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch
import torch.nn.functional as F

from .exceptions import ConfigError, ShapeError, WindowError

logger = logging.getLogger(__name__)

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
PSNR_CAP = 99.0


@dataclass(frozen=True)
class LossWeights:
    l2: float = 1.0
    ssim: float = 0.2
    perceptual: float = 0.1

    def __post_init__(self):
        vals = (self.l2, self.ssim, self.perceptual)
        if any(v < 0 for v in vals) or not any(v > 0 for v in vals):
            raise ConfigError("loss weights must be >= 0 with at least one positive")


def _check_pair(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")


def l2_loss(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _check_pair(a, b)
    return ((a - b) ** 2).mean()


@lru_cache(maxsize=8)
def _gaussian_window(size, sigma, dtype):
    x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(x ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g).to(dtype)


def ssim(a: torch.Tensor, b: torch.Tensor, as_loss: bool = False) -> torch.Tensor:
    """Mean SSIM of two C x H x W images in [0, 1] (valid 11x11 Gaussian window).

    With ``as_loss`` returns ``(1 - SSIM) / 2``.
    """
    _check_pair(a, b)
    if a.dim() != 3:
        raise ShapeError(f"expected CHW images, got {tuple(a.shape)}")
    c, h, w = a.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise WindowError(f"image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA, a.dtype).expand(c, 1, SSIM_WINDOW, SSIM_WINDOW)

    def filt(x):
        return F.conv2d(x.unsqueeze(0), win, groups=c).squeeze(0)

    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    value = (num / den).mean()
    return (1 - value) / 2 if as_loss else value


def psnr(a, b) -> float:
    a = a.detach().cpu().numpy() if isinstance(a, torch.Tensor) else np.asarray(a)
    b = b.detach().cpu().numpy() if isinstance(b, torch.Tensor) else np.asarray(b)
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def memory_metric(height: int, width: int, bit_depth: int = 8, channels: int = 3) -> float:
    """Rendering memory of a texture in bytes."""
    if min(height, width, bit_depth, channels) <= 0:
        raise ConfigError("texture dims must be positive")
    return height * width * channels * bit_depth / 8


# --------------------------------------------------------------------------
# perceptual feature loss
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureExtractorSpec:
    """Conv feature stack read from a named-tensor file.

    The file holds ``conv{i}.weight`` / ``conv{i}.bias`` for ``i = 0..n-1``;
    ``taps`` lists the layer indices whose (post-ReLU) outputs are compared.
    """

    weights_path: str | None = None
    taps: tuple = (1, 3)


class FeatureExtractor:
    def __init__(self, layers, taps):
        self.layers = layers
        self.taps = set(taps)

    def __call__(self, x):
        feats = []
        h = x.unsqueeze(0)
        for i, (w, b) in enumerate(self.layers):
            h = torch.relu(F.conv2d(h, w.to(x.dtype), b.to(x.dtype), padding=w.shape[-1] // 2))
            if i in self.taps:
                feats.append(h)
        return feats


_extractor_cache: dict = {}


def load_feature_extractor(spec: FeatureExtractorSpec | None):
    """Return a :class:`FeatureExtractor` or ``None`` (disabled) with a warning."""
    if spec is None or not spec.weights_path:
        return None
    key = (spec.weights_path, tuple(spec.taps))
    if key in _extractor_cache:
        return _extractor_cache[key]
    from .io import read_tensors  # local import: io depends on torch only

    try:
        tensors = read_tensors(spec.weights_path)
        layers = []
        i = 0
        while f"conv{i}.weight" in tensors:
            layers.append((tensors[f"conv{i}.weight"].float(), tensors[f"conv{i}.bias"].float()))
            i += 1
        if not layers:
            raise ValueError("no conv layers in weights file")
        extractor = FeatureExtractor(layers, spec.taps)
    except Exception as exc:  # corrupt or missing weights never abort training
        logger.warning("perceptual loss disabled: %s", exc)
        extractor = None
    _extractor_cache[key] = extractor
    return extractor


def perceptual_loss(a, b, spec: FeatureExtractorSpec | None):
    """Mean squared distance between tapped features; ``None`` when disabled."""
    _check_pair(a, b)
    extractor = load_feature_extractor(spec)
    if extractor is None:
        return None
    fa, fb = extractor(a), extractor(b)
    return sum(((x - y) ** 2).mean() for x, y in zip(fa, fb)) / len(fa)


def render_loss(pairs, weights: LossWeights, spec: FeatureExtractorSpec | None = None) -> torch.Tensor:
    """Sum over image pairs of the weighted L2 + SSIM + perceptual losses."""
    if not pairs:
        raise ConfigError("render_loss needs at least one image pair")
    extractor_ok = weights.perceptual > 0 and load_feature_extractor(spec) is not None
    if weights.perceptual > 0 and not extractor_ok:
        logger.debug("perceptual weight ignored: no feature extractor")
    total = 0.0
    for orig, ds in pairs:
        term = 0.0
        if weights.l2:
            term = term + weights.l2 * l2_loss(orig, ds)
        if weights.ssim:
            term = term + weights.ssim * ssim(orig, ds, as_loss=True)
        if extractor_ok:
            term = term + weights.perceptual * perceptual_loss(orig, ds, spec)
        total = total + term
    return total
