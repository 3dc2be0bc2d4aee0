"""scikit-learn style wrappers around the learned and classical downsamplers."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .baselines import KernelSpec, resample
from .exceptions import ConfigError, ShapeError
from .mesh import Mesh, load_obj
from .model import VARIANTS
from .trainer import TrainConfig, evaluate_baseline, train


def check_texture(texture) -> np.ndarray:
    """Return a float64 3 x H x W copy of an HWC or CHW texture in [0, 1]."""
    arr = np.asarray(texture)
    if arr.ndim != 3:
        raise ShapeError(f"texture must be 3-D, got shape {arr.shape}")
    if arr.shape[0] != 3 and arr.shape[-1] in (3, 4):
        arr = np.moveaxis(arr[..., :3], -1, 0)
    if arr.shape[0] != 3:
        raise ShapeError(f"texture must have 3 colour channels, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        arr = arr / 255.0
    arr = np.array(arr, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ConfigError("texture contains non-finite values")
    if arr.min() < 0 or arr.max() > 1:
        raise ConfigError("texture values must lie in [0, 1]")
    return arr


def check_scale(scale) -> int:
    s = int(scale)
    if s != scale or s < 1 or s & (s - 1):
        raise ConfigError(f"scale must be a power of two, got {scale}")
    return s


def check_mesh(mesh) -> Mesh:
    if isinstance(mesh, Mesh):
        return mesh
    return load_obj(mesh)


class GeometryAwareDownsampler(TransformerMixin, BaseEstimator, auto_wrap_output_keys=None):
    """Per-mesh learned texture downsampler.

    ``fit(mesh, texture)`` optimises the network for one textured mesh;
    ``transform()`` returns the downsampled texture (H/s x W/s x 3) and
    ``uvs_`` holds the matching UV table.
    """

    def __init__(self, scale=4, variant="full", profile="desk", iterations=None, seed=0,
                 peak_lr=None, q_poses=None, validation_interval=None, feature_weights=None):
        self.scale = scale
        self.variant = variant
        self.profile = profile
        self.iterations = iterations
        self.seed = seed
        self.peak_lr = peak_lr
        self.q_poses = q_poses
        self.validation_interval = validation_interval
        self.feature_weights = feature_weights

    def _config(self) -> TrainConfig:
        overrides = {"scale": check_scale(self.scale), "seed": int(self.seed),
                     "feature_weights": self.feature_weights}
        if self.iterations is not None:
            overrides["iterations"] = int(self.iterations)
            overrides["warmup"] = min(TrainConfig.from_profile(self.profile).warmup,
                                      max(int(self.iterations) // 10, 0))
        for name in ("peak_lr", "q_poses", "validation_interval"):
            if getattr(self, name) is not None:
                overrides[name] = getattr(self, name)
        return TrainConfig.from_profile(self.profile, **overrides)

    def fit(self, mesh, texture):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        mesh = check_mesh(mesh)
        tex = check_texture(texture)
        self.config_ = self._config()
        self.result_ = train(mesh, tex, self.config_, variant=self.variant)
        self.texture_ = self.result_.output.texture.detach().double().numpy().transpose(1, 2, 0)
        self.uvs_ = self.result_.output.uvs.detach().double().numpy()
        self.report_ = self.result_.report_dict()
        return self

    def transform(self, X=None):
        check_is_fitted(self, "result_")
        return self.texture_

    def score(self, X=None, y=None):
        """Mean validation PSNR (dB) of the selected checkpoint."""
        check_is_fitted(self, "result_")
        return self.result_.best_report.psnr


class ClassicalDownsampler(TransformerMixin, BaseEstimator):
    """Antialiased separable bicubic or Lanczos downsampling."""

    def __init__(self, kernel="bicubic", scale=4, a=None):
        self.kernel = kernel
        self.scale = scale
        self.a = a

    def fit(self, X=None, y=None):
        self.spec_ = KernelSpec(self.kernel, self.a)
        self.scale_ = check_scale(self.scale)
        return self

    def transform(self, X):
        check_is_fitted(self, "spec_")
        tex = check_texture(X)
        return resample(tex, self.scale_, self.spec_).transpose(1, 2, 0)

    def score(self, mesh, texture, config: TrainConfig | None = None):
        """Mean validation PSNR of this baseline on a textured mesh."""
        check_is_fitted(self, "spec_")
        config = config or TrainConfig.from_profile("desk", scale=self.scale_)
        return evaluate_baseline(check_mesh(mesh), check_texture(texture), self.scale_,
                                 self.spec_, config).report.psnr
