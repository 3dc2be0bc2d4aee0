"""Classical antialiased texture downsamplers (bicubic, Lanczos)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError


def cubic_kernel(x, a=-0.5):
    x = np.abs(x)
    out = np.zeros_like(x)
    m1 = x <= 1
    m2 = (x > 1) & (x < 2)
    out[m1] = (a + 2) * x[m1] ** 3 - (a + 3) * x[m1] ** 2 + 1
    out[m2] = a * x[m2] ** 3 - 5 * a * x[m2] ** 2 + 8 * a * x[m2] - 4 * a
    return out


def lanczos_kernel(x, a=3):
    x = np.asarray(x, dtype=np.float64)
    out = np.sinc(x) * np.sinc(x / a)
    out[np.abs(x) >= a] = 0.0
    return out


@dataclass(frozen=True)
class KernelSpec:
    family: str = "bicubic"
    a: float | None = None

    def __post_init__(self):
        if self.family not in ("bicubic", "lanczos"):
            raise ConfigError(f"unknown kernel family {self.family!r}")

    @property
    def param(self):
        if self.a is not None:
            return self.a
        return -0.5 if self.family == "bicubic" else 3

    @property
    def support(self):
        return 2.0 if self.family == "bicubic" else float(self.param)

    def __call__(self, x):
        if self.family == "bicubic":
            return cubic_kernel(x, self.param)
        return lanczos_kernel(x, self.param)


def weight_matrix(n_in: int, s: int, spec: KernelSpec, antialias: bool = True) -> np.ndarray:
    """(n_in // s) x n_in matrix of normalised, border-clamped filter weights."""
    n_out = n_in // s
    stretch = s if antialias else 1
    radius = spec.support * stretch
    M = np.zeros((n_out, n_in))
    for i in range(n_out):
        center = (i + 0.5) * s - 0.5
        taps = np.arange(int(np.floor(center - radius)), int(np.ceil(center + radius)) + 1)
        w = spec((taps - center) / stretch)
        np.add.at(M[i], np.clip(taps, 0, n_in - 1), w)
        M[i] /= M[i].sum()
    return M


def resample(texture, s: int, spec: KernelSpec | str = "bicubic", antialias: bool = True) -> np.ndarray:
    """Downsample a C x H x W texture by integer factor ``s`` (separable filter)."""
    if isinstance(spec, str):
        spec = KernelSpec(spec)
    texture = np.asarray(texture, dtype=np.float64)
    if s < 1:
        raise ConfigError("scale must be >= 1")
    _, H, W = texture.shape
    if H % s or W % s:
        raise ConfigError(f"texture {H}x{W} not divisible by scale {s}")
    Mh = weight_matrix(H, s, spec, antialias)
    Mw = weight_matrix(W, s, spec, antialias)
    return Mh @ texture @ Mw.T
