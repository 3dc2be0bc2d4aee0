import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from texdown.baselines import KernelSpec, resample, weight_matrix
from texdown.exceptions import ConfigError


def keys_cubic(x, a=-0.5):
    x = abs(x)
    if x <= 1:
        return (a + 2) * x ** 3 - (a + 3) * x ** 2 + 1
    if x < 2:
        return a * x ** 3 - 5 * a * x ** 2 + 8 * a * x - 4 * a
    return 0.0


def lanczos3(x, a=3):
    if x == 0:
        return 1.0
    if abs(x) >= a:
        return 0.0
    px = np.pi * x
    return a * np.sin(px) * np.sin(px / a) / (px * px)


def brute_force(tex, s, kernel, support):
    """Direct 2D filtering with a product kernel and clamp-to-edge taps."""
    c, H, W = tex.shape
    out = np.zeros((c, H // s, W // s))
    r = int(np.ceil(support * s)) + 1
    for i in range(H // s):
        ci = (i + 0.5) * s - 0.5
        for j in range(W // s):
            cj = (j + 0.5) * s - 0.5
            acc, norm = np.zeros(c), 0.0
            for p in range(int(np.floor(ci)) - r, int(np.ceil(ci)) + r + 1):
                for q in range(int(np.floor(cj)) - r, int(np.ceil(cj)) + r + 1):
                    wgt = kernel((p - ci) / s) * kernel((q - cj) / s)
                    if wgt == 0:
                        continue
                    acc += wgt * tex[:, min(max(p, 0), H - 1), min(max(q, 0), W - 1)]
                    norm += wgt
            out[:, i, j] = acc / norm
    return out


@pytest.mark.parametrize("family,kernel,support", [("bicubic", keys_cubic, 2), ("lanczos", lanczos3, 3)])
def test_matches_brute_force(family, kernel, support, rng):
    tex = rng.uniform(size=(3, 16, 16))
    for s in (2, 4):
        assert np.abs(resample(tex, s, family) - brute_force(tex, s, kernel, support)).max() < 1e-6


@pytest.mark.parametrize("family", ["bicubic", "lanczos"])
def test_constant_preserved(family):
    tex = np.full((3, 32, 32), 0.37)
    assert np.allclose(resample(tex, 4, family), 0.37, atol=1e-12)


@pytest.mark.parametrize("family", ["bicubic", "lanczos"])
def test_linear_ramp_preserved_in_interior(family):
    W, s = 64, 4
    tex = np.broadcast_to(np.arange(W, dtype=float), (3, 8, W)).copy()
    out = resample(tex, s, family)
    centers = (np.arange(W // s) + 0.5) * s - 0.5
    interior = slice(3, W // s - 3)
    assert np.abs(out[0, 1, interior] - centers[interior]).max() < 1e-4


def test_rows_normalised():
    for family in ("bicubic", "lanczos"):
        M = weight_matrix(40, 4, KernelSpec(family))
        assert np.allclose(M.sum(axis=1), 1)


def test_indivisible_raises():
    with pytest.raises(ConfigError):
        resample(np.zeros((3, 10, 12)), 4)
    with pytest.raises(ConfigError):
        KernelSpec("box")


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([1, 2, 4, 8]), st.sampled_from(["bicubic", "lanczos"]), st.floats(0, 1))
def test_dc_property(s, family, c):
    out = resample(np.full((3, 16, 16), c), s, family)
    assert out.shape == (3, 16 // s, 16 // s)
    assert np.allclose(out, c, atol=1e-12)
