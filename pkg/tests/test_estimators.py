import numpy as np
import pytest
from sklearn.base import clone

from texdown import scenes
from texdown.baselines import resample
from texdown.estimators import ClassicalDownsampler, GeometryAwareDownsampler
from texdown.exceptions import ConfigError, ShapeError
from texdown.mesh import write_obj
from texdown.trainer import TrainConfig

SMALL_MODEL = dict(c1=16, c2=16, encoder_channels=(8, 16, 16, 16), graph_hidden=16, warp_hidden=8, recon_hidden=16)


def test_params_round_trip_through_clone():
    est = GeometryAwareDownsampler(scale=2, variant="base", iterations=5, seed=3)
    assert est.get_params()["variant"] == "base"
    twin = clone(est)
    assert twin.get_params() == est.get_params() and twin is not est
    est.set_params(scale=8)
    assert est.scale == 8
    assert clone(ClassicalDownsampler(kernel="lanczos", a=2)).get_params()["a"] == 2


def test_classical_transform_matches_resample():
    tex = scenes.color_noise(32, 48, seed=2)
    hwc = ClassicalDownsampler(kernel="lanczos", scale=4).fit().transform(tex.transpose(1, 2, 0))
    assert hwc.shape == (8, 12, 3)
    assert np.allclose(hwc, resample(tex, 4, "lanczos").transpose(1, 2, 0))
    as_u8 = (tex.transpose(1, 2, 0) * 255).round().astype(np.uint8)
    assert ClassicalDownsampler().fit_transform(as_u8).shape == (8, 12, 3)


def test_classical_input_validation():
    with pytest.raises(ConfigError):
        ClassicalDownsampler(scale=3).fit()
    est = ClassicalDownsampler().fit()
    with pytest.raises(ShapeError):
        est.transform(np.zeros((8, 8)))
    with pytest.raises(ConfigError):
        est.transform(np.full((8, 8, 3), 2.0))


def test_classical_score_uses_the_validation_protocol():
    tex = np.ones((3, 32, 32)) * 0.5
    cfg = TrainConfig.from_profile("desk", q_poses=2, render={"resolution": 32})
    assert ClassicalDownsampler().fit().score(scenes.uv_cube(), tex, cfg) >= 50


def test_learned_fit_transform(tmp_path):
    (tmp_path / "cube.obj").write_bytes(write_obj(scenes.uv_cube()))
    tex = scenes.checkerboard(64, 96, 8)
    est = GeometryAwareDownsampler(scale=4, variant="full", iterations=4, q_poses=2, validation_interval=2)
    est.fit(tmp_path / "cube.obj", tex.transpose(1, 2, 0))
    out = est.transform()
    assert out.shape == (16, 24, 3) and 0 <= out.min() and out.max() <= 1
    assert est.uvs_.shape == (len(scenes.uv_cube().uvs), 2)
    assert est.config_.warmup == 0 and est.config_.iterations == 4
    assert est.score() == est.report_["best"]["psnr"]


def test_learned_rejects_unknown_variant():
    with pytest.raises(ConfigError):
        GeometryAwareDownsampler(variant="huge").fit(scenes.uv_cube(), np.zeros((16, 16, 3)))
