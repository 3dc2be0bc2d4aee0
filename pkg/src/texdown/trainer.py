"""Per-mesh optimisation loop, validation protocol and run export."""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import autodiff as ad
from .baselines import KernelSpec, resample
from .exceptions import ConfigError, NumericAbort
from .io import write_png, write_tensors
from .losses import FeatureExtractorSpec, LossWeights, l2_loss, load_feature_extractor, psnr, render_loss, ssim
from .mesh import Mesh, compute_normals, normalize, write_obj
from .model import VARIANTS, DownsamplerNet, ModelConfig, ModelOutput, prepare_inputs
from .render import CameraPose, PoseRange, RenderConfig, fragments_for, sample_poses, shade, validation_poses

logger = logging.getLogger(__name__)

REPORT_FORMAT = "texdown-report/1"

PROFILES = {
    "paper": dict(iterations=15000, warmup=1000, render=dict(resolution=512)),
    "desk": dict(iterations=2000, warmup=200, render=dict(resolution=256)),
}


@dataclass
class TrainConfig:
    iterations: int = 15000
    warmup: int = 1000
    peak_lr: float = 5e-3
    weight_decay: float = 0.01
    k_views: int = 4
    q_poses: int = 60
    scale: int = 4
    loss_weights: LossWeights = field(default_factory=LossWeights)
    render: RenderConfig = field(default_factory=RenderConfig)
    pose_range: PoseRange = field(default_factory=PoseRange)
    validation_interval: int = 250
    seed: int = 0
    feature_weights: str | None = None
    model: dict = field(default_factory=dict)
    profile: str = "paper"

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.iterations and self.warmup >= self.iterations:
            raise ConfigError("warmup must be shorter than the run")
        if self.k_views < 1 or self.q_poses < 1:
            raise ConfigError("k_views and q_poses must be >= 1")
        if self.validation_interval < 1:
            raise ConfigError("validation_interval must be >= 1")

    @classmethod
    def from_profile(cls, profile: str = "paper", **overrides) -> "TrainConfig":
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}")
        base = copy.deepcopy(PROFILES[profile])
        render = {**base.pop("render", {}), **_as_dict(overrides.pop("render", {}))}
        return cls.from_dict({**base, **overrides, "render": render, "profile": profile})

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "loss_weights" in d and not isinstance(d["loss_weights"], LossWeights):
            d["loss_weights"] = LossWeights(**d["loss_weights"])
        if "render" in d and not isinstance(d["render"], RenderConfig):
            d["render"] = RenderConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in d["render"].items()})
        if "pose_range" in d and not isinstance(d["pose_range"], PoseRange):
            d["pose_range"] = PoseRange(**{k: tuple(v) if isinstance(v, list) else v
                                           for k, v in d["pose_range"].items()})
        return cls(**d)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


def _as_dict(x):
    return asdict(x) if dataclasses.is_dataclass(x) else dict(x)


@dataclass
class ValidationReport:
    iteration: int
    psnr: float
    ssim: float
    loss: float
    per_pose: list
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        # wall-clock is kept out of serialised reports so they stay reproducible
        return {"iteration": self.iteration, "psnr": self.psnr, "ssim": self.ssim,
                "loss": self.loss, "per_pose": self.per_pose}


def pose_hash(poses) -> str:
    payload = json.dumps([{k: (round(v, 9) if isinstance(v, float) else v) for k, v in p.as_dict().items()}
                          for p in poses], sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


class ReferenceRenderer:
    """Renders of the original textured mesh, cached per pose."""

    def __init__(self, mesh: Mesh, texture, cfg: RenderConfig, dtype=torch.float32):
        self.mesh = mesh
        self.cfg = cfg
        self.texture = torch.as_tensor(np.asarray(texture), dtype=dtype)
        self.uvs = torch.as_tensor(mesh.uvs, dtype=dtype)
        self.dtype = dtype
        self._cache = {}

    def fragments(self, pose):
        return fragments_for(self.mesh, pose, self.cfg, radius=1.0, dtype=self.dtype)

    def reference(self, pose, frags=None, cache=False):
        if cache and pose in self._cache:
            return self._cache[pose]
        frags = frags if frags is not None else self.fragments(pose)
        with torch.no_grad():
            img = shade(frags, self.mesh.face_uvs, self.uvs, self.texture, self.cfg)
        if cache:
            self._cache[pose] = img
        return img


def validate(mesh: Mesh, texture_orig, model_output: ModelOutput, poses, cfg: RenderConfig,
             weights: LossWeights | None = None, iteration: int = 0, reference: ReferenceRenderer | None = None,
             face_uvs=None) -> ValidationReport:
    """Render both meshes from each fixed pose and average PSNR/SSIM over pairs.

    ``mesh`` is the normalised mesh with its original UVs; ``model_output``
    supplies the downsampled texture and rewritten UV table.
    """
    start = time.perf_counter()
    weights = weights or LossWeights(perceptual=0.0)
    ref = reference or ReferenceRenderer(mesh, texture_orig, cfg)
    face_uvs = mesh.face_uvs if face_uvs is None else face_uvs
    tex = model_output.texture.detach()
    uvs = model_output.uvs.detach()
    per_pose = []
    with torch.no_grad():
        for pose in poses:
            frags = ref.fragments(pose)
            orig = ref.reference(pose, frags, cache=True)
            ds = shade(frags, face_uvs, uvs.to(ref.dtype), tex.to(ref.dtype), cfg)
            loss = weights.l2 * float(l2_loss(orig, ds)) + weights.ssim * float(ssim(orig, ds, as_loss=True))
            per_pose.append({"psnr": psnr(orig, ds), "ssim": float(ssim(orig, ds)), "loss": loss})
    n = len(per_pose)
    return ValidationReport(
        iteration=iteration,
        psnr=sum(p["psnr"] for p in per_pose) / n,
        ssim=sum(p["ssim"] for p in per_pose) / n,
        loss=sum(p["loss"] for p in per_pose) / n,
        per_pose=per_pose,
        wall_clock=time.perf_counter() - start,
    )


@dataclass
class TrainResult:
    variant: str
    config: TrainConfig
    model_config: ModelConfig
    net: DownsamplerNet
    best_state: dict
    best_iteration: int
    output: ModelOutput
    history: list
    train_log: dict
    poses: list
    original_size: tuple
    padded_size: tuple
    mesh: Mesh  # normalised working mesh with padded-space UVs

    @property
    def best_report(self) -> ValidationReport:
        return next(r for r in self.history if r.iteration == self.best_iteration)

    def report_dict(self) -> dict:
        h, w = self.output.texture.shape[-2:]
        return {
            "format": REPORT_FORMAT,
            "method": "learned",
            "variant": self.variant,
            "scale": self.config.scale,
            "profile": self.config.profile,
            "seed": self.config.seed,
            "config": self.config.to_dict(),
            "model": json.loads(json.dumps(self.model_config.as_dict())),
            "param_count": self.net.parameter_count(),
            "pose_hash": pose_hash(self.poses),
            "texture": {"original": list(self.original_size), "padded": list(self.padded_size),
                        "downsampled": [int(h), int(w)]},
            "uv_space": "padded" if tuple(self.padded_size) != tuple(self.original_size) else "original",
            "checkpoint_selection": "best_validation_psnr",
            "best_iteration": self.best_iteration,
            "best": self.best_report.to_dict(),
            "validation": [r.to_dict() for r in self.history],
            "train": self.train_log,
        }


def ablation_variants(config: TrainConfig | None = None) -> dict:
    """Model configs for the four ablation runs keyed by variant name."""
    overrides = dict(config.model) if config else {}
    scale = config.scale if config else 4
    return {name: ModelConfig.for_variant(name, scale=scale, **overrides) for name in VARIANTS}


def _check_texture(texture) -> np.ndarray:
    texture = np.asarray(texture, dtype=np.float64)
    if texture.ndim != 3 or texture.shape[0] != 3:
        raise ConfigError(f"expected a 3 x H x W texture, got shape {texture.shape}")
    return texture


def train(mesh: Mesh, texture, config: TrainConfig, variant: str = "full", callback=None) -> TrainResult:
    """Optimise a per-mesh downsampling network.

    ``texture`` is 3 x H x W in [0, 1]. ``callback(iteration, output, loss)``
    is invoked after every optimisation step.
    """
    texture = _check_texture(texture)
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    mesh_n = compute_normals(normalize(mesh))
    model_cfg = ModelConfig.for_variant(variant, scale=config.scale, **config.model)
    prep = prepare_inputs(mesh_n, texture, model_cfg)
    net = DownsamplerNet(model_cfg)
    params = net.active_parameters()
    state = ad.OptimizerState(weight_decay=config.weight_decay)

    rcfg = config.render
    weights = config.loss_weights
    spec = FeatureExtractorSpec(config.feature_weights) if config.feature_weights else None
    if weights.perceptual > 0 and load_feature_extractor(spec) is None:
        logger.warning("no perceptual feature weights available; perceptual term disabled")
    ref = ReferenceRenderer(mesh_n, texture, rcfg)
    poses = validation_poses(config.pose_range, config.q_poses)
    val_weights = dataclasses.replace(weights, perceptual=0.0) if weights.l2 or weights.ssim else LossWeights()
    face_uvs = prep.mesh.face_uvs

    def run_validation(it):
        net.eval()
        with torch.no_grad():
            out = net(prep.inputs, prep.context)
        report = validate(mesh_n, texture, out, poses, rcfg, val_weights, it, ref, face_uvs)
        net.train()
        logger.info("iter %d: val psnr %.3f ssim %.4f", it, report.psnr, report.ssim)
        return report

    history = [run_validation(0)]
    best_state = copy.deepcopy(net.state_dict())
    best_iter, best_psnr = 0, history[0].psnr
    log = {"iteration": [], "loss": [], "lr": [], "max_uv_shift": []}

    for it in range(1, config.iterations + 1):
        lr = ad.cosine_lr(it, config.warmup, config.iterations, config.peak_lr)
        batch = sample_poses(config.pose_range, config.k_views, rng)
        out = net(prep.inputs, prep.context)
        pairs = []
        for pose in batch:
            frags = ref.fragments(pose)
            pairs.append((ref.reference(pose, frags), shade(frags, face_uvs, out.uvs, out.texture, rcfg)))
        loss = render_loss(pairs, weights, spec)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericAbort(f"non-finite loss at iteration {it}", {
                "iteration": it, "lr": lr, "poses": [p.as_dict() for p in batch]})
        net.zero_grad(set_to_none=False)
        loss.backward()
        ad.adamw_step(params, None, state, lr)
        shift = float((out.uvs.detach() - prep.context.uvs).abs().max())
        log["iteration"].append(it)
        log["loss"].append(value)
        log["lr"].append(lr)
        log["max_uv_shift"].append(shift)
        if callback is not None:
            callback(it, out, value)
        if it % config.validation_interval == 0 or it == config.iterations:
            report = run_validation(it)
            history.append(report)
            if report.psnr > best_psnr:
                best_psnr, best_iter = report.psnr, it
                best_state = copy.deepcopy(net.state_dict())

    net.load_state_dict(best_state)
    net.eval()
    with torch.no_grad():
        output = net(prep.inputs, prep.context)
    return TrainResult(variant, config, model_cfg, net, best_state, best_iter, output, history, log,
                       poses, prep.original_size, prep.padded_size, prep.mesh)


def export_run(result: TrainResult, mesh: Mesh, out_dir) -> Path:
    """Write texture_ds.png, mesh_out.obj, report.json and checkpoint.bin."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_png(result.output.texture, out / "texture_ds.png")
    uvs = result.output.uvs.detach().double().numpy()
    (out / "mesh_out.obj").write_bytes(write_obj(mesh.with_uvs(uvs)))
    (out / "report.json").write_text(dump_report(result.report_dict()))
    write_tensors(result.best_state, out / "checkpoint.bin")
    return out


def dump_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# classical baselines under the same protocol
# --------------------------------------------------------------------------

@dataclass
class BaselineResult:
    kernel: str
    config: TrainConfig
    texture: np.ndarray
    report: ValidationReport
    poses: list
    original_size: tuple

    def report_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "method": "classical",
            "variant": self.kernel,
            "scale": self.config.scale,
            "profile": self.config.profile,
            "seed": self.config.seed,
            "config": self.config.to_dict(),
            "pose_hash": pose_hash(self.poses),
            "texture": {"original": list(self.original_size), "padded": list(self.original_size),
                        "downsampled": list(self.texture.shape[1:])},
            "uv_space": "original",
            "checkpoint_selection": None,
            "best_iteration": 0,
            "best": self.report.to_dict(),
            "validation": [self.report.to_dict()],
        }


def evaluate_baseline(mesh: Mesh, texture, s: int, kernel="bicubic", config: TrainConfig | None = None,
                      poses=None) -> BaselineResult:
    """Classical downsampling rendered with the original UVs, same metric protocol."""
    texture = _check_texture(texture)
    config = config or TrainConfig.from_profile("desk", scale=s)
    spec = kernel if isinstance(kernel, KernelSpec) else KernelSpec(kernel)
    ds = np.clip(resample(texture, s, spec), 0.0, 1.0)
    mesh_n = compute_normals(normalize(mesh))
    poses = poses if poses is not None else validation_poses(config.pose_range, config.q_poses)
    out = ModelOutput(torch.as_tensor(ds, dtype=torch.float32), torch.as_tensor(mesh_n.uvs, dtype=torch.float32),
                      torch.zeros(2, *ds.shape[1:]))
    weights = dataclasses.replace(config.loss_weights, perceptual=0.0) \
        if config.loss_weights.l2 or config.loss_weights.ssim else LossWeights()
    report = validate(mesh_n, texture, out, poses, config.render, weights)
    return BaselineResult(spec.family, config, ds, report, poses, texture.shape[1:])


def export_baseline(result: BaselineResult, mesh: Mesh, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_png(result.texture, out / "texture_ds.png")
    (out / "mesh_out.obj").write_bytes(write_obj(mesh))
    (out / "report.json").write_text(dump_report(result.report_dict()))
    return out
