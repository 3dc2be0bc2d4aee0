"""Per-mesh downsampling network.

Pipeline: residual conv encoder over texture + baked geometry, graph filtering
of features lifted onto mesh vertices (with a skip residual), an offset field
that warps the features and rewrites the UVs, and an RGB reconstruction head.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from . import autodiff as ad
from .bake import Reprojector, UvRasterGrid, bake_geometry_features, build_uv_raster
from .exceptions import ConfigError, ShapeError
from .mesh import Mesh, WeightedAdjacency, build_weighted_adjacency, compute_normals, uv_to_texel

VARIANTS = {
    "base": dict(geocoding=False, warp=False),
    "gcm": dict(geocoding=True, warp=False),
    "uvw": dict(geocoding=False, warp=True),
    "full": dict(geocoding=True, warp=True),
}


@dataclass
class ModelConfig:
    scale: int = 4
    c1: int = 64
    c2: int = 64
    encoder_channels: tuple = (32, 64, 128, 64)
    graph_blocks: int = 2
    graph_hidden: int = 128
    warp_hidden: int = 64
    recon_hidden: int = 128
    max_offset: float = 8.0
    skip: bool = True
    geocoding: bool = True
    warp: bool = True
    edge_weighting: str = "distance"
    normalize_edges: bool = True
    norm_groups: int = 8
    in_channels: int = 10

    def __post_init__(self):
        self.encoder_channels = tuple(self.encoder_channels)
        s = self.scale
        if s < 1 or s & (s - 1):
            raise ConfigError(f"scale must be a power of two, got {s}")
        if int(math.log2(s)) > len(self.encoder_channels):
            raise ConfigError(f"scale {s} needs more than {len(self.encoder_channels)} encoder blocks")
        if self.encoder_channels[-1] != self.c1:
            raise ConfigError("last encoder width must equal c1")
        if self.c1 != self.c2:
            raise ConfigError("graph residual blocks require c1 == c2")
        if self.c2 % 2:
            raise ConfigError("c2 must be even (split into offset and content slices)")

    @classmethod
    def for_variant(cls, variant: str, **kwargs) -> "ModelConfig":
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}")
        return cls(**{**VARIANTS[variant], **kwargs})

    def as_dict(self):
        return asdict(self)


class Conv(nn.Module):
    def __init__(self, c_in, c_out, k=3, stride=1):
        super().__init__()
        self.stride = stride
        self.weight = nn.Parameter(torch.empty(c_out, c_in, k, k))
        self.bias = nn.Parameter(torch.zeros(c_out))
        nn.init.kaiming_uniform_(self.weight, nonlinearity="relu")

    def forward(self, x):
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride)


class ResBlock(nn.Module):
    """conv3x3 -> group norm -> ReLU -> conv3x3, plus a (projected) identity.

    The second conv starts at zero, so a fresh block is its skip path.
    """

    def __init__(self, c_in, c_out, stride, groups):
        super().__init__()
        self.conv1 = Conv(c_in, c_out, 3, stride)
        self.norm = nn.GroupNorm(math.gcd(groups, c_out), c_out)
        self.conv2 = Conv(c_out, c_out, 3)
        nn.init.zeros_(self.conv2.weight)
        self.proj = Conv(c_in, c_out, 1, stride) if (stride != 1 or c_in != c_out) else None

    def forward(self, x):
        y = self.conv2(torch.relu(self.norm(self.conv1(x).unsqueeze(0)).squeeze(0)))
        return y + (x if self.proj is None else self.proj(x))


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        n_down = int(math.log2(cfg.scale))
        blocks = []
        c_in = cfg.in_channels
        for i, c_out in enumerate(cfg.encoder_channels):
            blocks.append(ResBlock(c_in, c_out, 2 if i < n_down else 1, cfg.norm_groups))
            c_in = c_out
        self.blocks = nn.ModuleList(blocks)
        self.scale = cfg.scale

    def forward(self, x):
        _, H, W = x.shape
        if H % self.scale or W % self.scale:
            raise ConfigError(f"input {H}x{W} not divisible by scale {self.scale}")
        for b in self.blocks:
            x = b(x)
        return x


class GraphLayer(nn.Module):
    def __init__(self, c_in, c_out, zero=False):
        super().__init__()
        self.theta1 = nn.Parameter(torch.zeros(c_in, c_out))
        self.theta2 = nn.Parameter(torch.zeros(c_in, c_out))
        if not zero:
            with torch.no_grad():
                if c_in == c_out:
                    self.theta1.copy_(torch.eye(c_in))
                else:
                    nn.init.kaiming_uniform_(self.theta1.t(), nonlinearity="relu")

    def forward(self, f, edges):
        return ad.graph_aggregate(f, edges, self.theta1, self.theta2)


class GraphBlock(nn.Module):
    """Two graph layers with a ReLU between, plus an identity skip.

    The second layer starts at zero so each block is the identity at init.
    """

    def __init__(self, channels, hidden):
        super().__init__()
        self.l1 = GraphLayer(channels, hidden)
        self.l2 = GraphLayer(hidden, channels, zero=True)

    def forward(self, f, edges):
        return f + self.l2(torch.relu(self.l1(f, edges)), edges)


class MeshContext:
    """Precomputed, parameter-free mesh structures used by the network."""

    def __init__(self, mesh: Mesh, out_shape, adjacency: WeightedAdjacency | None = None,
                 raster: UvRasterGrid | None = None, edge_weighting="distance", normalize_edges=True,
                 dtype=torch.float32):
        h, w = out_shape
        self.out_shape = (h, w)
        self.mesh = mesh
        self.n_vertices = mesh.n_vertices
        pairs = np.unique(np.stack([mesh.faces.ravel(), mesh.face_uvs.ravel()], axis=1), axis=0)
        self.pair_vertex = torch.as_tensor(pairs[:, 0], dtype=torch.long)
        self.pair_coords = torch.as_tensor(uv_to_texel(mesh.uvs[pairs[:, 1]], h, w), dtype=dtype)
        counts = np.bincount(pairs[:, 0], minlength=mesh.n_vertices).astype(np.float64)
        self.inv_count = torch.as_tensor(1.0 / np.maximum(counts, 1.0), dtype=dtype)
        adjacency = adjacency or build_weighted_adjacency(mesh)
        rows, cols, wts = adjacency.directed(edge_weighting, normalize_edges)
        self.edges = (torch.as_tensor(rows, dtype=torch.long), torch.as_tensor(cols, dtype=torch.long),
                      torch.as_tensor(wts, dtype=dtype))
        self.raster = raster if raster is not None else build_uv_raster(mesh, (h, w))
        self.reproject = Reprojector(mesh, self.raster, dtype=dtype)
        self.uvs = torch.as_tensor(mesh.uvs, dtype=dtype)
        self.uv_coords = torch.as_tensor(uv_to_texel(mesh.uvs, h, w), dtype=dtype)

    def sample_vertex_features(self, fe: torch.Tensor) -> torch.Tensor:
        """Average of bilinear samples of ``fe`` at every UV position of each vertex."""
        samples = ad.sample_points(fe, self.pair_coords.to(fe.dtype), mode="border")
        acc = samples.new_zeros(self.n_vertices, fe.shape[0]).index_add(0, self.pair_vertex, samples)
        return acc * self.inv_count.to(fe.dtype)[:, None]


class GeoCoding(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.enabled = cfg.geocoding
        self.use_skip = cfg.skip
        self.blocks = nn.ModuleList(GraphBlock(cfg.c1, cfg.graph_hidden) for _ in range(cfg.graph_blocks))
        self.skip = Conv(cfg.c1, cfg.c2, 1)

    def graph_path(self, fe, ctx: MeshContext):
        f = ctx.sample_vertex_features(fe)
        for b in self.blocks:
            f = b(f, ctx.edges)
        return ctx.reproject(f)

    def forward(self, fe, ctx: MeshContext):
        if not self.enabled:
            # ablated: skip-only passthrough
            return self.skip(fe)
        fg = self.graph_path(fe, ctx)
        if self.use_skip:
            fg = fg + self.skip(fe)
        return fg


class UVWarper(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        half = cfg.c2 // 2
        self.enabled = cfg.warp
        self.half = half
        self.max_offset = cfg.max_offset
        self.conv1 = Conv(half, cfg.warp_hidden, 3)
        self.conv2 = Conv(cfg.warp_hidden, 2, 3)
        nn.init.zeros_(self.conv2.weight)

    def offsets(self, fg):
        raw = self.conv2(torch.relu(self.conv1(fg[: self.half])))
        return self.max_offset * torch.tanh(raw)

    def apply(self, content, delta, ctx: MeshContext):
        """Backward-warp ``content`` by ``delta`` and push the UVs forward by it.

        Shifted UVs are clamped to [0, 1]: loaders wrap anything outside that
        range, which would tear a face apart after export.
        """
        _, h, w = content.shape
        grid = ad.identity_grid(h, w, dtype=content.dtype) - delta
        fw = ad.grid_sample_bilinear(content, grid, mode="border")
        d_uv = ad.sample_points(delta, ctx.uv_coords.to(delta.dtype), mode="border")
        step = torch.as_tensor([1.0 / w, -1.0 / h], dtype=delta.dtype)
        return fw, (ctx.uvs.to(delta.dtype) + d_uv * step).clamp(0.0, 1.0)

    def forward(self, fg, ctx: MeshContext):
        content = fg[self.half:]
        if not self.enabled:
            h, w = content.shape[-2:]
            return content, ctx.uvs.to(fg.dtype), fg.new_zeros(2, h, w)
        delta = self.offsets(fg)
        fw, uvs = self.apply(content, delta, ctx)
        return fw, uvs, delta


class Reconstruct(nn.Module):
    """conv3x3 -> group norm -> ReLU -> conv3x3 -> sigmoid."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.conv1 = Conv(cfg.c2 // 2, cfg.recon_hidden, 3)
        self.norm = nn.GroupNorm(math.gcd(cfg.norm_groups, cfg.recon_hidden), cfg.recon_hidden)
        self.conv2 = Conv(cfg.recon_hidden, 3, 3)
        nn.init.zeros_(self.conv2.weight)

    def forward(self, fw):
        h = torch.relu(self.norm(self.conv1(fw).unsqueeze(0)).squeeze(0))
        return torch.sigmoid(self.conv2(h))


@dataclass
class ModelOutput:
    texture: torch.Tensor   # 3 x h x w in [0, 1]
    uvs: torch.Tensor       # L x 2 rewritten UV table
    offsets: torch.Tensor   # 2 x h x w warp field in output texels
    extra: dict = field(default_factory=dict)


class DownsamplerNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.geocoding = GeoCoding(cfg)
        self.warper = UVWarper(cfg)
        self.head = Reconstruct(cfg)

    def forward(self, x: torch.Tensor, ctx: MeshContext) -> ModelOutput:
        if x.dim() != 3 or x.shape[0] != self.cfg.in_channels:
            raise ShapeError(f"expected {self.cfg.in_channels} x H x W input, got {tuple(x.shape)}")
        fe = self.encoder(x)
        if tuple(fe.shape[-2:]) != ctx.out_shape:
            raise ShapeError(f"encoder output {tuple(fe.shape[-2:])} != raster {ctx.out_shape}")
        fg = self.geocoding(fe, ctx)
        fw, uvs, delta = self.warper(fg, ctx)
        return ModelOutput(self.head(fw), uvs, delta)

    def active_parameters(self) -> ad.ParamStore:
        """Parameters that receive gradients under this config's ablations."""
        store = ad.ParamStore()
        for name, p in self.named_parameters():
            if name.startswith("geocoding.blocks") and not self.cfg.geocoding:
                continue
            if name.startswith("geocoding.skip") and self.cfg.geocoding and not self.cfg.skip:
                continue
            if name.startswith("warper") and not self.cfg.warp:
                continue
            store.add(name, p)
        return store

    def parameter_count(self) -> int:
        return ad.ParamStore.from_module(self).count()


# --------------------------------------------------------------------------
# input preparation
# --------------------------------------------------------------------------

def pad_to_multiple(texture: np.ndarray, s: int) -> np.ndarray:
    """Replicate-pad a C x H x W texture at the bottom/right to multiples of ``s``."""
    _, H, W = texture.shape
    ph, pw = (-H) % s, (-W) % s
    if not ph and not pw:
        return texture
    return np.pad(texture, ((0, 0), (0, ph), (0, pw)), mode="edge")


def rescale_uvs_for_padding(uvs, size, padded):
    """UVs addressing the same texels after bottom/right padding."""
    (H, W), (Hp, Wp) = size, padded
    uvs = np.asarray(uvs, dtype=np.float64).copy()
    uvs[:, 0] = uvs[:, 0] * W / Wp
    uvs[:, 1] = 1.0 - (1.0 - uvs[:, 1]) * H / Hp
    return uvs


@dataclass
class PreparedInputs:
    mesh: Mesh              # normalised mesh with normals, UVs in padded texture space
    texture: np.ndarray     # padded C x H x W texture
    inputs: torch.Tensor    # 10 x H x W network input
    geometry: np.ndarray    # 7 x H x W baked geometry + mask
    context: MeshContext
    original_size: tuple
    padded_size: tuple


def prepare_inputs(mesh: Mesh, texture: np.ndarray, cfg: ModelConfig, dtype=torch.float32) -> PreparedInputs:
    """Normalise/pad, bake geometry at full resolution and build the mesh context.

    ``mesh`` must already be normalised to a unit bounding sphere.
    """
    texture = np.asarray(texture, dtype=np.float64)
    _, H, W = texture.shape
    padded = pad_to_multiple(texture, cfg.scale)
    Hp, Wp = padded.shape[1:]
    if (Hp, Wp) != (H, W):
        mesh = mesh.with_uvs(rescale_uvs_for_padding(mesh.uvs, (H, W), (Hp, Wp)))
    if mesh.normals is None:
        mesh = compute_normals(mesh)
    geom = bake_geometry_features(mesh, build_uv_raster(mesh, (Hp, Wp)))
    inputs = torch.as_tensor(np.concatenate([padded, geom], axis=0), dtype=dtype)
    ctx = MeshContext(mesh, (Hp // cfg.scale, Wp // cfg.scale), edge_weighting=cfg.edge_weighting,
                      normalize_edges=cfg.normalize_edges, dtype=dtype)
    return PreparedInputs(mesh, padded, inputs, geom, ctx, (H, W), (Hp, Wp))
