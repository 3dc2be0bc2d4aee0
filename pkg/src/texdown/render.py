"""Soft rasteriser with UV texture sampling and ambient shading.

Geometry is fixed during texture optimisation, so rendering splits into two
stages. :func:`rasterize` computes, without gradients, every soft fragment
(pixel, face, perspective-correct barycentrics, blend weight) for a pose.
:func:`shade` turns fragments into an image given a texture and a UV table;
it is differentiable in both. :func:`render` chains the two.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .autodiff import sample_points
from .bake import bbox_pairs, edge_functions
from .exceptions import ConfigError, NumericError
from .mesh import Mesh, bounding_sphere, uv_to_texel

# coverage below this is treated as zero when selecting candidate faces
COVERAGE_EPS = 1e-4


@dataclass(frozen=True)
class CameraPose:
    azimuth: float
    elevation: float
    distance: float
    look_at: tuple = (0.0, 0.0, 0.0)
    fov: float = 45.0
    up: tuple = (0.0, 1.0, 0.0)

    def __post_init__(self):
        if not self.distance > 0:
            raise ConfigError("camera distance must be positive")
        if not 0 < self.fov < 180:
            raise ConfigError("fov must be in (0, 180)")

    def as_dict(self):
        return {"azimuth": self.azimuth, "elevation": self.elevation, "distance": self.distance,
                "look_at": list(self.look_at), "fov": self.fov, "up": list(self.up)}


@dataclass(frozen=True)
class PoseRange:
    azimuth: tuple = (0.0, 360.0)
    elevation: tuple = (-30.0, 60.0)
    distance: tuple = (1.8, 3.5)
    fov: float = 45.0
    resolution: int = 256

    def __post_init__(self):
        for name in ("azimuth", "elevation", "distance"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ConfigError(f"empty {name} interval")
        if self.distance[0] <= 0:
            raise ConfigError("distances must be positive")

    def contains(self, pose: CameraPose) -> bool:
        return (self.azimuth[0] <= pose.azimuth <= self.azimuth[1]
                and self.elevation[0] <= pose.elevation <= self.elevation[1]
                and self.distance[0] <= pose.distance <= self.distance[1])


@dataclass(frozen=True)
class RenderConfig:
    sigma: float = 1e-5
    gamma: float = 1e-4
    background: tuple = (0.0, 0.0, 0.0)
    resolution: int = 512
    near: float = 0.1
    far: float = 100.0
    ambient: tuple = (1.0, 1.0, 1.0)
    diffuse: float = 0.0
    light_dir: tuple = (0.0, 0.0, 1.0)
    eps: float = 1e-3

    def __post_init__(self):
        if not (self.sigma > 0 and self.gamma > 0):
            raise ConfigError("sigma and gamma must be positive")
        if not self.near < self.far:
            raise ConfigError("near must be less than far")


def sample_poses(prange: PoseRange, k: int, rng_seed=None) -> list:
    """``k`` poses drawn uniformly per axis from ``prange``."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    az = rng.uniform(*prange.azimuth, size=k)
    el = rng.uniform(*prange.elevation, size=k)
    dist = rng.uniform(*prange.distance, size=k)
    return [CameraPose(float(a), float(e), float(d), fov=prange.fov) for a, e, d in zip(az, el, dist)]


def _radical_inverse(i: int) -> float:
    out, f = 0.0, 0.5
    while i:
        out += f * (i & 1)
        i >>= 1
        f *= 0.5
    return out


def validation_poses(prange: PoseRange, q: int) -> list:
    """Deterministic azimuth-major lattice of ``q`` poses over ``prange``.

    Azimuth and elevation sit at cell midpoints of an ``n_az x n_el`` grid
    (``n_el`` is the largest divisor of ``q`` not above sqrt(q)); distance
    follows a shifted base-2 radical-inverse sequence, so ``q = 1`` gives the
    range midpoint on every axis.
    """
    if q < 1:
        raise ConfigError("q must be >= 1")
    n_el = max(d for d in range(1, int(math.isqrt(q)) + 1) if q % d == 0)
    n_az = q // n_el
    poses = []
    for i in range(n_az):
        for j in range(n_el):
            idx = i * n_el + j
            fa = (i + 0.5) / n_az
            fe = (j + 0.5) / n_el
            fd = (0.5 + _radical_inverse(idx)) % 1.0
            az = prange.azimuth[0] + fa * (prange.azimuth[1] - prange.azimuth[0])
            el = prange.elevation[0] + fe * (prange.elevation[1] - prange.elevation[0])
            dist = prange.distance[0] + fd * (prange.distance[1] - prange.distance[0])
            poses.append(CameraPose(az, el, dist, fov=prange.fov))
    return poses


def view_matrix(pose: CameraPose, radius: float = 1.0):
    """Right-handed look-at rotation ``R`` and eye position (camera looks down -z)."""
    az, el = math.radians(pose.azimuth), math.radians(pose.elevation)
    target = np.asarray(pose.look_at, dtype=np.float64)
    direction = np.array([math.cos(el) * math.sin(az), math.sin(el), math.cos(el) * math.cos(az)])
    eye = target + pose.distance * radius * direction
    fwd = target - eye
    fwd /= np.linalg.norm(fwd)
    up = np.asarray(pose.up, dtype=np.float64)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, np.array([0.0, 0.0, -1.0]))
    right /= np.linalg.norm(right)
    true_up = np.cross(right, fwd)
    R = np.stack([right, true_up, -fwd])
    return R, eye


def project(vertices, pose: CameraPose, cfg: RenderConfig, radius: float | None = None):
    """Screen-space vertices: column/row in pixels and view depth; plus behind-near flags.

    Pixel ``(r, c)`` has its center at ``(c + 0.5, r + 0.5)``. ``radius``
    scales the pose distance (defaults to the bounding-sphere radius).
    """
    v = vertices.vertices if isinstance(vertices, Mesh) else np.asarray(vertices, dtype=np.float64)
    if radius is None:
        radius = bounding_sphere(v)[1] or 1.0
    R, eye = view_matrix(pose, radius)
    cam = (v - eye) @ R.T
    depth = -cam[:, 2]
    behind = depth < cfg.near
    f = 1.0 / math.tan(math.radians(pose.fov) / 2)
    safe = np.where(behind, 1.0, depth)
    x_ndc = f * cam[:, 0] / safe
    y_ndc = f * cam[:, 1] / safe
    res = cfg.resolution
    sx = (x_ndc + 1.0) * 0.5 * res
    sy = (1.0 - y_ndc) * 0.5 * res
    return np.stack([sx, sy, depth], axis=1), behind


@dataclass
class Fragments:
    """Soft fragments of one view; everything is constant w.r.t. texture and UVs."""

    resolution: int
    pixel: torch.Tensor      # (P,) flat pixel index
    face: torch.Tensor       # (P,) face index
    bary: torch.Tensor       # (P, 3) perspective-correct, clamped to the triangle
    weight: torch.Tensor     # (P,) aggregation weight
    bg_weight: torch.Tensor  # (R*R,) background weight
    shade: torch.Tensor | None = None  # (P,) diffuse factor; None when ambient only
    clipped_faces: int = 0
    extra: dict = field(default_factory=dict)


def _point_segment_dist2(px, py, a, b):
    dx = b[:, 0] - a[:, 0]
    dy = b[:, 1] - a[:, 1]
    len2 = dx * dx + dy * dy
    t = ((px - a[:, 0]) * dx + (py - a[:, 1]) * dy) / np.where(len2 > 0, len2, 1.0)
    t = np.clip(t, 0.0, 1.0)
    ex = a[:, 0] + t * dx - px
    ey = a[:, 1] + t * dy - py
    return ex * ex + ey * ey


def rasterize(screen, faces, cfg: RenderConfig, behind=None, normals=None, dtype=torch.float32) -> Fragments:
    """Soft-rasterise projected triangles.

    Coverage of a pixel by a face is ``sigmoid(sign * d^2 / sigma)`` with ``d``
    the distance (normalised screen units, [-1, 1] across the image) from the
    pixel center to the triangle boundary. Faces are blended by a softmax over
    normalised inverse depth with temperature ``gamma``, plus a background
    term, as in SoftRasterizer.
    """
    res = cfg.resolution
    screen = np.asarray(screen, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    if not np.isfinite(screen).all():
        raise NumericError("non-finite screen geometry")
    n_pix = res * res
    keep = np.ones(len(faces), dtype=bool)
    clipped = 0
    if behind is not None and len(faces):
        clipped_mask = behind[faces].any(axis=1)
        clipped = int(clipped_mask.sum())
        keep &= ~clipped_mask
    tri_all = screen[faces][:, :, :2]
    area = (tri_all[:, 1, 0] - tri_all[:, 0, 0]) * (tri_all[:, 2, 1] - tri_all[:, 0, 1]) - \
        (tri_all[:, 2, 0] - tri_all[:, 0, 0]) * (tri_all[:, 1, 1] - tri_all[:, 0, 1])
    keep &= np.abs(area) > 1e-10
    fidx = np.flatnonzero(keep)

    # squared normalised distance beyond which an outside face is ignored
    d2_max = cfg.sigma * math.log((1 - COVERAGE_EPS) / COVERAGE_EPS)
    to_ndc = 2.0 / res
    margin = math.sqrt(d2_max) / to_ndc
    tri = tri_all[fidx]
    lo = tri.min(axis=1) - margin - 0.5
    hi = tri.max(axis=1) + margin - 0.5
    item, col, row = bbox_pairs(np.ceil(lo[:, 0]), np.floor(hi[:, 0]), np.ceil(lo[:, 1]), np.floor(hi[:, 1]), res, res)
    px = col + 0.5
    py = row + 0.5
    t = tri[item]
    a = area[fidx][item]
    e = edge_functions(t, px, py) / a[:, None]  # screen-space barycentrics
    inside = (e >= 0).all(axis=1)
    d2 = np.minimum(np.minimum(_point_segment_dist2(px, py, t[:, 0], t[:, 1]),
                               _point_segment_dist2(px, py, t[:, 1], t[:, 2])),
                    _point_segment_dist2(px, py, t[:, 2], t[:, 0])) * to_ndc ** 2
    sel = inside | (d2 < d2_max)
    item, row, col, e, inside, d2 = item[sel], row[sel], col[sel], e[sel], inside[sel], d2[sel]
    face = fidx[item]
    sign = np.where(inside, 1.0, -1.0)
    coverage = 1.0 / (1.0 + np.exp(-sign * d2 / cfg.sigma))

    b = np.clip(e, 0.0, None)
    b /= np.maximum(b.sum(axis=1, keepdims=True), 1e-12)
    depth_v = screen[faces[face]][:, :, 2]
    inv = b / depth_v
    inv_sum = inv.sum(axis=1, keepdims=True)
    bary = inv / inv_sum
    depth = 1.0 / inv_sum[:, 0]
    zn = (cfg.far - depth) / (cfg.far - cfg.near)

    pixel = row * res + col
    zmax = np.full(n_pix, cfg.eps)
    np.maximum.at(zmax, pixel, zn)
    expz = coverage * np.exp((zn - zmax[pixel]) / cfg.gamma)
    bg = np.exp((cfg.eps - zmax) / cfg.gamma)
    denom = bg.copy()
    np.add.at(denom, pixel, expz)
    weight = expz / denom[pixel]
    bg_weight = bg / denom

    shade = None
    if cfg.diffuse and normals is not None:
        n = (np.asarray(normals)[faces[face]] * bary[:, :, None]).sum(axis=1)
        n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)
        shade = torch.as_tensor(cfg.diffuse * np.abs(n @ np.asarray(cfg.light_dir)), dtype=dtype)

    return Fragments(
        resolution=res,
        pixel=torch.as_tensor(pixel, dtype=torch.long),
        face=torch.as_tensor(face, dtype=torch.long),
        bary=torch.as_tensor(bary, dtype=dtype),
        weight=torch.as_tensor(weight, dtype=dtype),
        bg_weight=torch.as_tensor(bg_weight, dtype=dtype),
        shade=shade,
        clipped_faces=clipped,
    )


def shade(frags: Fragments, face_uvs, uvs: torch.Tensor, texture: torch.Tensor, cfg: RenderConfig) -> torch.Tensor:
    """Textured, ambient-lit image (3 x R x R) from fragments.

    ``face_uvs`` (M, 3) indexes the UV table ``uvs`` (L, 2); ``texture`` is
    3 x h x w in [0, 1], sampled bilinearly with repeat addressing.
    """
    res = frags.resolution
    dtype = texture.dtype
    face_uvs = torch.as_tensor(face_uvs, dtype=torch.long)
    corner = uvs[face_uvs[frags.face]]  # (P, 3, 2)
    uv = (corner * frags.bary.to(dtype)[:, :, None]).sum(dim=1)
    _, h, w = texture.shape
    color = sample_points(texture, uv_to_texel(uv, h, w), mode="repeat")
    light = torch.as_tensor(cfg.ambient, dtype=dtype)
    if frags.shade is not None:
        color = color * (light + frags.shade.to(dtype)[:, None])
    else:
        color = color * light
    img = torch.zeros(res * res, 3, dtype=dtype).index_add(0, frags.pixel, color * frags.weight.to(dtype)[:, None])
    bg = torch.as_tensor(cfg.background, dtype=dtype)
    img = img + frags.bg_weight.to(dtype)[:, None] * bg
    return img.t().reshape(3, res, res)


def soft_rasterize(screen, behind, faces, face_uvs, uvs, texture, cfg: RenderConfig):
    frags = rasterize(screen, faces, cfg, behind=behind, dtype=texture.dtype)
    return shade(frags, face_uvs, uvs, texture, cfg)


def render(mesh: Mesh, texture: torch.Tensor, uvs, pose: CameraPose, cfg: RenderConfig,
           radius: float | None = None) -> torch.Tensor:
    """Render ``mesh`` with ``texture`` and UV table ``uvs`` from ``pose``."""
    if uvs is None:
        uvs = torch.as_tensor(mesh.uvs, dtype=texture.dtype)
    frags = fragments_for(mesh, pose, cfg, radius=radius, dtype=texture.dtype)
    return shade(frags, mesh.face_uvs, uvs, texture, cfg)


def fragments_for(mesh: Mesh, pose: CameraPose, cfg: RenderConfig, radius=None, dtype=torch.float32) -> Fragments:
    screen, behind = project(mesh, pose, cfg, radius=radius)
    return rasterize(screen, mesh.faces, cfg, behind=behind, normals=mesh.normals, dtype=dtype)
