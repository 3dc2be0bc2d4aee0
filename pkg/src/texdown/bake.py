"""Rasterisation of mesh attributes into UV (texture) space."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .exceptions import DegenerateError, ShapeError
from .mesh import Mesh, uv_to_texel


def barycentric(p, tri):
    """Barycentric coordinates of 2D point ``p`` in triangle ``tri`` (3x2)."""
    a, b, c = np.asarray(tri, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    area = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
    if abs(area) <= 1e-12:
        raise DegenerateError("degenerate triangle")
    b1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / area
    b2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / area
    return np.array([1.0 - b1 - b2, b1, b2])


def bbox_pairs(xmin, xmax, ymin, ymax, w, h):
    """Enumerate (item, col, row) for every integer cell in each item's box.

    Boxes are inclusive integer ranges, clipped to ``[0, w) x [0, h)``.
    """
    xmin = np.clip(xmin, 0, w - 1).astype(np.int64)
    xmax = np.clip(xmax, -1, w - 1).astype(np.int64)
    ymin = np.clip(ymin, 0, h - 1).astype(np.int64)
    ymax = np.clip(ymax, -1, h - 1).astype(np.int64)
    nx = np.maximum(xmax - xmin + 1, 0)
    ny = np.maximum(ymax - ymin + 1, 0)
    counts = nx * ny
    total = int(counts.sum())
    item = np.repeat(np.arange(len(counts)), counts)
    if total == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    start = np.repeat(np.cumsum(counts) - counts, counts)
    local = np.arange(total) - start
    nxi = nx[item]
    col = xmin[item] + local % nxi
    row = ymin[item] + local // nxi
    return item, col, row


def edge_functions(tri, px, py):
    """Edge function values for points against consistently oriented triangles.

    ``tri`` is ``(P, 3, 2)``; returns ``(P, 3)`` where column k is the edge
    opposite vertex k, scaled so that the columns sum to twice the area.
    """
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]

    def edge(p0, p1):
        return (p1[:, 0] - p0[:, 0]) * (py - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (px - p0[:, 0])

    return np.stack([edge(b, c), edge(c, a), edge(a, b)], axis=1)


def _top_left(tri):
    """(P, 3) flags: whether the edge opposite each vertex owns its boundary points."""
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]

    def owns(p0, p1):
        dx = p1[:, 0] - p0[:, 0]
        dy = p1[:, 1] - p0[:, 1]
        return (dy < 0) | ((dy == 0) & (dx < 0))

    return np.stack([owns(b, c), owns(c, a), owns(a, b)], axis=1)


@dataclass(frozen=True, eq=False)
class UvRasterGrid:
    """Per-texel coverage of UV triangles.

    Entry ``k`` says texel ``texel[k]`` (flat index ``row * w + col``) lies in
    face ``face[k]`` with barycentrics ``bary[k]``. Texels covered by several
    faces have several entries; ``weight`` is ``1 / count`` so contributions
    average.
    """

    shape: tuple
    texel: np.ndarray
    face: np.ndarray
    bary: np.ndarray
    weight: np.ndarray
    coverage: np.ndarray
    skipped_faces: int

    @property
    def covered_fraction(self):
        return float(self.coverage.mean())


def build_uv_raster(mesh: Mesh, resolution) -> UvRasterGrid:
    """Scan-convert every UV triangle at texel centers (top-left fill rule)."""
    h, w = resolution
    tri = uv_to_texel(mesh.corner_uvs(), h, w)
    area = (tri[:, 1, 0] - tri[:, 0, 0]) * (tri[:, 2, 1] - tri[:, 0, 1]) - \
        (tri[:, 2, 0] - tri[:, 0, 0]) * (tri[:, 1, 1] - tri[:, 0, 1])
    ok = np.abs(area) > 1e-12
    faces = np.flatnonzero(ok)
    tri = tri[ok]
    area = area[ok]
    flip = area < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    area = np.abs(area)
    lo = tri.min(axis=1)
    hi = tri.max(axis=1)
    item, col, row = bbox_pairs(np.ceil(lo[:, 0]), np.floor(hi[:, 0]), np.ceil(lo[:, 1]), np.floor(hi[:, 1]), w, h)
    t = tri[item]
    e = edge_functions(t, col.astype(np.float64), row.astype(np.float64))
    owns = _top_left(t)
    inside = ((e > 0) | ((e == 0) & owns)).all(axis=1)
    item, col, row, e = item[inside], col[inside], row[inside], e[inside]
    bary = np.clip(e / area[item][:, None], 0.0, None)
    bary /= bary.sum(axis=1, keepdims=True)
    # undo the winding swap so bary[k] refers to the face's k-th corner
    f_flip = flip[item]
    bary[f_flip] = bary[f_flip][:, [0, 2, 1]]
    texel = row * w + col
    counts = np.bincount(texel, minlength=h * w)
    weight = 1.0 / counts[texel]
    return UvRasterGrid(
        shape=(h, w),
        texel=texel,
        face=faces[item],
        bary=bary,
        weight=weight,
        coverage=(counts > 0).reshape(h, w),
        skipped_faces=int((~ok).sum()),
    )


def _blend(values, faces, raster):
    """Average-of-barycentric-blends of per-vertex ``values`` (N, C) -> (C, h, w)."""
    h, w = raster.shape
    corner_vals = values[faces[raster.face]]  # (P, 3, C)
    per_entry = (corner_vals * raster.bary[:, :, None]).sum(axis=1) * raster.weight[:, None]
    out = np.zeros((h * w, values.shape[1]))
    np.add.at(out, raster.texel, per_entry)
    return out.T.reshape(values.shape[1], h, w)


def bake_geometry_features(mesh: Mesh, raster: UvRasterGrid) -> np.ndarray:
    """7 x h x w map: positions (3), normals (3), coverage mask (1).

    The mesh should already be normalised to a unit bounding sphere and carry
    vertex normals.
    """
    if mesh.normals is None:
        raise ValueError("mesh has no normals; call compute_normals first")
    attrs = np.concatenate([mesh.vertices, mesh.normals], axis=1)
    feats = _blend(attrs, mesh.faces, raster)
    mask = raster.coverage[None].astype(np.float64)
    return np.concatenate([feats, mask], axis=0)


class Reprojector:
    """Differentiable vertex-feature -> UV-plane interpolation on a fixed raster."""

    def __init__(self, mesh: Mesh, raster: UvRasterGrid, dtype=torch.float32):
        self.shape = raster.shape
        self.n_vertices = mesh.n_vertices
        self.texel = torch.as_tensor(raster.texel, dtype=torch.long)
        self.corner_vertex = torch.as_tensor(mesh.faces[raster.face], dtype=torch.long)
        self.coef = torch.as_tensor(raster.bary * raster.weight[:, None], dtype=dtype)

    def __call__(self, vertex_feats: torch.Tensor) -> torch.Tensor:
        if vertex_feats.dim() != 2 or vertex_feats.shape[0] != self.n_vertices:
            raise ShapeError(f"expected ({self.n_vertices}, C) vertex features, got {tuple(vertex_feats.shape)}")
        h, w = self.shape
        coef = self.coef.to(vertex_feats.dtype)
        vals = (vertex_feats[self.corner_vertex] * coef[:, :, None]).sum(dim=1)
        out = vertex_feats.new_zeros(h * w, vertex_feats.shape[1]).index_add(0, self.texel, vals)
        return out.t().reshape(vertex_feats.shape[1], h, w)


def reproject_vertex_features(vertex_feats, mesh: Mesh, raster: UvRasterGrid) -> torch.Tensor:
    return Reprojector(mesh, raster, dtype=vertex_feats.dtype)(vertex_feats)
