"""Textured triangle meshes: OBJ I/O, normals, adjacency, bounding sphere.

UV coordinates follow the OBJ convention (``v`` grows upward). Texture images
are stored row-major from the top, so every conversion between UV space and
texel space goes through :func:`uv_to_texel` / :func:`texel_center_uv`.
"""
from __future__ import annotations

import dataclasses
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import FormatError, MeshError, ParseError

logger = logging.getLogger(__name__)


def uv_to_texel(uv, h, w):
    """Map UV coordinates to continuous texel coordinates (column, row)."""
    uv = np.asarray(uv) if not hasattr(uv, "detach") else uv
    x = uv[..., 0] * w - 0.5
    y = (1.0 - uv[..., 1]) * h - 0.5
    return _stack(x, y)


def texel_center_uv(h, w):
    """(h, w, 2) array of the UV coordinate at each texel center."""
    xs = (np.arange(w) + 0.5) / w
    ys = 1.0 - (np.arange(h) + 0.5) / h
    u, v = np.meshgrid(xs, ys)
    return np.stack([u, v], axis=-1)


def _stack(x, y):
    if hasattr(x, "detach"):
        import torch
        return torch.stack([x, y], dim=-1)
    return np.stack([x, y], axis=-1)


@dataclass
class MeshReport:
    dropped_faces: int = 0
    wrapped_uvs: int = 0
    degenerate_uv_faces: list = field(default_factory=list)
    isolated_vertices: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangle mesh with per-corner UV indices.

    ``faces`` and ``face_uvs`` are ``(M, 3)`` int arrays into ``vertices`` and
    ``uvs``. ``normals`` are derived per vertex by :func:`compute_normals`.
    ``file_normals``/``face_normals`` carry optional ``vn`` data for round trips.
    """

    vertices: np.ndarray
    faces: np.ndarray
    uvs: np.ndarray
    face_uvs: np.ndarray
    normals: np.ndarray | None = None
    file_normals: np.ndarray | None = None
    face_normals: np.ndarray | None = None
    report: MeshReport = field(default_factory=MeshReport)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def replace(self, **changes) -> "Mesh":
        return dataclasses.replace(self, **changes)

    def with_uvs(self, uvs) -> "Mesh":
        uvs = np.asarray(uvs, dtype=np.float64)
        if uvs.shape != self.uvs.shape:
            raise MeshError(f"uv table shape {uvs.shape} != {self.uvs.shape}")
        return self.replace(uvs=uvs)

    def corner_uvs(self) -> np.ndarray:
        """(M, 3, 2) UVs at each face corner."""
        return self.uvs[self.face_uvs]


def make_mesh(vertices, faces, uvs, face_uvs=None, **kwargs) -> Mesh:
    """Build and validate a mesh from arrays (``face_uvs`` defaults to ``faces``)."""
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    uvs = np.asarray(uvs, dtype=np.float64).reshape(-1, 2)
    face_uvs = faces.copy() if face_uvs is None else np.asarray(face_uvs, dtype=np.int64).reshape(-1, 3)
    return validate(Mesh(vertices, faces, uvs, face_uvs, **kwargs))


def validate(mesh: Mesh) -> Mesh:
    """Check index ranges, drop faces with repeated vertices, wrap UVs into [0, 1]."""
    if mesh.n_vertices == 0:
        raise MeshError("empty mesh: no vertices")
    if mesh.n_faces == 0:
        raise MeshError("empty mesh: no faces")
    if mesh.faces.min() < 0 or mesh.faces.max() >= mesh.n_vertices:
        raise MeshError("face vertex index out of range")
    if len(mesh.uvs) == 0 or mesh.face_uvs.min() < 0 or mesh.face_uvs.max() >= len(mesh.uvs):
        raise MeshError("face uv index out of range")
    report = dataclasses.replace(mesh.report)
    f = mesh.faces
    keep = (f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2])
    changes = {}
    if not keep.all():
        report.dropped_faces += int((~keep).sum())
        changes.update(faces=f[keep], face_uvs=mesh.face_uvs[keep])
        if mesh.face_normals is not None:
            changes["face_normals"] = mesh.face_normals[keep]
        if not keep.any():
            raise MeshError("empty mesh: every face is degenerate")
    uvs = mesh.uvs
    outside = (uvs < 0) | (uvs > 1)
    if outside.any():
        uvs = np.where(outside, uvs - np.floor(uvs), uvs)
        report.wrapped_uvs += int(outside.any(axis=1).sum())
        changes["uvs"] = uvs
    face_uvs = changes.get("face_uvs", mesh.face_uvs)
    t = uvs[face_uvs]
    area = (t[:, 1, 0] - t[:, 0, 0]) * (t[:, 2, 1] - t[:, 0, 1]) - (t[:, 2, 0] - t[:, 0, 0]) * (t[:, 1, 1] - t[:, 0, 1])
    report.degenerate_uv_faces = np.flatnonzero(np.abs(area) <= 1e-14).tolist()
    if report.degenerate_uv_faces:
        logger.warning("%d faces have degenerate UV triangles", len(report.degenerate_uv_faces))
    changes["report"] = report
    return mesh.replace(**changes)


# --------------------------------------------------------------------------
# OBJ
# --------------------------------------------------------------------------

_IGNORED = {"o", "g", "s", "l", "p", "vp"}
_WARNED = {"mtllib", "usemtl"}


def _resolve(idx_str, count, lineno, what):
    try:
        idx = int(idx_str)
    except ValueError:
        raise ParseError(f"bad {what} index {idx_str!r}", lineno) from None
    if idx > 0:
        idx -= 1
    elif idx < 0:
        idx += count
    else:
        raise ParseError(f"{what} index 0 is invalid", lineno)
    if not 0 <= idx < count:
        raise ParseError(f"{what} index {idx_str} out of range", lineno)
    return idx


def parse_obj(data) -> Mesh:
    """Parse the v/vt/vn/f subset of Wavefront OBJ. Polygons are fan-triangulated."""
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8")
    verts, uvs, vns = [], [], []
    faces, face_uvs, face_vns = [], [], []
    has_vn = True
    warnings = []
    for lineno, raw in enumerate(io.StringIO(data), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *rest = line.split()
        try:
            if key == "v":
                if len(rest) < 3:
                    raise ValueError
                verts.append([float(x) for x in rest[:3]])
            elif key == "vt":
                if len(rest) < 2:
                    raise ValueError
                uvs.append([float(x) for x in rest[:2]])
            elif key == "vn":
                if len(rest) < 3:
                    raise ValueError
                vns.append([float(x) for x in rest[:3]])
            elif key == "f":
                if len(rest) < 3:
                    raise ParseError("face needs at least 3 corners", lineno)
                corners = []
                for c in rest:
                    parts = c.split("/")
                    if len(parts) < 2 or parts[1] == "":
                        raise FormatError("face corner without texture coordinate", lineno)
                    vi = _resolve(parts[0], len(verts), lineno, "vertex")
                    ti = _resolve(parts[1], len(uvs), lineno, "uv")
                    ni = None
                    if len(parts) > 2 and parts[2]:
                        ni = _resolve(parts[2], len(vns), lineno, "normal")
                    corners.append((vi, ti, ni))
                for k in range(1, len(corners) - 1):
                    tri = (corners[0], corners[k], corners[k + 1])
                    faces.append([c[0] for c in tri])
                    face_uvs.append([c[1] for c in tri])
                    if any(c[2] is None for c in tri):
                        has_vn = False
                    else:
                        face_vns.append([c[2] for c in tri])
            elif key in _WARNED:
                warnings.append(f"line {lineno}: {key} ignored")
                logger.warning("line %d: %s ignored", lineno, key)
            elif key not in _IGNORED:
                warnings.append(f"line {lineno}: unknown statement {key!r} ignored")
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"malformed {key!r} statement: {raw.strip()!r}", lineno) from None
    if not verts:
        raise MeshError("empty mesh: no vertices")
    if not faces:
        raise MeshError("empty mesh: no faces")
    kwargs = {}
    if has_vn and vns and len(face_vns) == len(faces):
        kwargs = dict(file_normals=np.asarray(vns, dtype=np.float64),
                      face_normals=np.asarray(face_vns, dtype=np.int64))
    mesh = make_mesh(verts, faces, uvs, face_uvs, report=MeshReport(warnings=warnings), **kwargs)
    return mesh


def write_obj(mesh: Mesh, mtllib: str | None = None) -> bytes:
    if mesh.n_vertices == 0 or mesh.n_faces == 0:
        raise MeshError("empty mesh")
    out = io.StringIO()
    if mtllib:
        out.write(f"mtllib {mtllib}\n")
    for v in mesh.vertices:
        out.write(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}\n")
    for t in mesh.uvs:
        out.write(f"vt {t[0]:.6f} {t[1]:.6f}\n")
    with_vn = mesh.file_normals is not None and mesh.face_normals is not None
    if with_vn:
        for n in mesh.file_normals:
            out.write(f"vn {n[0]:.6f} {n[1]:.6f} {n[2]:.6f}\n")
    for i, (f, t) in enumerate(zip(mesh.faces + 1, mesh.face_uvs + 1)):
        if with_vn:
            n = mesh.face_normals[i] + 1
            out.write(f"f {f[0]}/{t[0]}/{n[0]} {f[1]}/{t[1]}/{n[1]} {f[2]}/{t[2]}/{n[2]}\n")
        else:
            out.write(f"f {f[0]}/{t[0]} {f[1]}/{t[1]} {f[2]}/{t[2]}\n")
    return out.getvalue().encode("utf-8")


def load_obj(path) -> Mesh:
    return parse_obj(Path(path).read_bytes())


def save_obj(mesh: Mesh, path) -> None:
    Path(path).write_bytes(write_obj(mesh))


# --------------------------------------------------------------------------
# derived geometry
# --------------------------------------------------------------------------

def face_areas_normals(vertices, faces):
    """Unnormalised face normals (length = 2 * area)."""
    p = vertices[faces]
    return np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])


def compute_normals(mesh: Mesh) -> Mesh:
    """Area-weighted vertex normals. Isolated vertices get +z and are reported."""
    fn = face_areas_normals(mesh.vertices, mesh.faces)
    acc = np.zeros_like(mesh.vertices)
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], fn)
    length = np.linalg.norm(acc, axis=1)
    bad = length <= 1e-20
    normals = np.where(bad[:, None], np.array([0.0, 0.0, 1.0]), acc / np.where(bad, 1.0, length)[:, None])
    report = dataclasses.replace(mesh.report, isolated_vertices=np.flatnonzero(bad).tolist())
    return mesh.replace(normals=normals, report=report)


@dataclass(frozen=True, eq=False)
class WeightedAdjacency:
    """Undirected mesh edges ``(i, j)`` with ``i < j`` and Euclidean lengths."""

    n_vertices: int
    edges: np.ndarray
    lengths: np.ndarray

    def neighbors(self, i):
        a = self.edges
        out = np.concatenate([a[a[:, 0] == i, 1], a[a[:, 1] == i, 0]])
        w = np.concatenate([self.lengths[a[:, 0] == i], self.lengths[a[:, 1] == i]])
        order = np.argsort(out)
        return out[order], w[order]

    def directed(self, weighting="distance", normalize=True):
        """Directed ``(rows, cols, weights)`` arrays for graph aggregation.

        ``weighting`` is ``"distance"`` (raw edge length) or ``"inverse"``
        (reciprocal length). With ``normalize`` each row's weights sum to one.
        """
        rows = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        cols = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        w = np.concatenate([self.lengths, self.lengths])
        if weighting == "inverse":
            w = 1.0 / np.maximum(w, 1e-12)
        elif weighting != "distance":
            raise ValueError(f"unknown edge weighting {weighting!r}")
        if normalize:
            total = np.zeros(self.n_vertices)
            np.add.at(total, rows, w)
            w = w / np.where(total[rows] > 0, total[rows], 1.0)
        return rows, cols, w


def build_weighted_adjacency(mesh: Mesh) -> WeightedAdjacency:
    f = mesh.faces
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e = np.sort(e, axis=1)
    e = np.unique(e, axis=0)
    lengths = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    return WeightedAdjacency(mesh.n_vertices, e, lengths)


def bounding_sphere(mesh_or_vertices):
    v = mesh_or_vertices.vertices if isinstance(mesh_or_vertices, Mesh) else np.asarray(mesh_or_vertices)
    if len(v) == 0:
        raise MeshError("empty mesh")
    center = v.mean(axis=0)
    radius = float(np.linalg.norm(v - center, axis=1).max())
    return center, radius


def normalize(mesh: Mesh) -> Mesh:
    """Recenter on the vertex centroid and scale to a unit bounding sphere."""
    center, radius = bounding_sphere(mesh)
    scale = 1.0 / radius if radius > 0 else 1.0
    return mesh.replace(vertices=(mesh.vertices - center) * scale)
