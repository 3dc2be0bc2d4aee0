"""Small procedural meshes and textures for experiments and tests."""
from __future__ import annotations

import numpy as np

from .mesh import Mesh, make_mesh


def uv_sphere(n_lat: int = 16, n_lon: int = 32) -> Mesh:
    """Unit sphere with an equirectangular UV layout and a single seam.

    Face count is ``2 * n_lon * (n_lat - 1)``; faces wind counter-clockwise
    seen from outside.
    """
    verts = [[0.0, 1.0, 0.0]]
    for i in range(1, n_lat):
        theta = np.pi * i / n_lat
        for j in range(n_lon):
            phi = 2 * np.pi * j / n_lon
            verts.append([np.sin(theta) * np.sin(phi), np.cos(theta), np.sin(theta) * np.cos(phi)])
    verts.append([0.0, -1.0, 0.0])
    south = len(verts) - 1

    def vid(i, j):  # ring i in 1..n_lat-1
        return 1 + (i - 1) * n_lon + (j % n_lon)

    uvs = [[j / n_lon, 1.0 - i / n_lat] for i in range(n_lat + 1) for j in range(n_lon + 1)]

    def tid(i, j):
        return i * (n_lon + 1) + j

    pole_uv_n = len(uvs)
    uvs += [[(j + 0.5) / n_lon, 1.0] for j in range(n_lon)]
    pole_uv_s = len(uvs)
    uvs += [[(j + 0.5) / n_lon, 0.0] for j in range(n_lon)]

    faces, face_uvs = [], []
    for j in range(n_lon):
        faces.append([0, vid(1, j), vid(1, j + 1)])
        face_uvs.append([pole_uv_n + j, tid(1, j), tid(1, j + 1)])
        faces.append([south, vid(n_lat - 1, j + 1), vid(n_lat - 1, j)])
        face_uvs.append([pole_uv_s + j, tid(n_lat - 1, j + 1), tid(n_lat - 1, j)])
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = vid(i, j), vid(i, j + 1)
            c, d = vid(i + 1, j), vid(i + 1, j + 1)
            ta, tb, tc, td = tid(i, j), tid(i, j + 1), tid(i + 1, j), tid(i + 1, j + 1)
            faces += [[a, c, d], [a, d, b]]
            face_uvs += [[ta, tc, td], [ta, td, tb]]
    return make_mesh(verts, faces, uvs, face_uvs)


def two_face_square() -> Mesh:
    """Square in the z=0 plane made of two triangles covering the whole UV square."""
    verts = [[-1, -1, 0], [1, -1, 0], [1, 1, 0], [-1, 1, 0]]
    uvs = [[0, 0], [1, 0], [1, 1], [0, 1]]
    faces = [[0, 1, 2], [0, 2, 3]]
    return make_mesh(verts, faces, uvs)


def uv_cube(gutter: float = 1 / 32) -> Mesh:
    """Unit cube, one UV chart per side laid out on a 3 x 2 grid."""
    verts = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float)
    # outward CCW quads as vertex index lists
    quads = [
        [4, 6, 7, 5],  # +x
        [0, 1, 3, 2],  # -x
        [2, 3, 7, 6],  # +y
        [0, 4, 5, 1],  # -y
        [1, 5, 7, 3],  # +z
        [0, 2, 6, 4],  # -z
    ]
    faces, face_uvs, uvs = [], [], []
    for k, q in enumerate(quads):
        cx, cy = k % 3, k // 3
        x0, x1 = cx / 3 + gutter, (cx + 1) / 3 - gutter
        y0, y1 = cy / 2 + gutter, (cy + 1) / 2 - gutter
        base = len(uvs)
        uvs += [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
        faces += [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]
        face_uvs += [[base, base + 1, base + 2], [base, base + 2, base + 3]]
    return make_mesh(verts, faces, uvs, face_uvs)


def checkerboard(h: int, w: int, cell: int = 8, colors=((0.9, 0.9, 0.9), (0.1, 0.1, 0.1))) -> np.ndarray:
    """3 x h x w checkerboard texture."""
    yy, xx = np.mgrid[0:h, 0:w]
    mask = ((yy // cell + xx // cell) % 2).astype(bool)
    c0, c1 = np.asarray(colors[0], float), np.asarray(colors[1], float)
    img = np.where(mask[None], c1[:, None, None], c0[:, None, None])
    return img


def color_noise(h: int, w: int, seed: int = 0, octaves: int = 4) -> np.ndarray:
    """Smooth multi-scale colour noise in [0, 1] (photo-like stand-in)."""
    rng = np.random.default_rng(seed)
    img = np.zeros((3, h, w))
    for o in range(octaves):
        n = 2 ** (o + 2)
        coarse = rng.uniform(size=(3, n + 1, n + 1))
        ys = np.linspace(0, n, h)
        xs = np.linspace(0, n, w)
        y0 = np.minimum(ys.astype(int), n - 1)
        x0 = np.minimum(xs.astype(int), n - 1)
        fy = (ys - y0)[:, None]
        fx = (xs - x0)[None, :]
        c = coarse
        up = (c[:, y0][:, :, x0] * (1 - fy) * (1 - fx) + c[:, y0][:, :, x0 + 1] * (1 - fy) * fx
              + c[:, y0 + 1][:, :, x0] * fy * (1 - fx) + c[:, y0 + 1][:, :, x0 + 1] * fy * fx)
        img += up / 2 ** o
    img -= img.min()
    return img / img.max()


def checker_photo(size: int = 512, photo=None, cell: int = 8) -> np.ndarray:
    """Top half photograph (or colour noise), bottom half checkerboard."""
    if photo is None:
        photo = color_noise(size, size)
    photo = np.asarray(photo, dtype=np.float64)
    if photo.shape[0] != 3:
        photo = photo.transpose(2, 0, 1)
    tex = checkerboard(size, size, cell)
    half = size // 2
    tex[:, :half] = photo[:, :half, :size]
    return tex


def fine_pattern(size: int = 256, period: int = 4) -> np.ndarray:
    """High-frequency test texture: checkerboard plus diagonal colour stripes."""
    tex = checkerboard(size, size, period // 2 or 1, colors=((0.85, 0.8, 0.75), (0.15, 0.2, 0.3)))
    yy, xx = np.mgrid[0:size, 0:size]
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * (xx + yy) / (1.5 * period))
    tex[0] = 0.7 * tex[0] + 0.3 * stripes
    return np.clip(tex, 0, 1)
