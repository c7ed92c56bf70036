"""Model clouds from images and meshes, plus built-in synthetic targets.

Images map pixel ``(u, v)`` to ``(u * s, v * s, 1)`` with ``s = 25.4 / dpi``
mm per pixel. Meshes are sampled uniformly over their surface area.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cloud import PointCloud
from .errors import InvalidArgumentError

MIN_TRIANGLE_AREA = 1e-12
IMAGE_PLANE_Z = 1.0
DEFAULT_INTENSITY_MIN = 0.5


@dataclass(frozen=True)
class GrayImage:
    """Row-major grayscale image, intensities in ``[0, 1]``; ``pixels[v, u]``."""

    pixels: np.ndarray
    dpi: float

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if px.ndim != 2 or px.size == 0:
            raise InvalidArgumentError("pixels must be a nonempty 2D array")
        if np.any(px < 0) or np.any(px > 1) or not np.all(np.isfinite(px)):
            raise InvalidArgumentError("pixel intensities must lie in [0, 1]")
        if not self.dpi > 0:
            raise InvalidArgumentError("dpi must be positive")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "dpi", float(self.dpi))

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def mm_per_pixel(self):
        return 25.4 / self.dpi

    def intensity_at(self, x, y):
        """Nearest-pixel intensity at in-plane coordinates (mm); 0 off the image."""
        s = self.mm_per_pixel
        u = np.rint(np.asarray(x) / s).astype(int)
        v = np.rint(np.asarray(y) / s).astype(int)
        inside = (u >= 0) & (u < self.width) & (v >= 0) & (v < self.height)
        out = np.zeros(np.shape(u))
        out[inside] = self.pixels[v[inside], u[inside]]
        return out

    def plane_mesh(self, z=IMAGE_PLANE_Z):
        """Two triangles covering the pixel footprints at height ``z``."""
        s = self.mm_per_pixel
        x0, y0 = -0.5 * s, -0.5 * s
        x1, y1 = (self.width - 0.5) * s, (self.height - 0.5) * s
        verts = [[x0, y0, z], [x1, y0, z], [x1, y1, z], [x0, y1, z]]
        return TriMesh(verts, [[0, 1, 2], [0, 2, 3]])


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise InvalidArgumentError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if len(t) and np.any(self.areas() <= MIN_TRIANGLE_AREA):
            raise InvalidArgumentError("mesh contains degenerate (zero-area) triangles")

    def corners(self):
        """Triangle corners as three ``(T, 3)`` arrays."""
        v = self.vertices[self.triangles]
        return v[:, 0], v[:, 1], v[:, 2]

    def areas(self):
        a, b, c = self.corners()
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def total_area(self):
        return float(self.areas().sum())


@dataclass(frozen=True)
class SurfaceSampleCloud(PointCloud):
    """Mesh surface samples that remember the mesh and the triangle of each sample.

    Registration uses the triangles to find exact closest points on the
    surface instead of the nearest sample.
    """

    mesh: TriMesh | None = field(default=None, compare=False, repr=False)
    face_index: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        super().__post_init__()
        if (self.mesh is None) != (self.face_index is None):
            raise InvalidArgumentError("mesh and face_index go together")
        if self.face_index is not None:
            f = np.asarray(self.face_index, dtype=np.int64).reshape(-1)
            if len(f) != len(self.points) or (len(f) and (f.min() < 0 or f.max() >= len(self.mesh.triangles))):
                raise InvalidArgumentError("face_index must give one valid triangle per point")
            object.__setattr__(self, "face_index", f)


def closest_points_on_triangles(p, a, b, c):
    """Closest point to each ``p[i]`` on triangle ``(a[i], b[i], c[i])``.

    Vectorized region test over the vertex, edge and face Voronoi regions;
    all arguments are ``(N, 3)`` arrays.
    """
    p, a, b, c = (np.asarray(x, dtype=float) for x in (p, a, b, c))
    ab, ac, ap = b - a, c - a, p - a
    bp, cp = p - b, p - c

    def dot(u, v):
        return np.einsum("ij,ij->i", u, v)

    d1, d2 = dot(ab, ap), dot(ac, ap)
    d3, d4 = dot(ab, bp), dot(ac, bp)
    d5, d6 = dot(ab, cp), dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    def ratio(num, den):
        return np.divide(num, den, out=np.zeros_like(num), where=den != 0)[:, None]

    denom = va + vb + vc
    v, w = ratio(vb, denom), ratio(vc, denom)
    out = a + ab * v + ac * w                                    # interior
    e_bc = ((d4 - d3) >= 0) & ((d5 - d6) >= 0) & (va <= 0)
    out = np.where(e_bc[:, None], b + ratio(d4 - d3, (d4 - d3) + (d5 - d6)) * (c - b), out)
    e_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    out = np.where(e_ac[:, None], a + ratio(d2, d2 - d6) * ac, out)
    e_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    out = np.where(e_ab[:, None], a + ratio(d1, d1 - d3) * ab, out)
    out = np.where(((d6 >= 0) & (d5 <= d6))[:, None], c, out)
    out = np.where(((d3 >= 0) & (d4 <= d3))[:, None], b, out)
    out = np.where(((d1 <= 0) & (d2 <= 0))[:, None], a, out)
    return out


def image_to_model_cloud(img, intensity_min=DEFAULT_INTENSITY_MIN):
    s = img.mm_per_pixel
    v, u = np.nonzero(img.pixels >= intensity_min)
    order = np.lexsort((u, v))
    u, v = u[order], v[order]
    pts = np.column_stack([u * s, v * s, np.full(len(u), IMAGE_PLANE_Z)])
    return PointCloud(pts, img.pixels[v, u], "C")


def mesh_to_model_cloud(mesh, samples_per_mm2, seed=0):
    """Area-weighted uniform surface samples; ``round(area * density)`` points."""
    if len(mesh.triangles) == 0:
        raise InvalidArgumentError("mesh has no triangles")
    if not samples_per_mm2 > 0:
        raise InvalidArgumentError("samples_per_mm2 must be positive")
    rng = np.random.default_rng(seed)
    areas = mesh.areas()
    n = int(round(areas.sum() * samples_per_mm2))
    tri = rng.choice(len(areas), size=n, p=areas / areas.sum())
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a, b, c = (x[tri] for x in mesh.corners())
    pts = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
    nrm = np.cross(b - a, c - a)
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return SurfaceSampleCloud(pts, np.ones(n), "C", normals=nrm, mesh=mesh, face_index=tri)


# --- synthetic targets ---------------------------------------------------------

def heightfield_mesh(xs, ys, heights):
    """Closed-top mesh of a piecewise-constant height field.

    ``heights[i, j]`` is the height over cell ``[xs[i], xs[i+1]] x [ys[j], ys[j+1]]``.
    Emits a top quad per cell, vertical walls between cells of different
    height and around the border down to ``z = 0``.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    H = np.asarray(heights, dtype=float)
    verts, tris = [], []

    def quad(p0, p1, p2, p3):
        k = len(verts)
        verts.extend([p0, p1, p2, p3])
        tris.extend([[k, k + 1, k + 2], [k, k + 2, k + 3]])

    nx, ny = H.shape
    for i in range(nx):
        for j in range(ny):
            x0, x1, y0, y1, h = xs[i], xs[i + 1], ys[j], ys[j + 1], H[i, j]
            quad([x0, y0, h], [x1, y0, h], [x1, y1, h], [x0, y1, h])
    # walls normal to x; face orientation is irrelevant for ray casting
    for i in range(nx + 1):
        for j in range(ny):
            h0 = H[i - 1, j] if i > 0 else 0.0
            h1 = H[i, j] if i < nx else 0.0
            if h0 != h1:
                lo, hi = min(h0, h1), max(h0, h1)
                x, y0, y1 = xs[i], ys[j], ys[j + 1]
                quad([x, y0, lo], [x, y1, lo], [x, y1, hi], [x, y0, hi])
    for i in range(nx):
        for j in range(ny + 1):
            h0 = H[i, j - 1] if j > 0 else 0.0
            h1 = H[i, j] if j < ny else 0.0
            if h0 != h1:
                lo, hi = min(h0, h1), max(h0, h1)
                y, x0, x1 = ys[j], xs[i], xs[i + 1]
                quad([x0, y, lo], [x1, y, lo], [x1, y, hi], [x0, y, hi])
    return TriMesh(np.array(verts), np.array(tris))


def step_block(length=140.0, width=90.0, steps=3, step_height=10.0, centered=True):
    """Stack of nested, off-centre rectangular plateaus on a flat base at z = 0.

    Each plateau is inset unequally on its four sides so the relief has no
    mirror symmetry; that pins all six registration degrees of freedom.
    """
    if length <= 0 or width <= 0 or step_height <= 0:
        raise InvalidArgumentError("step_block dimensions must be positive")
    if not 1 <= steps <= 8:
        raise InvalidArgumentError("step_block supports 1 to 8 steps")
    # per-step insets as fractions of the side (left, right, front, back)
    insets = np.array([0.09, 0.05, 0.06, 0.11]) * (4.0 / (steps + 1))
    rects = []
    for k in range(1, steps + 1):
        l, r, f, b = insets * k
        rects.append((l * length, length - r * length, f * width, width - b * width))
    xs = sorted({0.0, length, *[r[0] for r in rects], *[r[1] for r in rects]})
    ys = sorted({0.0, width, *[r[2] for r in rects], *[r[3] for r in rects]})
    H = np.zeros((len(xs) - 1, len(ys) - 1))
    for i in range(len(xs) - 1):
        cx = 0.5 * (xs[i] + xs[i + 1])
        for j in range(len(ys) - 1):
            cy = 0.5 * (ys[j] + ys[j + 1])
            for k, (x0, x1, y0, y1) in enumerate(rects, start=1):
                if x0 < cx < x1 and y0 < cy < y1:
                    H[i, j] = k * step_height
    xs, ys = np.array(xs), np.array(ys)
    if centered:
        xs -= length / 2
        ys -= width / 2
    return heightfield_mesh(xs, ys, H)


def wedge(length=100.0, width=60.0, slope=0.5):
    """Ramp rising along x from z = 0 to ``slope * length``, with side walls."""
    if length <= 0 or width <= 0 or not 0 < slope <= 5:
        raise InvalidArgumentError("wedge needs positive size and 0 < slope <= 5")
    h = slope * length
    v = np.array([
        [0, 0, 0], [length, 0, 0], [length, width, 0], [0, width, 0],
        [length, 0, h], [length, width, h],
    ], dtype=float)
    t = np.array([
        [0, 4, 5], [0, 5, 3],          # ramp
        [1, 2, 5], [1, 5, 4],          # back wall at x = length
        [0, 1, 4], [3, 5, 2],          # side triangles
    ])
    return TriMesh(v, t)


def flat_logo(size=64, dpi=25.4):
    """Binary, asymmetric logo-like image of ``size x size`` pixels."""
    if size < 16:
        raise InvalidArgumentError("flat_logo needs size >= 16")
    n = size
    img = np.zeros((n, n))
    v, u = np.mgrid[0:n, 0:n] / n
    img[(u > 0.08) & (u < 0.22) & (v > 0.1) & (v < 0.9)] = 1.0           # vertical bar
    img[(u > 0.08) & (u < 0.6) & (v > 0.76) & (v < 0.9)] = 1.0           # foot of an "L"
    img[(u - 0.66) ** 2 + (v - 0.3) ** 2 < 0.17 ** 2] = 1.0              # disc
    img[(u > 0.45) & (u < 0.9) & (v > 0.55) & (v < 0.65)] = 1.0          # short bar
    img[(u > 0.8) & (u < 0.9) & (v > 0.65) & (v < 0.85)] = 1.0           # hook
    return GrayImage(img, dpi)


def synth_target(kind, **params):
    if kind == "step_block":
        return step_block(**params)
    if kind == "wedge":
        return wedge(**params)
    if kind == "flat_logo":
        return flat_logo(**params)
    raise InvalidArgumentError(f"unknown target kind {kind!r}")


def target_model_cloud(target, samples_per_mm2=20.0, seed=0, intensity_min=DEFAULT_INTENSITY_MIN):
    if isinstance(target, GrayImage):
        return image_to_model_cloud(target, intensity_min)
    return mesh_to_model_cloud(target, samples_per_mm2, seed)


# --- file formats ----------------------------------------------------------------

def save_off(mesh, path):
    lines = ["OFF", f"{len(mesh.vertices)} {len(mesh.triangles)} 0"]
    lines += [" ".join(f"{c:.17g}" for c in v) for v in mesh.vertices]
    lines += ["3 " + " ".join(str(i) for i in t) for t in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def load_off(path):
    toks = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            toks.append(line.split())
    if not toks or toks[0][0] != "OFF":
        raise InvalidArgumentError("not an OFF file")
    head = toks[0][1:] or toks[1]
    body = toks[1:] if toks[0][1:] else toks[2:]
    nv, nf = int(head[0]), int(head[1])
    verts = np.array([[float(x) for x in r[:3]] for r in body[:nv]])
    tris = []
    for r in body[nv:nv + nf]:
        if int(r[0]) != 3:
            raise InvalidArgumentError("only triangular faces are supported")
        tris.append([int(x) for x in r[1:4]])
    return TriMesh(verts, np.array(tris))


def save_pgm(img, path, maxval=255):
    q = np.rint(img.pixels * maxval).astype(int)
    lines = ["P2", f"# dpi {img.dpi:.17g}", f"{img.width} {img.height}", str(maxval)]
    lines += [" ".join(str(x) for x in row) for row in q]
    Path(path).write_text("\n".join(lines) + "\n")


def load_pgm(path, default_dpi=None):
    dpi = default_dpi
    toks = []
    for line in Path(path).read_text().splitlines():
        if line.lstrip().startswith("#"):
            parts = line.lstrip("# ").split()
            if len(parts) >= 2 and parts[0] == "dpi":
                dpi = float(parts[1])
            continue
        toks.extend(line.split("#", 1)[0].split())
    if not toks or toks[0] != "P2":
        raise InvalidArgumentError("not an ASCII PGM (P2) file")
    w, h, maxval = int(toks[1]), int(toks[2]), int(toks[3])
    data = np.array([int(x) for x in toks[4:4 + w * h]], dtype=float)
    if data.size != w * h:
        raise InvalidArgumentError(f"expected {w * h} pixels, got {data.size}")
    if dpi is None:
        raise InvalidArgumentError("PGM carries no '# dpi' comment and no default was given")
    return GrayImage(data.reshape(h, w) / maxval, dpi)
