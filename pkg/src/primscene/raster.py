"""Ground rasterization, height merging and top-down semantic maps.

Ground polygons are triangulated in BEV (ear clipping) and sampled by casting
a vertical ray through every cell centre. Cell ``(iy, ix)`` has its centre at
``x = x0 + (ix + 0.5) * cell`` and ``y = y0 + (iy + 0.5) * cell``; arrays are
indexed ``[iy, ix]`` so x varies fastest in memory.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .categories import EMPTY_LABEL, GROUND_CLASSES, GROUND_INDEX, LABEL_ID, N_CLASSES
from .exceptions import ConfigError, GeometryError, LayoutParseError, UnsupportedVersionError
from .geometry import unit_cube_corners

MT_EPS = 1e-9
RASTER_MAGIC = b"PSRS"
RASTER_VERSION = 1
N_GROUND = len(GROUND_CLASSES)


@dataclass(frozen=True)
class GridSpec:
    nx: int = 256
    ny: int = 256
    cell: float = 0.25
    x0: float = 0.0
    y0: float = -32.0

    def __post_init__(self):
        if self.nx <= 0 or self.ny <= 0 or self.cell <= 0:
            raise ConfigError("grid dimensions and cell size must be positive")

    @property
    def shape(self):
        return (self.ny, self.nx)

    def centers(self):
        """Cell-centre coordinates ``(xs, ys)``, each shaped ``(ny, nx)``."""
        xs = self.x0 + (np.arange(self.nx) + 0.5) * self.cell
        ys = self.y0 + (np.arange(self.ny) + 0.5) * self.cell
        return np.meshgrid(xs, ys)

    def refine(self, factor):
        return GridSpec(self.nx * factor, self.ny * factor, self.cell / factor, self.x0, self.y0)


@dataclass(frozen=True, eq=False)
class GroundRaster:
    """Per-class height maps ``H`` and occupancy ``B``, both ``(ny, nx, 5)``."""

    H: np.ndarray
    B: np.ndarray
    grid: GridSpec = GridSpec()

    def __post_init__(self):
        # heights are single precision so that file round trips are exact
        object.__setattr__(self, "H", np.asarray(self.H, dtype=np.float32))
        object.__setattr__(self, "B", np.asarray(self.B, dtype=bool))
        expected = self.grid.shape + (N_GROUND,)
        if self.H.shape != expected or self.B.shape != expected:
            raise ConfigError(f"raster arrays must have shape {expected}")
        if not np.all(np.isfinite(self.H[self.B])):
            raise ConfigError("occupied raster cells must hold finite heights")

    def __eq__(self, other):
        return (isinstance(other, GroundRaster) and self.grid == other.grid
                and np.array_equal(self.H, other.H) and np.array_equal(self.B, other.B))


# -- polygon triangulation ---------------------------------------------------

def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _segments_intersect(p1, p2, q1, q2):
    d1, d2 = _cross(q1, q2, p1), _cross(q1, q2, p2)
    d3, d4 = _cross(p1, p2, q1), _cross(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and 0 not in (d1, d2, d3, d4):
        return True

    def on_seg(a, b, c, d):
        return d == 0 and min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) \
            and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    return (on_seg(q1, q2, p1, d1) or on_seg(q1, q2, p2, d2)
            or on_seg(p1, p2, q1, d3) or on_seg(p1, p2, q2, d4))


def _clean_ring(xy):
    """Drop repeated and collinear vertices; returns kept indices."""
    idx = list(range(len(xy)))
    changed = True
    while changed and len(idx) >= 3:
        changed = False
        for k in range(len(idx)):
            a, b, c = xy[idx[k - 1]], xy[idx[k]], xy[idx[(k + 1) % len(idx)]]
            if np.array_equal(a, b) or _cross(a, b, c) == 0:
                del idx[k]
                changed = True
                break
    return idx


def is_simple_polygon(xy):
    xy = np.asarray(xy, dtype=np.float64)
    n = len(xy)
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_intersect(xy[i], xy[(i + 1) % n], xy[j], xy[(j + 1) % n]):
                return False
    return True


def triangulate_polygon(vertices, name="polygon"):
    """Ear-clip a simple polygon in its BEV projection.

    Returns an ``(m, 3)`` array of indices into ``vertices``.
    """
    verts = np.asarray(vertices, dtype=np.float64)
    xy = verts[:, :2]
    idx = _clean_ring(xy)
    if len(idx) < 3 or not is_simple_polygon(xy[idx]):
        raise GeometryError(f"{name} is not a simple polygon with non-zero area")
    area = sum(_cross((0.0, 0.0), xy[idx[k - 1]], xy[idx[k]]) for k in range(len(idx)))
    if area < 0:
        idx = idx[::-1]
    tris = []
    while len(idx) > 3:
        n = len(idx)
        for k in range(n):
            a, b, c = idx[k - 1], idx[k], idx[(k + 1) % n]
            if _cross(xy[a], xy[b], xy[c]) <= 0:
                continue
            others = [o for o in idx if o not in (a, b, c)]
            if any(_cross(xy[a], xy[b], xy[o]) >= 0 and _cross(xy[b], xy[c], xy[o]) >= 0
                   and _cross(xy[c], xy[a], xy[o]) >= 0 for o in others):
                continue
            tris.append((a, b, c))
            del idx[k]
            break
        else:
            raise GeometryError(f"ear clipping failed for {name}")
    tris.append(tuple(idx))
    return np.asarray(tris, dtype=np.int64)


# -- ray casting -------------------------------------------------------------

def ray_cast_triangle(tri, xs, ys, z_origin):
    """Vertical Möller–Trumbore test of rays through ``(xs, ys)``.

    Returns ``(hit, height)`` arrays shaped like ``xs``.
    """
    v0, v1, v2 = np.asarray(tri, dtype=np.float64)
    d = np.array([0.0, 0.0, -1.0])
    e1, e2 = v1 - v0, v2 - v0
    pvec = np.cross(d, e2)
    det = e1 @ pvec
    if abs(det) < MT_EPS:
        return np.zeros(xs.shape, bool), np.zeros(xs.shape)
    inv = 1.0 / det
    tvec = np.stack([xs - v0[0], ys - v0[1], np.full(xs.shape, z_origin - v0[2])], axis=-1)
    u = (tvec @ pvec) * inv
    qvec = np.cross(tvec, e1)
    v = (qvec @ d) * inv
    t = (qvec @ e2) * inv
    hit = (u >= -MT_EPS) & (v >= -MT_EPS) & (u + v <= 1.0 + MT_EPS) & (t >= 0.0)
    return hit, z_origin - t


def rasterize_ground(layout, grid=GridSpec()):
    """Per-class height/occupancy maps from the layout's ground polygons."""
    H = np.zeros(grid.shape + (N_GROUND,))
    B = np.zeros(grid.shape + (N_GROUND,), dtype=bool)
    if not layout.ground:
        return GroundRaster(H, B, grid)
    z_origin = max(np.max(g.as_array()[:, 2]) for g in layout.ground) + 1.0
    best = np.full(grid.shape + (N_GROUND,), -np.inf)
    cx, cy = grid.centers()
    for n, poly in enumerate(layout.ground):
        verts = poly.as_array()
        k = GROUND_INDEX[poly.cls]
        for tri in triangulate_polygon(verts, name=f"ground polygon {n} ({poly.cls})"):
            corners = verts[tri]
            ix0, ix1, iy0, iy1 = _cell_window(grid, corners[:, 0], corners[:, 1])
            if ix0 >= ix1 or iy0 >= iy1:
                continue
            xs, ys = cx[iy0:iy1, ix0:ix1], cy[iy0:iy1, ix0:ix1]
            hit, h = ray_cast_triangle(corners, xs, ys, z_origin)
            view = best[iy0:iy1, ix0:ix1, k]
            view[hit] = np.maximum(view[hit], h[hit])
    B = np.isfinite(best)
    H[B] = best[B]
    return GroundRaster(H, B, grid)


def _cell_window(grid, xs, ys):
    """Index bounds of cells whose centres may fall inside the given extent."""
    ix0 = max(int(np.floor((xs.min() - grid.x0) / grid.cell - 0.5)), 0)
    ix1 = min(int(np.ceil((xs.max() - grid.x0) / grid.cell - 0.5)) + 1, grid.nx)
    iy0 = max(int(np.floor((ys.min() - grid.y0) / grid.cell - 0.5)), 0)
    iy1 = min(int(np.ceil((ys.max() - grid.y0) / grid.cell - 0.5)) + 1, grid.ny)
    return ix0, ix1, iy0, iy1


def merge_heights(raster):
    """Collapse the class axis keeping the highest surface per pixel.

    Returns ``(height, labels)``; ties go to the lower class id and empty
    pixels get height 0 and label 0.
    """
    masked = np.where(raster.B, raster.H, -np.inf)
    k = np.argmax(masked, axis=-1)
    occupied = raster.B.any(axis=-1)
    top = np.take_along_axis(raster.H, k[..., None], -1)[..., 0].astype(np.float64)
    height = np.where(occupied, top, 0.0)
    labels = np.where(occupied, k + LABEL_ID[GROUND_CLASSES[0]], EMPTY_LABEL)
    return height, labels.astype(np.int32)


# -- semantic map ------------------------------------------------------------

def _convex_hull(points):
    pts = sorted(map(tuple, points))
    if len(pts) <= 2:
        return np.asarray(pts)

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and _cross(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    lower, upper = half(pts), half(pts[::-1])
    return np.asarray(lower[:-1] + upper[:-1])


def _inside_convex(hull, xs, ys):
    inside = np.ones(xs.shape, dtype=bool)
    for k in range(len(hull)):
        a, b = hull[k], hull[(k + 1) % len(hull)]
        inside &= (b[0] - a[0]) * (ys - a[1]) - (b[1] - a[1]) * (xs - a[0]) >= 0
    return inside


def primitive_footprint(prim, xs, ys):
    """Boolean mask of the primitive's BEV silhouette over points ``(xs, ys)``."""
    t = prim.transform()
    m, c = t[:3, :3], t[:3, 3]
    if prim.shape == "ellipsoid":
        a = m[:2, :]
        q = np.linalg.inv(a @ a.T)
        dx, dy = xs - c[0], ys - c[1]
        return q[0, 0] * dx * dx + 2 * q[0, 1] * dx * dy + q[1, 1] * dy * dy <= 0.25
    corners = unit_cube_corners() @ m.T + c
    return _inside_convex(_convex_hull(corners[:, :2]), xs, ys)


def primitive_top(prim):
    t = prim.transform()
    m = t[:3, :3]
    if prim.shape == "ellipsoid":
        return t[2, 3] + 0.5 * np.linalg.norm(m[2])
    return t[2, 3] + 0.5 * np.abs(m[2]).sum()


def render_semantic_map(layout, grid=GridSpec()):
    """Top-down label image: merged ground first, objects by ascending top height."""
    _, labels = merge_heights(rasterize_ground(layout, grid))
    xs, ys = grid.centers()
    prims = layout.real_primitives()
    tops = np.array([primitive_top(p) for p in prims])
    for i in np.argsort(tops, kind="stable"):
        p = prims[i]
        labels[primitive_footprint(p, xs, ys)] = LABEL_ID[p.category]
    return labels.astype(np.uint8)


def save_semantic_map(labels, path):
    """Binary PGM (P5); row 0 of the file is grid row ``iy = 0``."""
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.min(initial=0) < 0 or labels.max(initial=0) > N_CLASSES:
        raise ConfigError("semantic map must be a 2-D array of label ids")
    header = f"P5\n{labels.shape[1]} {labels.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + labels.astype(np.uint8).tobytes())


def load_semantic_map(path):
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise LayoutParseError(f"{path}: not a binary PGM file")
    w, h = int(parts[1]), int(parts[2])
    body = data[len(data) - w * h:]
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()


# -- raster file I/O -----------------------------------------------------------

def raster_to_bytes(raster):
    g = raster.grid
    head = RASTER_MAGIC + struct.pack("<III", RASTER_VERSION, g.ny, g.nx)
    planes_h = np.moveaxis(raster.H, -1, 0).astype("<f4")
    planes_b = np.packbits(np.moveaxis(raster.B, -1, 0).ravel())
    return head + planes_h.tobytes() + planes_b.tobytes()


def raster_from_bytes(data, cell=0.25, x0=0.0, y0=-32.0):
    if len(data) < 16 or data[:4] != RASTER_MAGIC:
        raise LayoutParseError("not a ground raster file")
    version, ny, nx = struct.unpack("<III", data[4:16])
    if version != RASTER_VERSION:
        raise UnsupportedVersionError(f"raster version {version} is not supported")
    n = N_GROUND * ny * nx
    nbits = (n + 7) // 8
    if len(data) != 16 + 4 * n + nbits:
        raise LayoutParseError(f"raster payload has {len(data)} bytes, expected {16 + 4 * n + nbits}")
    H = np.frombuffer(data, "<f4", n, 16).reshape(N_GROUND, ny, nx)
    B = np.unpackbits(np.frombuffer(data, np.uint8, nbits, 16 + 4 * n))[:n]
    grid = GridSpec(nx, ny, cell, x0, y0)
    return GroundRaster(np.moveaxis(H, 0, -1),
                        np.moveaxis(B.reshape(N_GROUND, ny, nx), 0, -1).astype(bool), grid)


def save_raster(raster, path):
    Path(path).write_bytes(raster_to_bytes(raster))


def load_raster(path):
    return raster_from_bytes(Path(path).read_bytes())


class GroundRasterizer(TransformerMixin, BaseEstimator):
    """Stateless transformer from layouts to stacked ``[H, B]`` arrays.

    Output shape is ``(n_layouts, ny, nx, 10)``: five height planes followed
    by five occupancy planes.
    """

    def __init__(self, nx=256, ny=256, cell=0.25):
        self.nx = nx
        self.ny = ny
        self.cell = cell

    def fit(self, X, y=None):
        self.grid_ = GridSpec(self.nx, self.ny, self.cell)
        return self

    def transform(self, X):
        grid = GridSpec(self.nx, self.ny, self.cell)
        out = []
        for layout in X:
            r = rasterize_ground(layout, grid)
            out.append(np.concatenate([r.H, r.B.astype(np.float64)], axis=-1))
        return np.stack(out) if out else np.zeros((0,) + grid.shape + (2 * N_GROUND,))

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags
