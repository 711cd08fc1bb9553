"""Semantic voxel grids: voxelization, IoU/mIoU and memory accounting.

Labels are stored in an ``(nx, ny, nz)`` int32 array indexed ``[ix, iy, iz]``.
A voxel takes the label of whatever contains its centre point. Objects win
over ground, and among objects the smaller volume wins.
"""

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .categories import EMPTY_LABEL, LABEL_ID, N_CLASSES
from .exceptions import ConfigError, LayoutParseError, UnsupportedVersionError
from .raster import GridSpec, merge_heights, rasterize_ground

VOXEL_MAGIC = b"PSVX"
VOXEL_VERSION = 1
_HEADER = struct.Struct("<4sIIIId3d")
MIB = 2 ** 20
BYTES_PER_VALUE = 4


@dataclass(frozen=True)
class VoxelSpec:
    nx: int = 256
    ny: int = 256
    nz: int = 32
    res: float = 0.25
    origin: tuple = (0.0, -32.0, -1.0)

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            v = getattr(self, name)
            if int(v) != v or v <= 0:
                raise ConfigError(f"voxel grid dimension {name} must be a positive integer")
        if not self.res > 0:
            raise ConfigError("voxel resolution must be positive")
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def dims(self):
        return (self.nx, self.ny, self.nz)

    def centers(self, axis, lo=0, hi=None):
        n = self.dims[axis]
        idx = np.arange(lo, n if hi is None else hi)
        return self.origin[axis] + (idx + 0.5) * self.res


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    labels: np.ndarray
    spec: VoxelSpec = VoxelSpec()

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int32)
        if lab.shape != self.spec.dims:
            raise ConfigError(f"labels shape {lab.shape} does not match grid {self.spec.dims}")
        if lab.size and (lab.min() < 0 or lab.max() > N_CLASSES):
            raise ConfigError("voxel labels out of range")
        object.__setattr__(self, "labels", lab)

    def __eq__(self, other):
        return (isinstance(other, VoxelGrid) and self.spec == other.spec
                and np.array_equal(self.labels, other.labels))

    @property
    def n_occupied(self):
        return int(np.count_nonzero(self.labels))


def _index_range(lo, hi, origin, res, n):
    """Indices whose voxel centres can lie in ``[lo, hi]``."""
    i0 = max(int(np.floor((lo - origin) / res - 0.5)), 0)
    i1 = min(int(np.ceil((hi - origin) / res - 0.5)) + 1, n)
    return i0, i1


def primitive_voxels(prim, spec):
    """Index window and containment mask of voxel centres inside ``prim``.

    Returns ``(slices, mask)`` with ``mask`` shaped like the window.
    """
    t = prim.transform()
    m, c = t[:3, :3], t[:3, 3]
    ellipsoid = prim.shape == "ellipsoid"
    half = 0.5 * (np.linalg.norm(m, axis=1) if ellipsoid else np.abs(m).sum(axis=1))
    bounds = [_index_range(c[a] - half[a], c[a] + half[a], spec.origin[a], spec.res, spec.dims[a])
              for a in range(3)]
    if any(i0 >= i1 for i0, i1 in bounds):
        return None, None
    xs, ys, zs = (spec.centers(a, *bounds[a]) for a in range(3))
    pts = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1) - c
    u = pts @ np.linalg.inv(m).T
    if ellipsoid:
        mask = np.einsum("...i,...i->...", u, u) <= 0.25
    else:
        mask = np.all(np.abs(u) <= 0.5, axis=-1)
    return tuple(slice(i0, i1) for i0, i1 in bounds), mask


def voxelize(layout, spec=VoxelSpec()):
    """Semantic voxel grid of a layout (ground surface plus primitives)."""
    labels = np.zeros(spec.dims, dtype=np.int32)
    if layout.ground:
        grid = GridSpec(spec.nx, spec.ny, spec.res, spec.origin[0], spec.origin[1])
        height, classes = merge_heights(rasterize_ground(layout, grid))
        height, classes = height.T, classes.T  # -> [ix, iy]
        k = np.floor((height - spec.origin[2]) / spec.res).astype(np.int64)
        ok = (classes > 0) & (k >= 0) & (k < spec.nz)
        ix, iy = np.nonzero(ok)
        labels[ix, iy, k[ok]] = classes[ok]
    prims = layout.real_primitives()
    order = np.argsort([-p.volume() for p in prims], kind="stable")
    for i in order:
        window, mask = primitive_voxels(prims[i], spec)
        if window is not None:
            labels[window][mask] = LABEL_ID[prims[i].category]
    return VoxelGrid(labels, spec)


class IoUResult(NamedTuple):
    iou: float
    miou: float
    per_class: dict


def _ratio(inter, union):
    return 100.0 if union == 0 else float(100.0 * inter / union)


def iou(a, b, classes="present"):
    """Occupancy IoU, mIoU and per-class IoU (percent), with ``a`` as ground truth.

    ``classes="present"`` averages over labels present in ``a``;
    ``classes="union"`` averages over labels present in either grid.
    """
    if a.spec != b.spec:
        raise ConfigError("voxel grids must share the same spec")
    if classes not in ("present", "union"):
        raise ConfigError("classes must be 'present' or 'union'")
    la, lb = a.labels, b.labels
    occ_a, occ_b = la != EMPTY_LABEL, lb != EMPTY_LABEL
    binary = _ratio(np.count_nonzero(occ_a & occ_b), np.count_nonzero(occ_a | occ_b))
    count_a = np.bincount(la.ravel(), minlength=N_CLASSES + 1)
    count_b = np.bincount(lb.ravel(), minlength=N_CLASSES + 1)
    inter = np.bincount(la[la == lb].ravel(), minlength=N_CLASSES + 1)
    per_class = {}
    for c in range(1, N_CLASSES + 1):
        union = count_a[c] + count_b[c] - inter[c]
        if union:
            per_class[c] = _ratio(inter[c], union)
    keep = [c for c in per_class if count_a[c] or (classes == "union" and count_b[c])]
    if keep:
        miou = float(np.mean([per_class[c] for c in keep]))
    else:
        miou = 100.0 if not per_class else 0.0
    return IoUResult(float(binary), miou, per_class)


def upsample_labels(grid, factor):
    """Nearest-neighbour replication by an integer ``factor`` along every axis."""
    if int(factor) != factor or factor < 1:
        raise ConfigError("upsampling factor must be an integer >= 1")
    factor = int(factor)
    lab = grid.labels
    for axis in range(3):
        lab = np.repeat(lab, factor, axis=axis)
    s = grid.spec
    return VoxelGrid(lab, VoxelSpec(s.nx * factor, s.ny * factor, s.nz * factor,
                                    s.res / factor, s.origin))


class MemoryReport(NamedTuple):
    name: str
    bytes: int
    mib: float


def memory_footprint(kind, dims=None, raster_dims=(256, 256), n_primitives=514):
    """Per-sample storage of a dense voxel grid or of the primitive representation.

    Every stored value takes 4 bytes. The primitive representation holds ten
    raster channels (five heights, five occupancies) plus nine values per
    primitive.
    """
    if kind == "voxel":
        if dims is None or len(dims) != 3 or min(dims) <= 0:
            raise ConfigError("voxel memory needs three positive dimensions")
        nbytes = int(np.prod(dims)) * BYTES_PER_VALUE
        name = "voxel " + "x".join(str(int(d)) for d in dims)
    elif kind == "primscene":
        h, w = raster_dims
        nbytes = (h * w * 10 + n_primitives * 9) * BYTES_PER_VALUE
        name = f"primscene {h}x{w} + {n_primitives}"
    else:
        raise ConfigError(f"unknown representation {kind!r}")
    return MemoryReport(name, nbytes, nbytes / MIB)


def primscene_breakdown(raster_dims=(256, 256), n_primitives=514):
    """``(raster MiB, primitive MiB)`` parts of the primitive representation."""
    h, w = raster_dims
    return h * w * 10 * BYTES_PER_VALUE / MIB, n_primitives * 9 * BYTES_PER_VALUE / MIB


# -- file I/O ---------------------------------------------------------------------

def voxel_to_bytes(grid):
    s = grid.spec
    head = _HEADER.pack(VOXEL_MAGIC, VOXEL_VERSION, s.nx, s.ny, s.nz, s.res, *s.origin)
    return head + grid.labels.astype("<i4").tobytes(order="F")


def voxel_from_bytes(data):
    if len(data) < _HEADER.size:
        raise LayoutParseError("voxel file is truncated")
    magic, version, nx, ny, nz, res, ox, oy, oz = _HEADER.unpack_from(data)
    if magic != VOXEL_MAGIC:
        raise LayoutParseError("not a voxel grid file")
    if version != VOXEL_VERSION:
        raise UnsupportedVersionError(f"voxel file version {version} is not supported")
    n = nx * ny * nz
    if len(data) != _HEADER.size + 4 * n:
        raise LayoutParseError(f"voxel payload has {len(data) - _HEADER.size} bytes, expected {4 * n}")
    lab = np.frombuffer(data, "<i4", n, _HEADER.size).reshape((nx, ny, nz), order="F")
    return VoxelGrid(lab, VoxelSpec(nx, ny, nz, res, (ox, oy, oz)))


def save_voxels(grid, path):
    Path(path).write_bytes(voxel_to_bytes(grid))


def load_voxels(path):
    return voxel_from_bytes(Path(path).read_bytes())


class LayoutVoxelizer(TransformerMixin, BaseEstimator):
    """Stateless transformer from layouts to stacked label arrays ``(n, nx, ny, nz)``."""

    def __init__(self, nx=256, ny=256, nz=32, res=0.25, origin=(0.0, -32.0, -1.0)):
        self.nx = nx
        self.ny = ny
        self.nz = nz
        self.res = res
        self.origin = origin

    def _spec(self):
        return VoxelSpec(self.nx, self.ny, self.nz, self.res, tuple(self.origin))

    def fit(self, X, y=None):
        self.spec_ = self._spec()
        return self

    def transform(self, X):
        spec = self._spec()
        grids = [voxelize(layout, spec).labels for layout in X]
        return np.stack(grids) if grids else np.zeros((0,) + spec.dims, np.int32)

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags
