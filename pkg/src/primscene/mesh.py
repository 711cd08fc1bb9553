"""Triangle meshes for reconstructed scenes, with OBJ and PLY export."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .categories import LABEL_ID
from .exceptions import ConfigError
from .geometry import unit_cube_corners
from .raster import GridSpec, merge_heights, rasterize_ground

# Outward-facing (counter-clockwise from outside) faces of the unit cube,
# indexed into unit_cube_corners() where index = ix + 2*iy + 4*iz.
_CUBE_FACES = np.array([
    [0, 2, 3], [0, 3, 1],  # z = -0.5
    [4, 5, 7], [4, 7, 6],  # z = +0.5
    [0, 1, 5], [0, 5, 4],  # y = -0.5
    [2, 6, 7], [2, 7, 3],  # y = +0.5
    [0, 4, 6], [0, 6, 2],  # x = -0.5
    [1, 3, 7], [1, 7, 5],  # x = +0.5
])


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        lab = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if lab.shape[0] != f.shape[0]:
            raise ConfigError("need one label per triangle")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ConfigError("triangle indices out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "labels", lab)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def face_areas(self):
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=-1)

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros((0, 3), np.int64), np.zeros(0, np.int64))


def merge_meshes(meshes):
    meshes = list(meshes)
    if not meshes:
        return TriangleMesh.empty()
    offsets = np.cumsum([0] + [m.n_vertices for m in meshes[:-1]])
    return TriangleMesh(
        np.concatenate([m.vertices for m in meshes]),
        np.concatenate([m.faces + o for m, o in zip(meshes, offsets)]),
        np.concatenate([m.labels for m in meshes]),
    )


def extrude_mesh(height, occupancy, labels=None, grid=GridSpec()):
    """Two triangles for every 2x2 window of occupied pixels.

    The triangle label is the label of the window's lower-left pixel.
    """
    height = np.asarray(height, dtype=np.float64)
    occ = np.asarray(occupancy, dtype=bool)
    if height.shape != occ.shape or height.ndim != 2:
        raise ConfigError("height and occupancy must be matching 2-D arrays")
    labels = np.zeros(occ.shape, np.int64) if labels is None else np.asarray(labels)
    full = occ[:-1, :-1] & occ[:-1, 1:] & occ[1:, :-1] & occ[1:, 1:]
    iy, ix = np.nonzero(full)
    if iy.size == 0:
        return TriangleMesh.empty()
    ny, nx = occ.shape
    corners = np.stack([iy * nx + ix, iy * nx + ix + 1, (iy + 1) * nx + ix, (iy + 1) * nx + ix + 1])
    used = np.unique(corners)
    remap = np.full(ny * nx, -1, np.int64)
    remap[used] = np.arange(used.size)
    a, b, c, d = remap[corners]
    faces = np.stack([np.stack([a, b, d], -1), np.stack([a, d, c], -1)], axis=1).reshape(-1, 3)
    uy, ux = np.divmod(used, nx)
    verts = np.stack([grid.x0 + (ux + 0.5) * grid.cell, grid.y0 + (uy + 0.5) * grid.cell,
                      height.ravel()[used]], axis=-1)
    return TriangleMesh(verts, faces, np.repeat(labels[iy, ix], 2))


def uv_sphere(segments=16, radius=0.5):
    """UV sphere with ``segments`` meridians and ``segments // 2`` rings.

    Vertex count is ``2 + (rings - 1) * segments`` and face count is
    ``2 * segments * (rings - 1)``.
    """
    if segments < 3:
        raise ConfigError("a sphere needs at least 3 segments")
    rings = segments // 2
    if rings < 2:
        raise ConfigError("a sphere needs at least 2 rings")
    theta = np.pi * np.arange(1, rings) / rings
    phi = 2 * np.pi * np.arange(segments) / segments
    st, ct = np.sin(theta)[:, None], np.cos(theta)[:, None]
    body = np.stack([st * np.cos(phi), st * np.sin(phi), np.broadcast_to(ct, (rings - 1, segments))], -1)
    verts = radius * np.concatenate([[[0, 0, 1]], body.reshape(-1, 3), [[0, 0, -1]]])
    south = len(verts) - 1

    def ring(r, s):
        return 1 + r * segments + s % segments

    faces = []
    for s in range(segments):
        faces.append((0, ring(0, s), ring(0, s + 1)))
    for r in range(rings - 2):
        for s in range(segments):
            a, b = ring(r, s), ring(r, s + 1)
            c, d = ring(r + 1, s), ring(r + 1, s + 1)
            faces.extend([(a, c, d), (a, d, b)])
    for s in range(segments):
        faces.append((south, ring(rings - 2, s + 1), ring(rings - 2, s)))
    return verts, np.asarray(faces, dtype=np.int64)


def primitive_mesh(prim, segments=16):
    """Mesh of a real primitive: transformed unit cube or unit-diameter sphere."""
    if not prim.is_real:
        raise ConfigError("cannot mesh a padding entry")
    if prim.shape == "ellipsoid":
        verts, faces = uv_sphere(segments)
    else:
        verts, faces = unit_cube_corners(), _CUBE_FACES
    t = prim.transform()
    world = verts @ t[:3, :3].T + t[:3, 3]
    return TriangleMesh(world, faces, np.full(len(faces), LABEL_ID[prim.category]))


def scene_mesh(layout, segments=16, grid=GridSpec()):
    """Ground surface plus every real primitive, merged into one mesh."""
    height, labels = merge_heights(rasterize_ground(layout, grid))
    parts = [extrude_mesh(height, labels > 0, labels, grid)]
    parts += [primitive_mesh(p, segments) for p in layout.real_primitives()]
    return merge_meshes(parts)


def export_mesh(mesh, path, fmt=None):
    """Write ``mesh`` as ASCII OBJ or binary little-endian PLY (with face labels)."""
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt == "obj":
        lines = ["# primscene mesh"]
        lines += [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
        path.write_text("\n".join(lines) + "\n")
    elif fmt == "ply":
        header = (
            "ply\nformat binary_little_endian 1.0\n"
            f"element vertex {mesh.n_vertices}\n"
            "property float x\nproperty float y\nproperty float z\n"
            f"element face {mesh.n_faces}\n"
            "property list uchar int vertex_indices\nproperty uchar label\nend_header\n"
        )
        face_dtype = np.dtype([("n", "u1"), ("idx", "<i4", (3,)), ("label", "u1")])
        faces = np.empty(mesh.n_faces, dtype=face_dtype)
        faces["n"] = 3
        faces["idx"] = mesh.faces
        faces["label"] = mesh.labels
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(mesh.vertices.astype("<f4").tobytes())
            fh.write(faces.tobytes())
    else:
        raise ConfigError(f"unsupported mesh format {fmt!r} (use obj or ply)")
