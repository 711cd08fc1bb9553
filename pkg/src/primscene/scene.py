"""Scene layout data model: primitives, ground polygons, FOV handling and edits.

Coordinates use the ego pose's local frame: x forward, y left, z up, metres.
The field of view is ``x in [0, forward]`` and ``y in [-lateral, lateral]``.
"""

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import geometry
from .categories import CATEGORIES, CATEGORY_CODES, GROUND_CLASSES, VEGETATION, category
from .exceptions import (
    ConfigError,
    InvalidEditError,
    LayoutParseError,
    NotFoundError,
    UnsupportedVersionError,
)

LAYOUT_FORMAT = "primscene.layout"
LAYOUT_VERSION = 1
DENSITY_LABELS = ("low", "medium", "high")
EXISTENCE_THRESHOLD = 0.3
_ZERO3 = (0.0, 0.0, 0.0)
_ZERO6 = (0.0,) * 6


def _floats(values, n, name):
    out = tuple(float(v) for v in values)
    if len(out) != n:
        raise ConfigError(f"{name} needs {n} values, got {len(out)}")
    if not all(math.isfinite(v) for v in out):
        raise ConfigError(f"{name} contains non-finite values")
    return out


@dataclass(frozen=True)
class ScenePrimitive:
    """One object instance; ``exists == 0`` marks a padding slot."""

    category: str
    center: tuple = _ZERO3
    cholesky: tuple = _ZERO6
    exists: int = 1
    confidence: float | None = None
    instance_id: int = -1

    def __post_init__(self):
        category(self.category)
        object.__setattr__(self, "center", _floats(self.center, 3, "center"))
        object.__setattr__(self, "cholesky", _floats(self.cholesky, 6, "cholesky"))
        object.__setattr__(self, "exists", int(self.exists))
        if self.exists not in (0, 1):
            raise ConfigError("exists must be 0 or 1")
        if self.confidence is not None:
            object.__setattr__(self, "confidence", float(self.confidence))
        if self.exists == 0:
            if self.center != _ZERO3 or self.cholesky != _ZERO6:
                raise ConfigError("padding entries must have zero geometry")
        elif min(self.cholesky[0], self.cholesky[2], self.cholesky[5]) <= 0:
            raise ConfigError("real primitives need a positive Cholesky diagonal")

    @classmethod
    def from_pose(cls, category_code, rotation, scale, center, instance_id=-1, confidence=None):
        c = geometry.cholesky_encode(geometry.scatter_from_pose(rotation, scale))
        return cls(category_code, tuple(center), tuple(c), 1, confidence, instance_id)

    @classmethod
    def pad(cls, category_code):
        return cls(category_code, exists=0)

    @property
    def shape(self):
        return category(self.category).shape

    @property
    def is_real(self):
        return self.exists == 1

    def pose(self):
        return geometry.cholesky_decode(np.asarray(self.cholesky))

    def transform(self):
        pose = self.pose()
        return geometry.build_transform(pose.rotation, pose.scale, np.asarray(self.center))

    def volume(self):
        # det(S) = prod(scale) = (l11 * l22 * l33)^2
        c = self.cholesky
        v = (c[0] * c[2] * c[5]) ** 2
        return v * math.pi / 6.0 if self.shape == "ellipsoid" else v


@dataclass(frozen=True)
class GroundPolygon:
    """Ground surface polygon; vertex heights define the top of its extrusion."""

    cls: str
    vertices: tuple

    def __post_init__(self):
        if self.cls not in GROUND_CLASSES:
            raise ConfigError(f"unknown ground class {self.cls!r}")
        verts = tuple(_floats(v, 3, "vertex") for v in self.vertices)
        if len(verts) < 3:
            raise ConfigError("ground polygons need at least 3 vertices")
        object.__setattr__(self, "vertices", verts)

    def as_array(self):
        return np.asarray(self.vertices, dtype=np.float64)


@dataclass(frozen=True)
class FOV:
    forward: float = 64.0
    lateral: float = 32.0

    def contains(self, xy):
        xy = np.asarray(xy, dtype=np.float64)
        x, y = xy[..., 0], xy[..., 1]
        return (x >= 0.0) & (x <= self.forward) & (y >= -self.lateral) & (y <= self.lateral)


@dataclass(frozen=True)
class SceneLayout:
    pose_id: str = "0"
    ground: tuple = ()
    primitives: tuple = ()
    fov: FOV = field(default_factory=FOV)
    density: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "pose_id", str(self.pose_id))
        object.__setattr__(self, "ground", tuple(self.ground))
        object.__setattr__(self, "primitives", tuple(self.primitives))
        if self.density is not None and self.density not in DENSITY_LABELS:
            raise ConfigError(f"density label must be one of {DENSITY_LABELS}")

    def by_category(self):
        groups = {code: [] for code in CATEGORY_CODES}
        for p in self.primitives:
            groups[p.category].append(p)
        return groups

    def real_primitives(self):
        return [p for p in self.primitives if p.is_real]

    def find(self, instance_id):
        for i, p in enumerate(self.primitives):
            if p.is_real and p.instance_id == instance_id:
                return i
        raise NotFoundError(f"no real primitive with instance id {instance_id}")


# -- serialization -----------------------------------------------------------

def layout_to_dict(layout):
    return {
        "format": LAYOUT_FORMAT,
        "version": LAYOUT_VERSION,
        "pose_id": layout.pose_id,
        "fov": {"forward": layout.fov.forward, "lateral": layout.fov.lateral},
        "density": layout.density,
        "ground": [{"class": g.cls, "vertices": [list(v) for v in g.vertices]}
                   for g in layout.ground],
        "primitives": [
            {
                "category": p.category,
                "instance_id": p.instance_id,
                "exists": p.exists,
                "confidence": p.confidence,
                "center": list(p.center),
                "cholesky": list(p.cholesky),
            }
            for p in layout.primitives
        ],
    }


def layout_from_dict(doc):
    if not isinstance(doc, dict) or doc.get("format") != LAYOUT_FORMAT:
        raise LayoutParseError(f"not a {LAYOUT_FORMAT} document")
    if doc.get("version") != LAYOUT_VERSION:
        raise UnsupportedVersionError(
            f"layout version {doc.get('version')!r} is not supported (expected {LAYOUT_VERSION})"
        )
    try:
        fov = FOV(float(doc["fov"]["forward"]), float(doc["fov"]["lateral"]))
        ground = [GroundPolygon(g["class"], g["vertices"]) for g in doc["ground"]]
        prims = [
            ScenePrimitive(p["category"], p["center"], p["cholesky"], p["exists"],
                           p["confidence"], int(p["instance_id"]))
            for p in doc["primitives"]
        ]
        return SceneLayout(doc["pose_id"], ground, prims, fov, doc["density"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, LayoutParseError):
            raise
        raise LayoutParseError(f"invalid layout document: {exc!r}") from exc


def dumps_layout(layout):
    return json.dumps(layout_to_dict(layout), indent=1) + "\n"


def loads_layout(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise LayoutParseError(
            f"malformed layout JSON at line {exc.lineno}, column {exc.colno} "
            f"(offset {exc.pos}): {exc.msg}"
        ) from exc
    return layout_from_dict(doc)


def save_layout(layout, destination):
    """Write ``layout`` as a versioned JSON document to a path or text stream."""
    text = dumps_layout(layout)
    if hasattr(destination, "write"):
        destination.write(text)
    else:
        Path(destination).write_text(text)


def load_layout(source):
    text = source.read() if hasattr(source, "read") else Path(source).read_text()
    return loads_layout(text)


# -- FOV, padding, labeling ------------------------------------------------

def filter_fov(layout):
    """Keep primitives centred in the FOV and polygons with a vertex inside it."""
    fov = layout.fov
    prims = [p for p in layout.primitives if not p.is_real or fov.contains(p.center)]
    ground = [g for g in layout.ground if np.any(fov.contains(g.as_array()[:, :2]))]
    return replace(layout, ground=tuple(ground), primitives=tuple(prims))


def threshold_existence(layout, threshold=EXISTENCE_THRESHOLD):
    """Drop predicted primitives whose existence confidence is below ``threshold``.

    Primitives without a confidence (ground truth) are always kept; padding
    entries are removed.
    """
    keep = [p for p in layout.primitives
            if p.is_real and (p.confidence is None or p.confidence >= threshold)]
    return replace(layout, primitives=tuple(keep))


def pad_category(primitives, spec, ego=(0.0, 0.0, 0.0)):
    """Return exactly ``spec.count`` entries for one category.

    Existing padding is discarded first. If there are too many real
    primitives, the ones closest to ``ego`` in BEV are kept (in their original
    order); otherwise padding entries are appended.
    """
    reals = [p for p in primitives if p.is_real]
    for p in reals:
        if p.category != spec.code:
            raise ConfigError(f"primitive of category {p.category} passed for {spec.code}")
    if len(reals) > spec.count:
        ego_xy = np.asarray(ego, dtype=np.float64)[:2]
        dist = np.array([np.hypot(*(np.asarray(p.center[:2]) - ego_xy)) for p in reals])
        keep = np.sort(np.argsort(dist, kind="stable")[: spec.count])
        reals = [reals[i] for i in keep]
    return reals + [ScenePrimitive.pad(spec.code)] * (spec.count - len(reals))


def pad_layout(layout, ego=(0.0, 0.0, 0.0)):
    """Pad (or truncate) every category to its fixed slot count, in table order."""
    groups = layout.by_category()
    prims = []
    for spec in CATEGORIES:
        prims.extend(pad_category(groups[spec.code], spec, ego))
    return replace(layout, primitives=tuple(prims))


def is_padded(layout):
    groups = layout.by_category()
    return all(len(groups[s.code]) == s.count for s in CATEGORIES)


def vegetation_stats(layout):
    """Number and total volume of real vegetation primitives (cuboids and ellipsoids)."""
    veg = [p for p in layout.real_primitives() if p.category in VEGETATION]
    return len(veg), float(sum(p.volume() for p in veg))


def density_thresholds(layouts):
    """25th/75th percentile (count, volume) thresholds over a corpus."""
    stats = np.array([vegetation_stats(layout) for layout in layouts], dtype=np.float64)
    if stats.size == 0:
        raise ConfigError("need at least one layout to derive thresholds")
    p25 = np.percentile(stats, 25, axis=0)
    p75 = np.percentile(stats, 75, axis=0)
    return (float(p25[0]), float(p25[1])), (float(p75[0]), float(p75[1]))


def compute_scene_label(layout, p25, p75):
    """Vegetation density label: low / medium / high."""
    if min(p25) <= 0 or min(p75) <= 0:
        raise ConfigError("density thresholds must be positive")
    count, volume = vegetation_stats(layout)
    if count < p25[0] and volume < p25[1]:
        return "low"
    if count > p75[0] and volume > p75[1]:
        return "high"
    return "medium"


# -- object-level edits ------------------------------------------------------

@dataclass(frozen=True)
class Translate:
    delta: tuple


@dataclass(frozen=True)
class Rotate:
    """Rotation about the primitive's own centre; ``angle`` in radians."""

    axis: object
    angle: float


@dataclass(frozen=True)
class Scale:
    """Scale factors applied along the decoded axes (descending-size order)."""

    factors: tuple


def apply_edit(layout, instance_id, edit):
    """Return a new layout with ``edit`` applied to one real primitive."""
    idx = layout.find(instance_id)
    prim = layout.primitives[idx]
    if isinstance(edit, Translate):
        delta = _floats(edit.delta, 3, "translation")
        new = replace(prim, center=tuple(c + d for c, d in zip(prim.center, delta)))
    elif isinstance(edit, (Rotate, Scale)):
        pose = prim.pose()
        rot, scale = pose.rotation, pose.scale
        if isinstance(edit, Rotate):
            rot = geometry.axis_rotation(edit.axis, float(edit.angle)) @ rot
        else:
            factors = np.asarray(_floats(edit.factors, 3, "scale factors"))
            if np.any(factors <= 0):
                raise InvalidEditError("scale factors must be strictly positive")
            scale = scale * factors
        chol = geometry.cholesky_encode(geometry.scatter_from_pose(rot, scale))
        new = replace(prim, cholesky=tuple(chol))
    else:
        raise InvalidEditError(f"unsupported edit {edit!r}")
    prims = list(layout.primitives)
    prims[idx] = new
    return replace(layout, primitives=tuple(prims))
