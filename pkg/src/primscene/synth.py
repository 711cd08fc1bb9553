"""Deterministic synthetic scene layouts for tests, demos and the CLI.

Scenes follow a straight-road template along +x: a road, sidewalks on both
sides, terrain strips, a parking bay and a patch of generic ground, with
randomly posed primitives placed in plausible zones.
"""

import numpy as np

from .categories import CATEGORY_BY_CODE, CATEGORY_CODES
from .exceptions import ConfigError
from .geometry import yaw_rotation
from .scene import FOV, GroundPolygon, SceneLayout, ScenePrimitive

DEFAULT_COUNTS = {
    "VC": 10, "VE": 12, "VB": 1, "VS": 8, "TW": 2, "H": 2,
    "CB": 4, "CS": 10, "P": 6, "TC": 4, "O": 3,
}

# (length, width, height) ranges in metres
_SIZES = {
    "VC": ((2.0, 6.0), (2.0, 6.0), (2.0, 8.0)),
    "VE": ((2.0, 6.0), (2.0, 6.0), (3.0, 9.0)),
    "VB": ((8.0, 12.0), (2.3, 2.6), (3.0, 4.0)),
    "VS": ((3.8, 5.0), (1.6, 2.0), (1.3, 1.8)),
    "TW": ((1.6, 2.1), (0.5, 0.8), (1.0, 1.6)),
    "H": ((0.5, 0.8), (0.35, 0.6), (1.5, 1.95)),
    "CB": ((8.0, 20.0), (6.0, 15.0), (5.0, 7.5)),
    "CS": ((2.0, 15.0), (0.2, 0.5), (0.8, 2.5)),
    "P": ((0.15, 0.4), (0.1, 0.35), (3.0, 7.0)),
    "TC": ((0.3, 0.8), (0.1, 0.3), (0.5, 1.2)),
    "O": ((0.5, 1.2), (0.4, 1.1), (0.5, 1.3)),
}

# |y| band each category is placed in
_LATERAL = {
    "VC": (8.0, 31.0), "VE": (8.0, 31.0), "VB": (0.0, 2.5), "VS": (0.0, 3.0),
    "TW": (4.2, 6.2), "H": (4.2, 6.2), "CB": (16.0, 24.0), "CS": (7.0, 13.0),
    "P": (6.0, 6.4), "TC": (6.0, 6.4), "O": (6.6, 14.0),
}

ROAD_HALF = 4.0
SIDEWALK = 2.5
ROAD_Z, SIDEWALK_Z, TERRAIN_Z, PARKING_Z, GROUND_Z = 0.0, 0.15, 0.2, 0.22, 0.25


def straight_road_ground(fov=FOV(), road_half=ROAD_HALF):
    x1, y1 = fov.forward, fov.lateral
    walk = road_half + SIDEWALK

    def rect(cls, xa, xb, ya, yb, z):
        return GroundPolygon(cls, [(xa, ya, z), (xb, ya, z), (xb, yb, z), (xa, yb, z)])

    return [
        rect("road", 0.0, x1, -road_half, road_half, ROAD_Z),
        rect("sidewalk", 0.0, x1, road_half, walk, SIDEWALK_Z),
        rect("sidewalk", 0.0, x1, -walk, -road_half, SIDEWALK_Z),
        rect("terrain", 0.0, x1, walk, y1, TERRAIN_Z),
        rect("terrain", 0.0, x1, -y1, -walk, TERRAIN_Z),
        # L-shaped parking bay next to the left sidewalk
        GroundPolygon("parking", [
            (20.0, walk, PARKING_Z), (34.0, walk, PARKING_Z), (34.0, walk + 4.0, PARKING_Z),
            (26.0, walk + 4.0, PARKING_Z), (26.0, walk + 9.0, PARKING_Z),
            (20.0, walk + 9.0, PARKING_Z),
        ]),
        rect("ground", 40.0, 50.0, -walk - 6.0, -walk, GROUND_Z),
    ]


def _ground_height(code):
    if code in ("VB", "VS"):
        return ROAD_Z
    if code in ("TW", "H", "P", "TC"):
        return SIDEWALK_Z
    return TERRAIN_Z


def synth_scene(seed, counts=None, road_template="straight", pose_id=None):
    """Generate a random layout; identical seeds give identical layouts."""
    if road_template != "straight":
        raise ConfigError(f"unknown road template {road_template!r}")
    counts = dict(DEFAULT_COUNTS if counts is None else counts)
    for code, n in counts.items():
        spec = CATEGORY_BY_CODE.get(code)
        if spec is None:
            raise ConfigError(f"unknown category {code!r} in synth config")
        if not 0 <= n <= spec.count:
            raise ConfigError(f"{n} {code} primitives exceeds the {spec.count} slots")

    rng = np.random.default_rng(seed)
    fov = FOV()
    prims = []
    next_id = 0
    for code in CATEGORY_CODES:
        n = counts.get(code, 0)
        if n == 0:
            continue
        sizes = np.stack([rng.uniform(lo, hi, n) for lo, hi in _SIZES[code]], axis=-1)
        yaw = rng.uniform(-np.pi, np.pi, n)
        if code in ("VB", "VS", "CS", "CB"):
            # vehicles and walls roughly follow the road
            yaw = rng.normal(0.0, 0.08, n) + np.pi * rng.integers(0, 2, n)
        x = rng.uniform(1.0, fov.forward - 1.0, n)
        lo, hi = _LATERAL[code]
        y = rng.uniform(lo, hi, n) * rng.choice([-1.0, 1.0], n)
        y = np.clip(y, -fov.lateral + 0.5, fov.lateral - 0.5)
        z = _ground_height(code) + sizes[:, 2] / 2.0
        if code == "TC":
            z = z + rng.uniform(2.0, 4.0, n)
        rots = yaw_rotation(yaw)
        for i in range(n):
            prims.append(ScenePrimitive.from_pose(
                code, rots[i], sizes[i], (x[i], y[i], z[i]), instance_id=next_id))
            next_id += 1
    return SceneLayout(pose_id=str(seed) if pose_id is None else pose_id,
                       ground=straight_road_ground(fov), primitives=prims, fov=fov)


def synth_corpus(n, seed=0, counts=None):
    """``n`` layouts with per-layout seeds derived from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [synth_scene(int(c.generate_state(1)[0]), counts, pose_id=f"{seed}-{i}")
            for i, c in enumerate(children)]
