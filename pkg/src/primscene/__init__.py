"""Primitive-based 3D semantic scene layouts.

Layouts pair a height/occupancy raster of ground surfaces with a padded set of
oriented object primitives whose shape is stored as a Cholesky code.
"""

__version__ = "0.1.0"

from .categories import CATEGORIES, CATEGORY_CODES, LABELS, TOTAL_SLOTS
from .geometry import CholeskyEncoder, cholesky_decode, cholesky_encode, scatter_from_pose
from .scene import (
    FOV,
    GroundPolygon,
    SceneLayout,
    ScenePrimitive,
    apply_edit,
    load_layout,
    pad_layout,
    save_layout,
)
from .synth import synth_corpus, synth_scene

__all__ = [
    "CATEGORIES", "CATEGORY_CODES", "CholeskyEncoder", "FOV", "GroundPolygon", "LABELS",
    "SceneLayout", "ScenePrimitive", "TOTAL_SLOTS", "__version__", "apply_edit",
    "cholesky_decode", "cholesky_encode", "load_layout", "pad_layout", "save_layout",
    "scatter_from_pose", "synth_corpus", "synth_scene",
]
