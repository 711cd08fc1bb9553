"""Oriented 3D box IoU and average precision over IoU thresholds.

``iou3d`` is exact when the two boxes share an axis direction: boxes related
by a signed axis permutation use interval arithmetic, and boxes sharing a
single axis use polygon clipping on the orthogonal plane. Other pairs fall
back to a fixed-seed stratified Monte Carlo estimate over the intersection of
the boxes' axis-aligned bounds.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._validation import as_float_array, check_rotation, check_scale
from .categories import CATEGORY_CODES
from .geometry import unit_cube_corners

MC_SAMPLES_PER_AXIS = 47  # 47**3 = 103,823 stratified samples
MC_SEED = 0
AXIS_TOL = 1e-9
AP_THRESHOLDS = tuple(np.round(np.arange(1, 11) * 0.05, 2).tolist())
AP_EXCLUDED = ("VE",)
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True, eq=False)
class OrientedBox3:
    center: np.ndarray
    rotation: np.ndarray
    extents: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", as_float_array(self.center, (3,), "center"))
        object.__setattr__(self, "rotation", check_rotation(self.rotation))
        object.__setattr__(self, "extents", check_scale(self.extents))

    @classmethod
    def from_primitive(cls, prim):
        pose = prim.pose()
        return cls(np.asarray(prim.center), pose.rotation, pose.scale)

    @property
    def volume(self):
        return float(np.prod(self.extents))

    def corners(self):
        return unit_cube_corners() @ (self.rotation * self.extents).T + self.center

    def aabb(self):
        half = 0.5 * np.abs(self.rotation * self.extents).sum(axis=1)
        return self.center - half, self.center + half

    def contains(self, points):
        local = (np.asarray(points) - self.center) @ self.rotation
        return np.all(np.abs(local) <= 0.5 * self.extents, axis=-1)


def _overlap(lo_a, hi_a, lo_b, hi_b):
    return np.maximum(0.0, np.minimum(hi_a, hi_b) - np.maximum(lo_a, lo_b))


def _signed_permutation(q):
    a = np.abs(q)
    return bool(np.all((np.abs(a - 1.0) <= AXIS_TOL) | (a <= AXIS_TOL))
                and np.all((a > 0.5).sum(axis=0) == 1) and np.all((a > 0.5).sum(axis=1) == 1))


def _clip(subject, clip):
    """Sutherland–Hodgman clipping of a polygon by a convex CCW polygon."""
    out = list(subject)
    for k in range(len(clip)):
        if not out:
            break
        a, b = clip[k], clip[(k + 1) % len(clip)]
        edge = b - a

        def side(p):
            return edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0])

        src, out = out, []
        for i in range(len(src)):
            p, q = src[i], src[(i + 1) % len(src)]
            sp, sq = side(p), side(q)
            if sp >= 0:
                out.append(p)
            if (sp >= 0) != (sq >= 0):
                out.append(p + (q - p) * (sp / (sp - sq)))
    return out


def _area(poly):
    if len(poly) < 3:
        return 0.0
    p = np.asarray(poly)
    return 0.5 * abs(float(np.dot(p[:, 0], np.roll(p[:, 1], -1)) - np.dot(p[:, 1], np.roll(p[:, 0], -1))))


def _rect(center, axes, extents):
    """CCW rectangle corners in 2-D from centre, two axis vectors and extents."""
    u, v = axes[0] * extents[0] / 2, axes[1] * extents[1] / 2
    pts = [center - u - v, center + u - v, center + u + v, center - u + v]
    cross = (pts[1] - pts[0])[0] * (pts[2] - pts[1])[1] - (pts[1] - pts[0])[1] * (pts[2] - pts[1])[0]
    return pts if cross > 0 else pts[::-1]


def _intersection_permuted(a, b, q):
    ext_b = np.abs(q) @ b.extents
    d = a.rotation.T @ (b.center - a.center)
    return float(np.prod(_overlap(-a.extents / 2, a.extents / 2, d - ext_b / 2, d + ext_b / 2)))


def _intersection_shared_axis(a, b, i, j):
    axis = a.rotation[:, i]
    keep_a = [k for k in range(3) if k != i]
    keep_b = [k for k in range(3) if k != j]
    frame = a.rotation[:, keep_a]  # 3x2 basis of the orthogonal plane
    rect_a = _rect(frame.T @ a.center, np.eye(2), a.extents[keep_a])
    rect_b = _rect(frame.T @ b.center, (frame.T @ b.rotation[:, keep_b]).T, b.extents[keep_b])
    area = _area(_clip(rect_b, rect_a))
    ca, cb = axis @ a.center, axis @ b.center
    h = _overlap(ca - a.extents[i] / 2, ca + a.extents[i] / 2, cb - b.extents[j] / 2, cb + b.extents[j] / 2)
    return area * float(h)


def _intersection_mc(a, b, m=MC_SAMPLES_PER_AXIS, seed=MC_SEED):
    lo_a, hi_a = a.aabb()
    lo_b, hi_b = b.aabb()
    lo, hi = np.maximum(lo_a, lo_b), np.minimum(hi_a, hi_b)
    if np.any(hi <= lo):
        return 0.0
    rng = np.random.default_rng(seed)
    grid = np.stack(np.meshgrid(*(np.arange(m),) * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    pts = lo + (grid + rng.random(grid.shape)) / m * (hi - lo)
    inside = a.contains(pts) & b.contains(pts)
    return float(np.prod(hi - lo) * inside.mean())


def intersection_volume(a, b, method="auto"):
    if method not in ("auto", "mc"):
        raise ValueError("method must be 'auto' or 'mc'")
    lo_a, hi_a = a.aabb()
    lo_b, hi_b = b.aabb()
    if np.any(np.minimum(hi_a, hi_b) <= np.maximum(lo_a, lo_b)):
        return 0.0
    if method == "auto":
        q = a.rotation.T @ b.rotation
        if _signed_permutation(q):
            return _intersection_permuted(a, b, q)
        shared = np.argwhere(np.abs(np.abs(q) - 1.0) <= AXIS_TOL)
        if len(shared):
            return _intersection_shared_axis(a, b, *shared[0])
    return _intersection_mc(a, b)


def iou3d(a, b, method="auto"):
    """Volumetric IoU of two oriented boxes, in [0, 1]."""
    inter = intersection_volume(a, b, method)
    union = a.volume + b.volume - inter
    return float(min(max(inter / union, 0.0), 1.0)) if union > 0 else 0.0


# -- average precision -----------------------------------------------------------

class APResult(NamedTuple):
    """AP values in percent. ``per_category`` maps a code to one AP per threshold."""

    per_category: dict
    thresholds: tuple
    mean: float
    ap25: float
    ap50: float


def interpolated_ap(tp, n_gt):
    """101-point interpolated AP from a confidence-sorted TP/FP sequence."""
    if n_gt == 0:
        raise ValueError("AP is undefined without ground truth")
    tp = np.asarray(tp, dtype=np.float64)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, tp.size + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    vals = np.where(idx < tp.size, envelope[np.minimum(idx, tp.size - 1)], 0.0)
    return float(vals.mean())


def _boxes(layout, code):
    gts = [p for p in layout.real_primitives() if p.category == code]
    return [OrientedBox3.from_primitive(p) for p in gts], gts


def _category_tp(gt_layouts, pred_layouts, code, thresholds):
    """TP flags per threshold (pooled over scenes, sorted by confidence) and n_gt."""
    records = []  # (confidence, scene, ious to that scene's gt)
    n_gt = 0
    for s, (g_layout, p_layout) in enumerate(zip(gt_layouts, pred_layouts, strict=True)):
        g_boxes, _ = _boxes(g_layout, code)
        n_gt += len(g_boxes)
        p_boxes, preds = _boxes(p_layout, code)
        for box, pred in zip(p_boxes, preds):
            conf = 1.0 if pred.confidence is None else pred.confidence
            ious = np.array([iou3d(g, box) for g in g_boxes])
            records.append((conf, s, ious))
    order = sorted(range(len(records)), key=lambda r: -records[r][0])
    n_scenes = len(gt_layouts)
    tp = np.zeros((len(thresholds), len(records)))
    for t, tau in enumerate(thresholds):
        matched = [None] * n_scenes
        for rank, r in enumerate(order):
            _, s, ious = records[r]
            if matched[s] is None:
                matched[s] = np.zeros(ious.size, dtype=bool)
            cand = np.where(~matched[s] & (ious >= tau), ious, -1.0)
            if cand.size and cand.max() >= 0:
                k = int(np.argmax(cand))
                matched[s][k] = True
                tp[t, rank] = 1.0
    return tp, n_gt


def ap3d(gt_layouts, pred_layouts, tau, code):
    """AP (fraction) of one category at one IoU threshold; ``None`` without ground truth."""
    tp, n_gt = _category_tp(gt_layouts, pred_layouts, code, (tau,))
    return None if n_gt == 0 else interpolated_ap(tp[0], n_gt)


def ap3d_mean(gt_layouts, pred_layouts, thresholds=AP_THRESHOLDS, exclude=AP_EXCLUDED):
    """AP over all thresholds and categories with ground truth, in percent."""
    thresholds = tuple(thresholds)
    per_cat = {}
    for code in CATEGORY_CODES:
        if code in exclude:
            continue
        tp, n_gt = _category_tp(gt_layouts, pred_layouts, code, thresholds)
        if n_gt:
            per_cat[code] = np.array([100.0 * interpolated_ap(row, n_gt) for row in tp])
    if not per_cat:
        return APResult({}, thresholds, 0.0, 0.0, 0.0)
    table = np.stack(list(per_cat.values()))

    def at(tau):
        hits = [i for i, t in enumerate(thresholds) if abs(t - tau) < 1e-9]
        return float(table[:, hits[0]].mean()) if hits else float("nan")

    return APResult(per_cat, thresholds, float(table.mean()), at(0.25), at(0.5))
