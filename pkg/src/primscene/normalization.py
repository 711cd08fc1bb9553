"""Per-category min-max normalization of primitive feature vectors.

A primitive's feature vector is its centre (3 values) followed by its six
Cholesky parameters. Normalization maps each dimension affinely into [0, 1]
using per-category ranges fitted on data.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .categories import CATEGORIES, CATEGORY_CODES, TOTAL_SLOTS
from .exceptions import ConfigError, LayoutParseError, MissingStatsError, UnsupportedVersionError
from .scene import EXISTENCE_THRESHOLD, ScenePrimitive, pad_layout

N_FEATURES = 9
STATS_FORMAT = "primscene.normstats"
STATS_VERSION = 1


def primitive_features(p):
    return np.asarray(p.center + p.cholesky, dtype=np.float64)


@dataclass(frozen=True)
class NormalizationStats:
    """Per-category lower/upper bounds for each of the 9 feature dimensions."""

    mins: dict
    maxs: dict

    def __post_init__(self):
        for code in self.mins:
            lo, hi = np.asarray(self.mins[code]), np.asarray(self.maxs[code])
            if lo.shape != (N_FEATURES,) or hi.shape != (N_FEATURES,):
                raise ConfigError(f"stats for {code} must have {N_FEATURES} entries")
            if np.any(lo >= hi):
                raise ConfigError(f"stats for {code} need min < max on every dimension")

    def bounds(self, code):
        if code not in self.mins:
            raise MissingStatsError(f"no normalization stats for category {code!r}")
        return np.asarray(self.mins[code], float), np.asarray(self.maxs[code], float)

    def to_json(self):
        doc = {
            "format": STATS_FORMAT,
            "version": STATS_VERSION,
            "categories": {c: {"min": list(self.mins[c]), "max": list(self.maxs[c])}
                           for c in self.mins},
        }
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise LayoutParseError(f"malformed stats JSON at line {exc.lineno}, "
                                   f"column {exc.colno}: {exc.msg}") from exc
        if doc.get("format") != STATS_FORMAT:
            raise LayoutParseError("not a normalization stats document")
        if doc.get("version") != STATS_VERSION:
            raise UnsupportedVersionError(f"stats version {doc.get('version')!r} not supported")
        cats = doc["categories"]
        return cls({c: tuple(v["min"]) for c, v in cats.items()},
                   {c: tuple(v["max"]) for c, v in cats.items()})

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())


def fit_stats(layouts, margin=0.0):
    """Fit per-category ranges on the real primitives of ``layouts``.

    Categories without data get the range [0, 1]; constant dimensions are
    widened to ``[v - 0.5, v + 0.5]`` so that min < max always holds.
    """
    feats = {code: [] for code in CATEGORY_CODES}
    for layout in layouts:
        for p in layout.real_primitives():
            feats[p.category].append(primitive_features(p))
    mins, maxs = {}, {}
    for code in CATEGORY_CODES:
        if feats[code]:
            arr = np.stack(feats[code])
            lo, hi = arr.min(axis=0) - margin, arr.max(axis=0) + margin
        else:
            lo, hi = np.zeros(N_FEATURES), np.ones(N_FEATURES)
        flat = lo >= hi
        lo = np.where(flat, lo - 0.5, lo)
        hi = np.where(flat, hi + 0.5, hi)
        mins[code], maxs[code] = tuple(lo.tolist()), tuple(hi.tolist())
    return NormalizationStats(mins, maxs)


class NormalizedFeatures(NamedTuple):
    features: np.ndarray  # (M, 9) in [0, 1]
    categories: tuple
    n_clamped: int


def normalize_array(values, code, stats):
    lo, hi = stats.bounds(code)
    scaled = (np.asarray(values, dtype=np.float64) - lo) / (hi - lo)
    clipped = np.clip(scaled, 0.0, 1.0)
    return clipped, int(np.count_nonzero(clipped != scaled))


def denormalize_array(values, code, stats):
    lo, hi = stats.bounds(code)
    return lo + np.asarray(values, dtype=np.float64) * (hi - lo)


def normalize_features(layout, stats):
    """Normalized 9-vectors for the real primitives of ``layout``.

    Values outside the fitted range are clamped and counted in ``n_clamped``.
    """
    reals = layout.real_primitives()
    out = np.zeros((len(reals), N_FEATURES))
    clamped = 0
    for i, p in enumerate(reals):
        out[i], n = normalize_array(primitive_features(p), p.category, stats)
        clamped += n
    return NormalizedFeatures(out, tuple(p.category for p in reals), clamped)


def denormalize_features(features, categories, stats):
    features = np.asarray(features, dtype=np.float64)
    out = np.empty_like(features)
    for i, code in enumerate(categories):
        out[i] = denormalize_array(features[i], code, stats)
    return out


class PrimitiveNormalizer(TransformerMixin, BaseEstimator):
    """Fit normalization ranges on layouts and emit fixed-size feature tensors.

    ``transform`` maps a list of layouts to an array of shape
    ``(n_layouts, 514, 10)``: nine normalized features followed by the
    existence flag, with categories in table order and padding rows zero.

    Parameters
    ----------
    margin : float, default=0.0
        Amount added on both sides of each fitted range.
    ego : tuple of float, default=(0, 0, 0)
        Reference point used when truncating over-full categories.
    """

    def __init__(self, margin=0.0, ego=(0.0, 0.0, 0.0)):
        self.margin = margin
        self.ego = ego

    def fit(self, X, y=None):
        layouts = list(X)
        if not layouts:
            raise ConfigError("PrimitiveNormalizer.fit needs at least one layout")
        self.stats_ = fit_stats(layouts, margin=self.margin)
        self.n_layouts_seen_ = len(layouts)
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        rows = []
        for layout in X:
            padded = pad_layout(layout, self.ego)
            block = np.zeros((TOTAL_SLOTS, N_FEATURES + 1))
            for i, p in enumerate(padded.primitives):
                if p.is_real:
                    block[i, :N_FEATURES], _ = normalize_array(primitive_features(p),
                                                               p.category, self.stats_)
                    block[i, N_FEATURES] = 1.0
            rows.append(block)
        return np.stack(rows) if rows else np.zeros((0, TOTAL_SLOTS, N_FEATURES + 1))

    def inverse_transform(self, X, threshold=EXISTENCE_THRESHOLD):
        """Decode feature tensors back into padded primitive lists.

        Slots whose existence value is below ``threshold`` become padding.
        """
        check_is_fitted(self, "stats_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        out = []
        for block in X:
            prims, row = [], 0
            for spec in CATEGORIES:
                for _ in range(spec.count):
                    f = block[row]
                    if f[N_FEATURES] >= threshold:
                        raw = denormalize_array(np.clip(f[:N_FEATURES], 0.0, 1.0),
                                                spec.code, self.stats_)
                        prims.append(ScenePrimitive(spec.code, raw[:3], raw[3:], 1,
                                                    float(f[N_FEATURES]), row))
                    else:
                        prims.append(ScenePrimitive.pad(spec.code))
                    row += 1
            out.append(prims)
        return out
