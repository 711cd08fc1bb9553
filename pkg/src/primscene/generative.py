"""Generative-model metrics on feature vectors.

k-NN manifold precision/recall, the Fréchet distance between Gaussian feature
moments, reference-pose sampling along a trajectory and a simple built-in
featurizer for top-down semantic maps.
"""

import struct
import warnings
from pathlib import Path
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features
from .categories import N_CLASSES
from .exceptions import ConfigError, InvalidMomentsError, LayoutParseError

SYMMETRY_TOL = 1e-6
NEG_EIG_TOL = 1e-8
_CHUNK = 1024


def _pairwise(a, b):
    """Euclidean distances by explicit differences (exactly 0 for equal rows)."""
    out = np.empty((len(a), len(b)))
    for s in range(0, len(a), _CHUNK):
        diff = a[s:s + _CHUNK, None, :] - b[None, :, :]
        out[s:s + _CHUNK] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return out


def knn_radius(X, k=3):
    """Distance from each point to its k-th nearest neighbour, excluding itself."""
    X = check_features(X)
    n = len(X)
    if not 1 <= k < n:
        raise ConfigError(f"k must satisfy 1 <= k < n (k={k}, n={n})")
    radii = np.empty(n)
    for s in range(0, n, _CHUNK):
        d = _pairwise(X[s:s + _CHUNK], X)
        rows = np.arange(d.shape[0])
        d[rows, s + rows] = np.inf  # drop self by index, not by value
        radii[s:s + _CHUNK] = np.partition(d, k - 1, axis=1)[:, k - 1]
    return radii


def manifold_membership(queries, support, radii):
    """1 where a query lies inside some support point's k-NN ball."""
    inside = np.zeros(len(queries), dtype=bool)
    for s in range(0, len(queries), _CHUNK):
        d = _pairwise(queries[s:s + _CHUNK], support)
        inside[s:s + _CHUNK] = np.any(d <= radii[None, :], axis=1)
    return inside


class PrecisionRecall(NamedTuple):
    precision: float
    recall: float


def precision_recall(real, generated, k=3):
    """k-NN manifold precision and recall of generated features against real ones."""
    real = check_features(real, name="real features")
    generated = check_features(generated, name="generated features")
    if real.shape[1] != generated.shape[1]:
        raise ConfigError("real and generated features differ in dimension")
    if len(real) != len(generated):
        warnings.warn("precision/recall is best computed on equally sized feature sets",
                      stacklevel=2)
    r_real, r_gen = knn_radius(real, k), knn_radius(generated, k)
    precision = manifold_membership(generated, real, r_real).mean()
    recall = manifold_membership(real, generated, r_gen).mean()
    return PrecisionRecall(float(precision), float(recall))


class KNNPrecisionRecall(BaseEstimator):
    """Fit the real-feature manifold once, then score generated sets against it."""

    def __init__(self, k=3):
        self.k = k

    def fit(self, X, y=None):
        X = check_features(X, min_samples=2)
        self.real_ = X
        self.radii_ = knn_radius(X, self.k)
        self.n_features_in_ = X.shape[1]
        return self

    def score_samples(self, X):
        """Per-sample membership of generated features in the real manifold."""
        check_is_fitted(self, "radii_")
        X = check_features(X)
        if X.shape[1] != self.n_features_in_:
            raise ConfigError("feature dimension differs from the fitted set")
        return manifold_membership(X, self.real_, self.radii_).astype(np.float64)

    def evaluate(self, X):
        check_is_fitted(self, "radii_")
        X = check_features(X)
        precision = self.score_samples(X).mean()
        recall = manifold_membership(self.real_, X, knn_radius(X, self.k)).mean()
        return PrecisionRecall(float(precision), float(recall))


# -- Fréchet distance ----------------------------------------------------------------

def _sym_sqrt(m, name):
    vals, vecs = np.linalg.eigh(m)
    tol = NEG_EIG_TOL * max(1.0, float(np.abs(vals).max(initial=0.0)))
    if np.any(vals < -tol):
        raise InvalidMomentsError(f"{name} is not positive semi-definite (eigenvalue {vals.min():.3e})")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T, np.sqrt(vals)


def _check_moments(mu, sigma, name):
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.shape != (mu.size, mu.size):
        raise InvalidMomentsError(f"{name}: covariance shape {sigma.shape} does not match mean")
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
        raise InvalidMomentsError(f"{name}: non-finite moments")
    if sigma.size and np.abs(sigma - sigma.T).max() > SYMMETRY_TOL:
        raise InvalidMomentsError(f"{name}: covariance is not symmetric")
    return mu, 0.5 * (sigma + sigma.T)


def frechet_distance(mu1, sigma1, mu2, sigma2):
    """Fréchet distance between two Gaussians given by their moments."""
    mu1, s1 = _check_moments(mu1, sigma1, "first")
    mu2, s2 = _check_moments(mu2, sigma2, "second")
    if mu1.shape != mu2.shape:
        raise InvalidMomentsError("moment dimensions differ")
    root1, _ = _sym_sqrt(s1, "first covariance")
    m = root1 @ s2 @ root1
    _, cross = _sym_sqrt(0.5 * (m + m.T), "covariance product")
    diff = mu1 - mu2
    value = float(diff @ diff + np.trace(s1) + np.trace(s2) - 2.0 * cross.sum())
    return max(value, 0.0)


def feature_moments(X):
    X = check_features(X, min_samples=2)
    return X.mean(axis=0), np.cov(X, rowvar=False).reshape(X.shape[1], X.shape[1])


# -- reference pose sampling ---------------------------------------------------------

class PoseTrack(NamedTuple):
    ids: tuple
    positions: np.ndarray  # (n, 2) BEV metres

    @classmethod
    def build(cls, ids, positions):
        pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
        ids = tuple(ids)
        if len(ids) == 0 or len(ids) != len(pos):
            raise ConfigError("a pose track needs one id per position and at least one pose")
        return cls(ids, pos)


def sample_refs_threshold(track, d_min):
    """Greedy scan keeping poses at least ``d_min`` from the last kept pose."""
    if not d_min > 0:
        raise ConfigError("minimum distance must be positive")
    kept = [0]
    for i in range(1, len(track.ids)):
        if np.linalg.norm(track.positions[i] - track.positions[kept[-1]]) >= d_min:
            kept.append(i)
    return [track.ids[i] for i in kept]


def sample_refs_fps(track, n):
    """Farthest-point sampling from the first pose; ties go to the smallest id."""
    if not 1 <= n <= len(track.ids):
        raise ConfigError(f"cannot pick {n} of {len(track.ids)} poses")
    order = sorted(range(len(track.ids)), key=lambda i: track.ids[i])
    rank = np.empty(len(order), dtype=np.int64)
    rank[order] = np.arange(len(order))
    chosen = [0]
    dmin = np.linalg.norm(track.positions - track.positions[0], axis=1)
    dmin[0] = -np.inf
    for _ in range(1, n):
        best = dmin.max()
        ties = np.nonzero(dmin == best)[0]
        pick = int(ties[np.argmin(rank[ties])])
        chosen.append(pick)
        dmin = np.minimum(dmin, np.linalg.norm(track.positions - track.positions[pick], axis=1))
        dmin[chosen] = -np.inf
    return [track.ids[i] for i in chosen]


# -- featurizer ---------------------------------------------------------------------

def semantic_histograms(labels, blocks=8):
    """Per-block class fractions of a label image: ``blocks**2 * 16`` values."""
    labels = np.asarray(labels)
    h, w = labels.shape
    if h % blocks or w % blocks:
        raise ConfigError(f"map size {labels.shape} is not divisible into {blocks}x{blocks} blocks")
    bh, bw = h // blocks, w // blocks
    tiles = labels.reshape(blocks, bh, blocks, bw).transpose(0, 2, 1, 3).reshape(blocks * blocks, -1)
    feats = np.zeros((blocks * blocks, N_CLASSES))
    for b, tile in enumerate(tiles):
        counts = np.bincount(tile, minlength=N_CLASSES + 1)[1:N_CLASSES + 1]
        feats[b] = counts / tile.size
    return feats.ravel()


class SemanticMapFeaturizer(TransformerMixin, BaseEstimator):
    """Stateless transformer from label images ``(n, h, w)`` to block histograms."""

    def __init__(self, blocks=8):
        self.blocks = blocks

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        maps = np.asarray(X)
        if maps.ndim == 2:
            maps = maps[None]
        return np.stack([semantic_histograms(m, self.blocks) for m in maps])

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags


# -- binary files -----------------------------------------------------------------------

FEATURE_MAGIC = b"PSFT"
MOMENTS_MAGIC = b"PSMO"


def features_to_bytes(X):
    X = np.asarray(X)
    if X.ndim != 2:
        raise ConfigError("features must be a 2-D array")
    return FEATURE_MAGIC + struct.pack("<II", *X.shape) + X.astype("<f4").tobytes()


def features_from_bytes(data):
    if len(data) < 12 or data[:4] != FEATURE_MAGIC:
        raise LayoutParseError("not a feature file")
    n, d = struct.unpack_from("<II", data, 4)
    if len(data) != 12 + 4 * n * d:
        raise LayoutParseError(f"feature payload has {len(data) - 12} bytes, expected {4 * n * d}")
    return np.frombuffer(data, "<f4", n * d, 12).reshape(n, d).copy()


def moments_to_bytes(mu, sigma):
    mu = np.asarray(mu).reshape(-1)
    sigma = np.asarray(sigma)
    if sigma.shape != (mu.size, mu.size):
        raise ConfigError("covariance shape does not match mean")
    return (MOMENTS_MAGIC + struct.pack("<I", mu.size) + mu.astype("<f4").tobytes()
            + sigma.astype("<f4").tobytes())


def moments_from_bytes(data):
    if len(data) < 8 or data[:4] != MOMENTS_MAGIC:
        raise LayoutParseError("not a moments file")
    (d,) = struct.unpack_from("<I", data, 4)
    if len(data) != 8 + 4 * (d + d * d):
        raise LayoutParseError("moments payload has the wrong length")
    mu = np.frombuffer(data, "<f4", d, 8).copy()
    sigma = np.frombuffer(data, "<f4", d * d, 8 + 4 * d).reshape(d, d).copy()
    return mu, sigma


def save_features(X, path):
    Path(path).write_bytes(features_to_bytes(X))


def load_features(path):
    return features_from_bytes(Path(path).read_bytes())


def save_moments(mu, sigma, path):
    Path(path).write_bytes(moments_to_bytes(mu, sigma))


def load_moments(path):
    return moments_from_bytes(Path(path).read_bytes())
