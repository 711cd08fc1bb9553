"""Scatter-matrix pose encoding of object primitives.

A primitive with orthonormal axes ``V = [v1 v2 v3]`` and positive scale factors
``lam`` is represented by its scatter matrix ``S = V diag(lam) V^T``. The six
non-zero entries of the Cholesky factor ``L`` (``S = L L^T``) form a code that
is unique and unaffected by flipping the sign of any axis.

Scale factors are full edge lengths: the primitive is the image of a unit,
zero-centred cube (or sphere of diameter 1) under ``V diag(lam)``.

All functions accept a single pose or a stack of poses along leading axes.
"""

from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import as_float_array, check_rotation, check_scale
from .exceptions import ConfigError, NotPositiveDefiniteError

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
DEGENERATE_GAP = 1e-9
SYMMETRY_TOL = 1e-9
LEAD_TOL = 1e-9

_TRIL = ((0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2))


class Pose(NamedTuple):
    """Decoded primitive pose.

    ``degenerate`` flags poses whose scale factors are (nearly) repeated, in
    which case ``rotation`` is only one of many valid eigenbases.
    """

    rotation: np.ndarray
    scale: np.ndarray
    degenerate: np.ndarray


def scatter_from_pose(rot, scale):
    """Return ``S = sum_j scale_j * v_j v_j^T``."""
    rot = check_rotation(rot)
    scale = check_scale(scale)
    return _scatter(rot, scale)


def _scatter(rot, scale):
    # Sum of outer products: each term is invariant to the sign of its column.
    s = np.zeros(rot.shape[:-2] + (3, 3))
    for j in range(3):
        v = rot[..., :, j]
        s = s + scale[..., j, None, None] * (v[..., :, None] * v[..., None, :])
    return s


def scatter_sign_flip_check(rot, scale, flips):
    """Scatter matrix computed after negating the columns flagged in ``flips``."""
    rot = check_rotation(rot)
    signs = np.where(np.asarray(flips, dtype=bool), -1.0, 1.0)
    return scatter_from_pose(rot * signs, scale)


def cholesky_encode(s):
    """Cholesky parameters ``(l11, l21, l22, l31, l32, l33)`` of an SPD matrix."""
    s = as_float_array(s, (3, 3), "scatter matrix")
    asym = np.abs(s - np.swapaxes(s, -1, -2)).max() if s.size else 0.0
    if asym > SYMMETRY_TOL * max(1.0, np.abs(s).max()):
        raise NotPositiveDefiniteError(f"scatter matrix is not symmetric (|S-S^T| = {asym:.3e})")

    def _pivot(value, name):
        if np.any(value <= 0):
            raise NotPositiveDefiniteError(f"non-positive pivot {name} during factorization")
        return np.sqrt(value)

    l11 = _pivot(s[..., 0, 0], "l11")
    l21 = s[..., 1, 0] / l11
    l31 = s[..., 2, 0] / l11
    l22 = _pivot(s[..., 1, 1] - l21 * l21, "l22")
    l32 = (s[..., 2, 1] - l31 * l21) / l22
    l33 = _pivot(s[..., 2, 2] - l31 * l31 - l32 * l32, "l33")
    return np.stack([l11, l21, l22, l31, l32, l33], axis=-1)


def cholesky_factor(c):
    """Reshape Cholesky parameters into the lower-triangular matrix ``L``."""
    c = as_float_array(c, (6,), "cholesky params")
    lower = np.zeros(c.shape[:-1] + (3, 3))
    for k, (i, j) in enumerate(_TRIL):
        lower[..., i, j] = c[..., k]
    return lower


def scatter_from_cholesky(c):
    lower = cholesky_factor(c)
    return lower @ np.swapaxes(lower, -1, -2)


def jacobi_eigh(a, tol=JACOBI_TOL, max_sweeps=JACOBI_MAX_SWEEPS):
    """Eigen-decomposition of symmetric 3x3 matrices by cyclic Jacobi rotations.

    Returns ``(eigvals, eigvecs)`` with eigenvectors as columns, unsorted.
    Iteration stops once every off-diagonal norm is below ``tol`` times the
    matrix's Frobenius norm.
    """
    a = np.array(as_float_array(a, (3, 3), "matrix"), copy=True)
    batch = a.shape[:-2]
    a = a.reshape(-1, 3, 3)
    v = np.broadcast_to(np.eye(3), a.shape).copy()
    scale = np.maximum(np.linalg.norm(a, axis=(1, 2)), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        off = np.sqrt(a[:, 0, 1] ** 2 + a[:, 0, 2] ** 2 + a[:, 1, 2] ** 2)
        if np.all(off <= tol * scale):
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = a[:, p, q]
            active = apq != 0.0
            if not np.any(active):
                continue
            safe = np.where(active, apq, 1.0)
            with np.errstate(over="ignore", divide="ignore"):
                # a vanishing apq gives theta = inf and t = 0: no rotation
                theta = (a[:, q, q] - a[:, p, p]) / (2.0 * safe)
                t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
            t = np.where(theta == 0.0, 1.0, t)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            c = np.where(active, c, 1.0)
            s = np.where(active, s, 0.0)
            rot = np.broadcast_to(np.eye(3), a.shape).copy()
            rot[:, p, p] = c
            rot[:, q, q] = c
            rot[:, p, q] = s
            rot[:, q, p] = -s
            a = np.swapaxes(rot, 1, 2) @ a @ rot
            a = 0.5 * (a + np.swapaxes(a, 1, 2))
            v = v @ rot
    vals = np.stack([a[:, 0, 0], a[:, 1, 1], a[:, 2, 2]], axis=-1)
    return vals.reshape(batch + (3,)), v.reshape(batch + (3, 3))


def canonicalize_rotation(eigvecs, eigvals):
    """Order eigenpairs by descending eigenvalue and fix axis signs.

    Columns are sorted by descending eigenvalue (stable, so ties keep their
    original order), each column is negated if its largest-magnitude component
    (the first one within ``LEAD_TOL`` of the maximum) is negative, and the
    third column is negated if needed so that the determinant is +1.
    Returns ``(rotation, sorted_eigvals)``.
    """
    vecs = as_float_array(eigvecs, (3, 3), "eigenvectors")
    vals = as_float_array(eigvals, (3,), "eigenvalues")
    order = np.argsort(-vals, axis=-1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=-1)
    vecs = np.take_along_axis(vecs, order[..., None, :], axis=-1)
    # first component within LEAD_TOL of the largest magnitude, so that near-ties
    # in magnitude do not let rounding noise pick the sign
    mags = np.abs(vecs)
    near = mags >= mags.max(axis=-2, keepdims=True) - LEAD_TOL
    lead = np.take_along_axis(vecs, near.argmax(axis=-2)[..., None, :], axis=-2)
    vecs = vecs * np.where(lead < 0, -1.0, 1.0)
    det = np.linalg.det(vecs)
    fix = np.ones(vecs.shape[:-2] + (3,))
    fix[..., 2] = np.where(det < 0, -1.0, 1.0)
    return vecs * fix[..., None, :], vals


def cholesky_decode(c):
    """Recover ``(rotation, scale)`` from Cholesky parameters.

    Scale factors come back in descending order; the rotation is the
    canonicalized eigenbasis of ``L L^T``.
    """
    c = as_float_array(c, (6,), "cholesky params")
    if np.any(c[..., [0, 2, 5]] <= 0):
        raise NotPositiveDefiniteError("Cholesky diagonal entries must be positive")
    vals, vecs = jacobi_eigh(scatter_from_cholesky(c))
    rot, vals = canonicalize_rotation(vecs, vals)
    gaps = np.minimum(vals[..., 0] - vals[..., 1], vals[..., 1] - vals[..., 2])
    degenerate = gaps < DEGENERATE_GAP * np.abs(vals[..., 0])
    return Pose(rot, vals, degenerate)


def build_transform(rot, scale, center):
    """4x4 homogeneous transform mapping the unit primitive to world space."""
    rot = check_rotation(rot)
    scale = check_scale(scale)
    center = as_float_array(center, (3,), "center")
    batch = np.broadcast_shapes(rot.shape[:-2], scale.shape[:-1], center.shape[:-1])
    t = np.zeros(batch + (4, 4))
    t[..., :3, :3] = rot * scale[..., None, :]
    t[..., :3, 3] = center
    t[..., 3, 3] = 1.0
    return t


def unit_cube_corners():
    """The 8 corners of the unit, zero-centred cube (x fastest)."""
    g = np.array([-0.5, 0.5])
    z, y, x = np.meshgrid(g, g, g, indexing="ij")
    return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=-1)


def transform_points(transform, points):
    pts = np.asarray(points, dtype=np.float64)
    return pts @ transform[:3, :3].T + transform[:3, 3]


def axis_rotation(axis, angle):
    """Rotation matrix for ``angle`` radians about ``axis`` ('x', 'y', 'z' or a 3-vector)."""
    if isinstance(axis, str):
        try:
            axis = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}[axis.lower()]
        except KeyError:
            raise ConfigError(f"unknown rotation axis {axis!r}") from None
    k = np.asarray(axis, dtype=np.float64)
    norm = np.linalg.norm(k)
    if norm == 0:
        raise ConfigError("rotation axis must be non-zero")
    k = k / norm
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * kx + (1.0 - np.cos(angle)) * (kx @ kx)


def yaw_rotation(yaw):
    yaw = np.asarray(yaw, dtype=np.float64)
    c, s = np.cos(yaw), np.sin(yaw)
    rot = np.zeros(yaw.shape + (3, 3))
    rot[..., 0, 0] = c
    rot[..., 0, 1] = -s
    rot[..., 1, 0] = s
    rot[..., 1, 1] = c
    rot[..., 2, 2] = 1.0
    return rot


def random_rotation(rng, size=None):
    """Uniformly distributed proper rotations (via normalized quaternions)."""
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    q = rng.standard_normal(shape + (4,))
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], -1),
        np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], -1),
        np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], -1),
    ], -2)


class CholeskyEncoder(TransformerMixin, BaseEstimator):
    """Stateless transformer between poses and Cholesky parameters.

    ``transform`` takes rows of 12 values (the rotation matrix flattened
    row-major, then the three scale factors) and returns rows of 6 Cholesky
    parameters. ``inverse_transform`` returns canonical poses in the same
    12-column layout.
    """

    def fit(self, X, y=None):
        self._check_pose_rows(X)
        self.n_features_in_ = 12
        return self

    def transform(self, X):
        X = self._check_pose_rows(X)
        rot = X[:, :9].reshape(-1, 3, 3)
        return cholesky_encode(scatter_from_pose(rot, X[:, 9:]))

    def inverse_transform(self, X):
        X = as_float_array(X, (6,), "cholesky params").reshape(-1, 6)
        pose = cholesky_decode(X)
        return np.concatenate([pose.rotation.reshape(-1, 9), pose.scale], axis=1)

    @staticmethod
    def _check_pose_rows(X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != 12:
            raise ConfigError(f"expected an (n, 12) pose array, got shape {X.shape}")
        return X

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags
