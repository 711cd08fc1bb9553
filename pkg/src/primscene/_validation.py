"""Input validation helpers used across the estimators and functional API."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ConfigError, InvalidRotationError

ORTHO_TOL = 1e-9


def as_float_array(x, shape=None, name="array"):
    """Convert ``x`` to a float64 array and optionally check its trailing shape.

    ``shape`` entries of ``None`` match any size; leading batch axes are
    allowed when ``shape`` is shorter than ``x.ndim``.
    """
    arr = np.asarray(x, dtype=np.float64)
    if shape is not None:
        tail = arr.shape[arr.ndim - len(shape):] if arr.ndim >= len(shape) else None
        if tail is None or any(s is not None and s != t for s, t in zip(shape, tail)):
            raise ConfigError(f"{name} must have trailing shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} contains non-finite values")
    return arr


def check_rotation(rot, tol=ORTHO_TOL):
    """Validate a (..., 3, 3) array whose columns must be orthonormal."""
    rot = as_float_array(rot, (3, 3), "rotation")
    gram = np.swapaxes(rot, -1, -2) @ rot
    err = np.abs(gram - np.eye(3)).max() if gram.size else 0.0
    if err > tol:
        raise InvalidRotationError(
            f"rotation columns are not orthonormal (max |VᵀV - I| = {err:.3e})"
        )
    return rot


def check_scale(scale):
    scale = as_float_array(scale, (3,), "scale")
    if np.any(scale <= 0):
        raise ConfigError("scale factors must be strictly positive")
    return scale


def check_features(X, min_samples=1, name="features"):
    """2-D finite feature matrix, via scikit-learn's ``check_array``."""
    try:
        return check_array(X, dtype=np.float64, ensure_min_samples=min_samples,
                           input_name=name)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def check_binary(mask, name="mask"):
    mask = np.asarray(mask)
    if mask.dtype != bool and not np.all((mask == 0) | (mask == 1)):
        raise ConfigError(f"{name} must be binary")
    return mask.astype(bool)


def parse_triple(text, cast=float, name="value"):
    """Parse ``"a,b,c"`` (used by the CLI and config files)."""
    parts = [p for p in str(text).split(",") if p.strip()]
    if len(parts) != 3:
        raise ConfigError(f"{name} expects three comma-separated values, got {text!r}")
    try:
        return tuple(cast(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc
