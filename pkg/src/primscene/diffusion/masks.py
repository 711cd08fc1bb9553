"""Latent inpainting masks (1 = synthesize, 0 = keep) and latent file I/O."""

import struct
from pathlib import Path

import numpy as np

from ..exceptions import ConfigError, LayoutParseError

LATENT_SHAPE = (32, 32, 64)
GROUND_CHANNELS = 32
LATENT_MAGIC = b"PSLT"


def build_mask(kind, shape=LATENT_SHAPE, side=None, region=None, split=GROUND_CHANNELS):
    """Binary latent mask.

    ``kind="half"`` with ``side`` in left/right/top/bottom (left = columns
    ``[0, w/2)``, top = rows ``[0, h/2)``); ``kind="channels"`` with ``side``
    ground (channels ``[0, split)``) or object (``[split, C)``);
    ``kind="rect"`` with ``region = (row0, row1, col0, col1)``.
    """
    h, w, c = shape
    mask = np.zeros(shape, dtype=bool)
    if kind == "half":
        sl = {"left": np.s_[:, : w // 2], "right": np.s_[:, w // 2:],
              "top": np.s_[: h // 2, :], "bottom": np.s_[h // 2:, :]}
        if side not in sl:
            raise ConfigError(f"half mask side must be one of {sorted(sl)}")
        mask[sl[side]] = True
    elif kind == "channels":
        if not 0 < split < c:
            raise ConfigError("channel split must lie inside the channel range")
        if side == "ground":
            mask[..., :split] = True
        elif side == "object":
            mask[..., split:] = True
        else:
            raise ConfigError("channel mask side must be 'ground' or 'object'")
    elif kind == "rect":
        if region is None or len(region) != 4:
            raise ConfigError("rect mask needs (row0, row1, col0, col1)")
        r0, r1, c0, c1 = (int(v) for v in region)
        r0, r1, c0, c1 = max(r0, 0), min(r1, h), max(c0, 0), min(c1, w)
        if r0 >= r1 or c0 >= c1:
            raise ConfigError("rect mask region is empty")
        mask[r0:r1, c0:c1] = True
    else:
        raise ConfigError(f"unknown mask kind {kind!r}")
    if not mask.any():
        raise ConfigError("mask selects nothing")
    return mask


def latent_to_bytes(z):
    z = np.asarray(z)
    if z.ndim != 3:
        raise ConfigError("latents must be (h, w, C)")
    return LATENT_MAGIC + struct.pack("<III", *z.shape) + z.astype("<f4").tobytes()


def latent_from_bytes(data):
    if len(data) < 16 or data[:4] != LATENT_MAGIC:
        raise LayoutParseError("not a latent file")
    h, w, c = struct.unpack_from("<III", data, 4)
    if len(data) != 16 + 4 * h * w * c:
        raise LayoutParseError("latent payload does not match its header")
    return np.frombuffer(data, "<f4", h * w * c, 16).reshape(h, w, c).copy()


def save_latent(z, path):
    Path(path).write_bytes(latent_to_bytes(z))


def load_latent(path):
    return latent_from_bytes(Path(path).read_bytes())
