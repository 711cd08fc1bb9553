"""Ancestral DDPM sampling, RePaint inpainting and sliding-window outpainting.

Random numbers come from two counter-based streams derived from ``seed``:

* the main stream ``Philox(seed)`` draws ``z_T`` and then the noise of every
  reverse step, in order;
* the auxiliary stream ``Philox(seed).jumped()`` draws the known-region
  samples and the re-noising used by resampling.

With an all-ones mask RePaint never touches the auxiliary stream's output
and skips resampling, so it reproduces :func:`sample` bit for bit.
"""

from typing import NamedTuple

import numpy as np

from .._validation import check_binary
from ..exceptions import ConfigError, ProtocolError
from .denoisers import label_code
from .schedule import linear_beta_schedule, respace

JUMP_LENGTH = 10
RESAMPLINGS = 10
OVERLAP = 16


def _streams(seed):
    bitgen = np.random.Philox(seed)
    return np.random.Generator(bitgen), np.random.Generator(bitgen.jumped())


def _schedule(schedule, steps):
    schedule = linear_beta_schedule() if schedule is None else schedule
    return schedule if steps is None else respace(schedule, steps)


def reverse_step(denoiser, z_t, t, y, noise, schedule):
    """One ancestral step ``z_t -> z_{t-1}``; the noise is ignored at ``t = 1``."""
    t = schedule.check_step(t)
    eps = np.asarray(denoiser(z_t, int(schedule.timesteps[t - 1]), y), dtype=np.float64)
    if eps.shape != np.shape(z_t):
        raise ProtocolError(f"denoiser returned shape {eps.shape}, expected {np.shape(z_t)}")
    beta, ab = schedule.beta[t], schedule.alpha_bar[t]
    mean = (z_t - beta / np.sqrt(1.0 - ab) * eps) / np.sqrt(1.0 - beta)
    if t == 1:
        return mean
    return mean + np.sqrt(schedule.posterior_variance[t]) * noise


def sample(denoiser, shape, y=None, steps=None, seed=0, schedule=None):
    """Draw one latent by ancestral sampling over ``steps`` strided steps."""
    sched = _schedule(schedule, steps)
    label_code(y)
    main, _ = _streams(seed)
    z = main.standard_normal(shape)
    for t in range(sched.T, 0, -1):
        noise = main.standard_normal(shape) if t > 1 else None
        z = reverse_step(denoiser, z, t, y, noise, sched)
    return z


def jump_schedule(T, jump_length=JUMP_LENGTH, resamplings=RESAMPLINGS):
    """Sequence of visited timesteps ``T, ..., 0`` including jump-backs.

    After reaching step ``j + 1`` for ``j`` in ``0, J, 2J, ...`` (below
    ``T - J``), the chain is re-noised ``J`` steps and denoised again, ``R - 1``
    times per jump point.
    """
    if jump_length < 1 or resamplings < 1:
        raise ConfigError("jump length and resampling count must be >= 1")
    jumps = {j + 1: resamplings - 1 for j in range(0, T - jump_length, jump_length)}
    seq = [T]
    t = T
    while t > 0:
        t -= 1
        seq.append(t)
        if t > 0 and jumps.get(t, 0) > 0:
            jumps[t] -= 1
            for _ in range(jump_length):
                t += 1
                seq.append(t)
    return seq


def repaint_inpaint(denoiser, z0_known, mask, y=None, schedule=None, steps=None,
                    jump_length=JUMP_LENGTH, resamplings=RESAMPLINGS, seed=0):
    """Fill the masked (1) region of ``z0_known`` while keeping the rest."""
    z0 = np.asarray(z0_known, dtype=np.float64)
    mask = check_binary(mask)
    if mask.shape != z0.shape:
        raise ConfigError(f"mask shape {mask.shape} differs from latent shape {z0.shape}")
    sched = _schedule(schedule, steps)
    label_code(y)
    main, aux = _streams(seed)
    has_known = not mask.all()
    seq = jump_schedule(sched.T, jump_length, resamplings) if has_known \
        else list(range(sched.T, -1, -1))
    shape = z0.shape
    z = main.standard_normal(shape)
    for prev, cur in zip(seq[:-1], seq[1:]):
        if cur < prev:
            noise = main.standard_normal(shape) if prev > 1 else None
            unknown = reverse_step(denoiser, z, prev, y, noise, sched)
            if not has_known:
                z = unknown
                continue
            if cur == 0:
                known = z0
            else:
                ab = sched.alpha_bar[cur]
                known = np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * aux.standard_normal(shape)
            z = np.where(mask, unknown, known)
        else:
            beta = sched.beta[cur]
            z = np.sqrt(1.0 - beta) * z + np.sqrt(beta) * aux.standard_normal(shape)
    return z


# -- outpainting -------------------------------------------------------------------

class OutpaintBlock(NamedTuple):
    """A window of latents placed at ``offset = (row, col)`` in latent cells."""

    offset: tuple
    latent: np.ndarray


_DIRECTIONS = {"right": (0, 1), "left": (0, -1), "down": (1, 0), "up": (-1, 0)}


def _window_known(blocks, offset, shape):
    """Known latent values and mask of a new window from already placed blocks."""
    h, w = shape[:2]
    known = np.zeros(shape)
    have = np.zeros(shape[:2], dtype=bool)
    for blk in blocks:
        dr, dc = blk.offset[0] - offset[0], blk.offset[1] - offset[1]
        r0, r1 = max(dr, 0), min(dr + h, h)
        c0, c1 = max(dc, 0), min(dc + w, w)
        if r0 >= r1 or c0 >= c1:
            continue
        known[r0:r1, c0:c1] = blk.latent[r0 - dr:r1 - dr, c0 - dc:c1 - dc]
        have[r0:r1, c0:c1] = True
    return known, have


def _extend(denoiser, placed, offset, shape, y, schedule, steps, seed, jump_length, resamplings):
    known, have = _window_known(placed, offset, shape)
    mask = np.broadcast_to(~have[..., None], shape)
    z = repaint_inpaint(denoiser, known, mask, y, schedule, steps, jump_length, resamplings, seed)
    return OutpaintBlock(offset, z)


def outpaint(denoiser, seed_latent, directions=("right",), blocks=1, y=None, schedule=None,
             steps=None, seed=0, overlap=OVERLAP, jump_length=JUMP_LENGTH,
             resamplings=RESAMPLINGS):
    """Extend ``seed_latent`` by overlapping windows.

    With a single direction, ``blocks`` windows are chained, each sharing
    ``overlap`` cells with its predecessor. ``directions="all"`` performs one
    cardinal extension on every side followed by the four corner windows,
    each conditioned on the two adjacent cardinal windows. The seed block is
    returned first, at offset ``(0, 0)``.
    """
    seed_latent = np.asarray(seed_latent, dtype=np.float64)
    shape = seed_latent.shape
    h, w = shape[:2]
    if not (0 < overlap < min(h, w)):
        raise ConfigError("overlap must be smaller than the window")
    if isinstance(directions, str):
        directions = ("right", "left", "down", "up") if directions == "all" else (directions,)
    for d in directions:
        if d not in _DIRECTIONS:
            raise ConfigError(f"unknown outpainting direction {d!r}")
    stride = (h - overlap, w - overlap)
    placed = [OutpaintBlock((0, 0), seed_latent)]
    args = dict(y=y, schedule=schedule, steps=steps, jump_length=jump_length,
                resamplings=resamplings)
    if len(directions) == 1:
        if blocks < 1:
            raise ConfigError("need at least one block")
        dr, dc = _DIRECTIONS[directions[0]]
        seeds = np.random.SeedSequence(seed).spawn(blocks)
        for k in range(1, blocks + 1):
            offset = (dr * k * stride[0], dc * k * stride[1])
            placed.append(_extend(denoiser, placed[-1:], offset, shape, seed=seeds[k - 1], **args))
        return placed
    seeds = iter(np.random.SeedSequence(seed).spawn(len(directions) + 4))
    cardinal = {}
    for d in directions:
        dr, dc = _DIRECTIONS[d]
        offset = (dr * stride[0], dc * stride[1])
        cardinal[(dr, dc)] = _extend(denoiser, placed[:1], offset, shape, seed=next(seeds), **args)
        placed.append(cardinal[(dr, dc)])
    for sr in (-1, 1):
        for sc in (-1, 1):
            vert, horiz = cardinal.get((sr, 0)), cardinal.get((0, sc))
            if vert is None or horiz is None:
                continue
            offset = (sr * stride[0], sc * stride[1])
            placed.append(_extend(denoiser, [vert, horiz], offset, shape, seed=next(seeds), **args))
    return placed


def assemble(blocks):
    """Paste blocks onto one canvas; returns ``(canvas, origin)``."""
    if not blocks:
        raise ConfigError("nothing to assemble")
    rows = [b.offset[0] for b in blocks] + [b.offset[0] + b.latent.shape[0] for b in blocks]
    cols = [b.offset[1] for b in blocks] + [b.offset[1] + b.latent.shape[1] for b in blocks]
    origin = (min(rows), min(cols))
    canvas = np.zeros((max(rows) - origin[0], max(cols) - origin[1]) + blocks[0].latent.shape[2:])
    for b in blocks:
        r, c = b.offset[0] - origin[0], b.offset[1] - origin[1]
        canvas[r:r + b.latent.shape[0], c:c + b.latent.shape[1]] = b.latent
    return canvas, origin


def overlap_mismatch(blocks):
    """Largest absolute disagreement between any two blocks on their shared cells."""
    worst = 0.0
    for i, a in enumerate(blocks):
        for b in blocks[i + 1:]:
            known, have = _window_known([b], a.offset, a.latent.shape)
            if have.any():
                worst = max(worst, float(np.abs(a.latent[have] - known[have]).max()))
    return worst
