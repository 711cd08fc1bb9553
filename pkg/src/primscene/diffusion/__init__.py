"""Latent diffusion: schedules, denoisers, masks and samplers."""

from .denoisers import (
    DenoiserServer,
    analytic_gaussian_denoiser,
    external_denoiser,
    serve_denoiser,
    zero_denoiser,
)
from .masks import build_mask, load_latent, save_latent
from .sampler import (
    OutpaintBlock,
    assemble,
    jump_schedule,
    outpaint,
    overlap_mismatch,
    repaint_inpaint,
    reverse_step,
    sample,
)
from .schedule import NoiseSchedule, linear_beta_schedule, q_sample, respace

__all__ = [
    "DenoiserServer", "NoiseSchedule", "OutpaintBlock", "analytic_gaussian_denoiser",
    "assemble", "build_mask", "external_denoiser", "jump_schedule", "linear_beta_schedule",
    "load_latent", "outpaint", "overlap_mismatch", "q_sample", "repaint_inpaint", "respace",
    "reverse_step", "sample", "save_latent", "serve_denoiser", "zero_denoiser",
]
