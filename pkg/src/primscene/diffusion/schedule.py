"""DDPM noise schedules.

Arrays are indexed by timestep: entry ``t`` refers to step ``t`` for
``t = 1..T`` and entry 0 holds the ``alpha_bar_0 = 1`` convention.
"""

from dataclasses import dataclass

import numpy as np

from ..exceptions import ConfigError

T_DEFAULT = 1000
BETA_START = 0.0015
BETA_END = 0.015


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Variance schedule with cumulative products and posterior variances.

    ``timesteps[t - 1]`` is the timestep passed to the denoiser at step ``t``;
    it differs from ``t`` only for respaced schedules.
    """

    beta: np.ndarray
    alpha_bar: np.ndarray
    timesteps: np.ndarray

    @classmethod
    def from_betas(cls, betas, alpha_bar=None, timesteps=None):
        betas = np.asarray(betas, dtype=np.float64).reshape(-1)
        if betas.size == 0 or not np.all((betas > 0) & (betas < 1)):
            raise ConfigError("betas must lie strictly inside (0, 1)")
        beta = np.concatenate([[0.0], betas])
        if alpha_bar is None:
            alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        alpha_bar = np.asarray(alpha_bar, dtype=np.float64)
        if alpha_bar.shape != beta.shape or alpha_bar[0] != 1.0 or np.any(np.diff(alpha_bar) >= 0):
            raise ConfigError("alpha_bar must start at 1 and decrease strictly")
        ts = np.arange(1, betas.size + 1) if timesteps is None else np.asarray(timesteps, np.int64)
        if ts.shape != betas.shape:
            raise ConfigError("need one denoiser timestep per step")
        return cls(beta, alpha_bar, ts)

    @property
    def T(self):
        return self.beta.size - 1

    @property
    def alpha(self):
        return 1.0 - self.beta

    @property
    def posterior_variance(self):
        """``sigma_t^2``; entry 1 is exactly 0 because ``alpha_bar_0 = 1``."""
        var = np.zeros_like(self.beta)
        var[1:] = (1.0 - self.alpha_bar[:-1]) / (1.0 - self.alpha_bar[1:]) * self.beta[1:]
        return var

    def check_step(self, t):
        if int(t) != t or not 1 <= t <= self.T:
            raise ConfigError(f"timestep {t} outside 1..{self.T}")
        return int(t)


def linear_beta_schedule(T=T_DEFAULT, beta_start=BETA_START, beta_end=BETA_END):
    """Betas spaced linearly from ``beta_start`` to ``beta_end`` inclusive."""
    if int(T) != T or T < 1:
        raise ConfigError("T must be a positive integer")
    if not 0 < beta_start <= beta_end < 1:
        raise ConfigError("need 0 < beta_start <= beta_end < 1")
    return NoiseSchedule.from_betas(np.linspace(beta_start, beta_end, int(T)))


def respaced_timesteps(T, steps):
    """Uniformly strided timesteps ``tau_1 < ... < tau_steps = T``."""
    if int(steps) != steps or not 1 <= steps <= T:
        raise ConfigError(f"steps must be an integer in 1..{T}")
    i = np.arange(steps + 1)
    return (2 * i * T + steps) // (2 * steps)  # round(i * T / steps), halves up


def respace(schedule, steps):
    """Schedule over a strided subset of timesteps, keeping ``alpha_bar`` exact."""
    if steps == schedule.T:
        return schedule
    tau = respaced_timesteps(schedule.T, steps)
    alpha_bar = schedule.alpha_bar[tau]
    betas = 1.0 - alpha_bar[1:] / alpha_bar[:-1]
    return NoiseSchedule.from_betas(betas, alpha_bar, schedule.timesteps[tau[1:] - 1])


def q_sample(z0, t, eps, schedule):
    """Draw from the forward marginal at step ``t`` with supplied noise ``eps``."""
    t = schedule.check_step(t)
    ab = schedule.alpha_bar[t]
    return np.sqrt(ab) * np.asarray(z0, np.float64) + np.sqrt(1.0 - ab) * np.asarray(eps, np.float64)
