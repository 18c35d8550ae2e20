"""Syndrome-conditioned forward diffusion over BPSK codewords.

A trajectory point is ``x_t = x0 + sqrt(beta_bar(t)) * eps`` with a constant
per-step variance increment, so ``beta_bar(t) = t * beta_step`` for real ``t``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import as_generator

SHORT_CODE_BETA = 0.01
LONG_CODE_BETA = 0.0025


class ScheduleCoverageError(ValueError):
    """The schedule's largest variance is below the channel noise it must decode."""


@dataclass(frozen=True)
class DiffusionSchedule:
    beta_step: float
    total_steps: int

    def __post_init__(self):
        if not self.beta_step > 0:
            raise ValueError("beta_step must be positive")
        if self.total_steps < 1:
            raise ValueError("total_steps must be at least 1")

    @classmethod
    def for_code(cls, n: int, k: int, beta_step: float = SHORT_CODE_BETA,
                 steps_override: int | None = None) -> "DiffusionSchedule":
        """Default ``N = n - k + 5`` steps unless overridden."""
        return cls(beta_step, steps_override if steps_override is not None else n - k + 5)

    @staticmethod
    def steps_to_cover(sigma: float, beta_step: float = SHORT_CODE_BETA) -> int:
        """Smallest ``N`` with ``N * beta_step >= sigma**2``."""
        return max(1, math.ceil(sigma**2 / beta_step - 1e-9))

    @property
    def N(self) -> int:
        return self.total_steps

    def cumulative(self, t):
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0) or np.any(t > self.total_steps):
            raise ValueError(f"t must lie in [0, {self.total_steps}], got {t}")
        out = t * self.beta_step
        return float(out) if out.ndim == 0 else out

    def beta(self, t=None) -> float:
        return self.beta_step

    def require_coverage(self, sigma: float) -> None:
        top = self.cumulative(self.total_steps)
        if top < sigma**2 * (1 - 1e-12):
            raise ScheduleCoverageError(
                f"beta_bar(N={self.total_steps}) = {top:.4g} < sigma^2 = {sigma**2:.4g}; "
                f"use at least {self.steps_to_cover(sigma, self.beta_step)} steps"
            )


def cumulative_variance(schedule: DiffusionSchedule, t):
    return schedule.cumulative(t)


@dataclass(frozen=True)
class TrajectoryPair:
    x_t: np.ndarray
    x_r: np.ndarray
    epsilon: np.ndarray
    t: np.ndarray | int
    r: np.ndarray | float


def sample_pair(x0_signal, t, alpha: float, schedule: DiffusionSchedule, rng,
                epsilon=None) -> TrajectoryPair:
    """Two points on one trajectory sharing a single noise draw.

    ``t`` may be a scalar or a per-row array for a batch of ``x0``; ``r = alpha * t``.
    Passing ``epsilon`` bypasses the random draw.
    """
    x0 = np.asarray(x0_signal, dtype=np.float64)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > schedule.total_steps) or np.any(t_arr != np.round(t_arr)):
        raise ValueError(f"t must be an integer in 1..{schedule.total_steps}, got {t}")
    r_arr = alpha * t_arr
    if epsilon is None:
        epsilon = as_generator(rng).standard_normal(x0.shape)
    eps = np.asarray(epsilon, dtype=np.float64)
    sd_t = np.sqrt(schedule.cumulative(t_arr))
    sd_r = np.sqrt(schedule.cumulative(r_arr))
    if np.ndim(sd_t):
        sd_t, sd_r = sd_t[..., None], sd_r[..., None]
    return TrajectoryPair(x0 + sd_t * eps, x0 + sd_r * eps, eps, t, r_arr if np.ndim(r_arr) else float(r_arr))


def ddecc_target(x0_signal, x_t) -> np.ndarray:
    """Binary multiplicative noise ``bin(sign(x0 * x_t))``: 1 where the sign disagrees."""
    return (np.asarray(x0_signal) * np.asarray(x_t) < 0).astype(np.uint8)
