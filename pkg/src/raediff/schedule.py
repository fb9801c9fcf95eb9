"""Variance schedule for the biased diffusion process.

All public accessors use 1-based timesteps ``t = 1..T``. ``alpha_bar(0)``
is defined as 1 so that posterior formulas can be evaluated at ``t = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TimestepError


def compute_kt(betas: np.ndarray, alphas: np.ndarray, alpha_bars: np.ndarray) -> np.ndarray:
    """Bias-injection coefficients for the one-step transitions.

    The coefficients make the per-step mean shift ``k_t * mu`` compose into
    the closed-form marginal shift ``sqrt(1 - alpha_bar_t) * mu``, i.e.::

        k_t + sqrt(a_t) k_{t-1} + sqrt(a_t a_{t-1}) k_{t-2} + ... = sqrt(1 - abar_t)

    Subtracting consecutive instances of that identity gives the O(T)
    recursion used here::

        k_1 = sqrt(1 - abar_1)
        k_t = sqrt(1 - abar_t) - sqrt(a_t) * sqrt(1 - abar_{t-1})

    Args:
        betas: Noise variances, shape (T,).
        alphas: ``1 - betas``, shape (T,).
        alpha_bars: Cumulative products of ``alphas``, shape (T,).

    Returns:
        Array of shape (T,) with ``k[t-1] = k_t``.
    """
    betas = np.asarray(betas, dtype=np.float64)
    alphas = np.asarray(alphas, dtype=np.float64)
    alpha_bars = np.asarray(alpha_bars, dtype=np.float64)
    if not (betas.shape == alphas.shape == alpha_bars.shape) or betas.ndim != 1:
        raise ValueError("schedule arrays must be 1-D and equally long")
    if betas.size == 0:
        raise ValueError("schedule must contain at least one timestep")
    if not np.allclose(alphas, 1.0 - betas, rtol=0, atol=1e-15):
        raise ValueError("alphas must equal 1 - betas")
    if not np.allclose(alpha_bars, np.cumprod(alphas), rtol=1e-12, atol=0):
        raise ValueError("alpha_bars must be the cumulative product of alphas")

    sigma = np.sqrt(1.0 - alpha_bars)
    prev_sigma = np.concatenate(([0.0], sigma[:-1]))
    return sigma - np.sqrt(alphas) * prev_sigma


@dataclass(frozen=True, eq=False)
class VarianceSchedule:
    """Precomputed beta/alpha/alpha_bar/k tables for ``T`` timesteps.

    Arrays are stored 0-indexed (``betas[t - 1]`` is beta_t); use the
    accessor methods for 1-based lookups.
    """

    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)
    k: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.array(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size == 0:
            raise ValueError("betas must be a non-empty 1-D array")
        if not np.all((betas > 0) & (betas < 1)):
            raise ValueError("every beta must lie in the open interval (0, 1)")
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        k = compute_kt(betas, alphas, alpha_bars)
        for name, arr in (("betas", betas), ("alphas", alphas), ("alpha_bars", alpha_bars), ("k", k)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def T(self) -> int:
        return int(self.betas.size)

    def _check(self, t: int, lowest: int = 1) -> int:
        t = int(t)
        if not lowest <= t <= self.T:
            raise TimestepError(f"timestep {t} outside [{lowest}, {self.T}]")
        return t

    def beta(self, t: int) -> float:
        return float(self.betas[self._check(t) - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self._check(t) - 1])

    def alpha_bar(self, t: int) -> float:
        """Cumulative product up to ``t``; ``alpha_bar(0) == 1``."""
        t = self._check(t, lowest=0)
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def k_at(self, t: int) -> float:
        return float(self.k[self._check(t) - 1])


def linear_beta_schedule(T: int = 1000, beta_min: float = 1e-4, beta_max: float = 0.02) -> VarianceSchedule:
    """Linearly spaced betas from ``beta_min`` to ``beta_max`` inclusive.

    Example:
        >>> s = linear_beta_schedule(1000, 1e-4, 0.02)
        >>> round(s.alpha_bar(1000) * 1e5, 3)
        4.036
    """
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if not 0 < beta_min <= beta_max < 1:
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")
    if T == 1:
        betas = np.array([beta_min], dtype=np.float64)
    else:
        betas = beta_min + np.arange(T, dtype=np.float64) * ((beta_max - beta_min) / (T - 1))
    return VarianceSchedule(betas)
